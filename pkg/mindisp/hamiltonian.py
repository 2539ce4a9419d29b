"""
The contracted Hamilton-Pontryagin function H(x, psi, v) = psi . f_t(x, sum_j xi_j(x) v_j),
its ensemble average, and the per-knot control minimizer.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from mindisp import config
from mindisp.errors import ControlSpaceError, UnsupportedControlStructureError
from mindisp.sde_core import ModelDefinition, markov_value

logger = logging.getLogger(__name__)

PENALTY = "penalty"
BOX = "box"

_GRID_CHUNK = 4096


@dataclass(frozen=True)
class ControlSpace:
    """
    Admissible coefficient vectors u in R^dim.

    Args:
        kind (str): "penalty" (U = R^dim, objective gets + lambda ||u||^2) or "box" (lo <= u <= hi).
        dim (int): number of coefficients, i.e. the model's basis_size.
        penalty_weight (float): lambda > 0 for the penalty kind.
        lo, hi (tuple): box bounds for the box kind.
        grid_resolution (int): points per axis of the grid-search fallback.
        search_bound (float): half-width of the grid-search box for the penalty kind.
    """

    kind: str
    dim: int
    penalty_weight: float = config.PENALTY_WEIGHT
    lo: Optional[Tuple[float, ...]] = None
    hi: Optional[Tuple[float, ...]] = None
    grid_resolution: int = config.GRID_RESOLUTION
    search_bound: float = config.SEARCH_BOUND

    def __post_init__(self):
        if self.dim < 1:
            raise ControlSpaceError(f"control dimension must be positive, got {self.dim}")
        if self.grid_resolution < 2:
            raise ControlSpaceError("grid_resolution must be at least 2")
        if self.kind == PENALTY:
            if not self.penalty_weight > 0:
                raise ControlSpaceError(f"penalty weight must be positive, got {self.penalty_weight}")
        elif self.kind == BOX:
            if self.lo is None or self.hi is None:
                raise ControlSpaceError("box control space needs lo and hi")
            lo, hi = np.broadcast_to(self.lo, (self.dim,)), np.broadcast_to(self.hi, (self.dim,))
            if not np.all(lo < hi):
                raise ControlSpaceError(f"box bounds need lo < hi componentwise, got lo={lo}, hi={hi}")
            object.__setattr__(self, "lo", tuple(float(v) for v in lo))
            object.__setattr__(self, "hi", tuple(float(v) for v in hi))
        else:
            raise ControlSpaceError(f"unknown control space kind {self.kind!r}")

    @classmethod
    def penalty(cls, dim: int, weight: float = config.PENALTY_WEIGHT, **kwargs) -> "ControlSpace":
        return cls(PENALTY, dim, penalty_weight=weight, **kwargs)

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], **kwargs) -> "ControlSpace":
        return cls(BOX, len(lo), lo=tuple(lo), hi=tuple(hi), **kwargs)

    def contains(self, u) -> bool:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim or not np.all(np.isfinite(u)):
            return False
        if self.kind == BOX:
            return bool(np.all((u >= np.asarray(self.lo)) & (u <= np.asarray(self.hi))))
        return True

    def regularizer(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == PENALTY:
            return self.penalty_weight * np.sum(u ** 2, axis=-1)
        return np.zeros(u.shape[:-1])

    def search_axes(self) -> Iterable[np.ndarray]:
        if self.kind == BOX:
            return [np.linspace(lo, hi, self.grid_resolution) for lo, hi in zip(self.lo, self.hi)]
        axis = np.linspace(-self.search_bound, self.search_bound, self.grid_resolution)
        return [axis] * self.dim


@dataclass(frozen=True)
class AffineHamiltonianCoeffs:
    """Averaged H(v) = constant + linear . v."""

    constant: float
    linear: np.ndarray

    def __post_init__(self):
        linear = np.asarray(self.linear, dtype=float)
        if not (np.isfinite(self.constant) and np.all(np.isfinite(linear))):
            raise ValueError("Hamiltonian coefficients must be finite")
        object.__setattr__(self, "linear", linear)

    def __call__(self, v) -> np.ndarray:
        return self.constant + np.asarray(v, dtype=float) @ self.linear


def hamiltonian(model: ModelDefinition, t: float, x, psi, v) -> np.ndarray:
    """psi . f_t(x, w) with w = sum_j xi_j(x) v_j; broadcasts over leading axes of x and psi."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = markov_value(model, x, v)
    return np.sum(np.asarray(psi, dtype=float) * model.drift(t, x, w), axis=-1)


def _stack_points(points) -> Tuple[np.ndarray, np.ndarray]:
    points = list(points)
    if not points:
        raise ValueError("need at least one (state, gradient) point")
    states = np.array([np.asarray(x, dtype=float) for x, _ in points])
    grads = np.array([np.asarray(g, dtype=float) for _, g in points])
    return states, grads


def affine_coeffs_from_arrays(model: ModelDefinition, t: float, states: np.ndarray,
                              grads: np.ndarray) -> AffineHamiltonianCoeffs:
    """Same as `averaged_coeffs` for states and gradients stacked as (M, n) arrays."""
    if not model.is_control_affine:
        raise UnsupportedControlStructureError(
            f"model {model.name!r} declares no control_gain; use grid_argmin instead")
    zero_w = np.zeros(states.shape[:-1] + (model.control_dim,))
    constant = np.sum(grads * model.drift(t, states, zero_w), axis=-1)
    gain_psi = np.einsum("mnd,mn->md", model.control_gain(t, states), grads)
    linear = np.einsum("mjd,md->mj", model.feedback_basis(states), gain_psi)
    return AffineHamiltonianCoeffs(float(np.mean(constant)), np.mean(linear, axis=0))


def averaged_coeffs(model: ModelDefinition, t: float, points) -> AffineHamiltonianCoeffs:
    """Coefficients of (1/M) sum_l H(x_l, grad p(x_l), u) as an affine function of u."""
    states, grads = _stack_points(points)
    return affine_coeffs_from_arrays(model, t, states, grads)


def argmin_control(coeffs: AffineHamiltonianCoeffs, space: ControlSpace) -> np.ndarray:
    """
    Minimizer of b . u + lambda ||u||^2 (penalty kind: u = -b / (2 lambda)) or of
    b . u over the box (vertex rule; b_i = 0 picks 0 when admissible, else lo_i).
    """
    b = coeffs.linear
    if b.shape != (space.dim,):
        raise ControlSpaceError(f"coefficient vector has shape {b.shape}, control space dim is {space.dim}")
    if space.kind == PENALTY:
        return -b / (2.0 * space.penalty_weight) + 0.0  # no negative zeros
    lo, hi = np.asarray(space.lo), np.asarray(space.hi)
    tie = np.where((lo <= 0.0) & (hi >= 0.0), 0.0, lo)
    return np.where(b > 0, lo, np.where(b < 0, hi, tie))


def grid_argmin(model: ModelDefinition, t: float, states: np.ndarray, grads: np.ndarray,
                space: ControlSpace) -> np.ndarray:
    """Uniform grid search of the averaged Hamiltonian (plus penalty) for drifts not affine in the control."""
    xi = model.feedback_basis(states)  # (M, J, d)
    candidates = np.array(list(itertools.product(*space.search_axes())))
    best_value, best_u = np.inf, None
    for start in range(0, len(candidates), _GRID_CHUNK):
        chunk = candidates[start:start + _GRID_CHUNK]
        w = np.einsum("mjd,gj->gmd", xi, chunk)
        drift = model.drift(t, np.broadcast_to(states, w.shape[:-1] + states.shape[-1:]), w)
        objective = np.mean(np.sum(grads * drift, axis=-1), axis=-1) + space.regularizer(chunk)
        idx = int(np.argmin(objective))
        if objective[idx] < best_value:
            best_value, best_u = objective[idx], chunk[idx]
    logger.debug(f"grid search over {len(candidates)} candidates at t={t:.4g}: best objective {best_value:.6g}")
    return np.array(best_u)


def knot_control(model: ModelDefinition, t: float, states: np.ndarray, grads: np.ndarray,
                 space: ControlSpace) -> np.ndarray:
    """The coefficient row for one knot: closed form when the drift is control-affine, grid search otherwise."""
    if model.is_control_affine:
        return argmin_control(affine_coeffs_from_arrays(model, t, states, grads), space)
    return grid_argmin(model, t, states, grads, space)
