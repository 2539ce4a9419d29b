"""
Terminal costs l(x) and dispersion functionals.

Every CostFunction is vectorised: `cost(x)` maps (..., n) to (...) and
`cost.gradient(x)` maps (..., n) to (..., n). The trace-covariance cost is
mu-quadratic; it becomes a plain terminal cost on the product model built by
`doubled_model` / `product_model`.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist

from mindisp.sde_core import ModelDefinition, ParticleEnsemble

_FD_STEP = 1e-6


@dataclass(frozen=True)
class CostFunction:
    """A terminal cost with an analytic gradient, or central differences when none is given."""

    value_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "cost"

    def __call__(self, x) -> np.ndarray:
        return self.value_fn(np.asarray(x, dtype=float))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient_fn is not None:
            return self.gradient_fn(x)
        return finite_difference_gradient(self.value_fn, x)

    def __add__(self, other: "CostFunction") -> "CostFunction":
        def grad(x):
            return self.gradient(x) + other.gradient(x)

        return CostFunction(lambda x: self.value_fn(x) + other.value_fn(x), grad, f"{self.name}+{other.name}")


def finite_difference_gradient(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                               step: float = _FD_STEP) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.shape[-1]):
        h = step * np.maximum(1.0, np.abs(x[..., i]))
        plus, minus = x.copy(), x.copy()
        plus[..., i] += h
        minus[..., i] -= h
        grad[..., i] = (fn(plus) - fn(minus)) / (2.0 * h)
    return grad


def constant_cost(c: float) -> CostFunction:
    return CostFunction(lambda x: np.full(x.shape[:-1], float(c)), np.zeros_like, f"const({c})")


def cost_from_callable(fn: Callable[[np.ndarray], np.ndarray], name: str = "user") -> CostFunction:
    """Wraps a user-supplied vectorised l; its gradient falls back to central differences."""
    return CostFunction(fn, None, name)


@dataclass(frozen=True)
class MomentIndex:
    """Multi-index alpha and target x_hat of a mixed central moment; alpha_j applies to coordinate j."""

    alpha: Tuple[int, ...]
    target: Tuple[float, ...]

    def __post_init__(self):
        alpha = tuple(int(a) for a in self.alpha)
        target = tuple(float(v) for v in self.target)
        if any(a < 0 for a in alpha):
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        if sum(alpha) < 1:
            raise ValueError("moment order |alpha| must be at least 1")
        if len(alpha) != len(target):
            raise ValueError(f"alpha has {len(alpha)} entries but target has {len(target)}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "target", target)

    @property
    def order(self) -> int:
        return sum(self.alpha)


def central_moment_cost(idx: MomentIndex) -> CostFunction:
    """l(x) = prod_j (x_j - x_hat_j)^alpha_j; its ensemble mean is the empirical mixed central moment."""
    alpha = np.asarray(idx.alpha)
    target = np.asarray(idx.target)
    p = alpha.size

    def value(x):
        return np.prod((x[..., :p] - target) ** alpha, axis=-1)

    def gradient(x):
        d = x[..., :p] - target
        grad = np.zeros_like(x)
        for i in np.flatnonzero(alpha):
            factors = d ** alpha
            factors[..., i] = alpha[i] * d[..., i] ** (alpha[i] - 1)
            grad[..., i] = np.prod(factors, axis=-1)
        return grad

    return CostFunction(value, gradient, f"moment{idx.alpha}")


def moment_sum_cost(indices: Sequence[MomentIndex]) -> CostFunction:
    """Sum of mixed central moments."""
    if not indices:
        raise ValueError("need at least one moment index")
    total = central_moment_cost(indices[0])
    for idx in indices[1:]:
        total = total + central_moment_cost(idx)
    return total


def squared_distance_cost(target) -> CostFunction:
    """l(x) = ||x - x_hat||^2 on the leading len(target) coordinates."""
    target = np.asarray(target, dtype=float)
    p = target.size

    def gradient(x):
        grad = np.zeros_like(x)
        grad[..., :p] = 2.0 * (x[..., :p] - target)
        return grad

    return CostFunction(lambda x: np.sum((x[..., :p] - target) ** 2, axis=-1), gradient, "squared_distance")


def spike_cost(p: int, phase_index: int = 0) -> CostFunction:
    """l = sin(x)^(2p) + (cos(x) - 1)^(2p) on the phase coordinate; zero at every 2*pi*k."""
    if int(p) != p or p < 1:
        raise ValueError(f"spike power must be a positive integer, got {p}")
    p = int(p)

    def value(x):
        phase = x[..., phase_index]
        return np.sin(phase) ** (2 * p) + (np.cos(phase) - 1.0) ** (2 * p)

    def gradient(x):
        phase = x[..., phase_index]
        s, c = np.sin(phase), np.cos(phase)
        grad = np.zeros_like(x)
        grad[..., phase_index] = 2 * p * s ** (2 * p - 1) * c - 2 * p * (c - 1.0) ** (2 * p - 1) * s
        return grad

    return CostFunction(value, gradient, f"spike(p={p})")


def pairwise_dispersion_cost(n: int) -> CostFunction:
    """l(x, y) = ||x - y||^2 / 2 on a doubled state (x, y); its mean is Tr K X."""

    def value(z):
        return 0.5 * np.sum((z[..., :n] - z[..., n:2 * n]) ** 2, axis=-1)

    def gradient(z):
        diff = z[..., :n] - z[..., n:2 * n]
        grad = np.zeros_like(z)
        grad[..., :n] = diff
        grad[..., n:2 * n] = -diff
        return grad

    return CostFunction(value, gradient, "pairwise_dispersion")


def _blocks(z: np.ndarray, q: int, size: int) -> np.ndarray:
    return z.reshape(z.shape[:-1] + (q, size))


def _block_diagonal(blocks: np.ndarray, q: int) -> np.ndarray:
    # (..., q, r, c) -> (..., q*r, q*c)
    r, c = blocks.shape[-2:]
    full = blocks[..., :, :, None, :] * np.eye(q)[:, None, :, None]
    return full.reshape(blocks.shape[:-3] + (q * r, q * c))


def product_model(base: ModelDefinition, q: int) -> ModelDefinition:
    """
    q independent copies of `base` driven by q independent noises and the SAME
    coefficient vector u(t). Each block evaluates its own Markovian value
    sum_j xi_j(block) u_j. Turns mu-polynomial costs of degree q into terminal costs.
    """
    if int(q) != q or q < 1:
        raise ValueError(f"q must be a positive integer, got {q}")
    q = int(q)
    n, m, d = base.state_dim, base.noise_dim, base.control_dim

    def drift(t, z, w):
        zb = _blocks(z, q, n)
        wb = _blocks(np.broadcast_to(w, z.shape[:-1] + (q * d,)), q, d)
        return base.drift(t, zb, wb).reshape(z.shape)

    def diffusion(t, z):
        return _block_diagonal(base.diffusion(t, _blocks(z, q, n)), q)

    def feedback_basis(z):
        xi = base.feedback_basis(_blocks(z, q, n))  # (..., q, J, d)
        xi = np.swapaxes(xi, -3, -2)
        return xi.reshape(xi.shape[:-2] + (q * d,))

    def initial_law(rng, size):
        return np.concatenate([base.initial_law(rng, size) for _ in range(q)], axis=-1)

    control_gain = None
    if base.control_gain is not None:
        def control_gain(t, z):
            return _block_diagonal(base.control_gain(t, _blocks(z, q, n)), q)

    return ModelDefinition(
        state_dim=q * n,
        noise_dim=q * m,
        control_dim=q * d,
        basis_size=base.basis_size,
        drift=drift,
        diffusion=diffusion,
        feedback_basis=feedback_basis,
        initial_law=initial_law,
        control_gain=control_gain,
        name=f"{base.name}^{q}",
    )


def doubled_model(base: ModelDefinition) -> ModelDefinition:
    """The extended process (X, Y) with an independent copy Y of X."""
    return product_model(base, 2)


def trace_covariance(samples: Union[ParticleEnsemble, np.ndarray]) -> float:
    """(1/2) sum_i sum_j w_i w_j ||x_i - x_j||^2, i.e. (1/(2M^2)) sum ||x_i - x_j||^2 for uniform weights."""
    if not isinstance(samples, ParticleEnsemble):
        samples = ParticleEnsemble(0.0, samples)
    if samples.size == 1:
        return 0.0
    i, j = np.triu_indices(samples.size, k=1)
    # pdist enumerates pairs i < j in triu order; each unordered pair counted once
    return float(np.sum(samples.weights[i] * samples.weights[j] * pdist(samples.particles, "sqeuclidean")))
