"""
Concrete controlled SDEs: the theta-neuron benchmark and small analytic oracles.

The theta phase is integrated on the real line without wrapping, so a
population may settle on different equivalent spike phases 2*pi*k.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from mindisp import config
from mindisp.hamiltonian import ControlSpace
from mindisp.sde_core import ModelDefinition


def gaussian_law(mean, std):
    """Independent normal coordinates; std = 0 gives a Dirac mass at `mean`."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    if np.any(std < 0):
        raise ValueError(f"standard deviations must be non-negative, got {std.tolist()}")

    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        return mean + std * rng.standard_normal((size, mean.size))

    return draw


def dirac_law(point):
    return gaussian_law(point, 0.0)


# w = u_1 + u_2 y + u_3 cos x + u_4 sin x
THETA_BASIS_SIZE = 4


@dataclass(frozen=True)
class ThetaParams:
    """`control` is the space the descent draws theta controls from; its dim must match the feedback basis."""

    beta: float = config.THETA_BETA
    phase_mean: float = config.THETA_PHASE_MEAN
    phase_std: float = config.THETA_PHASE_STD
    current_mean: float = config.THETA_CURRENT_MEAN
    current_std: float = config.THETA_CURRENT_STD
    control: ControlSpace = field(default_factory=lambda: ControlSpace.penalty(THETA_BASIS_SIZE))

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.phase_std < 0 or self.current_std < 0:
            raise ValueError("initial standard deviations must be non-negative")
        if self.control.dim != THETA_BASIS_SIZE:
            raise ValueError(f"the theta feedback basis has {THETA_BASIS_SIZE} coefficients, "
                             f"control space has {self.control.dim}")


def theta_model(params: ThetaParams = ThetaParams()) -> ModelDefinition:
    """
    Stochastic Ermentrout-Kopell neuron, state (phase X, baseline current Y):

        dX = [(1 - cos X) + (1 + cos X)(Y + w)] dt,   dY = sqrt(2 beta) dW,

    with w(t, x, y) = u_1 + u_2 y + u_3 cos x + u_4 sin x.
    """
    noise_scale = np.sqrt(2.0 * params.beta)

    def drift(t, x, w):
        phase, current = x[..., 0], x[..., 1]
        cos = np.cos(phase)
        dphase = (1.0 - cos) + (1.0 + cos) * (current + w[..., 0])
        return np.stack([dphase, np.zeros_like(dphase)], axis=-1)

    def diffusion(t, x):
        sigma = np.zeros(x.shape[:-1] + (2, 1))
        sigma[..., 1, 0] = noise_scale
        return sigma

    def feedback_basis(x):
        phase, current = x[..., 0], x[..., 1]
        return np.stack([np.ones_like(phase), current, np.cos(phase), np.sin(phase)], axis=-1)[..., None]

    def control_gain(t, x):
        gain = np.zeros(x.shape[:-1] + (2, 1))
        gain[..., 0, 0] = 1.0 + np.cos(x[..., 0])
        return gain

    return ModelDefinition(
        state_dim=2,
        noise_dim=1,
        control_dim=1,
        basis_size=THETA_BASIS_SIZE,
        drift=drift,
        diffusion=diffusion,
        feedback_basis=feedback_basis,
        initial_law=gaussian_law([params.phase_mean, params.current_mean], [params.phase_std, params.current_std]),
        control_gain=control_gain,
        name="theta",
    )


def _constant_basis(x):
    return np.ones(x.shape[:-1] + (1, 1))


def controlled_linear_model(a: float, b: float, sigma: float, initial_state: float = 1.0,
                            initial_std: float = 0.0) -> ModelDefinition:
    """dX = (a X + b u) dt + sigma dW with the single basis function xi = 1."""
    if not all(np.isfinite([a, b, sigma, initial_state, initial_std])):
        raise ValueError("linear model coefficients must be finite")

    def drift(t, x, w):
        return a * x + b * w

    def diffusion(t, x):
        return np.full(x.shape + (1,), float(sigma))

    def control_gain(t, x):
        return np.full(x.shape + (1,), float(b))

    return ModelDefinition(
        state_dim=1,
        noise_dim=1,
        control_dim=1,
        basis_size=1,
        drift=drift,
        diffusion=diffusion,
        feedback_basis=_constant_basis,
        initial_law=gaussian_law(initial_state, initial_std),
        control_gain=control_gain,
        name="linear",
    )


def brownian_model(beta: float, initial_state: float = 0.0, initial_std: float = 0.0) -> ModelDefinition:
    """dY = sqrt(2 beta) dW; Y_t ~ N(y_0, 2 beta t). The control has no effect."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    model = controlled_linear_model(0.0, 0.0, float(np.sqrt(2.0 * beta)), initial_state, initial_std)
    return replace(model, name="brownian")


def frozen_model(state_dim: int = 1, initial_state=0.0) -> ModelDefinition:
    """f = 0, sigma = 0: every path is constant."""

    def zero_drift(t, x, w):
        return np.zeros_like(x)

    def zero_diffusion(t, x):
        return np.zeros(x.shape + (1,))

    def zero_gain(t, x):
        return np.zeros(x.shape + (1,))

    return ModelDefinition(
        state_dim=state_dim,
        noise_dim=1,
        control_dim=1,
        basis_size=1,
        drift=zero_drift,
        diffusion=zero_diffusion,
        feedback_basis=_constant_basis,
        initial_law=dirac_law(np.broadcast_to(np.asarray(initial_state, dtype=float), (state_dim,))),
        control_gain=zero_gain,
        name="frozen",
    )
