"""Random feature maps ``phi(a; theta)`` and their scalar nonlinearities.

Three families:

``fourier-burgers``
    ``elu(IFFT(chi * FFT(a) * FFT(theta)))`` on the periodic interval. Transforms
    follow the numpy convention (forward unnormalized, inverse divided by N)
    taken on a fixed reference mesh of ``n_ref`` nodes, so the feature is the
    same function whatever grid it is evaluated on.
``predictor-corrector-darcy``
    one randomized predictor-corrector step for Darcy flow built from two
    Dirichlet Poisson solves.
``brownian-bridge``
    scalar feature ``sum_j theta_j sqrt(2) sin(j pi x) / (j pi)`` on (0, 1).

Feature parameters are KL coefficient vectors; the fields they define are
synthesized on whatever grid the input lives on. The batched evaluators used by
training and prediction drop modes a coarse grid cannot resolve; the
single-feature functions refuse such grids instead.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .darcy import FastPoisson, SmoothingConfig, smooth_coefficient_values
from .grf import (
    NEUMANN_2D,
    PERIODIC_1D,
    CovarianceSpectrum,
    FeatureParam,
    eigenpairs,
    nyquist_modes,
    periodic_coefficients,
    require_resolvable,
    synthesize,
)
from .grid import Grid, Grid1D, Grid2D, GridFunction

FOURIER = "fourier-burgers"
PREDICTOR_CORRECTOR = "predictor-corrector-darcy"
BROWNIAN_BRIDGE = "brownian-bridge"


def wavenumber_filter(k, delta: float, beta: float):
    r = 2 * np.pi * np.abs(np.asarray(k, dtype=float)) * delta
    return np.maximum(0.0, np.minimum(2 * r, (r + 0.5) ** (-beta)))


def elu(x):
    x = np.asarray(x, dtype=float)
    # expm1 of the clipped argument avoids overflow warnings on the positive branch
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def thresholded_sigmoid(x, s_plus: float = 1 / 12, s_minus: float = -1 / 3, delta: float = 0.15):
    x = np.asarray(x, dtype=float)
    # 1 / (1 + exp(-x/delta)) written with tanh to stay finite for large |x|
    logistic = 0.5 * (1.0 + np.tanh(0.5 * x / delta))
    return (s_plus - s_minus) * logistic + s_minus


@dataclass(frozen=True)
class FourierFamily:
    tau: float = 5.0
    alpha_reg: float = 2.0
    delta: float = 0.0025
    beta: float = 4.0
    n_ref: int = 512

    kind = FOURIER
    n_fields = 1

    def __post_init__(self):
        if not (self.delta > 0 and self.beta > 0):
            raise ValueError("filter needs delta > 0 and beta > 0")
        if not self.n_ref > 0:
            raise ValueError("n_ref must be positive")

    def spectrum(self, J: int) -> CovarianceSpectrum:
        return eigenpairs(PERIODIC_1D, self.tau, self.alpha_reg, J)

    def default_J(self, grid: Grid1D) -> int:
        return nyquist_modes(PERIODIC_1D, grid)

    def hyperparameters(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PredictorCorrectorFamily:
    tau: float = 7.5
    alpha_reg: float = 2.0
    s_plus: float = 1 / 12
    s_minus: float = -1 / 3
    delta: float = 0.15

    kind = PREDICTOR_CORRECTOR
    n_fields = 2

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("sigmoid needs delta > 0")
        if not self.s_minus <= self.s_plus:
            raise ValueError("need s_minus <= s_plus")

    def spectrum(self, J: int) -> CovarianceSpectrum:
        return eigenpairs(NEUMANN_2D, self.tau, self.alpha_reg, J)

    def default_J(self, grid: Grid2D) -> int:
        return nyquist_modes(NEUMANN_2D, grid)

    def sigma(self, x):
        return thresholded_sigmoid(x, self.s_plus, self.s_minus, self.delta)

    def hyperparameters(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BrownianBridgeFamily:
    J: int = 512

    kind = BROWNIAN_BRIDGE
    n_fields = 1

    def default_J(self, grid=None) -> int:
        return self.J

    def hyperparameters(self) -> dict:
        return asdict(self)


FeatureFamily = FourierFamily | PredictorCorrectorFamily | BrownianBridgeFamily

_FAMILIES = {
    FOURIER: FourierFamily,
    PREDICTOR_CORRECTOR: PredictorCorrectorFamily,
    BROWNIAN_BRIDGE: BrownianBridgeFamily,
}


def family_from_json(kind: str, hyper: dict) -> FeatureFamily:
    try:
        cls = _FAMILIES[kind]
    except KeyError:
        raise ValueError(f"unknown feature family {kind!r}") from None
    return cls(**hyper)


# -- Fourier space features -------------------------------------------------------


def fourier_preactivation(a: np.ndarray, xi: np.ndarray, family: FourierFamily, grid: Grid1D) -> np.ndarray:
    """``IFFT(chi * FFT a * FFT theta)`` for every input/feature pair.

    ``a`` has shape ``(n, N)`` and ``xi`` shape ``(m, J)``; the result is ``(n, m, N)``.
    """
    n_unique = grid.n_unique
    spec = family.spectrum(xi.shape[-1])
    k = np.arange(n_unique // 2 + 1)
    chi = wavenumber_filter(k, family.delta, family.beta)
    chi[-1] = 0.0  # the Nyquist mode has no conjugate partner
    # continuous Fourier coefficients of a and theta; one unnormalized forward
    # transform on the reference mesh contributes the factor n_ref
    a_hat = np.fft.rfft(a, axis=-1) / n_unique
    theta_hat = periodic_coefficients(spec, xi, n_unique)
    prod = a_hat[:, None, :] * (family.n_ref * chi * theta_hat)[None, :, :]
    return np.fft.irfft(n_unique * prod, n=n_unique, axis=-1)


def fourier_feature(a: GridFunction, theta: FeatureParam, family: FourierFamily = FourierFamily()) -> GridFunction:
    if not isinstance(a.grid, Grid1D):
        raise ValueError("Fourier features act on periodic 1D inputs")
    require_resolvable(family.spectrum(theta.J), theta.J, a.grid)
    pre = fourier_preactivation(a.values[None], theta.xi[None], family, a.grid)[0, 0]
    return GridFunction(a.grid, elu(pre))


# -- predictor-corrector features ----------------------------------------------


def gradient(v: np.ndarray, h: float):
    """Centered differences inside, first-order one-sided on the boundary."""
    return np.gradient(v, h, axis=-2, edge_order=1), np.gradient(v, h, axis=-1, edge_order=1)


@dataclass
class _DarcyInputs:
    """Per-input quantities shared by every feature."""

    f_over_a: np.ndarray
    glog: tuple[np.ndarray, np.ndarray]


def _prepare_inputs(a: np.ndarray, grid: Grid2D, forcing, smoothing: SmoothingConfig) -> _DarcyInputs:
    if not np.all(a > 0):
        raise ValueError("predictor-corrector features need a strictly positive coefficient")
    f = np.broadcast_to(np.asarray(forcing, dtype=float), grid.shape)
    a_eps = smooth_coefficient_values(a, grid.h, smoothing)
    return _DarcyInputs(f / a, gradient(np.log(a_eps), grid.h))


def pc_theta_fields(xi: np.ndarray, family: PredictorCorrectorFamily, grid: Grid2D) -> np.ndarray:
    """``sigma_gamma(theta)`` for KL coefficients ``xi`` of shape ``(..., J)``."""
    spec = family.spectrum(xi.shape[-1])
    return family.sigma(synthesize(spec, xi, grid, truncate=True))


def pc_features_batch(
    a: np.ndarray,
    xi: np.ndarray,
    family: PredictorCorrectorFamily,
    grid: Grid2D,
    forcing=1.0,
    smoothing: SmoothingConfig = SmoothingConfig(),
    sig: np.ndarray | None = None,
) -> np.ndarray:
    """Features for inputs ``a`` ``(n, r, r)`` and parameters ``xi`` ``(m, 2, J)``; returns ``(n, m, r, r)``."""
    if sig is None:
        sig = pc_theta_fields(xi, family, grid)  # (m, 2, r, r)
    pre = _prepare_inputs(a, grid, forcing, smoothing)
    fp = FastPoisson(grid.r)
    h = grid.h
    out = np.empty((a.shape[0], sig.shape[0]) + grid.shape)
    for i in range(a.shape[0]):
        fa = pre.f_over_a[i]
        gx, gy = pre.glog[0][i], pre.glog[1][i]
        p0 = fp.solve(fa + sig[:, 0])
        dx, dy = gradient(p0, h)
        out[i] = fp.solve(fa + sig[:, 1] + gx * dx + gy * dy)
    return out


def pc_feature(
    a: GridFunction,
    theta1: FeatureParam,
    theta2: FeatureParam,
    family: PredictorCorrectorFamily = PredictorCorrectorFamily(),
    forcing=1.0,
    smoothing: SmoothingConfig = SmoothingConfig(),
) -> GridFunction:
    if not isinstance(a.grid, Grid2D):
        raise ValueError("predictor-corrector features act on 2D inputs")
    if theta1.J != theta2.J:
        raise ValueError("theta1 and theta2 must carry the same number of modes")
    require_resolvable(family.spectrum(theta1.J), theta1.J, a.grid)
    xi = np.stack([theta1.xi, theta2.xi])[None]
    out = pc_features_batch(a.values[None], xi, family, a.grid, forcing, smoothing)
    return GridFunction(a.grid, out[0, 0])


def pc_surrogate(a: np.ndarray, grid: Grid2D, forcing=1.0, smoothing: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """The predictor-corrector step with both random terms removed."""
    fam = PredictorCorrectorFamily(s_plus=0.0, s_minus=0.0)
    zero = np.zeros((1, 2, 1))
    return pc_features_batch(np.atleast_3d(a).reshape((-1,) + grid.shape), zero, fam, grid, forcing, smoothing)[:, 0]


# -- Brownian bridge ------------------------------------------------------------


def bb_basis(x, J: int) -> np.ndarray:
    """``sqrt(2) sin(j pi x) / (j pi)`` for ``j = 1..J``; shape ``(*x.shape, J)``."""
    x = np.asarray(x, dtype=float)
    j = np.arange(1, J + 1)
    return np.sqrt(2.0) * np.sin(np.pi * x[..., None] * j) / (j * np.pi)


def bb_feature(x, param: FeatureParam, J: int | None = None):
    J = param.J if J is None else J
    if J > param.J:
        raise ValueError(f"J={J} exceeds the {param.J} stored coefficients")
    return bb_basis(x, J) @ param.xi[:J]


def bb_features_batch(x, xi: np.ndarray, J: int | None = None) -> np.ndarray:
    """Feature matrix ``(len(x), m)`` for parameters ``xi`` of shape ``(m, J)``."""
    J = xi.shape[-1] if J is None else J
    return bb_basis(np.ravel(x), J) @ xi[:, :J].T


def bridge_kernel(x, xp):
    x, xp = np.asarray(x, dtype=float), np.asarray(xp, dtype=float)
    return np.minimum(x, xp) - x * xp


# -- dispatch -------------------------------------------------------------------


def evaluate_features(family: FeatureFamily, inputs, xi: np.ndarray, grid: Grid | None, **context) -> np.ndarray:
    """Evaluate all ``m`` features on ``n`` inputs; returns ``(n, m, *out_shape)``."""
    if family.kind == FOURIER:
        return elu(fourier_preactivation(np.asarray(inputs), xi, family, grid))
    if family.kind == PREDICTOR_CORRECTOR:
        return pc_features_batch(np.asarray(inputs), xi, family, grid, **context)
    return bb_features_batch(inputs, xi)
