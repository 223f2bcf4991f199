"""Mean-zero Gaussian random fields with Matern-like covariance.

Fields are synthesized from a truncated Karhunen-Loeve expansion

    g = sum_l xi_l * sqrt(lambda_l) * phi_l,      xi_l ~ N(0, 1) i.i.d.,

where (lambda_l, phi_l) are eigenpairs of ``tau^(2 alpha - d) (-Laplacian + tau^2)^(-alpha)``
on either the periodic unit interval (d=1) or the unit square with homogeneous
Neumann conditions (d=2). The constant mode is always left out, so every field
integrates to zero.

KL coefficient vectors are :class:`FeatureParam` objects. They do not depend on
any mesh: the same ``xi`` can be synthesized on grids of any resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .grid import Grid, Grid1D, Grid2D, GridFunction

PERIODIC_1D = "periodic-1d"
NEUMANN_2D = "neumann-2d"
_DIMS = {PERIODIC_1D: 1, NEUMANN_2D: 2}


@dataclass(frozen=True, eq=False)
class CovarianceSpectrum:
    """Ordered KL eigenpairs.

    ``modes`` is an integer array of shape ``(J, 2)``. For ``periodic-1d`` a row
    is ``(j, kind)`` with ``kind = 0`` for ``sqrt(2) sin(2 pi j x)`` and ``kind = 1``
    for ``sqrt(2) cos(2 pi j x)``; for ``neumann-2d`` it is the multi-index ``(k1, k2)``.
    """

    domain_kind: str
    tau: float
    alpha_reg: float
    modes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def j_max(self) -> int:
        return len(self.eigenvalues)

    @property
    def dim(self) -> int:
        return _DIMS[self.domain_kind]

    def to_json(self) -> dict:
        return {
            "domain_kind": self.domain_kind,
            "tau": self.tau,
            "alpha_reg": self.alpha_reg,
            "j_max": self.j_max,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CovarianceSpectrum":
        return eigenpairs(obj["domain_kind"], obj["tau"], obj["alpha_reg"], obj["j_max"])


@dataclass(frozen=True, eq=False)
class FeatureParam:
    """KL coordinates of one random field draw."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim != 1 or not np.all(np.isfinite(xi)):
            raise ValueError("xi must be a finite 1D vector")
        object.__setattr__(self, "xi", xi)

    @property
    def J(self) -> int:
        return len(self.xi)


def periodic_eigenvalue(j, tau, alpha_reg):
    return tau ** (2 * alpha_reg - 1) * (4 * np.pi**2 * np.asarray(j) ** 2 + tau**2) ** (-alpha_reg)


def neumann_eigenvalue(k1, k2, tau, alpha_reg):
    ksq = np.asarray(k1) ** 2 + np.asarray(k2) ** 2
    return tau ** (2 * alpha_reg - 2) * (np.pi**2 * ksq + tau**2) ** (-alpha_reg)


def eigenpairs(domain_kind: str, tau: float, alpha_reg: float, j_max: int) -> CovarianceSpectrum:
    """First ``j_max`` eigenpairs, ordered by ``|k'|^2`` then lexicographically."""
    if domain_kind not in _DIMS:
        raise ValueError(f"unknown domain kind {domain_kind!r}")
    d = _DIMS[domain_kind]
    if not alpha_reg > d / 2:
        raise ValueError(f"alpha_reg must exceed d/2 = {d / 2}, got {alpha_reg}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    j_max = int(j_max)
    if j_max < 1:
        raise ValueError("j_max must be at least 1")

    if d == 1:
        idx = np.arange(j_max)
        modes = np.stack([idx // 2 + 1, idx % 2], axis=1)
        lam = periodic_eigenvalue(modes[:, 0], tau, alpha_reg)
    else:
        side = int(np.ceil(np.sqrt(4 * j_max / np.pi))) + 2
        while True:
            k1, k2 = np.meshgrid(np.arange(side + 1), np.arange(side + 1), indexing="ij")
            k1, k2 = k1.ravel()[1:], k2.ravel()[1:]  # drop (0, 0)
            ksq = k1**2 + k2**2
            order = np.lexsort((k2, k1, ksq))[:j_max]
            # every lattice point with |k|^2 <= side^2 lies in the square, so the
            # selection is exact once the cutoff radius stays inside it
            if len(order) == j_max and ksq[order[-1]] <= side**2:
                break
            side *= 2
        modes = np.stack([k1[order], k2[order]], axis=1)
        lam = neumann_eigenvalue(modes[:, 0], modes[:, 1], tau, alpha_reg)
    modes.setflags(write=False)
    lam.setflags(write=False)
    return CovarianceSpectrum(domain_kind, float(tau), float(alpha_reg), modes, lam)


def nyquist_modes(domain_kind: str, grid: Grid) -> int:
    """Number of leading KL modes that a grid represents without aliasing."""
    if domain_kind == PERIODIC_1D:
        return 2 * (grid.n_unique // 2 - 1)
    # modes are ordered by |k|^2, so the resolvable prefix is the quarter disk of radius r-1
    kmax = grid.r - 1
    k = np.arange(kmax + 1)
    return int(np.count_nonzero(k[:, None] ** 2 + k[None, :] ** 2 <= kmax**2)) - 1


def stream_rng(master_seed: int, stream_id: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(master_seed, stream_id)``."""
    key = np.array([int(master_seed) % 2**64, int(stream_id) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_xi(master_seed: int, stream_id: int, j_max: int) -> FeatureParam:
    return FeatureParam(stream_rng(master_seed, stream_id).standard_normal(int(j_max)))


def draw_xi_batch(master_seed: int, stream_ids, j_max: int) -> np.ndarray:
    return np.stack([draw_xi(master_seed, s, j_max).xi for s in stream_ids])


def _representable(spectrum: CovarianceSpectrum, grid: Grid) -> np.ndarray:
    if spectrum.domain_kind == PERIODIC_1D:
        if not isinstance(grid, Grid1D):
            raise ValueError("periodic-1d fields need a Grid1D")
        return spectrum.modes[:, 0] < grid.n_unique // 2
    if not isinstance(grid, Grid2D):
        raise ValueError("neumann-2d fields need a Grid2D")
    return np.all(spectrum.modes <= grid.r - 1, axis=1)


def _select_modes(spectrum, xi, grid, truncate):
    xi = np.asarray(xi, dtype=float)
    J = xi.shape[-1]
    if J > spectrum.j_max:
        raise ValueError(f"{J} KL coefficients but the spectrum has {spectrum.j_max} modes")
    keep = _representable(spectrum, grid)[:J]
    if not truncate and not keep.all():
        raise ValueError(
            f"grid {grid} resolves only {int(keep.sum())} of the {J} requested modes"
        )
    return xi, keep


def require_resolvable(spectrum: CovarianceSpectrum, J: int, grid: Grid) -> None:
    """Raise unless the first ``J`` modes of ``spectrum`` are all resolvable on ``grid``."""
    _select_modes(spectrum, np.zeros(J), grid, truncate=False)


def periodic_coefficients(spectrum: CovarianceSpectrum, xi, n_unique: int) -> np.ndarray:
    """Fourier coefficients ``c_k = int g(x) exp(-2 pi i k x) dx`` for ``k = 0..n/2``.

    Modes at or above the Nyquist wavenumber ``n/2`` are dropped (spectral
    truncation). ``xi`` may carry leading batch axes.
    """
    grid = Grid1D(n_unique)
    xi, keep = _select_modes(spectrum, xi, grid, truncate=True)
    J = xi.shape[-1]
    modes = spectrum.modes[:J][keep]
    amp = np.sqrt(spectrum.eigenvalues[:J][keep]) * np.sqrt(2.0) / 2.0
    w = xi[..., keep] * amp
    c = np.zeros(xi.shape[:-1] + (n_unique // 2 + 1,), dtype=complex)
    sin = modes[:, 1] == 0
    cos = ~sin
    # sqrt(2) cos(2 pi j x) -> (1/sqrt 2)(e_j + e_-j); sqrt(2) sin -> (1/(i sqrt 2))(e_j - e_-j)
    c[..., modes[sin, 0]] += -1j * w[..., sin]
    c[..., modes[cos, 0]] += w[..., cos]
    return c


def neumann_coefficients(spectrum: CovarianceSpectrum, xi, r: int, *, truncate: bool = True):
    """Cosine-series coefficients ``C[k1, k2]`` (shape ``(..., r, r)``) of the field."""
    grid = Grid2D(r)
    xi, keep = _select_modes(spectrum, xi, grid, truncate=truncate)
    J = xi.shape[-1]
    modes = spectrum.modes[:J][keep]
    lam = spectrum.eigenvalues[:J][keep]
    norm = np.where((modes[:, 0] == 0) | (modes[:, 1] == 0), np.sqrt(2.0), 2.0)
    C = np.zeros(xi.shape[:-1] + (r, r))
    C[..., modes[:, 0], modes[:, 1]] = xi[..., keep] * np.sqrt(lam) * norm
    return C


def synthesize(spectrum: CovarianceSpectrum, xi, grid: Grid, *, truncate: bool = False) -> np.ndarray:
    """Batched KL synthesis on ``grid`` by fast transforms.

    With ``truncate=False`` every requested mode must be resolvable on ``grid``;
    with ``truncate=True`` unresolvable modes are dropped.
    """
    xi, _ = _select_modes(spectrum, xi, grid, truncate)
    if spectrum.domain_kind == PERIODIC_1D:
        n = grid.n_unique
        c = periodic_coefficients(spectrum, xi, n)
        return np.fft.irfft(n * c, n=n, axis=-1)
    r = grid.r
    C = neumann_coefficients(spectrum, xi, r, truncate=True)
    s = np.full(r, 0.5)
    s[0] = s[-1] = 1.0
    # DCT-I: y_n = x_0 + (-1)^n x_{N-1} + 2 sum_{k=1}^{N-2} x_k cos(pi k n / (N-1))
    return scipy.fft.dctn(C * np.outer(s, s), type=1, axes=(-2, -1))


def sample_field(
    spectrum: CovarianceSpectrum, param: FeatureParam, grid: Grid, *, truncate: bool = False
) -> GridFunction:
    return GridFunction(grid, synthesize(spectrum, param.xi, grid, truncate=truncate))


def eigenfunctions(spectrum: CovarianceSpectrum, grid: Grid, J: int | None = None) -> np.ndarray:
    """Direct pointwise evaluation of the first ``J`` eigenfunctions, shape ``(J, *grid.shape)``."""
    J = spectrum.j_max if J is None else J
    modes = spectrum.modes[:J]
    if spectrum.domain_kind == PERIODIC_1D:
        x = grid.nodes()
        arg = 2 * np.pi * np.outer(modes[:, 0], x)
        return np.sqrt(2.0) * np.where(modes[:, 1:2] == 0, np.sin(arg), np.cos(arg))
    X1, X2 = grid.nodes()
    k1 = modes[:, 0, None, None]
    k2 = modes[:, 1, None, None]
    norm = np.where((k1 == 0) | (k2 == 0), np.sqrt(2.0), 2.0)
    return norm * np.cos(k1 * np.pi * X1) * np.cos(k2 * np.pi * X2)
