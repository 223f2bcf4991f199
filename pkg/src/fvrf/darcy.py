"""Darcy flow ``-div(a grad u) = f`` on the unit square with ``u = 0`` on the boundary.

Includes the level-set coefficient prior, the heat-flow coefficient smoother,
a sine-transform fast Poisson solver for the 5-point Laplacian, and a
preconditioned conjugate gradient solve of the variable-coefficient problem.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.sparse.linalg import LinearOperator, cg

from .burgers import SolverError
from .fvrf_io import Dataset
from .grf import NEUMANN_2D, draw_xi_batch, eigenpairs, nyquist_modes, synthesize
from .grid import Grid2D, GridFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LevelSetPrior:
    a_plus: float = 12.0
    a_minus: float = 3.0
    tau: float = 3.0
    alpha_reg: float = 2.0

    def __post_init__(self):
        if not 0 < self.a_minus <= self.a_plus < np.inf:
            raise ValueError("need 0 < a_minus <= a_plus < inf")


@dataclass(frozen=True)
class SmoothingConfig:
    eta: float = 1e-4
    dt: float = 0.03
    steps: int = 34


@dataclass(frozen=True)
class DarcyConfig:
    grid: Grid2D
    forcing: float | np.ndarray = 1.0
    cg_tolerance: float = 1e-10
    max_iter: int = 1000
    face_average: str = "arithmetic"
    smoothing: SmoothingConfig = SmoothingConfig()

    def __post_init__(self):
        if not self.cg_tolerance > 0:
            raise ValueError("cg_tolerance must be positive")
        if self.face_average not in ("arithmetic", "harmonic"):
            raise ValueError(f"unknown face average {self.face_average!r}")

    def forcing_values(self) -> np.ndarray:
        f = self.forcing
        if isinstance(f, GridFunction):
            f = f.values
        return np.broadcast_to(np.asarray(f, dtype=float), self.grid.shape)

    def forcing_spec(self):
        f = self.forcing
        if np.ndim(f) == 0 and not isinstance(f, GridFunction):
            return {"kind": "constant", "value": float(f)}
        return {"kind": "field"}


def threshold(g: np.ndarray, a_plus: float, a_minus: float) -> np.ndarray:
    return np.where(g >= 0, a_plus, a_minus)


def levelset_spectrum(prior: LevelSetPrior, grid: Grid2D):
    return eigenpairs(NEUMANN_2D, prior.tau, prior.alpha_reg, nyquist_modes(NEUMANN_2D, grid))


def sample_levelset_coefficient(prior: LevelSetPrior, grid: Grid2D, master_seed: int, stream_id: int) -> GridFunction:
    return GridFunction(grid, sample_levelset_batch(prior, grid, master_seed, [stream_id])[0])


def sample_levelset_batch(prior: LevelSetPrior, grid: Grid2D, master_seed: int, stream_ids) -> np.ndarray:
    spec = levelset_spectrum(prior, grid)
    xi = draw_xi_batch(master_seed, stream_ids, spec.j_max)
    return threshold(synthesize(spec, xi, grid), prior.a_plus, prior.a_minus)


def neumann_laplacian(v: np.ndarray, h: float) -> np.ndarray:
    """Centered 5-point Laplacian with ghost-node reflection on every side."""
    p = np.pad(v, [(0, 0)] * (v.ndim - 2) + [(1, 1), (1, 1)], mode="reflect")
    return (
        p[..., 2:, 1:-1] + p[..., :-2, 1:-1] + p[..., 1:-1, 2:] + p[..., 1:-1, :-2] - 4.0 * v
    ) / h**2


def smooth_coefficient_values(a: np.ndarray, h: float, cfg: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """Forward-Euler heat flow ``v_t = eta * Lap v`` with homogeneous Neumann walls."""
    ratio = cfg.eta * cfg.dt / h**2
    if ratio >= 0.25:
        raise ValueError(f"explicit smoother unstable: eta*dt/h^2 = {ratio:.3f} >= 1/4")
    v = np.array(a, dtype=float)
    for _ in range(cfg.steps):
        v = v + cfg.eta * cfg.dt * neumann_laplacian(v, h)
    return v


def smooth_coefficient(a: GridFunction, cfg: DarcyConfig | SmoothingConfig | None = None) -> GridFunction:
    sm = cfg.smoothing if isinstance(cfg, DarcyConfig) else (cfg or SmoothingConfig())
    return GridFunction(a.grid, smooth_coefficient_values(a.values, a.grid.h, sm))


class FastPoisson:
    """Exact inverse of the Dirichlet 5-point operator ``-Lap_h`` on an ``r x r`` grid."""

    def __init__(self, r: int):
        self.r = r
        h = 1.0 / (r - 1)
        i = np.arange(1, r - 1)
        s = np.sin(i * np.pi * h / 2) ** 2
        self.eig = (4.0 / h**2) * (s[:, None] + s[None, :])

    def solve_interior(self, rhs_int: np.ndarray) -> np.ndarray:
        rh = scipy.fft.dstn(rhs_int, type=1, axes=(-2, -1))
        return scipy.fft.idstn(rh / self.eig, type=1, axes=(-2, -1))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Batched solve; boundary values of ``rhs`` are ignored and the output is zero there."""
        out = np.zeros(rhs.shape)
        out[..., 1:-1, 1:-1] = self.solve_interior(rhs[..., 1:-1, 1:-1])
        return out


def fast_poisson_dirichlet(rhs: GridFunction) -> GridFunction:
    return GridFunction(rhs.grid, FastPoisson(rhs.grid.r).solve(rhs.values))


def dirichlet_laplacian_interior(u: np.ndarray, h: float) -> np.ndarray:
    """``-Lap_h u`` at interior nodes for a field with zero boundary values."""
    return (
        4.0 * u[..., 1:-1, 1:-1]
        - u[..., 2:, 1:-1] - u[..., :-2, 1:-1] - u[..., 1:-1, 2:] - u[..., 1:-1, :-2]
    ) / h**2


def face_coefficients(a: np.ndarray, average: str = "arithmetic"):
    """Coefficients on vertical and horizontal faces: ``(ax[i+1/2, j], ay[i, j+1/2])``."""
    if average == "arithmetic":
        ax = 0.5 * (a[1:, :] + a[:-1, :])
        ay = 0.5 * (a[:, 1:] + a[:, :-1])
    else:
        ax = 2.0 / (1.0 / a[1:, :] + 1.0 / a[:-1, :])
        ay = 2.0 / (1.0 / a[:, 1:] + 1.0 / a[:, :-1])
    return ax, ay


def apply_darcy(u: np.ndarray, ax: np.ndarray, ay: np.ndarray, h: float) -> np.ndarray:
    """Conservative flux form of ``-div(a grad u)`` at interior nodes (zero boundary)."""
    fx = ax * (u[1:, :] - u[:-1, :])  # flux across face i+1/2
    fy = ay * (u[:, 1:] - u[:, :-1])
    div = (fx[1:, 1:-1] - fx[:-1, 1:-1]) + (fy[1:-1, 1:] - fy[1:-1, :-1])
    return -div / h**2


@dataclass
class DarcySolution:
    u: np.ndarray
    iterations: int
    residual: float


def solve_darcy_values(a: np.ndarray, cfg: DarcyConfig) -> DarcySolution:
    grid = cfg.grid
    r, h = grid.r, grid.h
    a = np.asarray(a, dtype=float)
    if a.shape != grid.shape:
        raise ValueError(f"coefficient shape {a.shape} does not match {grid}")
    if not np.all(a > 0):
        raise ValueError("Darcy coefficient must be strictly positive")
    ax, ay = face_coefficients(a, cfg.face_average)
    n_int = (r - 2) ** 2
    shape = (r - 2, r - 2)
    fp = FastPoisson(r)

    def matvec(x):
        u = np.zeros((r, r))
        u[1:-1, 1:-1] = x.reshape(shape)
        return apply_darcy(u, ax, ay, h).ravel()

    def precond(x):
        return fp.solve_interior(x.reshape(shape)).ravel()

    A = LinearOperator((n_int, n_int), matvec=matvec, dtype=float)
    M = LinearOperator((n_int, n_int), matvec=precond, dtype=float)
    b = cfg.forcing_values()[1:-1, 1:-1].ravel().copy()
    bnorm = np.linalg.norm(b)
    u = np.zeros((r, r))
    if bnorm == 0:
        return DarcySolution(u, 0, 0.0)
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = cg(A, b, rtol=cfg.cg_tolerance, atol=0.0, maxiter=cfg.max_iter, M=M, callback=tick)
    res = float(np.linalg.norm(b - A @ x) / bnorm)
    if info != 0:
        raise SolverError(f"CG did not converge in {cfg.max_iter} iterations (residual {res:.2e})")
    u[1:-1, 1:-1] = x.reshape(shape)
    return DarcySolution(u, count[0], res)


def solve_darcy(a: GridFunction, cfg: DarcyConfig) -> GridFunction:
    if a.grid != cfg.grid:
        raise ValueError(f"coefficient grid {a.grid} differs from solver grid {cfg.grid}")
    return GridFunction(cfg.grid, solve_darcy_values(a.values, cfg).u)


def gen_darcy_dataset(
    n: int,
    cfg: DarcyConfig,
    prior: LevelSetPrior = LevelSetPrior(),
    master_seed: int = 0,
) -> Dataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    grid = cfg.grid
    a = np.empty((n,) + grid.shape)
    u = np.empty_like(a)
    iters = []
    for i in range(n):
        a[i] = sample_levelset_batch(prior, grid, master_seed, [i])[0]
        try:
            sol = solve_darcy_values(a[i], cfg)
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}") from exc
        u[i] = sol.u
        iters.append(sol.iterations)
    log.debug("darcy: %d samples, max CG iterations %d", n, max(iters))
    manifest = {
        "pde": "darcy",
        "a_plus": prior.a_plus,
        "a_minus": prior.a_minus,
        "contrast": prior.a_plus / prior.a_minus,
        "tau": prior.tau,
        "alpha_reg": prior.alpha_reg,
        "f": cfg.forcing_spec(),
        "r": grid.r,
        "K": grid.K,
        "seed": int(master_seed),
        "cg_tolerance": cfg.cg_tolerance,
        "face_average": cfg.face_average,
        "max_cg_iterations": int(max(iters)),
        "n": n,
    }
    return Dataset(grid, a, u, manifest)
