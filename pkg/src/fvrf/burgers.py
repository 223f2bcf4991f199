"""Viscous Burgers' equation on the periodic unit interval.

    u_t + (u^2 / 2)_x = eps * u_xx,     u(0, .) = a

Fourier pseudospectral in space, integrating-factor RK4 in time: diffusion is
propagated exactly by ``exp(-eps (2 pi k)^2 t)`` and classical RK4 is applied
to the transformed nonlinear term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fvrf_io import Dataset
from .grf import PERIODIC_1D, draw_xi_batch, eigenpairs, nyquist_modes, synthesize
from .grid import Grid1D, GridFunction

log = logging.getLogger(__name__)

MEAN_TOL = 1e-10


class SolverError(RuntimeError):
    pass


def default_dt(n_unique: int) -> float:
    return 1e-4 * 1024 / n_unique


@dataclass(frozen=True)
class BurgersConfig:
    grid: Grid1D
    viscosity: float = 1e-2
    t_final: float = 1.0
    dt: float | None = None
    dealias: bool = True

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.grid.n_unique))
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if not 0 < self.dt <= self.t_final:
            raise ValueError(f"need 0 < dt <= t_final, got dt={self.dt}")


@dataclass
class _IFRK4:
    n: int
    viscosity: float
    dealias: bool
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        k = np.arange(self.n // 2 + 1)
        self.ik = 2j * np.pi * k
        self.L = self.viscosity * (2 * np.pi * k) ** 2
        if self.dealias:
            self.mask = (k < self.n / 3).astype(float)
        else:
            self.mask = np.ones_like(k, dtype=float)
            self.mask[-1] = 0.0  # Nyquist mode has no derivative partner

    def nonlinear(self, uh):
        u = np.fft.irfft(self.mask * uh, n=self.n, axis=-1)
        return -0.5 * self.mask * self.ik * np.fft.rfft(u * u, axis=-1)

    def factors(self, dt):
        if dt not in self._cache:
            self._cache[dt] = (np.exp(-0.5 * dt * self.L), np.exp(-dt * self.L))
        return self._cache[dt]

    def step(self, uh, dt):
        E2, E = self.factors(dt)
        k1 = self.nonlinear(uh)
        k2 = self.nonlinear(E2 * (uh + 0.5 * dt * k1))
        k3 = self.nonlinear(E2 * uh + 0.5 * dt * k2)
        k4 = self.nonlinear(E * uh + dt * E2 * k3)
        return E * uh + dt / 6.0 * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)


def _check_input(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise SolverError("initial condition is not finite")
    means = values.mean(axis=-1)
    if np.any(np.abs(means) > MEAN_TOL):
        raise ValueError(f"initial condition must have zero mean (|mean| = {np.abs(means).max():.2e})")


def solve_burgers_batch(a: np.ndarray, cfg: BurgersConfig, times=None) -> np.ndarray:
    """Evolve a batch ``a`` of shape ``(..., n_unique)``.

    Returns ``u(T)`` with the same shape, or, if ``times`` is given, an array with
    a leading axis over the requested output times (each ``<= t_final`` is not
    required; the run extends to ``max(times)``). The last step before each
    output time is shortened so that the time is hit exactly.
    """
    a = np.asarray(a, dtype=float)
    n = cfg.grid.n_unique
    if a.shape[-1] != n:
        raise ValueError(f"input has {a.shape[-1]} nodes, grid has {n}")
    _check_input(a)
    stepper = _IFRK4(n, cfg.viscosity, cfg.dealias)
    targets = [cfg.t_final] if times is None else sorted(float(t) for t in times)
    if targets[0] <= 0:
        raise ValueError("output times must be positive")

    uh = np.fft.rfft(a, axis=-1)
    uh[..., 0] = 0.0
    t = 0.0
    snapshots = []
    for target in targets:
        nsteps = int(np.ceil((target - t) / cfg.dt - 1e-9))
        for i in range(nsteps):
            dt = cfg.dt if i < nsteps - 1 else (target - t) - (nsteps - 1) * cfg.dt
            uh = stepper.step(uh, dt)
            if not np.all(np.isfinite(uh)):
                raise SolverError(f"non-finite state at t={t + (i + 1) * cfg.dt:.4g}; reduce dt")
        t = target
        snapshots.append(np.fft.irfft(uh, n=n, axis=-1))
    if times is None:
        return snapshots[0]
    order = np.argsort(np.argsort([float(s) for s in times]))
    return np.stack([snapshots[i] for i in order])


def solve_burgers(a: GridFunction, cfg: BurgersConfig) -> GridFunction:
    if a.grid != cfg.grid:
        raise ValueError(f"input grid {a.grid} differs from solver grid {cfg.grid}")
    return GridFunction(cfg.grid, solve_burgers_batch(a.values, cfg))


@dataclass(frozen=True)
class BurgersPrior:
    tau: float = 7.0
    alpha_reg: float = 2.5


def sample_initial_conditions(n: int, grid: Grid1D, prior: BurgersPrior, master_seed: int) -> np.ndarray:
    """``n`` draws from N(0, C), sample ``i`` on stream ``i``."""
    J = nyquist_modes(PERIODIC_1D, grid)
    spec = eigenpairs(PERIODIC_1D, prior.tau, prior.alpha_reg, J)
    xi = draw_xi_batch(master_seed, range(n), J)
    a = synthesize(spec, xi, grid)
    # exact zero mean up to roundoff from the inverse FFT
    return a - a.mean(axis=-1, keepdims=True)


def gen_burgers_dataset(
    n: int,
    cfg: BurgersConfig,
    prior: BurgersPrior = BurgersPrior(),
    master_seed: int = 0,
    *,
    batch_size: int = 64,
) -> Dataset:
    return gen_burgers_snapshots(n, cfg, [cfg.t_final], prior, master_seed, batch_size=batch_size)[0]


def gen_burgers_snapshots(
    n: int,
    cfg: BurgersConfig,
    times,
    prior: BurgersPrior = BurgersPrior(),
    master_seed: int = 0,
    *,
    batch_size: int = 64,
) -> list[Dataset]:
    """One dataset per output time, all sharing the same initial conditions."""
    if n < 1:
        raise ValueError("n must be at least 1")
    times = [float(t) for t in times]
    a = sample_initial_conditions(n, cfg.grid, prior, master_seed)
    u = np.empty((len(times),) + a.shape)
    for start in range(0, n, batch_size):
        sl = slice(start, min(n, start + batch_size))
        try:
            u[:, sl] = solve_burgers_batch(a[sl], cfg, times)
        except SolverError as exc:
            raise SolverError(f"samples {sl.start}..{sl.stop - 1}: {exc}") from exc
        log.debug("burgers samples %d..%d done", sl.start, sl.stop - 1)
    return [Dataset(cfg.grid, a, u[i], _manifest(cfg, prior, master_seed, n, t)) for i, t in enumerate(times)]


def _manifest(cfg, prior, master_seed, n, t_final) -> dict:
    return {
        "pde": "burgers",
        "epsilon": cfg.viscosity,
        "T": t_final,
        "dt": cfg.dt,
        "dealias": cfg.dealias,
        "tau": prior.tau,
        "alpha_reg": prior.alpha_reg,
        "seed": int(master_seed),
        "K": cfg.grid.K,
        "n": n,
    }
