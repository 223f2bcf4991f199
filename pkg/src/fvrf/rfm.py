"""Random feature model: training by regularized normal equations, prediction,
semigroup composition, test error, and the kernel ridge oracle.

The model is

    F_m(a; alpha) = (1/m) sum_j alpha_j phi(a; theta_j)

and ``alpha`` solves

    [ (1/m) sum_i <phi(a_i; theta_l), phi(a_i; theta_j)> + lam delta_lj ] alpha_j
        = sum_i <phi(a_i; theta_l), y_i>

with ``<., .>`` the trapezoid L2 inner product of the output grid.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .darcy import SmoothingConfig
from .features import (
    BROWNIAN_BRIDGE,
    PREDICTOR_CORRECTOR,
    FeatureFamily,
    evaluate_features,
    family_from_json,
    pc_theta_fields,
)
from .fvrf_io import Dataset, dump_json, read_tensor, write_tensor
from .grf import stream_rng
from .grid import Grid, Grid1D, Grid2D, GridFunction, relative_l2_errors

log = logging.getLogger(__name__)

DEFAULT_RCOND = 1e-13


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class NormalSystem:
    """``A alpha = b`` with ``A`` already containing ``lam * I``.

    ``factor``, when present, is a matrix ``Z`` with ``A - lam I = Z^T Z / m``;
    it is kept only when it has fewer rows than columns, where the
    pseudoinverse is cheaper to form from ``Z`` than from ``A``.
    """

    A: np.ndarray
    b: np.ndarray
    lam: float
    m: int
    factor: np.ndarray | None = None


def _output_weights(grid: Grid | None) -> np.ndarray:
    return np.ones(()) if grid is None else grid.weights


def normal_system_from_features(Phi: np.ndarray, Y: np.ndarray, weights, lam: float) -> NormalSystem:
    """Assemble from an explicit feature tensor ``Phi`` ``(n, m, *out)`` and outputs ``Y`` ``(n, *out)``."""
    acc = _GramAccumulator(Phi.shape[1], np.asarray(weights, dtype=float), n_total=Phi.shape[0])
    acc.add(Phi, Y)
    return acc.finish(lam)


class _GramAccumulator:
    def __init__(self, m: int, weights: np.ndarray, n_total: int):
        self.m = m
        self.w = weights
        self.sqrt_w = np.sqrt(weights).ravel()
        self.G = np.zeros((m, m))
        self.b = np.zeros(m)
        self.keep_factor = n_total * max(1, weights.size) < m
        self.rows = []

    def add(self, Phi: np.ndarray, Y: np.ndarray) -> None:
        n, m = Phi.shape[:2]
        # rows of Z: quadrature-scaled output nodes of every sample
        Z = (Phi.reshape(n, m, -1) * self.sqrt_w).transpose(0, 2, 1).reshape(-1, m)
        y = (Y.reshape(n, -1) * self.sqrt_w).reshape(-1)
        self.G += Z.T @ Z
        self.b += Z.T @ y
        if self.keep_factor:
            self.rows.append(Z)

    def finish(self, lam: float) -> NormalSystem:
        A = self.G / self.m
        A = 0.5 * (A + A.T)
        A[np.diag_indices_from(A)] += lam
        factor = np.concatenate(self.rows) if self.keep_factor else None
        return NormalSystem(A, self.b.copy(), float(lam), self.m, factor)


def assemble_normal_system(
    train: Dataset,
    family: FeatureFamily,
    xi: np.ndarray,
    lam: float,
    *,
    batch_size: int = 32,
    context: dict | None = None,
) -> NormalSystem:
    """Gram matrix and right-hand side, built over fixed-order sample batches."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    context = _feature_context(family, train.grid, xi, context)
    acc = _GramAccumulator(len(xi), train.grid.weights, train.n)
    for start in range(0, train.n, batch_size):
        sl = slice(start, min(train.n, start + batch_size))
        Phi = evaluate_features(family, train.inputs[sl], xi, train.grid, **context)
        acc.add(Phi, train.outputs[sl])
    return acc.finish(lam)


def solve_coefficients(system: NormalSystem, lam: float | None = None, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Cholesky solve for ``lam > 0``; truncated-SVD minimum-norm solve for ``lam = 0``."""
    lam = system.lam if lam is None else lam
    if lam > 0:
        try:
            c = scipy.linalg.cho_factor(system.A)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                "normal matrix is numerically singular; retrain with lambda=0 to use the pseudoinverse"
            ) from exc
        return scipy.linalg.cho_solve(c, system.b)
    if system.factor is not None:
        return _pinv_from_factor(system.factor, system.m, system.b, rcond)
    U, s, Vt = scipy.linalg.svd(system.A)
    keep = s > rcond * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    return Vt[keep].T @ ((U[:, keep].T @ system.b) / s[keep])


def _pinv_from_factor(Z: np.ndarray, m: int, b: np.ndarray, rcond: float) -> np.ndarray:
    # A = Z^T Z / m = V (s^2/m) V^T
    _, s, Vt = scipy.linalg.svd(Z, full_matrices=False)
    sig = s**2 / m
    keep = sig > rcond * sig[0] if sig.size and sig[0] > 0 else np.zeros_like(sig, dtype=bool)
    V = Vt[keep].T
    return V @ ((V.T @ b) / sig[keep])


# -- feature parameters -------------------------------------------------------------


def feature_stream(m: int, field_index: int = 0) -> int:
    """Stream id of feature field ``field_index`` in a model with ``m`` features."""
    return (int(m) << 32) + field_index


def draw_feature_params(family: FeatureFamily, m: int, J: int, seed: int) -> np.ndarray:
    """KL coefficients ``(m, J)`` (or ``(m, 2, J)`` for two-field families).

    Row ``j`` of each field's ``(m, J)`` block is feature ``j``; the block comes
    from a single stream keyed by ``(seed, m, field)``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if J < 1:
        raise ValueError("J must be at least 1")
    nf = family.n_fields
    xi = np.stack([stream_rng(seed, feature_stream(m, f)).standard_normal((m, J)) for f in range(nf)], axis=1)
    return xi if nf > 1 else xi[:, 0]


def _feature_context(family, grid, xi, context):
    context = dict(context or {})
    if family.kind == PREDICTOR_CORRECTOR:
        context.setdefault("sig", pc_theta_fields(xi, family, grid))
    return context


# -- the model ----------------------------------------------------------------------


@dataclass
class RfmModel:
    family: FeatureFamily
    xi: np.ndarray
    alpha: np.ndarray
    lam: float
    rcond: float = DEFAULT_RCOND
    seed: int | None = None
    context: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != (len(self.xi),):
            raise ValueError("alpha length must equal the number of features")
        if len(self.xi) < 1:
            raise ValueError("a model needs at least one feature")

    @property
    def m(self) -> int:
        return len(self.xi)

    @property
    def J(self) -> int:
        return self.xi.shape[-1]

    def features(self, inputs, grid: Grid | None) -> np.ndarray:
        _check_supported(self.family, grid)
        ctx = _feature_context(self.family, grid, self.xi, self.context)
        return evaluate_features(self.family, inputs, self.xi, grid, **ctx)

    def with_alpha(self, alpha) -> "RfmModel":
        return RfmModel(self.family, self.xi, np.asarray(alpha, float), self.lam, self.rcond,
                        self.seed, dict(self.context), dict(self.metadata))


def _check_supported(family, grid):
    if family.kind == BROWNIAN_BRIDGE:
        if grid is not None:
            raise ValueError("Brownian bridge features take scalar inputs, not grids")
    elif family.kind == PREDICTOR_CORRECTOR:
        if not isinstance(grid, Grid2D):
            raise ValueError(f"unsupported grid {grid} for {family.kind}")
    elif not isinstance(grid, Grid1D):
        raise ValueError(f"unsupported grid {grid} for {family.kind}")


def train(
    data: Dataset,
    family: FeatureFamily,
    m: int,
    lam: float = 0.0,
    seed: int = 0,
    *,
    J: int | None = None,
    rcond: float = DEFAULT_RCOND,
    batch_size: int = 32,
    context: dict | None = None,
    xi: np.ndarray | None = None,
) -> RfmModel:
    """Draw ``m`` features (unless ``xi`` is given) and fit ``alpha`` on ``data``."""
    _check_supported(family, data.grid)
    if xi is None:
        J = family.default_J(data.grid) if J is None else J
        xi = draw_feature_params(family, m, J, seed)
    context = dict(context or {})
    system = assemble_normal_system(data, family, xi, lam, batch_size=batch_size, context=context)
    alpha = solve_coefficients(system, lam, rcond)
    meta = {"n": data.n, "grid": _grid_json(data.grid)}
    for key in ("pde", "seed", "T"):
        if key in data.manifest:
            meta[f"data_{key}"] = data.manifest[key]
    return RfmModel(family, xi, alpha, float(lam), rcond, seed, context, meta)


def predict_values(model: RfmModel, inputs, grid: Grid | None, *, batch_size: int = 64) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    n = len(inputs)
    out = None
    for start in range(0, n, batch_size):
        sl = slice(start, min(n, start + batch_size))
        Phi = model.features(inputs[sl], grid)
        pred = np.tensordot(model.alpha, Phi, axes=([0], [1])) / model.m
        if out is None:
            out = np.empty((n,) + pred.shape[1:])
        out[sl] = pred
    return out


def predict(model: RfmModel, a: GridFunction) -> GridFunction:
    return GridFunction(a.grid, predict_values(model, a.values[None], a.grid)[0])


def compose_values(model: RfmModel, inputs, grid: Grid, j: int) -> np.ndarray:
    if j < 1:
        raise ValueError("composition count must be at least 1")
    if model.family.kind != "fourier-burgers":
        raise ValueError("self-composition needs matching input and output spaces")
    u = np.asarray(inputs, dtype=float)
    for _ in range(j):
        u = predict_values(model, u, grid)
    return u


def compose_predict(model: RfmModel, a: GridFunction, j: int) -> GridFunction:
    return GridFunction(a.grid, compose_values(model, a.values[None], a.grid, j)[0])


def relative_test_errors(model: RfmModel, test: Dataset, *, compose: int = 1) -> np.ndarray:
    if test.n < 1:
        raise ValueError("test dataset is empty")
    if compose == 1:
        pred = predict_values(model, test.inputs, test.grid)
    else:
        pred = compose_values(model, test.inputs, test.grid, compose)
    return relative_l2_errors(test.grid, test.outputs, pred)


def expected_relative_test_error(model: RfmModel, test: Dataset) -> float:
    return float(np.mean(relative_test_errors(model, test)))


def objective(alpha, Phi: np.ndarray, Y: np.ndarray, weights, lam: float) -> float:
    """Regularized empirical risk minimized by the trained coefficients."""
    alpha = np.asarray(alpha, dtype=float)
    m = Phi.shape[1]
    pred = np.tensordot(alpha, Phi, axes=([0], [1])) / m
    w = np.asarray(weights, dtype=float)
    resid = (Y - pred) ** 2 * w
    return 0.5 * float(resid.sum()) + lam / (2 * m) * float(alpha @ alpha)


# -- kernel view ------------------------------------------------------------------


def empirical_kernel(phi_a: np.ndarray, phi_ap: np.ndarray, weights) -> np.ndarray:
    """Empirical operator-valued kernel ``(1/m) sum_j phi_j(a) (x) phi_j(a')``.

    ``phi_a`` and ``phi_ap`` have shape ``(m, K)``. The matrix is returned in
    quadrature-orthonormal coordinates (nodal values scaled by ``sqrt(w)``), where
    the L2 adjoint is the plain transpose.
    """
    sw = np.sqrt(np.asarray(weights, dtype=float).ravel())
    m = phi_a.shape[0]
    return (phi_a.reshape(m, -1) * sw).T @ (phi_ap.reshape(m, -1) * sw) / m


MAX_ORACLE_SIZE = 2000


def kernel_ridge_oracle(Phi_train: np.ndarray, Y: np.ndarray, weights, lam: float):
    """Representer-form kernel ridge regressor with the empirical kernel.

    Solves the block system ``(G + lam I) beta = y`` over all ``n * K`` output
    nodes and returns ``predict(Phi_test) -> (n', *out)``.
    """
    n, m = Phi_train.shape[:2]
    out_shape = Y.shape[1:]
    w = np.broadcast_to(np.asarray(weights, dtype=float), out_shape).ravel()
    K = w.size
    if n * K > MAX_ORACLE_SIZE:
        raise ValueError(f"oracle block system of size {n * K} exceeds {MAX_ORACLE_SIZE}")
    sw = np.sqrt(w)
    Z = (Phi_train.reshape(n, m, K) * sw).transpose(0, 2, 1).reshape(n * K, m)
    G = Z @ Z.T / m
    y = (Y.reshape(n, K) * sw).ravel()
    if lam > 0:
        beta = scipy.linalg.solve(G + lam * np.eye(n * K), y, assume_a="pos")
    else:
        beta = scipy.linalg.lstsq(G, y)[0]

    def predictor(Phi_test: np.ndarray) -> np.ndarray:
        nt = Phi_test.shape[0]
        Zt = (Phi_test.reshape(nt, m, K) * sw).transpose(0, 2, 1).reshape(nt * K, m)
        pred = Zt @ (Z.T @ beta) / m
        return (pred.reshape(nt, K) / sw).reshape((nt,) + out_shape)

    return predictor


# -- persistence --------------------------------------------------------------------


def _grid_json(grid: Grid | None):
    if grid is None:
        return None
    if isinstance(grid, Grid1D):
        return {"kind": "1d", "K": grid.K}
    return {"kind": "2d", "r": grid.r}


def grid_from_json(obj) -> Grid | None:
    if obj is None:
        return None
    return Grid1D.from_K(obj["K"]) if obj["kind"] == "1d" else Grid2D(obj["r"])


def _context_json(ctx: dict) -> dict:
    out = {}
    if "forcing" in ctx:
        out["forcing"] = float(ctx["forcing"])
    if "smoothing" in ctx:
        sm = ctx["smoothing"]
        out["smoothing"] = {"eta": sm.eta, "dt": sm.dt, "steps": sm.steps}
    return out


def _context_from_json(obj: dict) -> dict:
    ctx = {}
    if "forcing" in obj:
        ctx["forcing"] = obj["forcing"]
    if "smoothing" in obj:
        ctx["smoothing"] = SmoothingConfig(**obj["smoothing"])
    return ctx


def save_model(model: RfmModel, directory, extra: dict | None = None) -> dict[str, str]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    digests = {
        "alpha.bin": write_tensor(d / "alpha.bin", model.alpha),
        "xi.bin": write_tensor(d / "xi.bin", model.xi),
    }
    info = {
        "family": model.family.kind,
        "hyperparameters": model.family.hyperparameters(),
        "m": model.m,
        "J": model.J,
        "lambda": model.lam,
        "rcond": model.rcond,
        "seed": model.seed,
        "feature_streams": "one (m, J) block per field from stream (m << 32) + field",
        "context": _context_json(model.context),
        "training": model.metadata,
        "files": digests,
    }
    info.update(extra or {})
    digests["model.json"] = dump_json(d / "model.json", info)
    return digests


def load_model(directory) -> RfmModel:
    d = Path(directory)
    path = d / "model.json"
    if not path.exists():
        raise FileNotFoundError(f"no model.json in {d}")
    info = json.loads(path.read_text())
    family = family_from_json(info["family"], info["hyperparameters"])
    alpha = read_tensor(d / "alpha.bin")
    xi = read_tensor(d / "xi.bin")
    return RfmModel(family, xi, alpha, info["lambda"], info.get("rcond", DEFAULT_RCOND),
                    info.get("seed"), _context_from_json(info.get("context", {})),
                    info.get("training", {}))
