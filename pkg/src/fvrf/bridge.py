"""Scalar regression with Brownian bridge random features.

With features ``phi(x; theta) = sum_j theta_j sqrt(2) sin(j pi x) / (j pi)`` and
``theta_j ~ N(0, 1)``, the induced kernel is ``min(x, x') - x x'``, so as the
feature count grows the trained model approaches the piecewise-linear kernel
interpolant of the training data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .features import BrownianBridgeFamily, bb_features_batch, bridge_kernel
from .grf import stream_rng
from .rfm import DEFAULT_RCOND, draw_feature_params, normal_system_from_features, solve_coefficients


def target(x):
    """Fixed test function with a kink at 0.6 (vanishes at 0; equals 0.08 at 1)."""
    x = np.asarray(x, dtype=float)
    return x - x**2 + 0.5 * np.maximum(0.0, x - 0.6) * (x - 0.6)


def training_inputs(n: int, seed: int) -> np.ndarray:
    return np.sort(stream_rng(seed, 0).uniform(size=n))


def kernel_interpolant(x_train, y_train, x_eval, lam: float = 0.0):
    K = bridge_kernel(x_train[:, None], x_train[None, :])
    if lam > 0:
        K = K + lam * np.eye(len(x_train))
    coef = scipy.linalg.solve(K, y_train, assume_a="pos")
    return bridge_kernel(np.asarray(x_eval)[:, None], x_train[None, :]) @ coef


@dataclass
class BridgeFit:
    xi: np.ndarray
    alpha: np.ndarray

    def __call__(self, x):
        Phi = bb_features_batch(np.ravel(x), self.xi)
        return Phi @ self.alpha / len(self.alpha)


def fit(x_train, y_train, m: int, seed: int, *, J: int = 512, lam: float = 0.0,
        rcond: float = DEFAULT_RCOND) -> BridgeFit:
    xi = draw_feature_params(BrownianBridgeFamily(J), m, J, seed)
    Phi = bb_features_batch(x_train, xi)
    system = normal_system_from_features(Phi, np.asarray(y_train, float), np.ones(()), lam)
    return BridgeFit(xi, solve_coefficients(system, lam, rcond))


def empirical_bridge_kernel(x, xp, m: int, seed: int, J: int = 512) -> float:
    xi = draw_feature_params(BrownianBridgeFamily(J), m, J, seed)
    phi = bb_features_batch(np.array([x, xp]), xi)
    return float(np.mean(phi[0] * phi[1]))


def demo(n: int = 32, ms=(50, 500, 5000), seed: int = 0, J: int = 512, n_eval: int = 257) -> dict:
    """Columns ``x, truth, pred_m<m>..., oracle`` of the interpolation comparison."""
    x_train = training_inputs(n, seed)
    y_train = target(x_train)
    x = np.linspace(0.0, 1.0, n_eval)
    table = {"x": x, "truth": target(x)}
    for m in ms:
        table[f"pred_m{m}"] = fit(x_train, y_train, m, seed, J=J)(x)
    table["oracle"] = kernel_interpolant(x_train, y_train, x)
    return table


def sup_gaps(table: dict) -> dict[int, float]:
    return {
        int(k[len("pred_m"):]): float(np.max(np.abs(v - table["oracle"])))
        for k, v in table.items() if k.startswith("pred_m")
    }
