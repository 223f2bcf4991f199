import numpy as np
import pytest

from fvrf import rfm
from fvrf.burgers import BurgersConfig, gen_burgers_dataset
from fvrf.darcy import DarcyConfig, gen_darcy_dataset
from fvrf.features import BrownianBridgeFamily, FourierFamily, PredictorCorrectorFamily, bb_basis
from fvrf.fvrf_io import Dataset
from fvrf.grid import Grid1D, Grid2D


@pytest.fixture(scope="module")
def burgers_small():
    cfg = BurgersConfig(Grid1D(64), t_final=0.2)
    return gen_burgers_dataset(12, cfg, master_seed=0), gen_burgers_dataset(6, cfg, master_seed=1)


@pytest.fixture(scope="module")
def darcy_small():
    return gen_darcy_dataset(6, DarcyConfig(Grid2D(17)), master_seed=0)


def function_features(x, xi, s):
    """Vector-valued bridge features on a small output grid ``s``: (n, m, len(s))."""
    J = xi.shape[1]
    return np.einsum("nj,mj,kj->nmk", bb_basis(x, J), xi, bb_basis(s, J))


def tiny_instance(m, seed=0):
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 1, 9)
    w = np.full(9, 1 / 8)
    w[[0, -1]] /= 2
    xi = rng.standard_normal((m, 16))
    x, xt = rng.uniform(size=4), rng.uniform(size=5)
    Y = np.sin(np.pi * np.outer(x, s)) + 0.1 * s
    return function_features(x, xi, s), function_features(xt, xi, s), Y, w


def rfm_predict(Phi, Y, w, lam, Phi_t):
    alpha = rfm.solve_coefficients(rfm.normal_system_from_features(Phi, Y, w, lam), lam)
    return np.tensordot(alpha, Phi_t, axes=([0], [1])) / Phi.shape[1]


@pytest.mark.parametrize("m,lam", [(3, 1e-3), (3, 1.0), (64, 1e-3), (64, 0.0)])
def test_kernel_ridge_equivalence(m, lam):
    Phi, Phi_t, Y, w = tiny_instance(m)
    pred = rfm_predict(Phi, Y, w, lam, Phi_t)
    oracle = rfm.kernel_ridge_oracle(Phi, Y, w, lam)(Phi_t)
    assert np.linalg.norm(pred - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_both_predictors_vanish_for_large_lambda():
    Phi, Phi_t, Y, w = tiny_instance(3)
    sizes = []
    for lam in (1e3, 1e6, 1e9):
        p = rfm_predict(Phi, Y, w, lam, Phi_t)
        o = rfm.kernel_ridge_oracle(Phi, Y, w, lam)(Phi_t)
        assert np.allclose(p, o, rtol=1e-8, atol=0)
        sizes.append(np.max(np.abs(p)))
    # predictions scale like 1/lambda
    assert sizes[1] == pytest.approx(sizes[0] * 1e-3, rel=1e-2)
    assert sizes[2] == pytest.approx(sizes[1] * 1e-3, rel=1e-5)


def test_oracle_size_limit():
    Phi = np.zeros((300, 2, 9))
    with pytest.raises(ValueError):
        rfm.kernel_ridge_oracle(Phi, np.zeros((300, 9)), np.ones(9), 1.0)


def test_single_feature_recovers_scale():
    Phi, _, _, w = tiny_instance(1)
    Y = 2.5 * Phi[:, 0]
    alpha = rfm.solve_coefficients(rfm.normal_system_from_features(Phi, Y, w, 0.0))
    assert alpha == pytest.approx([2.5], rel=1e-12)


def test_normal_matrix_structure():
    Phi, _, Y, w = tiny_instance(20, seed=3)
    s1 = rfm.normal_system_from_features(Phi, Y, w, 0.1)
    s2 = rfm.normal_system_from_features(Phi, Y, w, 0.2)
    assert np.array_equal(s1.A, s1.A.T)
    ev = np.linalg.eigvalsh(s1.A - 0.1 * np.eye(20))
    assert ev.min() >= -1e-10 * np.abs(ev).max()
    assert np.allclose(np.diag(s2.A) - np.diag(s1.A), 0.1, rtol=0, atol=1e-15)
    assert np.array_equal(s1.A - np.diag(np.diag(s1.A)), s2.A - np.diag(np.diag(s2.A)))


def test_solver_limits():
    Phi, _, Y, w = tiny_instance(10)
    sys0 = rfm.normal_system_from_features(Phi, np.zeros_like(Y), w, 0.0)
    assert np.all(rfm.solve_coefficients(sys0) == 0)
    A_norm = np.linalg.norm(rfm.normal_system_from_features(Phi, Y, w, 0.0).A, 2)
    lam = 1e6 * A_norm
    sysl = rfm.normal_system_from_features(Phi, Y, w, lam)
    alpha = rfm.solve_coefficients(sysl)
    ref = sysl.b / lam
    assert np.linalg.norm(alpha - ref) <= 1e-4 * np.linalg.norm(ref)


@pytest.mark.parametrize("n_train", [2, 40])
def test_pseudoinverse_with_duplicate_features(n_train):
    # n_train = 2 takes the thin-factor path, 40 the dense path
    rng = np.random.default_rng(5)
    s = np.linspace(0, 1, 5)
    xi = rng.standard_normal((6, 8))
    xi = np.concatenate([xi, xi[:3]])  # duplicated features: A is rank deficient
    x = rng.uniform(size=n_train)
    Phi = function_features(x, xi, s)
    Y = np.cos(np.outer(x, s))
    w = np.full(5, 0.25)
    system = rfm.normal_system_from_features(Phi, Y, w, 0.0)
    assert (system.factor is not None) == (n_train * 5 < 9)
    alpha = rfm.solve_coefficients(system)
    A = system.A
    U, sv, Vt = np.linalg.svd(A)
    keep = sv > 1e-13 * sv[0]
    ref = Vt[keep].T @ ((U[:, keep].T @ system.b) / sv[keep])
    assert np.linalg.norm(alpha - ref) <= 1e-8 * np.linalg.norm(ref)


def test_cholesky_failure_points_to_pseudoinverse():
    system = rfm.NormalSystem(np.ones((2, 2)), np.ones(2), 1e-300, 2)
    with pytest.raises(rfm.SingularSystemError, match="lambda=0"):
        rfm.solve_coefficients(system)


def test_objective_is_minimized():
    Phi, _, Y, w = tiny_instance(5)
    lam = 0.05
    alpha = rfm.solve_coefficients(rfm.normal_system_from_features(Phi, Y, w, lam))
    best = rfm.objective(alpha, Phi, Y, w, lam)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert rfm.objective(alpha + 1e-3 * rng.standard_normal(5), Phi, Y, w, lam) > best


def test_empirical_kernel_properties():
    rng = np.random.default_rng(2)
    w = np.full(7, 1 / 7)
    pa, pb = rng.standard_normal((2, 12, 7))
    k_ab = rfm.empirical_kernel(pa, pb, w)
    assert np.allclose(k_ab.T, rfm.empirical_kernel(pb, pa, w))
    assert np.linalg.matrix_rank(rfm.empirical_kernel(pa[:1], pb[:1], w)) == 1
    feats = rng.standard_normal((4, 12, 7))
    blocks = np.block([[rfm.empirical_kernel(feats[i], feats[j], w) for j in range(4)] for i in range(4)])
    assert np.linalg.eigvalsh(blocks).min() >= -1e-12


def test_train_predict_and_persistence(tmp_path, burgers_small):
    train, test = burgers_small
    model = rfm.train(train, FourierFamily(), 16, 0.0, seed=3)
    assert model.m == 16 and model.J == 62
    again = rfm.train(train, FourierFamily(), 16, 0.0, seed=3)
    assert np.array_equal(model.alpha, again.alpha)
    rfm.save_model(model, tmp_path)
    loaded = rfm.load_model(tmp_path)
    assert loaded.family == model.family and loaded.lam == 0.0 and loaded.seed == 3
    p1 = rfm.predict_values(model, test.inputs, test.grid)
    assert np.array_equal(p1, rfm.predict_values(loaded, test.inputs, test.grid))
    p2 = rfm.predict_values(model.with_alpha(2 * model.alpha), test.inputs, test.grid)
    assert np.allclose(p2, 2 * p1)
    zero = model.with_alpha(np.zeros(16))
    assert np.all(rfm.predict_values(zero, test.inputs, test.grid) == 0)
    assert rfm.expected_relative_test_error(zero, test) == pytest.approx(1.0)
    assert np.all(rfm.compose_values(zero, test.inputs, test.grid, 3) == 0)


def test_composition(burgers_small):
    train, test = burgers_small
    model = rfm.train(train, FourierFamily(), 8, 0.0, seed=0)
    p = rfm.predict_values(model, test.inputs, test.grid)
    assert np.array_equal(rfm.compose_values(model, test.inputs, test.grid, 1), p)
    assert np.allclose(rfm.compose_values(model, test.inputs, test.grid, 2),
                       rfm.predict_values(model, p, test.grid))
    with pytest.raises(ValueError):
        rfm.compose_values(model, test.inputs, test.grid, 0)


def test_perfect_model_has_zero_error(burgers_small):
    train, _ = burgers_small
    model = rfm.train(train, FourierFamily(), 8, 0.0, seed=0)
    # outputs generated by the model itself are reproduced exactly
    y = rfm.predict_values(model, train.inputs, train.grid)
    synthetic = Dataset(train.grid, train.inputs, y)
    assert rfm.expected_relative_test_error(model, synthetic) <= 1e-14
    refit = rfm.train(synthetic, FourierFamily(), 8, 0.0, seed=0)
    assert np.allclose(refit.alpha, model.alpha, rtol=1e-6)
    with pytest.raises(ValueError):
        rfm.relative_test_errors(model, synthetic.subset(slice(0, 0)))


def test_grid_family_mismatch(burgers_small, darcy_small):
    with pytest.raises(ValueError):
        rfm.train(darcy_small, FourierFamily(), 4)
    with pytest.raises(ValueError):
        rfm.train(burgers_small[0], PredictorCorrectorFamily(), 4)


def test_darcy_model_roundtrip(tmp_path, darcy_small):
    model = rfm.train(darcy_small, PredictorCorrectorFamily(), 6, 1e-8, seed=1, context={"forcing": 1.0})
    assert model.xi.shape == (6, 2, PredictorCorrectorFamily().default_J(darcy_small.grid))
    rfm.save_model(model, tmp_path)
    loaded = rfm.load_model(tmp_path)
    a = darcy_small.inputs[:2]
    assert np.array_equal(rfm.predict_values(model, a, darcy_small.grid),
                          rfm.predict_values(loaded, a, darcy_small.grid))
    # prediction on a finer grid is defined (resolution transfer)
    fine = gen_darcy_dataset(1, DarcyConfig(Grid2D(33)), master_seed=0)
    assert rfm.predict_values(loaded, fine.inputs, fine.grid).shape == (1, 33, 33)


def test_feature_streams_depend_on_m():
    fam = BrownianBridgeFamily(8)
    a = rfm.draw_feature_params(fam, 4, 8, 0)
    b = rfm.draw_feature_params(fam, 5, 8, 0)
    assert a.shape == (4, 8)
    assert not np.array_equal(a, b[:4])
    two = rfm.draw_feature_params(PredictorCorrectorFamily(), 3, 8, 0)
    assert two.shape == (3, 2, 8) and not np.array_equal(two[:, 0], two[:, 1])
    with pytest.raises(ValueError):
        rfm.draw_feature_params(fam, 0, 8, 0)
