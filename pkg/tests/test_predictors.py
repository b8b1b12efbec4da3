import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopman_moments import (
    DataMatrices,
    HorizonError,
    Method,
    Predictor,
    RankError,
    fit_edmd,
    fit_edmd_aggregated,
    fit_unbiased,
    predict,
    qr_split,
)

from conftest import lifted_linear_data


def normal_equations(S, G):
    return np.linalg.solve(G @ G.T, G @ S.T).T


def kkt_constrained_lstsq(S, G, B, C):
    """Minimise ||S - A G||_F subject to A B = C through the KKT system."""
    m, N = B.shape
    K = np.block([[G @ G.T, B], [B.T, np.zeros((N, N))]])
    rhs = np.vstack([G @ S.T, C.T])
    return np.linalg.solve(K, rhs)[:m].T


def random_data(m=5, N=3, L=40, seed=0):
    rng = np.random.default_rng(seed)
    snaps = rng.standard_normal((N + 1, m, L)) + rng.standard_normal((N + 1, m, 1))
    return DataMatrices.from_snapshots(snaps)


def test_edmd_identity_dynamics():
    G0 = np.random.default_rng(0).standard_normal((4, 20))
    np.testing.assert_allclose(fit_edmd(G0, G0).matrix, np.eye(4), atol=1e-13)


def test_edmd_scalar():
    pred = fit_edmd([[1.0, 2.0]], [[2.0, 4.0]])
    np.testing.assert_allclose(pred.matrix, [[2.0]], rtol=1e-14)
    assert pred.method is Method.EDMD_ONE_STEP
    assert pred.diagnostics["objective"] < 1e-28


def test_edmd_with_identity_g0():
    G0, G1 = np.eye(2), np.array([[1.0, 1.0], [1.0, 0.0]])
    A = fit_edmd(G0, G1).matrix
    np.testing.assert_allclose(A, G1, atol=1e-15)
    np.testing.assert_allclose(A, normal_equations(G1, G0), atol=1e-15)


def test_edmd_matches_normal_equations_on_random_data():
    rng = np.random.default_rng(4)
    G0, G1 = rng.standard_normal((6, 60)), rng.standard_normal((6, 60))
    pred = fit_edmd(G0, G1)
    np.testing.assert_allclose(pred.matrix, normal_equations(G1, G0), rtol=1e-10, atol=1e-12)
    resid = G1 - pred.matrix @ G0
    np.testing.assert_allclose(pred.diagnostics["objective_per_sample"],
                               np.sum(resid ** 2) / 60, rtol=1e-12)


def test_edmd_rank_deficient():
    G0 = np.ones((3, 10))
    with pytest.raises(RankError) as info:
        fit_edmd(G0, G0)
    assert info.value.rank == 1
    with pytest.raises(RankError):
        fit_edmd(np.ones((3, 2)), np.ones((3, 2)))


def test_edmd_optimal_under_perturbation(duffing_data, duffing_fits):
    G0, G1 = duffing_data.snapshots[:2]
    A = duffing_fits["edmd"].matrix
    base = np.linalg.norm(G1 - A @ G0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        D = rng.standard_normal(A.shape)
        D /= np.linalg.norm(D)
        assert np.linalg.norm(G1 - (A + 1e-3 * D) @ G0) >= base


def test_edmd_one_step_unbiased(duffing_data, duffing_fits):
    nu = duffing_data.means
    A = duffing_fits["edmd"].matrix
    assert np.linalg.norm(A @ nu[0] - nu[1]) <= 1e-10 * np.linalg.norm(nu[1])


def test_edmd_one_step_unbiased_synthetic():
    rng = np.random.default_rng(8)
    G0 = np.vstack([np.ones(30), rng.standard_normal((4, 30))])
    G1 = rng.standard_normal((5, 30))
    A = fit_edmd(G0, G1).matrix
    nu0, nu1 = G0.mean(1), G1.mean(1)
    assert np.linalg.norm(A @ nu0 - nu1) <= 1e-10 * np.linalg.norm(nu1)


def test_aggregated_with_one_step_equals_edmd():
    data = random_data(N=1)
    agg = fit_edmd_aggregated(data).matrix
    one = fit_edmd(*data.snapshots).matrix
    np.testing.assert_allclose(agg, one, rtol=1e-12, atol=1e-13)


def test_aggregated_matches_normal_equations():
    data = random_data(N=3)
    np.testing.assert_allclose(fit_edmd_aggregated(data).matrix,
                               normal_equations(data.aggregated_S, data.aggregated_G),
                               rtol=1e-10, atol=1e-12)


def test_aggregated_horizon_argument():
    data = random_data(N=3)
    np.testing.assert_array_equal(fit_edmd_aggregated(data, horizon=1).matrix,
                                  fit_edmd_aggregated(data.truncated(1)).matrix)


@pytest.mark.parametrize("fitter", [
    lambda d: fit_edmd(*d.snapshots[:2]), fit_edmd_aggregated, fit_unbiased])
def test_exact_recovery(fitter):
    A_star, data = lifted_linear_data()
    A = fitter(data).matrix
    assert np.linalg.norm(A - A_star) <= 1e-10 * np.linalg.norm(A_star)


def test_qr_split_single_column():
    nu = np.array([3.0, 0.0, 4.0])
    split = qr_split(nu[:, None])
    np.testing.assert_allclose(split.Rhat, [[5.0]])
    np.testing.assert_allclose(split.Q1[:, 0], nu / 5)
    assert split.Q2.shape == (3, 2)


def test_qr_split_orthogonal_columns():
    B = np.array([[2.0, 0.0], [0.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    split = qr_split(B)
    np.testing.assert_allclose(split.Rhat, np.diag([2.0, 3.0]), atol=1e-15)
    np.testing.assert_allclose(split.Q1 @ split.Rhat, B, atol=1e-15)
    np.testing.assert_allclose(split.Q1, B / [2.0, 3.0], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_qr_split_invariants(seed):
    B = np.random.default_rng(seed).standard_normal((9, 4))
    s = qr_split(B)
    tol = 1e-12
    np.testing.assert_allclose(s.Q1.T @ s.Q1, np.eye(4), atol=tol)
    np.testing.assert_allclose(s.Q2.T @ s.Q2, np.eye(5), atol=tol)
    np.testing.assert_allclose(s.Q1.T @ s.Q2, 0, atol=tol)
    assert np.linalg.norm(s.Q1 @ s.Rhat - B) <= tol * np.linalg.norm(B)
    assert np.all(np.diag(s.Rhat) > 0)
    np.testing.assert_array_equal(np.tril(s.Rhat, -1), 0)


def test_qr_split_errors():
    with pytest.raises(RankError) as info:
        qr_split(np.array([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]]))
    assert info.value.deficiency == 1
    with pytest.raises(HorizonError):
        qr_split(np.ones((2, 3)))


def test_unbiased_matches_kkt_oracle():
    data = random_data(m=6, N=3, L=50, seed=2)
    A = fit_unbiased(data).matrix
    oracle = kkt_constrained_lstsq(data.aggregated_S, data.aggregated_G,
                                   data.mean_basis_B, data.mean_target_C)
    np.testing.assert_allclose(A, oracle, rtol=1e-8, atol=1e-10)


def test_unbiased_satisfies_mean_constraint(duffing_data, duffing_fits):
    A = duffing_fits["unbiased"].matrix
    B, C = duffing_data.mean_basis_B, duffing_data.mean_target_C
    assert np.linalg.norm(A @ B - C) <= 1e-10 * np.linalg.norm(C)
    diag = duffing_fits["unbiased"].diagnostics
    assert diag["rank_B"] == 5 and diag["rank_Gtilde"] == 61
    assert diag["constraint_residual"] <= 1e-10


def test_edmd_matrices_in_first_bias_set(duffing_data, duffing_fits):
    nu = duffing_data.means
    for name in ("edmd", "unbiased"):
        A = duffing_fits[name].matrix
        assert np.linalg.norm(A @ nu[0] - nu[1]) <= 1e-10 * np.linalg.norm(nu[1])


def additive_objective(A, data):
    G = data.snapshots
    return sum(np.sum((G[t + 1] - A @ G[t]) ** 2) for t in range(data.horizon))


def test_unbiased_optimal_over_feasible_set(duffing_data, duffing_fits):
    A = duffing_fits["unbiased"].matrix
    Q2 = qr_split(duffing_data.mean_basis_B).Q2
    base = additive_objective(A, duffing_data)
    rng = np.random.default_rng(1)
    for _ in range(20):
        D = rng.standard_normal((66, Q2.shape[1]))
        D /= np.linalg.norm(D)
        assert additive_objective(A + 1e-3 * D @ Q2.T, duffing_data) >= base


def test_unbiased_square_boundary():
    # m == N leaves no free parameters: A = C Rhat^{-1} Q1^T
    rng = np.random.default_rng(6)
    snaps = rng.standard_normal((4, 3, 10)) + rng.standard_normal((4, 3, 1))
    data = DataMatrices.from_snapshots(snaps)
    A = fit_unbiased(data).matrix
    np.testing.assert_allclose(A, data.mean_target_C @ np.linalg.inv(data.mean_basis_B),
                               rtol=1e-10, atol=1e-12)


def test_unbiased_preconditions():
    rng = np.random.default_rng(7)
    with pytest.raises(HorizonError):
        fit_unbiased(DataMatrices.from_snapshots(rng.standard_normal((5, 3, 10))))
    snaps = np.repeat(rng.standard_normal((1, 4, 10)), 3, axis=0)
    with pytest.raises(RankError):
        fit_unbiased(DataMatrices.from_snapshots(snaps))


def test_unbiased_rank_deficient_projected_data():
    # G_tilde = Q2^T G has 2 rows but only one informative direction
    rng = np.random.default_rng(9)
    base = rng.standard_normal((2, 1, 1)) * np.ones((2, 1, 6))
    snaps = np.concatenate([rng.standard_normal((2, 1, 6)) + 3, base, base], axis=1)
    with pytest.raises(RankError):
        fit_unbiased(DataMatrices.from_snapshots(snaps))


def test_predict_examples():
    np.testing.assert_array_equal(predict(np.eye(2), [1.0, 2.0], 3), [[1, 2]] * 4)
    np.testing.assert_array_equal(predict(np.zeros((2, 2)), [1.0, 2.0], 2),
                                  [[1, 2], [0, 0], [0, 0]])
    P = Predictor(np.array([[0.0, 1.0], [1.0, 0.0]]), "edmd", 1)
    np.testing.assert_array_equal(P.predict([1.0, 2.0], 2), [[1, 2], [2, 1], [1, 2]])
    with pytest.raises(ValueError):
        predict(np.eye(2), [np.nan, 0.0], 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_predict_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4)) / 2
    z, w = rng.standard_normal(4), rng.standard_normal(4)
    lhs = predict(A, a * z + b * w, 5)
    rhs = a * predict(A, z, 5) + b * predict(A, w, 5)
    scale = np.abs(a) * np.abs(predict(A, z, 5)) + np.abs(b) * np.abs(predict(A, w, 5))
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * (scale + 1e-300) + 1e-300)


def test_predictor_rejects_non_finite():
    with pytest.raises(ValueError):
        Predictor(np.array([[np.inf]]), "edmd", 1)


def test_predictor_export(tmp_path, duffing_fits):
    pred = duffing_fits["unbiased"]
    pred.to_csv(tmp_path / "A.csv", seed=7)
    text = (tmp_path / "A.csv").read_text().splitlines()
    assert text[0] == "# method,m,N,seed"
    assert text[1] == "# unbiased,66,5,7"
    np.testing.assert_array_equal(Predictor.read_csv_matrix(tmp_path / "A.csv"), pred.matrix)
    payload = json.loads(pred.diagnostics_json())
    assert {"method", "objective", "rank_B", "rank_Gtilde", "cond_Rhat"} <= set(payload)
    assert payload["method"] == "unbiased"
