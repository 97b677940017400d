import numpy as np
import pytest

from oracles import separable, simplex_qp_oracle
from src.analytics.errors import ConfigError, ContractViolation, InfeasibleInputError
from src.analytics.fw_solver import (
    MAX_T_INIT,
    SolveConfig,
    balanced_lambda,
    fw_select_vertex,
    fw_sweep,
    objective,
    residual_norms,
    solve,
    warm_start_t_init,
)
from src.analytics.matstore import CoefficientMatrix, DenseMatrix, SparseSimplexColumn, residual_gradient_column
from src.analytics.regularizer import softmax_gradient_column, softmax_state
from src.analytics.spa import spa_warm_start


@pytest.mark.parametrize(
    "g, expected",
    [((-0.7, -0.3, -0.58), 0), ((5.0, 5.0, 5.0), 0), ((0.0, -1.0, 0.0), 1)],
)
def test_select_vertex(g, expected):
    assert fw_select_vertex(np.array(g)) == expected


def test_first_sweep_makes_unit_columns():
    X = DenseMatrix(np.array([[1.0, 0.0, 0.7], [0.0, 1.0, 0.3]]))
    C = CoefficientMatrix.zeros(3)
    stats = fw_sweep(X, C, 0, SolveConfig(lam=0.0))
    assert stats.alpha == 1.0
    assert [c.indices.tolist() for c in C.columns] == [[0], [1], [0]]


def test_identity_single_sweep():
    X = DenseMatrix(np.eye(3))
    C, report = solve(X, SolveConfig(lam=0.0, max_sweeps=1))
    np.testing.assert_array_equal(C.to_coo().toarray(), np.eye(3))
    np.testing.assert_array_equal(report.final_residual_per_column, np.zeros(3))
    assert report.sweeps_run == 1


def test_noiseless_instance_fits_from_spa_warm_start(rng):
    X, _, _ = separable(rng, 10, 3, 30)
    _, C_init, t_init = spa_warm_start(X, 3)
    C, report = solve(X, SolveConfig(lam=0.0, max_sweeps=500, t_init=t_init), C_init=C_init)
    assert report.sweeps_run <= 500
    assert np.linalg.norm(report.final_residual_per_column) / X.frobenius() <= 1e-3
    assert C.infeasible_columns() == []


def test_noiseless_cold_start_fits(rng):
    # open-loop steps shrink the residual roughly like 1 / T from a cold start
    X, _, _ = separable(rng, 10, 3, 30)
    C, report = solve(X, SolveConfig(lam=0.0, max_sweeps=2000))
    assert np.linalg.norm(report.final_residual_per_column) / X.frobenius() <= 1e-3
    assert C.infeasible_columns() == []


def test_first_sweep_moves_mixed_column_onto_vertex():
    # column 0 already fits x_0 exactly, so every vertex ties; t = 0 still steps fully
    X = DenseMatrix(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    C = CoefficientMatrix(3, [
        SparseSimplexColumn(3, [0, 1], [0.5, 0.5]),
        SparseSimplexColumn.unit(3, 1),
        SparseSimplexColumn.unit(3, 2),
    ])
    stats = fw_sweep(X, C, 0, SolveConfig(lam=0.0))
    assert stats.stationary == 0
    assert C.columns[0].indices.tolist() == [0]
    assert C.columns[0].values.tolist() == [1.0]


def test_zero_gap_columns_are_skipped_after_first_sweep():
    X = DenseMatrix(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    C = CoefficientMatrix(3, [
        SparseSimplexColumn(3, [0, 1], [0.5, 0.5]),
        SparseSimplexColumn.unit(3, 1),
        SparseSimplexColumn.unit(3, 2),
    ])
    stats = fw_sweep(X, C, 1, SolveConfig(lam=0.0))
    assert stats.stationary == 3
    np.testing.assert_allclose(C.columns[0].values, [0.5, 0.5])


def _column_objectives(X: DenseMatrix, C: CoefficientMatrix) -> np.ndarray:
    r = residual_norms(X, C)
    return 0.5 * r**2


@pytest.mark.parametrize(
    "instance", [i if i < 10 else pytest.param(i, marks=pytest.mark.slow) for i in range(50)]
)
def test_matches_qp_oracle(instance):
    rng = np.random.default_rng(1000 + instance)
    N = int(rng.integers(4, 13))
    M = N + 2
    X = DenseMatrix(rng.random((M, N)))
    T = 2000
    C, _ = solve(X, SolveConfig(lam=0.0, max_sweeps=T))

    Q = X.data.T @ X.data
    tol = max(1e-8, 4.0 * np.linalg.eigvalsh(Q)[-1] / (T + 2))
    got = _column_objectives(X, C)
    for ell in range(N):
        x = X.data[:, ell]
        best = simplex_qp_oracle(Q, X.data.T @ x) + 0.5 * x @ x
        assert got[ell] <= best + tol
        assert got[ell] >= best - 1e-9


@pytest.mark.parametrize("instance", range(50))
def test_noiseless_vertices_stay_in_anchor_set(instance):
    rng = np.random.default_rng(77 + instance)
    X, _, _ = separable(rng, 30, 5, 100)
    perm = rng.permutation(100)
    X = X.select_columns(perm)
    anchors = set(np.argsort(perm)[:5].tolist())

    cfg = SolveConfig(lam=0.0, max_sweeps=50, track_support=True)
    C, report = solve(X, cfg)
    assert report.selected_vertices <= anchors
    assert report.peak_nonzero_rows <= 5
    assert set(C.support_rows().tolist()) <= anchors
    assert max(report.nonzero_rows_trace) <= 5


def test_feasible_after_every_sweep(rng):
    X, _, _ = separable(rng, 8, 3, 20)
    cfg = SolveConfig(lam=1e-3, mu=1e-2)
    C = CoefficientMatrix.zeros(20)
    for t in range(15):
        fw_sweep(X, C, t, cfg)
        assert C.infeasible_columns() == []


def test_objective_settles(rng):
    X, _, _ = separable(rng, 12, 4, 40)
    _, report = solve(X, SolveConfig(lam=1e-4, mu=1e-3, max_sweeps=200))
    trace = np.asarray(report.objective_trace)
    assert np.isfinite(trace).all()
    assert trace[-1] < trace[0]


def test_threads_and_blocks_do_not_change_result(rng):
    X = DenseMatrix(rng.random((6, 37)))
    base_cfg = SolveConfig(lam=1e-3, mu=1e-2, max_sweeps=30)
    C0, r0 = solve(X, base_cfg)
    for block_size, threads in [(5, 0), (5, 3), (1, 2)]:
        cfg = SolveConfig(lam=1e-3, mu=1e-2, max_sweeps=30, block_size=block_size, threads=threads)
        C1, r1 = solve(X, cfg)
        np.testing.assert_array_equal(C1.to_coo().toarray(), C0.to_coo().toarray())
        np.testing.assert_allclose(r1.objective_trace, r0.objective_trace, rtol=1e-12)


def test_replay_is_identical(rng):
    X = DenseMatrix(rng.random((5, 12)))
    cfg = SolveConfig(max_sweeps=20)
    _, r0 = solve(X, cfg)
    _, r1 = solve(X, cfg)
    assert r0.to_dict(include_timing=False) == r1.to_dict(include_timing=False)


def test_per_column_tol_freezes_everything():
    X = DenseMatrix(np.eye(4))
    _, report = solve(X, SolveConfig(lam=0.0, max_sweeps=100, per_column_tol=1e-12))
    assert report.all_frozen
    assert report.frozen_columns == 4
    # one sweep to reach I, one to notice every residual is zero
    assert report.sweeps_run == 2


def test_warm_start_rejects_infeasible():
    X = DenseMatrix(np.eye(3))
    C = CoefficientMatrix.identity(3)
    C.columns[1] = SparseSimplexColumn(3, [0, 1], [0.3, 0.3])
    with pytest.raises(InfeasibleInputError, match="column 1"):
        solve(X, SolveConfig(t_init=5), C_init=C)


def test_warm_start_needs_t_init():
    X = DenseMatrix(np.eye(3))
    with pytest.raises(ConfigError):
        solve(X, SolveConfig(t_init=0), C_init=CoefficientMatrix.identity(3))


def test_warm_start_counts_from_t_init():
    X = DenseMatrix(np.eye(3))
    C, report = solve(X, SolveConfig(lam=0.0, t_init=7, max_sweeps=3), C_init=CoefficientMatrix.identity(3))
    assert report.t_start == 7
    assert report.sweeps_run == 3
    np.testing.assert_array_equal(C.to_coo().toarray(), np.eye(3))


def test_warm_start_t_init_heuristic():
    X = DenseMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert warm_start_t_init(X, CoefficientMatrix.identity(2)) == MAX_T_INIT
    # both columns swapped: residual norm sqrt(2) each, rmse = sqrt(2)
    swapped = CoefficientMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert warm_start_t_init(X, swapped) == 1


def test_objective_without_regularizer_is_half_residual():
    X = DenseMatrix(np.eye(2))
    C = CoefficientMatrix.from_dense(np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert objective(X, C, 0.0, 1e-3) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "kwargs",
    [{"lam": -1.0}, {"mu": 0.0}, {"max_sweeps": 0}, {"block_size": 0}, {"threads": -1}, {"t_init": -2}],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SolveConfig(**kwargs)


def test_report_dict_omits_timing():
    X = DenseMatrix(np.eye(2))
    _, report = solve(X, SolveConfig(max_sweeps=2, track_support=True))
    d = report.to_dict(include_timing=False)
    assert "wallTimeMs" not in d
    assert d["selectedVertices"] == [0, 1]
    assert d["nonzeroRowsTrace"] == [2, 2]


def _positive_coefficients(rng, n: int) -> np.ndarray:
    a = 0.05 + rng.random((n, n))
    return a / a.sum(axis=0)


def test_residual_gradient_matches_finite_differences(rng):
    X = DenseMatrix(rng.random((8, 15)))
    A = _positive_coefficients(rng, 15)
    h = 1e-6
    for ell in (0, 7, 14):
        c = SparseSimplexColumn.from_dense(A[:, ell])
        p = residual_gradient_column(X, c, ell)
        x = X.data[:, ell]
        fd = np.empty(15)
        for i in range(15):
            e = np.zeros(15)
            e[i] = h
            up = 0.5 * np.sum((x - X.data @ (A[:, ell] + e)) ** 2)
            down = 0.5 * np.sum((x - X.data @ (A[:, ell] - e)) ** 2)
            fd[i] = (up - down) / (2 * h)
        np.testing.assert_allclose(p, fd, rtol=1e-5, atol=1e-8)


def test_objective_gradient_matches_finite_differences(rng):
    X = DenseMatrix(rng.random((8, 15)))
    A = _positive_coefficients(rng, 15)
    lam, mu, h = 0.3, 0.05, 1e-6
    C = CoefficientMatrix.from_dense(A)
    state = softmax_state(C, mu)
    ell = 4
    g = residual_gradient_column(X, C.columns[ell], ell) + lam * softmax_gradient_column(C, state, ell, mu)
    fd = np.empty(15)
    for i in range(15):
        up, down = A.copy(), A.copy()
        up[i, ell] += h
        down[i, ell] -= h
        fd[i] = (
            objective(X, CoefficientMatrix.from_dense(up), lam, mu)
            - objective(X, CoefficientMatrix.from_dense(down), lam, mu)
        ) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_objective_tail_is_non_increasing():
    # x_2 is the midpoint of x_0 and x_1; its column oscillates between the two vertices
    X = DenseMatrix(np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]]))
    _, report = solve(X, SolveConfig(lam=0.0, max_sweeps=200))
    tail = np.asarray(report.objective_trace)[-20:]
    assert np.all(np.diff(tail) <= 1e-8)
    assert tail[-1] < 1e-4


def test_balanced_lambda_is_zero_for_exact_fit():
    X = DenseMatrix(np.eye(3))
    assert balanced_lambda(X, CoefficientMatrix.identity(3), 1e-5) == 0.0


def test_balanced_lambda_weighs_fit_against_regularizer_gap():
    X = DenseMatrix(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]))
    C_ref = CoefficientMatrix(3, [
        SparseSimplexColumn.unit(3, 0),
        SparseSimplexColumn.unit(3, 1),
        SparseSimplexColumn(3, [0, 1], [0.5, 0.5]),
    ])
    # residual 0.5 in column 2; rows 0 and 1 keep their unit peak while row 2 drops to zero
    lam = balanced_lambda(X, C_ref, 1e-5)
    assert lam == pytest.approx(0.5 / (1.0 - 1e-5 * np.log(3)), rel=1e-9)


def test_balanced_lambda_rejects_reference_without_gap():
    X = DenseMatrix(np.array([[1.0, 0.0, 0.3], [0.0, 1.0, 0.3]]))
    swap = CoefficientMatrix.from_dense(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(ContractViolation):
        balanced_lambda(X, swap, 1e-5)


def test_config_exposes_smoothing():
    cfg = SolveConfig(lam=0.2, mu=1e-3)
    assert cfg.smoothing.lam == 0.2
    assert cfg.smoothing.mu == 1e-3
    assert cfg.smoothing.active
    assert not SolveConfig(lam=0.0).smoothing.active
