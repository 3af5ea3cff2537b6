"""DGP construction, determinism, and sweep bookkeeping."""

import numpy as np
import pytest

from densevar.simulation import (
    DgpParams,
    MetricsRow,
    build_loadings,
    build_v_true,
    generate,
    run_sweep,
    score_edges,
    spectral_radius,
    write_metrics_csv,
)
from densevar.inference import Edge, EdgeNetwork


def power_iteration_radius(M, iters=2000):
    """Classic power iteration; exact for symmetric matrices with a
    spectral gap, where the dominant eigenvalue is real."""
    rng = np.random.default_rng(0)
    v = rng.normal(size=M.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        lam = np.linalg.norm(w) / np.linalg.norm(v)
        v = w / np.linalg.norm(w)
    return lam


def test_spectral_radius_basics():
    assert spectral_radius(np.eye(7)) == pytest.approx(1.0)
    assert spectral_radius(np.diag([0.3, -0.7])) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        spectral_radius(np.zeros((2, 3)))


def test_spectral_radius_matches_power_iteration():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(12, 12))
    M = M + M.T  # symmetric: dominant eigenvalue is real, iteration converges
    assert spectral_radius(M) == pytest.approx(power_iteration_radius(M), abs=1e-8)


def test_loadings_structure():
    rng = np.random.default_rng(2)
    C, J, r = 20, 15, 5
    L, Q = build_loadings(C, J, r, rng)
    assert L.shape == (300, 5)
    np.testing.assert_allclose(Q.T @ Q, np.eye(r), atol=1e-12)
    # global column has unit norm: (1_C/sqrt(C)) kron unit vector
    assert np.linalg.norm(L[:, 0]) == pytest.approx(1.0)
    first_block = L[:J, 0] * np.sqrt(C)
    for c in range(1, C):
        np.testing.assert_allclose(L[c * J : (c + 1) * J, 0] * np.sqrt(C), first_block)
    # structured columns are mutually orthogonal through Q
    for k in range(1, r):
        for m in range(k + 1, r):
            assert abs(L[:, k] @ L[:, m]) < 1e-12


def test_v_true_construction():
    rng = np.random.default_rng(3)
    params = DgpParams(alpha_V=1.0, seed=0)
    _, Q = build_loadings(params.C, params.J, params.r_true, rng)
    V = build_v_true(Q, params)
    nonzero = np.nonzero(V)
    assert len(nonzero[0]) == 30
    assert set(nonzero[0]) <= {0, 1, 4}  # rows restricted to the source set
    assert np.all(nonzero[0] != nonzero[1])  # strictly off-diagonal
    assert np.all(V[nonzero] > 0)
    assert spectral_radius(V) <= 0.95 + 1e-12
    # values are alpha_V * |M_ij| at the selected positions
    M = Q @ np.diag([1.0, 0.9, 0.8, 0.7, 0.6]) @ Q.T
    if spectral_radius(np.abs(M)) <= 0.95:  # no rescale case checked directly
        for i, j in zip(*nonzero):
            assert V[i, j] <= abs(M[i, j]) + 1e-12


def test_v_true_zero_strength():
    rng = np.random.default_rng(4)
    params = DgpParams(alpha_V=0.0)
    _, Q = build_loadings(params.C, params.J, params.r_true, rng)
    V = build_v_true(Q, params)
    assert np.all(V == 0)


def test_v_true_rescales_when_capped():
    rng = np.random.default_rng(5)
    params = DgpParams(alpha_V=50.0, spectral_cap=0.95)
    _, Q = build_loadings(params.C, params.J, params.r_true, rng)
    V = build_v_true(Q, params)
    assert spectral_radius(V) == pytest.approx(0.95, abs=1e-10)


def test_generate_silent_when_everything_off():
    params = DgpParams(
        alpha_V=0.0, sigma_eps=0.0, r_true=2, A=np.zeros((2, 2)),
        u_sd=np.zeros(2), T=20, C=4, J=3, seed=6, source_rows=(1, 2), n_edges=4
    )
    panel, truth = generate(params)
    np.testing.assert_array_equal(panel.Y, 0.0)
    assert truth.true_edges == frozenset()


def test_generate_iid_noise_when_factors_off():
    params = DgpParams(
        alpha_V=0.0, sigma_eps=1.0, r_true=2, A=np.zeros((2, 2)),
        u_sd=np.zeros(2), T=4000, C=4, J=3, seed=7, source_rows=(1, 2), n_edges=4
    )
    panel, _ = generate(params)
    y = panel.Y[:, 0]
    lag1 = np.corrcoef(y[:-1], y[1:])[0, 1]
    assert abs(lag1) < 0.05


def test_generate_persistent_factor_variance():
    # A factor with AR coefficient 0.9 and shock sd 0.3 has stationary
    # variance 0.09 / 0.19; the global loading column spreads it evenly.
    params = DgpParams(
        alpha_V=0.0,
        sigma_eps=0.0,
        u_sd=np.array([0.0, 0.0, 0.3, 0.3, 0.3]),
        T=5000,
        seed=8,
    )
    panel, truth = generate(params)
    target = 0.3**2 / (1 - 0.81)
    # project onto the third loading column to isolate factor 3
    col = truth.L[:, 2]
    f3 = panel.Y @ col / (col @ col)
    assert np.var(f3) == pytest.approx(target, rel=0.25)


def test_generate_deterministic():
    params = DgpParams(alpha_V=0.5, T=30, C=6, J=5, seed=99, n_edges=10)
    p1, t1 = generate(params)
    p2, t2 = generate(params)
    np.testing.assert_array_equal(p1.Y, p2.Y)
    np.testing.assert_array_equal(t1.V_true, t2.V_true)
    assert t1.true_edges == t2.true_edges


def make_network(selected_pairs):
    edges = [
        Edge(source=s, target=t, lag=1, coef=0.1, t_stat=3.0,
             p_raw=0.001, p_adjusted=0.01, selected=True)
        for (t, s) in selected_pairs
    ]
    return EdgeNetwork(edges=edges, fdr_level=0.1, n_hypotheses=len(edges))


def test_score_edges_counts():
    truth = type("T", (), {"true_edges": frozenset({(1, 2), (3, 4)})})()
    scores = score_edges(truth, make_network([(1, 2), (2, 3)]))
    assert scores["n_edges"] == 2
    assert scores["recall"] == pytest.approx(0.5)
    assert scores["fdp"] == pytest.approx(0.5)
    assert scores["precision"] == pytest.approx(0.5)
    assert scores["recall"] * 2 == 1  # integer hit count recovered
    empty = score_edges(truth, make_network([]))
    assert empty["fdp"] == 0.0 and empty["precision"] == 1.0 and empty["empty"]


def test_run_sweep_small_paired_and_deterministic(tmp_path):
    params = DgpParams(T=40, C=5, J=3, r_true=2,
                       A=np.diag([0.0, 0.9]), u_sd=np.array([1.0, 0.3]),
                       n_edges=4, source_rows=(1, 2))
    rows = run_sweep(
        alpha_levels=(0.0, 1.0),
        r_values=(0, 1, 2),
        n_reps=2,
        q_fdr=0.10,
        base_seed=5,
        params=params,
    )
    assert len(rows) == 6
    # alpha = 0 has no true edges, so recall is identically zero
    for row in rows:
        if row.alpha_V == 0.0:
            assert row.mean_recall == 0.0
        assert row.n_reps == 2 and row.n_failures == 0
    rows2 = run_sweep(
        alpha_levels=(0.0, 1.0),
        r_values=(0, 1, 2),
        n_reps=2,
        q_fdr=0.10,
        base_seed=5,
        params=params,
    )
    assert rows == rows2
    path = tmp_path / "metrics.csv"
    write_metrics_csv(rows, path)
    header = path.read_text().splitlines()[0]
    assert header == (
        "alpha_v,r,mean_edges,mean_recall,mean_fdp,mean_precision,n_reps,n_failures"
    )


def test_run_sweep_parallel_matches_serial():
    params = DgpParams(T=30, C=4, J=2, r_true=2,
                       A=np.diag([0.0, 0.9]), u_sd=np.array([1.0, 0.3]),
                       n_edges=3, source_rows=(1, 2))
    kwargs = dict(alpha_levels=(1.0,), r_values=(0, 1), n_reps=3,
                  q_fdr=0.1, base_seed=2, params=params)
    assert run_sweep(n_jobs=1, **kwargs) == run_sweep(n_jobs=2, **kwargs)


def test_dgp_params_validation():
    with pytest.raises(ValueError):
        DgpParams(A=np.eye(3))
    with pytest.raises(ValueError):
        DgpParams(u_sd=np.ones(2))
    with pytest.raises(ValueError):
        DgpParams(source_rows=(0, 1))
    with pytest.raises(ValueError):
        DgpParams(sigma_eps=-1.0)
