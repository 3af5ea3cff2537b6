"""Sandwich covariance, one-sided tests, BY control, and edge records."""

import json

import numpy as np
import pytest
from scipy.stats import norm

from densevar.factor_var import FactorVarConfig, TransformedPanel, fit
from densevar.inference import (
    by_fdr,
    covariance,
    factor_weights,
    network_to_dict,
    one_sided_pvalues,
    projected_scores,
    select_edges,
    write_network,
)
from densevar.transform import MetricPack


def make_panel(Y, C, J):
    return TransformedPanel(Y=Y, C=C, J=J, metric=MetricPack.identity(J, C))


def by_stepup_oracle(p, q):
    """Literal step-up definition, checked index by index."""
    m = len(p)
    order = np.argsort(p, kind="stable")
    harmonic = sum(1.0 / i for i in range(1, m + 1))
    k = 0
    for i in range(1, m + 1):
        if p[order[i - 1]] <= i * q / (m * harmonic):
            k = i
    reject = np.zeros(m, dtype=bool)
    reject[order[:k]] = True
    return reject


def ar_fit(rng, T=80, phi=0.6, sigma=1.0):
    y = np.zeros(T)
    for t in range(1, T):
        y[t] = phi * y[t - 1] + rng.normal(scale=sigma)
    panel = make_panel(y[:, None], C=1, J=1)
    return panel, fit(panel, FactorVarConfig(p=1, r=0, demean=False))


def test_scores_equal_regressors_without_factors():
    rng = np.random.default_rng(0)
    panel, result = ar_fit(rng)
    Z = projected_scores(result, panel)
    np.testing.assert_array_equal(Z[:, 0, 0], panel.Y[:-1, 0])


def test_scores_trace_identity():
    # The average diagonal factor weight equals the factor count exactly.
    rng = np.random.default_rng(1)
    C, J, r = 3, 4, 2
    N = C * J
    T = 60
    lam = rng.normal(size=(N, r))
    Y = np.zeros((T, N))
    f = rng.normal(size=(T, r))
    for t in range(1, T):
        Y[t] = 0.2 * Y[t - 1] + lam @ f[t] + rng.normal(scale=0.1, size=N)
    panel = make_panel(Y, C, J)
    result = fit(panel, FactorVarConfig(p=1, r=r))
    A = factor_weights(result)
    T0 = result.factors.shape[0]
    assert np.trace(A) / T0 == pytest.approx(r, abs=1e-10)


def test_scores_constant_factor_time_demeans():
    # A constant unit factor makes every pairwise weight one, so the
    # correction subtracts the time average of the projected regressors.
    rng = np.random.default_rng(2)
    C, J = 2, 2
    N = C * J
    Y = rng.normal(size=(30, N))
    panel = make_panel(Y, C, J)
    result = fit(panel, FactorVarConfig(p=1, r=1, demean=False, max_iter=1))
    result.factors = np.ones((29, 1))
    Z = projected_scores(result, panel)
    lam = result.Lambda_tilde
    from densevar.inference import _regressor_stack

    W = _regressor_stack(panel.Y, C, J, 1)
    MW = W - np.einsum("nr,trq->tnq", lam / N, np.einsum("nr,tnq->trq", lam, W))
    np.testing.assert_allclose(Z, MW - MW.mean(axis=0), atol=1e-12)


def test_covariance_matches_scalar_sandwich():
    # C=1, J=1, r=0 reduces to the textbook heteroskedasticity-robust
    # sandwich for an AR(1) coefficient.
    rng = np.random.default_rng(3)
    panel, result = ar_fit(rng)
    cov = covariance(result, panel)
    x = panel.Y[:-1, 0]
    resid = panel.Y[1:, 0] - result.V[0][0, 0] * x
    oracle = (x**2 * resid**2).sum() / (x**2).sum() ** 2
    assert cov.var_beta[0, 0] == pytest.approx(oracle, abs=1e-10 * oracle)
    np.testing.assert_allclose(resid, result.residuals_whitened[:, 0], atol=1e-12)


def test_covariance_residual_scaling():
    rng = np.random.default_rng(4)
    panel, result = ar_fit(rng)
    cov = covariance(result, panel)
    scaled = fit(panel, FactorVarConfig(p=1, r=0, demean=False))
    scaled.residuals_whitened = 2.0 * result.residuals_whitened
    cov2 = covariance(scaled, panel)
    np.testing.assert_allclose(cov2.Omega_hat, 4.0 * cov.Omega_hat, rtol=1e-12)
    np.testing.assert_allclose(cov2.var_beta, 4.0 * cov.var_beta, rtol=1e-12)
    np.testing.assert_allclose(cov2.D_hat, cov.D_hat, rtol=1e-15)


def test_covariance_positive_definite_on_factor_fit():
    rng = np.random.default_rng(5)
    C, J, r = 3, 3, 1
    N = C * J
    T = 70
    lam = rng.normal(size=(N, r))
    Y = np.zeros((T, N))
    for t in range(1, T):
        Y[t] = 0.3 * Y[t - 1] + lam @ rng.normal(size=r) + rng.normal(scale=0.2, size=N)
    panel = make_panel(Y, C, J)
    result = fit(panel, FactorVarConfig(p=1, r=r))
    cov = covariance(result, panel)
    assert np.linalg.eigvalsh(cov.D_hat).min() > 0
    assert np.linalg.eigvalsh(cov.var_beta).min() > -1e-12


def test_one_sided_pvalues_reference_points():
    rng = np.random.default_rng(6)
    C, J = 2, 2
    Y = rng.normal(size=(50, C * J))
    panel = make_panel(Y, C, J)
    result = fit(panel, FactorVarConfig(p=1, r=0))
    cov = covariance(result, panel)
    t, p = one_sided_pvalues(result, cov)
    assert np.isnan(t[0, 0, 0]) and np.isnan(t[0, 1, 1])
    off = ~np.eye(C, dtype=bool)
    np.testing.assert_allclose(p[0][off], norm.sf(t[0][off]), atol=1e-15)
    assert norm.sf(0.0) == pytest.approx(0.5)
    assert norm.sf(1.6449) == pytest.approx(0.05, abs=1e-4)
    assert norm.sf(-40.0) == pytest.approx(1.0)


def test_by_worked_example():
    reject, adjusted = by_fdr(np.array([0.01, 0.02, 0.5]), q=0.1)
    np.testing.assert_array_equal(reject, [True, True, False])
    np.testing.assert_allclose(adjusted[:2], 0.055, atol=1e-12)
    assert adjusted[2] == pytest.approx(0.5 * 3 * (1 + 0.5 + 1 / 3) / 3)
    # thresholds from the harmonic correction
    m, q = 3, 0.1
    hm = 1 + 0.5 + 1 / 3
    np.testing.assert_allclose(
        [i * q / (m * hm) for i in (1, 2, 3)],
        [0.01818181818, 0.03636363636, 0.05454545454],
        atol=1e-9,
    )


def test_by_single_and_degenerate():
    reject, adjusted = by_fdr(np.array([0.001]), q=0.05)
    assert reject[0] and adjusted[0] == pytest.approx(0.001)
    reject, _ = by_fdr(np.ones(5), q=0.1)
    assert not reject.any()
    reject, adjusted = by_fdr(np.array([]), q=0.1)
    assert reject.size == 0 and adjusted.size == 0


def test_by_matches_stepup_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        m = rng.integers(1, 51)
        p = rng.uniform(size=m)
        if rng.uniform() < 0.3:
            p[rng.uniform(size=m) < 0.4] /= 50.0  # force some small values
        q = rng.uniform(0.01, 0.3)
        reject, adjusted = by_fdr(p, q)
        np.testing.assert_array_equal(reject, by_stepup_oracle(p, q))
        # rejection is exactly the adjusted-p criterion
        np.testing.assert_array_equal(reject, adjusted <= q + 1e-15)


def test_by_monotone_in_q():
    rng = np.random.default_rng(8)
    p = rng.uniform(size=40)
    r1, _ = by_fdr(p, 0.05)
    r2, _ = by_fdr(p, 0.2)
    assert np.all(r2[r1])


def test_by_adjusted_monotone_in_p():
    rng = np.random.default_rng(9)
    p = rng.uniform(size=30)
    _, adjusted = by_fdr(p, 0.1)
    order = np.argsort(p)
    assert np.all(np.diff(adjusted[order]) >= -1e-15)


def test_by_invalid_inputs():
    with pytest.raises(ValueError):
        by_fdr(np.array([0.5]), q=0.0)
    with pytest.raises(ValueError):
        by_fdr(np.array([1.5]), q=0.05)


@pytest.fixture(scope="module")
def positive_edge_fit():
    rng = np.random.default_rng(10)
    C, J = 3, 2
    V_true = np.zeros((C, C))
    V_true[0, 1] = 0.6
    T = 400
    Y = np.zeros((T, C * J))
    for t in range(1, T):
        Y[t] = np.kron(V_true, np.eye(J)) @ Y[t - 1] + rng.normal(scale=0.3, size=C * J)
    panel = make_panel(Y, C, J)
    result = fit(panel, FactorVarConfig(p=1, r=0))
    return panel, result, covariance(result, panel)


def test_select_edges_positive_family(positive_edge_fit):
    _, result, cov = positive_edge_fit
    net = select_edges(result, cov, q=0.05)
    assert net.n_hypotheses == len(net.edges)
    assert all(e.coef > 0 for e in net.edges)
    assert all(e.p_adjusted >= e.p_raw - 1e-15 for e in net.edges)
    strong = [e for e in net.edges if e.selected]
    assert [(e.source, e.target) for e in strong] == [(2, 1)]
    assert all(e.source != e.target for e in net.edges)


def test_select_edges_all_family_and_direction(positive_edge_fit):
    _, result, cov = positive_edge_fit
    C = 3
    net_all = select_edges(result, cov, q=0.05, family="all")
    assert net_all.n_hypotheses == C * (C - 1)
    flipped = select_edges(result, cov, q=0.05, direction="row-source")
    strong = [e for e in flipped.edges if e.selected]
    assert [(e.source, e.target) for e in strong] == [(1, 2)]


def test_select_edges_empty_when_no_positive():
    rng = np.random.default_rng(11)
    C, J = 2, 2
    Y = rng.normal(size=(60, C * J))
    panel = make_panel(Y, C, J)
    result = fit(panel, FactorVarConfig(p=1, r=0))
    cov = covariance(result, panel)
    result.V[0][0, 1] = -abs(result.V[0][0, 1])
    result.V[0][1, 0] = -abs(result.V[0][1, 0])
    net = select_edges(result, cov, q=0.05)
    assert net.edges == [] and net.n_hypotheses == 0


def test_network_serialization(tmp_path, positive_edge_fit):
    _, result, cov = positive_edge_fit
    net = select_edges(result, cov, q=0.05)
    payload = network_to_dict(net, n_units=3, labels=["a", "b", "c"])
    assert [n["id"] for n in payload["nodes"]] == [1, 2, 3]
    assert set(payload["edges"][0]) == {
        "source", "target", "lag", "coef", "t", "p", "p_adj", "selected",
    }
    json_path = tmp_path / "net.json"
    csv_path = tmp_path / "net.csv"
    write_network(net, 3, json_path, csv_path)
    loaded = json.loads(json_path.read_text())
    assert loaded["edges"] == payload["edges"]
    header = csv_path.read_text().splitlines()[0]
    assert header == "source,target,lag,coef,t,p,p_adj,selected"
