"""Feasible inference on VAR coefficients and directed-edge selection.

Coefficient standard errors come from a sandwich covariance built on
projected scores: the lagged regressors with the estimated loading space
partialled out and the factor-induced time averages removed.  The error
covariance entering the middle term is restricted to be block-diagonal
across units, one block per unit from its own residual outer product,
which keeps the estimator stable when the number of usable periods is
small relative to the score dimension.

Edges are one-sided hypotheses on off-diagonal coefficients, adjusted by
the Benjamini-Yekutieli step-up rule, which controls the false discovery
rate under arbitrary dependence.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .factor_var import FactorVarFit, TransformedPanel, _lagged_blocks, whitened_panel


@dataclass
class CovarianceEstimate:
    """Sandwich pieces and the resulting coefficient covariance."""

    D_hat: np.ndarray
    Omega_hat: np.ndarray
    var_beta: np.ndarray
    N: int
    T0: int


@dataclass
class Edge:
    source: int
    target: int
    lag: int
    coef: float
    t_stat: float
    p_raw: float
    p_adjusted: float
    selected: bool


@dataclass
class EdgeNetwork:
    """Directed Granger-predictive edges, one record per tested hypothesis."""

    edges: list[Edge]
    fdr_level: float
    n_hypotheses: int

    @property
    def selected_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.selected]


def _regressor_stack(Yw: np.ndarray, C: int, J: int, p: int) -> np.ndarray:
    """Dense stacked regressors; shape (T-p, C*J, p*C*C)."""
    T = Yw.shape[0]
    T0 = T - p
    lagged = _lagged_blocks(Yw, C, J, p)
    W = np.zeros((T0, C, J, p, C, C))
    eye_idx = np.arange(C)
    for k in range(p):
        arr = lagged[k].transpose(0, 2, 1)  # (T0, J, C_source)
        W[:, eye_idx, :, k, eye_idx, :] = np.broadcast_to(arr, (C, T0, J, C))
    return W.reshape(T0, C * J, p * C * C)


def projected_scores(fit: FactorVarFit, panel: TransformedPanel) -> np.ndarray:
    """Score regressors with loadings projected out and factor averages removed.

    Returns an array of shape ``(T-p, C*J, p*C*C)``; with no factors it
    is simply the stacked regressors.
    """
    Yw = whitened_panel(panel, fit)
    C, J, p = panel.C, panel.J, fit.p
    N = C * J
    W = _regressor_stack(Yw, C, J, p)
    if fit.r == 0:
        return W
    lam = fit.Lambda_tilde
    lam_w = np.matmul(lam.T[None], W)  # (T0, r, q)
    W -= np.matmul((lam / N)[None], lam_w)
    F = fit.factors
    T0 = F.shape[0]
    G = F.T @ F / T0
    try:
        FG = np.linalg.solve(G, F.T).T  # rows are G^{-1} f_t
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular factor second-moment matrix") from exc
    B = np.tensordot(F, W, axes=(0, 0))  # (r, N, q)
    W -= np.tensordot(FG, B, axes=(1, 0)) / T0
    return W


def factor_weights(fit: FactorVarFit) -> np.ndarray:
    """Matrix of pairwise factor weights ``f_t' (F'F/T0)^{-1} f_s``."""
    F = fit.factors
    T0 = F.shape[0]
    G = F.T @ F / T0
    return F @ np.linalg.solve(G, F.T)


def covariance(fit: FactorVarFit, panel: TransformedPanel) -> CovarianceEstimate:
    """Feasible sandwich covariance of the stacked VAR coefficients.

    The middle term uses per-period error covariances that are
    block-diagonal across units, each block the outer product of that
    unit's residual; the blocks are never assembled into a stacked
    matrix.
    """
    Z = projected_scores(fit, panel)
    T0, N, q = Z.shape
    C, J = panel.C, panel.J
    scale = 1.0 / (N * T0)

    Zr = Z.reshape(T0 * N, q)
    D = Zr.T @ Zr * scale
    D = 0.5 * (D + D.T)

    eps = fit.residuals_whitened.reshape(T0, C, 1, J)
    g = np.matmul(eps, Z.reshape(T0, C, J, q)).reshape(T0 * C, q)
    Omega = g.T @ g * scale
    Omega = 0.5 * (Omega + Omega.T)

    eigvals = np.linalg.eigvalsh(D)
    if eigvals.min() <= 0:
        cond = np.inf if eigvals.min() <= 0 else eigvals.max() / eigvals.min()
        raise ValueError(
            f"score second-moment matrix is singular (cond={cond:.3e}); "
            "not enough independent variation to form standard errors"
        )
    D_inv = np.linalg.inv(D)
    var_beta = scale * D_inv @ Omega @ D_inv
    var_beta = 0.5 * (var_beta + var_beta.T)
    return CovarianceEstimate(D_hat=D, Omega_hat=Omega, var_beta=var_beta, N=N, T0=T0)


def one_sided_pvalues(
    fit: FactorVarFit, cov: CovarianceEstimate
) -> tuple[np.ndarray, np.ndarray]:
    """Upper-tail t statistics and p-values for every off-diagonal coefficient.

    Returns ``(t_stat, p_raw)`` arrays of shape ``(p, C, C)`` with NaN on
    the diagonals.
    """
    p = fit.p
    C = fit.V[0].shape[0]
    V = np.stack(fit.V)
    se = np.sqrt(np.diag(cov.var_beta)).reshape(p, C, C)
    off = ~np.eye(C, dtype=bool)
    if np.any(se[:, off] == 0):
        raise ValueError("zero standard error on an off-diagonal coefficient")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = V / se
    p_raw = norm.sf(t)
    for k in range(p):
        np.fill_diagonal(t[k], np.nan)
        np.fill_diagonal(p_raw[k], np.nan)
    return t, p_raw


def by_fdr(p_values, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Yekutieli step-up rule.

    Rejects the ``k`` smallest p-values where ``k`` is the largest index
    with ``p_(i) <= i * q / (m * H_m)`` and ``H_m`` the harmonic sum.
    Returns a boolean rejection mask and the monotone adjusted p-values,
    both in the input order (ties resolved by stable index order).
    """
    if not 0 < q < 1:
        raise ValueError("FDR level q must lie in (0, 1)")
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    harmonic = (1.0 / ranks).sum()
    passing = np.nonzero(ranked <= ranks * q / (m * harmonic))[0]
    k = passing[-1] + 1 if passing.size else 0
    reject = np.zeros(m, dtype=bool)
    reject[order[:k]] = True
    adjusted_sorted = np.minimum.accumulate((m * harmonic * ranked / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adjusted_sorted, 1.0)
    return reject, adjusted


def select_edges(
    fit: FactorVarFit,
    cov: CovarianceEstimate,
    q: float = 0.05,
    family: str = "positive",
    direction: str = "row-target",
) -> EdgeNetwork:
    """Directed edges selected by one-sided tests with BY control.

    Each off-diagonal coefficient at row ``c``, column ``d`` is read as
    source ``d`` predicting target ``c`` (flip with
    ``direction='row-source'``).  With the default
    ``family='positive'`` only positive coefficients enter the tested
    family; ``family='all'`` tests every off-diagonal coefficient.  Unit
    ids in the output are 1-based.
    """
    if family not in ("positive", "all"):
        raise ValueError("family must be 'positive' or 'all'")
    if direction not in ("row-target", "row-source"):
        raise ValueError("direction must be 'row-target' or 'row-source'")
    t, p_raw = one_sided_pvalues(fit, cov)
    p_lags, C = t.shape[0], t.shape[1]
    hypotheses = []
    for k in range(p_lags):
        for c in range(C):
            for d in range(C):
                if c == d:
                    continue
                coef = fit.V[k][c, d]
                if family == "positive" and coef <= 0:
                    continue
                hypotheses.append((k, c, d, coef, t[k, c, d], p_raw[k, c, d]))
    pvals = np.array([h[5] for h in hypotheses])
    reject, adjusted = by_fdr(pvals, q) if pvals.size else (np.zeros(0, bool), pvals)
    edges = []
    for (k, c, d, coef, t_stat, praw), rej, padj in zip(hypotheses, reject, adjusted):
        source, target = (d, c) if direction == "row-target" else (c, d)
        edges.append(
            Edge(
                source=source + 1,
                target=target + 1,
                lag=k + 1,
                coef=float(coef),
                t_stat=float(t_stat),
                p_raw=float(praw),
                p_adjusted=float(padj),
                selected=bool(rej),
            )
        )
    return EdgeNetwork(edges=edges, fdr_level=q, n_hypotheses=len(edges))


def network_to_dict(
    network: EdgeNetwork, n_units: int, labels: list[str] | None = None
) -> dict:
    """JSON-ready representation with ``nodes`` and ``edges`` lists."""
    if labels is None:
        labels = [f"unit {i}" for i in range(1, n_units + 1)]
    if len(labels) != n_units:
        raise ValueError("need one label per unit")
    return {
        "fdr_level": network.fdr_level,
        "n_hypotheses": network.n_hypotheses,
        "nodes": [{"id": i + 1, "label": labels[i]} for i in range(n_units)],
        "edges": [
            {
                "source": e.source,
                "target": e.target,
                "lag": e.lag,
                "coef": e.coef,
                "t": e.t_stat,
                "p": e.p_raw,
                "p_adj": e.p_adjusted,
                "selected": e.selected,
            }
            for e in network.edges
        ],
    }


def write_network(
    network: EdgeNetwork,
    n_units: int,
    json_path,
    csv_path=None,
    labels: list[str] | None = None,
) -> None:
    """Write the network as JSON, with an optional CSV mirror."""
    payload = network_to_dict(network, n_units, labels)
    Path(json_path).write_text(json.dumps(payload, indent=2))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=["source", "target", "lag", "coef", "t", "p", "p_adj", "selected"],
            )
            writer.writeheader()
            writer.writerows(payload["edges"])
