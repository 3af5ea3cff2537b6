"""Cross-unit VAR with latent factors on transformed density coordinates.

The model for the stacked coordinate vector of ``C`` units is a lag-``p``
VAR with scalar coefficients per unit pair acting on whole coordinate
blocks, plus a rank-``r`` common component.  Estimation alternates
between principal components on the VAR residuals (extracting the factor
loading space) and projected least squares for the VAR coefficients with
the loading space partialled out.  All computations run in whitened
coordinates, so fits are invariant to the choice of metric square root.

Coefficient layout: the stacked vector concatenates, for each lag, the
rows of the coefficient matrix, so entry ``(k, c, d)`` is the effect of
source unit ``d`` on target unit ``c`` at lag ``k``; a plain
``reshape(p, C, C)`` of the stacked solution recovers the matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transform import MetricPack


@dataclass
class TransformedPanel:
    """Stacked coordinate series: row ``t`` holds C concatenated J-blocks."""

    Y: np.ndarray
    C: int
    J: int
    metric: MetricPack

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim != 2 or self.Y.shape[1] != self.C * self.J:
            raise ValueError(
                f"panel must be (T, C*J) = (*, {self.C * self.J}), got {self.Y.shape}"
            )
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("panel contains non-finite entries")
        if self.metric.J != self.J or self.metric.n_units != self.C:
            raise ValueError("metric dimensions do not match the panel")

    @property
    def T(self) -> int:
        return self.Y.shape[0]


@dataclass
class FactorVarConfig:
    p: int = 1
    r: int = 0
    tol: float = 1e-7
    max_iter: int = 200
    demean: bool = True

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("lag order p must be at least 1")
        if self.r < 0:
            raise ValueError("number of factors r must be nonnegative")


@dataclass
class FactorVarFit:
    """Estimated VAR matrices, loadings, factors, and diagnostics.

    ``V[k]`` is the lag-(k+1) coefficient matrix (target rows, source
    columns).  ``Lambda_tilde`` carries the whitened loadings normalized
    so that ``Lambda_tilde' Lambda_tilde / (C*J) = I_r``; ``Lambda`` maps
    them back to original coordinates.  ``residuals_whitened`` holds the
    idiosyncratic residuals after factor removal, one row per usable
    period.  ``objective_path`` records the concentrated least-squares
    objective after each alternation step.
    """

    V: list[np.ndarray]
    Lambda_tilde: np.ndarray
    Lambda: np.ndarray
    factors: np.ndarray
    residuals_whitened: np.ndarray
    eigvals: np.ndarray
    iterations: int
    converged: bool
    mean: np.ndarray
    p: int
    r: int
    objective_path: np.ndarray = field(default_factory=lambda: np.empty(0))


def build_regressor(panel: TransformedPanel, t: int, k: int) -> np.ndarray:
    """Dense lag-``k`` regressor for target row ``t`` (0-based).

    Returns the ``(C*J, C**2)`` block-diagonal matrix whose C identical
    blocks are the ``J x C`` matrix of unit coordinate columns at time
    ``t - k``; multiplying it by a stacked coefficient vector yields the
    stacked VAR prediction.
    """
    if k < 1:
        raise ValueError("lag k must be at least 1")
    if t - k < 0 or t >= panel.T:
        raise ValueError(f"lagged index {t - k} out of range")
    ymat = panel.Y[t - k].reshape(panel.C, panel.J).T
    return np.kron(np.eye(panel.C), ymat)


def _lagged_blocks(Yw: np.ndarray, C: int, J: int, p: int):
    """Per-lag views of unit blocks aligned with target rows ``p..T-1``.

    Element ``k-1`` has shape ``(T-p, C, J)``; row ``i`` holds the blocks
    of time ``p + i - k``.
    """
    T = Yw.shape[0]
    blocks = Yw.reshape(T, C, J)
    return [blocks[p - k : T - k] for k in range(1, p + 1)]


def _predictions(lagged, V: np.ndarray) -> np.ndarray:
    """Stacked VAR predictions for every target row; shape (T-p, C*J)."""
    p = V.shape[0]
    T0, C, J = lagged[0].shape
    pred = np.zeros((T0, C, J))
    for k in range(p):
        # target block c: sum_d V[k, c, d] * lagged_block_d
        pred += np.einsum("cd,tdj->tcj", V[k], lagged[k])
    return pred.reshape(T0, C * J)


def fwl_step(
    Yw: np.ndarray, C: int, J: int, Lambda_tilde: np.ndarray, p: int
) -> np.ndarray:
    """Projected least-squares solve for the stacked VAR coefficients.

    Solves the normal equations of the regression of the whitened panel
    on its lagged regressors after projecting out the span of
    ``Lambda_tilde`` (an empty loading matrix gives plain OLS).  The
    block-diagonal regressor structure is exploited so no ``CJ x pC^2``
    matrices are materialized per period.
    """
    T = Yw.shape[0]
    T0 = T - p
    if T0 < 1:
        raise ValueError("panel too short for the requested lag order")
    N = C * J
    q = p * C * C
    r = Lambda_tilde.shape[1]
    lagged = _lagged_blocks(Yw, C, J, p)
    targets = Yw[p:].reshape(T0, C, J)

    # Gram blocks of the block-diagonal regressors.
    normal = np.zeros((p, C, C, p, C, C))
    eye_idx = np.arange(C)
    for k in range(p):
        for l in range(p):
            g = np.einsum("tcj,tdj->cd", lagged[k], lagged[l])
            normal[k, eye_idx, :, l, eye_idx, :] = np.broadcast_to(g, (C, C, C))
    normal = normal.reshape(q, q)

    rhs = np.stack(
        [np.einsum("tdj,tcj->cd", lagged[k], targets) for k in range(p)]
    ).reshape(q)

    if r > 0:
        lam3 = Lambda_tilde.reshape(C, J, r)
        # scores[t, (k,c,d), rho] = <regressor column, loading column>
        scores = np.stack(
            [np.einsum("tdj,cjr->tcdr", lagged[k], lam3) for k in range(p)], axis=1
        ).reshape(T0, q, r)
        normal -= np.tensordot(scores, scores, axes=[(0, 2), (0, 2)]) / N
        lam_y = np.einsum("tcj,cjr->tr", targets, lam3)
        rhs -= np.einsum("tqr,tr->q", scores, lam_y) / N

    try:
        return np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "singular normal equations: collinear regressors or too few periods"
        ) from exc


def pca_step(residuals: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``r`` principal directions of the residual second-moment matrix.

    Returns loadings scaled so their squared column norms equal the
    stacked dimension, and the corresponding eigenvalues in descending
    order.  Each column's sign is fixed so its largest-magnitude entry is
    positive, making the decomposition deterministic.
    """
    T0, N = residuals.shape
    if r > N:
        raise ValueError(f"cannot extract {r} factors from dimension {N}")
    S = residuals.T @ residuals / T0
    eigvals, eigvecs = np.linalg.eigh(S)
    order = np.argsort(eigvals)[::-1][:r]
    vals = eigvals[order]
    vecs = eigvecs[:, order]
    flip = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(r)])
    flip[flip == 0] = 1.0
    vecs = vecs * flip
    return np.sqrt(N) * vecs, vals


def _numerical_rank(residuals: np.ndarray) -> int:
    s = np.linalg.svd(residuals, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > s[0] * max(residuals.shape) * np.finfo(float).eps))


def fit(panel: TransformedPanel, config: FactorVarConfig) -> FactorVarFit:
    """Estimate the factor-adjusted VAR on a transformed panel.

    With ``r == 0`` this is a single generalized least-squares pass; with
    ``r >= 1`` it alternates loading extraction and projected coefficient
    updates until the coefficient matrices stabilize.  Non-convergence
    within ``max_iter`` is reported through the ``converged`` flag rather
    than raised.
    """
    C, J, p, r = panel.C, panel.J, config.p, config.r
    N = C * J
    T = panel.T
    T0 = T - p
    if T0 < 1:
        raise ValueError("panel too short for the requested lag order")
    if r >= min(N, T0):
        raise ValueError(f"r={r} must be below min(C*J, T-p) = {min(N, T0)}")

    mean = panel.Y.mean(axis=0) if config.demean else np.zeros(N)
    Yw = panel.metric.whiten(panel.Y - mean)
    lagged = _lagged_blocks(Yw, C, J, p)
    targets = Yw[p:]

    def residuals_for(V):
        return targets - _predictions(lagged, V)

    if r == 0:
        beta = fwl_step(Yw, C, J, np.empty((N, 0)), p)
        V = beta.reshape(p, C, C)
        resid = residuals_for(V)
        return FactorVarFit(
            V=[V[k].copy() for k in range(p)],
            Lambda_tilde=np.empty((N, 0)),
            Lambda=np.empty((N, 0)),
            factors=np.empty((T0, 0)),
            residuals_whitened=resid,
            eigvals=np.empty(0),
            iterations=1,
            converged=True,
            mean=mean,
            p=p,
            r=0,
            objective_path=np.array([float(np.sum(resid**2))]),
        )

    V = np.zeros((p, C, C))
    converged = False
    iterations = 0
    objective_path = []
    for _ in range(config.max_iter):
        resid = residuals_for(V)
        if iterations == 0 and r > _numerical_rank(resid):
            raise ValueError(
                f"r={r} exceeds the numerical rank of the residual matrix"
            )
        lam, _ = pca_step(resid, r)
        beta = fwl_step(Yw, C, J, lam, p)
        V_new = beta.reshape(p, C, C)
        iterations += 1

        resid_new = residuals_for(V_new)
        proj = resid_new @ lam / N
        objective_path.append(float(np.sum(resid_new**2) - N * np.sum(proj**2)))

        delta = max(
            np.linalg.norm(V_new[k] - V[k]) / (1.0 + np.linalg.norm(V[k]))
            for k in range(p)
        )
        V = V_new
        if delta < config.tol:
            converged = True
            break

    # Refresh the loading space on the final residuals so factors and
    # eigenvalues are exactly the principal components of what remains.
    resid = residuals_for(V)
    lam, eigvals = pca_step(resid, r)
    factors = resid @ lam / N
    resid_idio = resid - factors @ lam.T
    return FactorVarFit(
        V=[V[k].copy() for k in range(p)],
        Lambda_tilde=lam,
        Lambda=panel.metric.unwhiten_loadings(lam),
        factors=factors,
        residuals_whitened=resid_idio,
        eigvals=eigvals,
        iterations=iterations,
        converged=converged,
        mean=mean,
        p=p,
        r=r,
        objective_path=np.asarray(objective_path),
    )


def whitened_panel(panel: TransformedPanel, fit_result: FactorVarFit) -> np.ndarray:
    """Demeaned, whitened panel matching the one used inside :func:`fit`."""
    return panel.metric.whiten(panel.Y - fit_result.mean)
