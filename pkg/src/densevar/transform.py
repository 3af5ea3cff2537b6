"""Shifted logit/softmax coordinates for simplex weights, and their metric.

The shifted logit map sends a weight vector with ``J + 1`` entries (each
above ``-delta``, summing to one) to unconstrained coordinates in R^J,
with the last entry acting as the base component.  Its inverse is a
shifted softmax.  Pulling ordinary vector addition and scaling back
through this bijection makes the enlarged simplex a vector space, with
the uniform vector as additive identity.

The transformed coordinates are given an inner product ``u' G v`` where
``G`` is the Gram matrix of the spline-mixture images of the coordinate
unit vectors.  This makes coordinate geometry agree with the L2 geometry
of the underlying spline mixtures.  A Cholesky factor of ``G`` whitens
the coordinates; for panels of ``C`` units the metric acts blockwise, so
no stacked ``CJ x CJ`` matrix is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .spline import SplineBasis, raw_gram

SUM_TOL = 1e-8


@dataclass(frozen=True)
class TransformConfig:
    """Shift parameter and transformed dimension of the coordinate map."""

    delta: float
    J: int

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.J < 1:
            raise ValueError("transformed dimension J must be at least 1")


@dataclass(frozen=True)
class MetricPack:
    """Per-unit coordinate metric and its whitening factor.

    ``gram`` is the J x J inner-product matrix, ``whitener`` a
    lower-triangular factor with ``whitener @ whitener.T == gram``.  The
    stacked metric over ``n_units`` blocks is block-diagonal and is
    always applied one block at a time.
    """

    gram: np.ndarray
    whitener: np.ndarray
    n_units: int

    @property
    def J(self) -> int:
        return self.gram.shape[0]

    @classmethod
    def identity(cls, J: int, n_units: int) -> "MetricPack":
        """Euclidean metric; used when coordinates are already whitened."""
        return cls(gram=np.eye(J), whitener=np.eye(J), n_units=n_units)

    def whiten(self, Y: np.ndarray) -> np.ndarray:
        """Apply the transpose whitener blockwise to stacked coordinates.

        ``Y`` has shape ``(..., n_units * J)``; each J-block ``y`` is
        replaced by ``whitener.T @ y``.
        """
        Y = np.asarray(Y, dtype=float)
        shape = Y.shape
        blocks = Y.reshape(shape[:-1] + (self.n_units, self.J))
        return (blocks @ self.whitener).reshape(shape)

    def unwhiten_loadings(self, loadings: np.ndarray) -> np.ndarray:
        """Map whitened loadings back to original coordinates, blockwise.

        Solves ``whitener.T @ out_block = in_block`` for every J-row
        block of the stacked loading matrix.
        """
        loadings = np.asarray(loadings, dtype=float)
        CJ, r = loadings.shape
        if CJ != self.n_units * self.J:
            raise ValueError("loading rows do not match n_units * J")
        out = np.empty_like(loadings)
        for c in range(self.n_units):
            block = loadings[c * self.J : (c + 1) * self.J]
            out[c * self.J : (c + 1) * self.J] = solve_triangular(
                self.whitener.T, block, lower=False
            )
        return out


def _check_simplex(p: np.ndarray, cfg: TransformConfig) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != cfg.J + 1:
        raise ValueError(f"expected {cfg.J + 1} components, got {p.shape[-1]}")
    if np.any(p <= -cfg.delta):
        raise ValueError("components must exceed -delta")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SUM_TOL):
        raise ValueError("components must sum to 1")
    return p


def logit_delta(p, cfg: TransformConfig) -> np.ndarray:
    """Shifted logit coordinates ``log((delta + p_j) / (delta + p_last))``.

    Accepts arrays with the component axis last and is vectorized over
    leading axes.
    """
    p = _check_simplex(p, cfg)
    shifted = np.log(cfg.delta + p)
    return shifted[..., :-1] - shifted[..., -1:]


def softmax_delta(b, cfg: TransformConfig) -> np.ndarray:
    """Inverse of :func:`logit_delta`; output components sum to one.

    Evaluated with max-subtraction so large coordinates do not overflow.
    """
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != cfg.J:
        raise ValueError(f"expected {cfg.J} coordinates, got {b.shape[-1]}")
    if not np.all(np.isfinite(b)):
        raise ValueError("coordinates must be finite")
    z = np.concatenate([b, np.zeros(b.shape[:-1] + (1,))], axis=-1)
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    scale = (cfg.J + 1) * cfg.delta + 1.0
    return scale * e / e.sum(axis=-1, keepdims=True) - cfg.delta


def oplus(w1, w2, cfg: TransformConfig) -> np.ndarray:
    """Addition on the enlarged simplex, pulled back through the logit map."""
    return softmax_delta(logit_delta(w1, cfg) + logit_delta(w2, cfg), cfg)


def otimes(alpha: float, w, cfg: TransformConfig) -> np.ndarray:
    """Scalar multiplication on the enlarged simplex."""
    return softmax_delta(alpha * logit_delta(w, cfg), cfg)


def build_metric(basis: SplineBasis, cfg: TransformConfig, C: int) -> MetricPack:
    """Gram metric of the coordinate unit vectors under the spline L2 geometry.

    Column ``i`` of the embedding matrix is ``softmax_delta(e_i)``, the
    weight vector of the i-th coordinate direction; the metric is
    ``E' G_raw E`` with ``G_raw`` the exact component Gram matrix.  The
    Cholesky factor is kept for whitening; failure indicates a
    delta/J combination that degenerates the embedding.
    """
    if basis.num_weights != cfg.J + 1:
        raise ValueError(
            f"basis has {basis.num_weights} components but config expects {cfg.J + 1}"
        )
    if C < 1:
        raise ValueError("need at least one unit")
    embed = softmax_delta(np.eye(cfg.J), cfg).T  # (J+1, J), column i = softmax(e_i)
    gram = embed.T @ raw_gram(basis) @ embed
    gram = 0.5 * (gram + gram.T)
    try:
        whitener = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "coordinate metric is numerically singular; "
            "reconsider delta or the basis dimension"
        ) from exc
    return MetricPack(gram=gram, whitener=whitener, n_units=C)


def metric_inner(u, v, pack: MetricPack) -> float:
    """Inner product ``u' gram v`` of two coordinate vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (pack.J,) or v.shape != (pack.J,):
        raise ValueError("operands must be J-vectors matching the metric")
    return float(u @ pack.gram @ v)
