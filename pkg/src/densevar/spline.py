"""B-spline bases with components normalized to probability densities.

A basis of degree ``k`` with ``J + 1`` components is built on a
clamped-uniform knot vector covering a compact support ``[a, b]``.  Each
raw component ``B_j`` is divided by its integral, so every normalized
component is itself a density on the support.  Mixtures of these
components (convex combinations) are the density model used throughout
the package.

All integrals are evaluated by per-knot-interval Gauss-Legendre
quadrature with enough nodes to be exact for products of two degree-k
splines, so Gram matrices and normalizers carry no quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class SplineBasis:
    """Normalized B-spline basis on ``[support_lo, support_hi]``.

    Attributes
    ----------
    support_lo, support_hi : float
        Endpoints of the compact support, in observation units.
    degree : int
        Polynomial degree ``k`` of the raw splines.
    num_weights : int
        Number of components, ``J + 1``.
    knots : np.ndarray
        Clamped-uniform knot vector of length ``J + k + 2``.
    normalizers : np.ndarray
        Integral of each raw component over the support; dividing by
        these turns raw splines into densities.
    """

    support_lo: float
    support_hi: float
    degree: int
    num_weights: int
    knots: np.ndarray
    normalizers: np.ndarray

    @property
    def J(self) -> int:
        """Transformed dimension: one less than the number of components."""
        return self.num_weights - 1

    def quadrature_nodes(self, nodes_per_interval: int | None = None):
        """Gauss-Legendre nodes and weights tiled over the knot intervals.

        With the default node count the rule is exact for polynomials of
        degree ``2 * degree + 1``, which covers products of two basis
        components on every interval.
        """
        if nodes_per_interval is None:
            nodes_per_interval = self.degree + 1
        gx, gw = leggauss(nodes_per_interval)
        edges = np.unique(self.knots)
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        x = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        w = (half[:, None] * gw[None, :]).ravel()
        return x, w

    def evaluate_raw(self, x) -> np.ndarray:
        """Evaluate the raw (unnormalized) components at points ``x``.

        Returns an array of shape ``(len(x), num_weights)``.  Points must
        lie inside the closed support.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.ndim != 1:
            raise ValueError("evaluation points must be one-dimensional")
        if np.any(x < self.support_lo) or np.any(x > self.support_hi):
            raise ValueError(
                f"evaluation points outside support "
                f"[{self.support_lo}, {self.support_hi}]"
            )
        design = BSpline.design_matrix(x, self.knots, self.degree)
        return design.toarray()

    def evaluate(self, x) -> np.ndarray:
        """Evaluate the normalized components at points ``x``.

        Returns an array of shape ``(len(x), num_weights)`` whose column
        ``j`` is the density component at the given points.
        """
        return self.evaluate_raw(x) / self.normalizers


def build_basis(support_lo: float, support_hi: float, degree: int, J: int) -> SplineBasis:
    """Construct a clamped-uniform B-spline basis with ``J + 1`` components.

    Parameters
    ----------
    support_lo, support_hi : float
        Support endpoints, ``support_lo < support_hi``.
    degree : int
        Spline degree ``k >= 0``.
    J : int
        One less than the number of components; must satisfy ``J >= degree``
        so that a clamped knot vector with uniform interior knots exists.
    """
    if not np.isfinite(support_lo) or not np.isfinite(support_hi):
        raise ValueError("support endpoints must be finite")
    if support_lo >= support_hi:
        raise ValueError(f"invalid support range: [{support_lo}, {support_hi}]")
    if degree < 0:
        raise ValueError(f"degree must be nonnegative, got {degree}")
    if J < 0:
        raise ValueError(f"J must be nonnegative, got {J}")
    if J < degree:
        raise ValueError(
            f"J={J} components below degree {degree} cannot be placed on "
            "clamped uniform knots; need J >= degree"
        )
    interior = np.linspace(support_lo, support_hi, J - degree + 2)
    knots = np.concatenate(
        [np.full(degree, support_lo), interior, np.full(degree, support_hi)]
    )
    basis = SplineBasis(
        support_lo=float(support_lo),
        support_hi=float(support_hi),
        degree=int(degree),
        num_weights=J + 1,
        knots=knots,
        normalizers=np.ones(J + 1),
    )
    qx, qw = basis.quadrature_nodes()
    normalizers = qw @ basis.evaluate_raw(qx)
    if np.any(normalizers <= 0):
        raise ValueError("degenerate basis: some component has zero mass")
    object.__setattr__(basis, "normalizers", normalizers)
    return basis


def eval_density(basis: SplineBasis, weights: np.ndarray, x) -> np.ndarray | float:
    """Evaluate the mixture density ``sum_j w_j phi_j(x)``.

    ``weights`` must have one entry per basis component.  Scalar ``x``
    returns a scalar; array ``x`` returns an array of the same length.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (basis.num_weights,):
        raise ValueError(
            f"weights have length {weights.shape}, expected {basis.num_weights}"
        )
    scalar = np.isscalar(x) or np.ndim(x) == 0
    values = basis.evaluate(np.atleast_1d(x)) @ weights
    return float(values[0]) if scalar else values


def raw_gram(basis: SplineBasis) -> np.ndarray:
    """Exact Gram matrix of the normalized components.

    Entry ``(m, n)`` is the integral of ``phi_m * phi_n`` over the
    support, computed by per-interval Gauss-Legendre quadrature that is
    exact for the piecewise-polynomial integrand.
    """
    qx, qw = basis.quadrature_nodes()
    phi = basis.evaluate(qx)
    gram = phi.T @ (qw[:, None] * phi)
    return 0.5 * (gram + gram.T)
