"""EM fitting of B-spline mixture weights, with an optional Dirichlet prior.

``fit_mle`` maximizes the mixture log-likelihood; ``fit_map`` replaces the
M-step by the Dirichlet posterior-mean update, which shrinks the weights
toward the prior mean with strength ``gamma``.  Both fits keep the weights
on the probability simplex by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spline import SplineBasis


@dataclass(frozen=True)
class DirichletPrior:
    """Dirichlet prior on mixture weights.

    ``alpha0`` is the base concentration (one positive entry per
    component) and ``gamma >= 0`` scales it, so the effective
    concentration is ``gamma * alpha0``.
    """

    alpha0: np.ndarray
    gamma: float

    def __post_init__(self):
        alpha0 = np.asarray(self.alpha0, dtype=float)
        if alpha0.ndim != 1 or np.any(alpha0 <= 0):
            raise ValueError("prior concentrations must be positive")
        if self.gamma < 0:
            raise ValueError("prior strength gamma must be nonnegative")
        object.__setattr__(self, "alpha0", alpha0)

    @property
    def mean(self) -> np.ndarray:
        return self.alpha0 / self.alpha0.sum()


@dataclass
class EmReport:
    """Convergence record for one EM run.

    ``objective_path`` holds the tracked ascent objective after each
    iteration: the log-likelihood for the MLE fit, or the likelihood plus
    ``gamma * sum_j alpha0_j * log w_j`` for the posterior-mean fit.
    """

    final_loglik: float
    iterations: int
    converged: bool
    objective_path: np.ndarray


def _component_matrix(samples: np.ndarray, basis: SplineBasis) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1:
        raise ValueError("samples must be a one-dimensional vector")
    return basis.evaluate(samples)


def _check_init(init: np.ndarray | None, num_weights: int) -> np.ndarray:
    if init is None:
        return np.full(num_weights, 1.0 / num_weights)
    init = np.asarray(init, dtype=float)
    if init.shape != (num_weights,):
        raise ValueError(f"init has shape {init.shape}, expected ({num_weights},)")
    if np.any(init <= 0):
        raise ValueError("init must lie in the simplex interior (all entries > 0)")
    if abs(init.sum() - 1.0) > 1e-8:
        raise ValueError("init must sum to 1")
    return init / init.sum()


def log_likelihood(samples, weights, basis: SplineBasis) -> float:
    """Mixture log-likelihood ``sum_i log(sum_j w_j phi_j(x_i))``.

    Raises if any sample has zero mixture density under the given
    weights, where the value would be minus infinity.
    """
    phi = _component_matrix(samples, basis)
    dens = phi @ np.asarray(weights, dtype=float)
    if np.any(dens <= 0):
        raise ValueError("some sample has zero density under the given weights")
    return float(np.log(dens).sum())


def _run_em(phi, w, tol, max_iter, update, objective):
    path = []
    converged = False
    iterations = 0
    for _ in range(max_iter):
        dens = phi @ w
        if np.any(dens <= 0):
            raise ValueError("mixture density vanished at a sample during EM")
        resp = phi * w
        resp /= dens[:, None]
        w_new = update(resp)
        iterations += 1
        path.append(objective(phi, w_new))
        delta = np.max(np.abs(w_new - w))
        w = w_new
        if delta < tol:
            converged = True
            break
    return w, iterations, converged, np.asarray(path)


def fit_mle(
    samples,
    basis: SplineBasis,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[np.ndarray, EmReport]:
    """Maximum-likelihood mixture weights by EM.

    The E-step computes posterior component responsibilities; the M-step
    sets each weight to the mean responsibility of its component.
    Iteration stops when the largest weight change falls below ``tol``.

    Returns the weight vector (on the simplex) and an :class:`EmReport`.
    """
    phi = _component_matrix(samples, basis)
    if phi.shape[0] == 0:
        raise ValueError("cannot fit mixture weights to an empty sample set")
    w = _check_init(init, basis.num_weights)

    def loglik(phi, w):
        return float(np.log(phi @ w).sum())

    w, iterations, converged, path = _run_em(
        phi, w, tol, max_iter, lambda resp: resp.mean(axis=0), loglik
    )
    report = EmReport(
        final_loglik=loglik(phi, w),
        iterations=iterations,
        converged=converged,
        objective_path=path,
    )
    return w, report


def fit_map(
    samples,
    basis: SplineBasis,
    prior: DirichletPrior,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[np.ndarray, EmReport]:
    """Posterior-mean mixture weights under a Dirichlet prior.

    The M-step becomes ``w_j = (gamma * alpha0_j + sum_i tau_ij) /
    sum_l (gamma * alpha0_l + sum_i tau_il)``.  An empty sample set is
    allowed and returns the prior mean directly.
    """
    if prior.alpha0.shape != (basis.num_weights,):
        raise ValueError(
            f"prior has {prior.alpha0.shape[0]} entries, "
            f"expected {basis.num_weights}"
        )
    samples = np.asarray(samples, dtype=float)
    base = prior.gamma * prior.alpha0
    if samples.size == 0:
        w = prior.mean
        obj = float(base @ np.log(w))
        report = EmReport(
            final_loglik=0.0,
            iterations=0,
            converged=True,
            objective_path=np.array([obj]),
        )
        return w, report
    phi = _component_matrix(samples, basis)
    w = _check_init(init, basis.num_weights)

    def surrogate(phi, w):
        # EM ascent objective for the posterior-mean update: likelihood
        # plus gamma-scaled pseudo-count term.
        with np.errstate(divide="ignore"):
            prior_term = float(base @ np.log(w)) if prior.gamma > 0 else 0.0
        return float(np.log(phi @ w).sum()) + prior_term

    def update(resp):
        alpha_post = base + resp.sum(axis=0)
        return alpha_post / alpha_post.sum()

    w, iterations, converged, path = _run_em(phi, w, tol, max_iter, update, surrogate)
    report = EmReport(
        final_loglik=float(np.log(phi @ w).sum()),
        iterations=iterations,
        converged=converged,
        objective_path=path,
    )
    return w, report
