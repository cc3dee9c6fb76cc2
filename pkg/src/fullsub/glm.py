"""Binary-response GLMs (logit and complementary log-log) fitted by IRLS."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .errors import (
    DegenerateTreatment,
    DimensionMismatch,
    NotConverged,
    RankDeficient,
)

SCORE_CLIP = 1e-12
ETA_BOUND = 30.0
SEPARATION_THRESHOLD = 1e4
_MU_FLOOR = 1e-15


class LinkKind(str, enum.Enum):
    LOGIT = "logit"
    CLOGLOG = "cloglog"


class SeparationWarning(UserWarning):
    pass


def mean_function(eta: np.ndarray, link: LinkKind | str) -> np.ndarray:
    """Inverse link: maps linear predictors into (0, 1)."""
    link = LinkKind(link)
    eta = np.asarray(eta, dtype=float)
    if link is LinkKind.LOGIT:
        return expit(eta)
    eta = np.clip(eta, -ETA_BOUND, ETA_BOUND)
    return -np.expm1(-np.exp(eta))


def mean_derivative(eta: np.ndarray, link: LinkKind | str) -> np.ndarray:
    """d mu / d eta."""
    link = LinkKind(link)
    eta = np.asarray(eta, dtype=float)
    if link is LinkKind.LOGIT:
        mu = expit(eta)
        return mu * (1.0 - mu)
    eta = np.clip(eta, -ETA_BOUND, ETA_BOUND)
    return np.exp(eta - np.exp(eta))


def link_function(mu: np.ndarray, link: LinkKind | str) -> np.ndarray:
    link = LinkKind(link)
    mu = np.asarray(mu, dtype=float)
    if link is LinkKind.LOGIT:
        return np.log(mu) - np.log1p(-mu)
    return np.log(-np.log1p(-mu))


@dataclass(frozen=True)
class PropensityFit:
    """Fitted binary GLM.  ``coefficients[0]`` is the intercept."""

    coefficients: np.ndarray
    link: LinkKind
    converged: bool
    iterations: int
    final_deviance: float
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_covariates(self) -> int:
        return len(self.coefficients) - 1

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return predict_scores(self, covariates)


def _augment(covariates: np.ndarray) -> np.ndarray:
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def bernoulli_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    mu = np.clip(mu, _MU_FLOOR, 1.0 - _MU_FLOOR)
    return float(-2.0 * np.sum(y * np.log(mu) + (1.0 - y) * np.log1p(-mu)))


def log_likelihood(coefficients, covariates, treatment, link) -> float:
    """Bernoulli log-likelihood of ``coefficients`` (intercept first)."""
    x = _augment(covariates)
    mu = mean_function(x @ np.asarray(coefficients, dtype=float), link)
    return -0.5 * bernoulli_deviance(np.asarray(treatment, dtype=float), mu)


def score_vector(coefficients, covariates, treatment, link) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` w.r.t. the coefficients."""
    x = _augment(covariates)
    y = np.asarray(treatment, dtype=float)
    eta = x @ np.asarray(coefficients, dtype=float)
    mu = np.clip(mean_function(eta, link), _MU_FLOOR, 1.0 - _MU_FLOOR)
    dmu = mean_derivative(eta, link)
    return x.T @ ((y - mu) * dmu / (mu * (1.0 - mu)))


def _wls_step(x: np.ndarray, y: np.ndarray, eta: np.ndarray, link: LinkKind) -> np.ndarray:
    mu = np.clip(mean_function(eta, link), _MU_FLOOR, 1.0 - _MU_FLOOR)
    dmu = np.maximum(mean_derivative(eta, link), _MU_FLOOR)
    working = eta + (y - mu) / dmu
    sw = np.sqrt(dmu * dmu / (mu * (1.0 - mu)))
    q, r = np.linalg.qr(sw[:, None] * x)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise RankDeficient("weighted normal equations are singular")
    return solve_triangular(r, q.T @ (sw * working))


def fit_binary_glm(
    covariates: np.ndarray,
    treatment: np.ndarray,
    link: LinkKind | str = LinkKind.LOGIT,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 10,
) -> PropensityFit:
    """Maximum-likelihood fit of ``pr(Z=1|X) = mu(b0 + X b)`` by IRLS.

    Iterates until ``|dev_t - dev_{t-1}| < tol * (|dev_t| + 0.1)``, halving
    any step that increases the deviance.  Once the deviance criterion is
    met a few extra Newton steps polish the score equations down to
    ``10 * tol``; those steps are kept only if they do not raise the
    deviance.

    Rows are put in a canonical (lexicographic) order before fitting, so
    the result does not depend on the order of the units.

    Raises
    ------
    DegenerateTreatment
        if ``treatment`` is all 0 or all 1.
    RankDeficient
        if the intercept-augmented design (or a weighted version of it) is
        singular.
    NotConverged
        if ``max_iter`` is reached, or step-halving cannot reduce the
        deviance.
    """
    link = LinkKind(link)
    x = _augment(covariates)
    y = np.asarray(treatment, dtype=float).ravel()
    n, p = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} covariate rows but {y.shape[0]} treatment values")
    if not np.all((y == 0) | (y == 1)):
        raise DegenerateTreatment("treatment must be coded 0/1")
    if y.min() == y.max():
        raise DegenerateTreatment("treatment has a single arm")
    if n < p + 1:
        raise RankDeficient(f"{n} units cannot identify {p} coefficients")
    if np.linalg.matrix_rank(x) < p:
        raise RankDeficient("design matrix is not of full column rank")

    order = np.lexsort(np.column_stack([x[:, 1:], y]).T[::-1])
    x = x[order]
    y = y[order]

    eta = link_function((y + 0.5) / 2.0, link)
    beta = _wls_step(x, y, eta, link)
    dev = bernoulli_deviance(y, mean_function(x @ beta, link))
    converged = False
    iterations = 1
    while iterations < max_iter:
        iterations += 1
        new_beta = _wls_step(x, y, x @ beta, link)
        new_dev = bernoulli_deviance(y, mean_function(x @ new_beta, link))
        halvings = 0
        while not np.isfinite(new_dev) or new_dev > dev * (1 + 1e-12) + 1e-12:
            if halvings == max_halvings:
                raise NotConverged(
                    f"step-halving failed to reduce deviance at iteration {iterations}"
                )
            new_beta = 0.5 * (beta + new_beta)
            new_dev = bernoulli_deviance(y, mean_function(x @ new_beta, link))
            halvings += 1
        change = abs(new_dev - dev)
        beta, dev = new_beta, new_dev
        if change < tol * (abs(dev) + 0.1):
            converged = True
            break
    if not converged:
        raise NotConverged(f"IRLS did not converge in {max_iter} iterations")

    for _ in range(5):
        grad = score_vector(beta, x[:, 1:], y, link)
        if np.max(np.abs(grad)) <= 10 * tol:
            break
        try:
            cand = _wls_step(x, y, x @ beta, link)
        except RankDeficient:
            break
        cand_dev = bernoulli_deviance(y, mean_function(x @ cand, link))
        if not cand_dev <= dev * (1 + 1e-12) + 1e-12:
            break
        if np.max(np.abs(score_vector(cand, x[:, 1:], y, link))) >= np.max(np.abs(grad)):
            break
        beta, dev = cand, cand_dev

    notes: list[str] = []
    if not np.all(np.isfinite(beta)):
        raise NotConverged("non-finite coefficients")
    # a (near) zero deviance is only reachable when the arms are separated
    if np.max(np.abs(beta)) > SEPARATION_THRESHOLD or dev < 1e-6:
        notes.append("separation")
        warnings.warn(
            "fitted scores reach 0 or 1; data may be separated",
            SeparationWarning,
            stacklevel=2,
        )
    return PropensityFit(
        coefficients=beta,
        link=link,
        converged=True,
        iterations=iterations,
        final_deviance=dev,
        warnings=tuple(notes),
    )


def predict_scores(fit: PropensityFit, covariates: np.ndarray) -> np.ndarray:
    """Fitted propensity scores, clipped to ``[1e-12, 1 - 1e-12]``."""
    x = _augment(covariates)
    if x.shape[1] != len(fit.coefficients):
        raise DimensionMismatch(
            f"fit has {fit.n_covariates} covariates, got {x.shape[1] - 1}"
        )
    mu = mean_function(x @ fit.coefficients, fit.link)
    return np.clip(mu, SCORE_CLIP, 1.0 - SCORE_CLIP)
