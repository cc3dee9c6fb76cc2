"""Scheme + estimator pipelines run end to end on a :class:`Dataset`.

A pipeline fits the propensity model, builds weights for the requested
scheme and evaluates one estimator.  The same object drives the Monte
Carlo harness, the bootstrap and the CLI, so a bootstrap resample re-runs
exactly what produced the full-sample estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError
from .estimators import (
    CausalEstimate,
    Estimator,
    doubly_robust_weighted,
    fit_outcome_regression,
    hajek,
    horvitz_thompson,
    subclassification_estimate,
)
from .glm import LinkKind, PropensityFit, fit_binary_glm, predict_scores
from .subclass import SubclassPartition, find_k_max, partition_by_rank
from .weights import UnitWeights, ipw_weights, subclass_weights, trimmed_weights

SCHEMES = ("naive", "true", "ipw", "trimmed", "subclass", "full_subclass")
PARTITION_SCHEMES = ("naive", "subclass", "full_subclass")


@dataclass
class SchemeResult:
    weights: UnitWeights
    scores: np.ndarray | None = None
    partition: SubclassPartition | None = None
    fit: PropensityFit | None = None


@dataclass
class FitCache:
    """Memoizes propensity fits and outcome fits for one dataset."""

    data: Dataset
    ps_fits: dict = field(default_factory=dict)
    or_fit: object = None
    schemes: dict = field(default_factory=dict)

    def propensity(self, link: LinkKind) -> tuple[PropensityFit, np.ndarray]:
        if link not in self.ps_fits:
            fit = fit_binary_glm(self.data.ps_covariates, self.data.treatment, link)
            self.ps_fits[link] = (fit, predict_scores(fit, self.data.ps_covariates))
        return self.ps_fits[link]

    def outcome(self):
        if self.or_fit is None:
            d = self.data
            self.or_fit = fit_outcome_regression(d.or_covariates, d.outcome, d.treatment)
        return self.or_fit


def build_scheme(
    cache: FitCache,
    scheme: str,
    link: LinkKind | str = LinkKind.LOGIT,
    k: int | None = None,
    quantile: float = 0.95,
    trim_mode: str = "exclude",
) -> SchemeResult:
    link = LinkKind(link)
    key = (scheme, link, k, quantile, trim_mode)
    if key in cache.schemes:
        return cache.schemes[key]
    data = cache.data
    z = data.treatment
    if scheme == "naive":
        part = partition_by_rank(np.zeros(data.n) + 0.5, 1, z)
        result = SchemeResult(subclass_weights(part, z, "naive"), partition=part)
    elif scheme == "true":
        if data.true_scores is None:
            raise DataError("true weights need simulated true scores")
        result = SchemeResult(
            ipw_weights(data.true_scores, z, "true_weights"), scores=data.true_scores
        )
    else:
        fit, scores = cache.propensity(link)
        if scheme == "ipw":
            w = ipw_weights(scores, z, f"ipw({link.value})")
            result = SchemeResult(w, scores=scores, fit=fit)
        elif scheme == "trimmed":
            base = build_scheme(cache, "ipw", link).weights
            trimmed = trimmed_weights(base, quantile, trim_mode)
            result = SchemeResult(trimmed, scores=scores, fit=fit)
        elif scheme == "subclass":
            if k is None:
                raise ConfigError("scheme 'subclass' needs k")
            part = partition_by_rank(scores, k, z)
            w = subclass_weights(part, z, f"subclass({k})")
            result = SchemeResult(w, scores=scores, partition=part, fit=fit)
        elif scheme == "full_subclass":
            _, part = find_k_max(scores, z)
            w = subclass_weights(part, z, "full_subclass")
            result = SchemeResult(w, scores=scores, partition=part, fit=fit)
        else:
            raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    cache.schemes[key] = result
    return result


def evaluate(
    cache: FitCache, built: SchemeResult, estimator: Estimator | str, dr_sign: str = "standard"
) -> CausalEstimate:
    estimator = Estimator(estimator)
    d = cache.data
    if estimator is Estimator.HT:
        return horvitz_thompson(d.outcome, d.treatment, built.weights)
    if estimator is Estimator.HAJEK:
        return hajek(d.outcome, d.treatment, built.weights)
    if estimator is Estimator.DR:
        return doubly_robust_weighted(
            d.outcome, d.treatment, built.weights, cache.outcome(), d.or_covariates,
            dr_sign=dr_sign,
        )
    if estimator is Estimator.SUBCLASS:
        if built.partition is None:
            raise ConfigError("Subclass estimator needs a partition scheme")
        est = subclassification_estimate(d.outcome, d.treatment, built.partition)
        return CausalEstimate(est.mu1, est.mu0, est.estimator, built.weights.scheme)
    raise ConfigError(f"estimator {estimator.value} is not available in pipelines")


@dataclass(frozen=True)
class Pipeline:
    """One (scheme, estimator) combination."""

    scheme: str
    estimator: Estimator | str
    link: LinkKind | str = LinkKind.LOGIT
    k: int | None = None
    quantile: float = 0.95
    trim_mode: str = "exclude"
    dr_sign: str = "standard"

    def __post_init__(self):
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        object.__setattr__(self, "link", LinkKind(self.link))
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "subclass" and (self.k is None or self.k < 1):
            raise ConfigError("scheme 'subclass' needs a positive k")
        if self.estimator is Estimator.SUBCLASS and self.scheme not in PARTITION_SCHEMES:
            raise ConfigError(f"Subclass estimator needs one of {PARTITION_SCHEMES}")
        if self.estimator is Estimator.SHT_ORACLE:
            raise ConfigError("SHT_oracle is simulation-only and not a pipeline estimator")
        if self.trim_mode not in ("exclude", "cap"):
            raise ConfigError("trim_mode must be 'exclude' or 'cap'")
        if self.dr_sign not in ("standard", "paper"):
            raise ConfigError("dr_sign must be 'standard' or 'paper'")

    def build(self, cache: FitCache) -> SchemeResult:
        return build_scheme(
            cache, self.scheme, self.link, self.k, self.quantile, self.trim_mode
        )

    def run(self, data: Dataset | FitCache) -> CausalEstimate:
        cache = data if isinstance(data, FitCache) else FitCache(data)
        return evaluate(cache, self.build(cache), self.estimator, self.dr_sign)
