"""Covariate balance, weight-stability and positivity diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, SingularGram
from .weights import UnitWeights, nearest_rank_quantile

GRAM_CONDITION_LIMIT = 1e12
_QUANTILES = {"q05": 0.05, "q25": 0.25, "median": 0.5, "q75": 0.75, "q95": 0.95}


@dataclass(frozen=True)
class ArmWeightStats:
    count: int
    count_excluded: int
    min: float | None
    q05: float | None
    q25: float | None
    median: float | None
    q75: float | None
    q95: float | None
    max: float | None


@dataclass(frozen=True)
class BalanceReport:
    imbalance: float
    per_covariate_weighted_diff: np.ndarray
    weight_stats: dict[str, ArmWeightStats]
    positivity_flags: int

    def to_dict(self) -> dict:
        return {
            "imbalance": self.imbalance,
            "per_covariate_weighted_diff": [float(v) for v in self.per_covariate_weighted_diff],
            "weight_stats": {arm: asdict(s) for arm, s in self.weight_stats.items()},
            "positivity_flags": self.positivity_flags,
        }


def weighted_difference(covariates, treatment, weights: UnitWeights) -> np.ndarray:
    """``(1/N) sum (Z w1 - (1-Z) w0) X`` with excluded units dropped."""
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    z = np.asarray(treatment).ravel() == 1
    if x.shape[0] != z.size or weights.n != z.size:
        raise DimensionMismatch("covariates, treatment and weights must share N")
    signed = np.where(z, 1.0, -1.0) * weights.effective()
    return signed @ x / z.size


def standardized_imbalance(covariates, treatment, weights: UnitWeights) -> float:
    """Mahalanobis norm of the weighted treated-minus-control covariate sum.

    ``sqrt(d' G^-1 d)`` with ``d`` from :func:`weighted_difference` and
    ``G = X'X / N`` the raw (uncentred) second-moment matrix over all
    units, including trimmed ones.  Evaluated as ``sqrt(N) |R^-T d|`` from
    a QR factorization ``X = QR``, which avoids squaring the condition
    number of ``X``.
    """
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = weighted_difference(x, treatment, weights)
    r = np.linalg.qr(x, mode="r")
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] == 0.0 or (sv[0] / sv[-1]) ** 2 > GRAM_CONDITION_LIMIT:
        raise SingularGram("covariate second-moment matrix is (near) singular")
    u = solve_triangular(r, d, trans="T")
    return float(np.sqrt(x.shape[0]) * np.linalg.norm(u))


def _arm_stats(w: np.ndarray, included: np.ndarray) -> ArmWeightStats:
    kept = w[included]
    excluded = int(np.sum(~included))
    if kept.size == 0:
        return ArmWeightStats(0, excluded, None, None, None, None, None, None, None)
    qs = {name: nearest_rank_quantile(kept, q) for name, q in _QUANTILES.items()}
    return ArmWeightStats(
        count=int(kept.size),
        count_excluded=excluded,
        min=float(kept.min()),
        max=float(kept.max()),
        **qs,
    )


def weight_summary(weights: UnitWeights, treatment) -> dict[str, ArmWeightStats]:
    """Nearest-rank order statistics of included weights, per arm."""
    z = np.asarray(treatment).ravel() == 1
    if z.size != weights.n:
        raise DimensionMismatch("treatment length differs from weights")
    return {
        "treated": _arm_stats(weights.w[z], weights.included[z]),
        "control": _arm_stats(weights.w[~z], weights.included[~z]),
    }


def positivity_check(scores, delta_threshold: float = 0.01) -> tuple[int, np.ndarray]:
    """Count and indices of scores outside ``[delta, 1 - delta]``."""
    e = np.asarray(scores, dtype=float).ravel()
    flagged = np.flatnonzero((e < delta_threshold) | (e > 1.0 - delta_threshold))
    return int(flagged.size), flagged


def balance_report(
    covariates, treatment, weights: UnitWeights, scores=None, delta_threshold: float = 0.01
) -> BalanceReport:
    flags = 0 if scores is None else positivity_check(scores, delta_threshold)[0]
    return BalanceReport(
        imbalance=standardized_imbalance(covariates, treatment, weights),
        per_covariate_weighted_diff=weighted_difference(covariates, treatment, weights),
        weight_stats=weight_summary(weights, treatment),
        positivity_flags=flags,
    )
