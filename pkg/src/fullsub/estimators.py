"""Point estimators of the average causal effect."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArmTooSmall,
    DimensionMismatch,
    EmptyArm,
    EmptyData,
    InfeasiblePartition,
    PkOutOfRange,
    RankDeficient,
    ScoreOutOfRange,
)
from .subclass import SubclassPartition, is_feasible
from .weights import UnitWeights


class Estimator(str, enum.Enum):
    HT = "HT"
    HAJEK = "Hajek"
    DR = "DR"
    SUBCLASS = "Subclass"
    SHT_ORACLE = "SHT_oracle"


@dataclass(frozen=True)
class CausalEstimate:
    mu1: float
    mu0: float
    estimator: Estimator
    scheme: str = ""

    @property
    def delta(self) -> float:
        return self.mu1 - self.mu0

    @property
    def ratio(self) -> float | None:
        """Multiplicative effect ``mu1 / mu0``; None when ``mu0 == 0``."""
        if self.mu0 == 0.0:
            return None
        return self.mu1 / self.mu0


@dataclass(frozen=True)
class OutcomeFit:
    """Per-arm OLS coefficients, intercept first."""

    coef0: np.ndarray
    coef1: np.ndarray

    def predict(self, covariates) -> tuple[np.ndarray, np.ndarray]:
        x = _augment(covariates)
        return x @ self.coef0, x @ self.coef1


def _augment(covariates) -> np.ndarray:
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def _arrays(outcome, treatment) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(outcome, dtype=float).ravel()
    z = np.asarray(treatment).ravel() == 1
    if y.shape != z.shape:
        raise DimensionMismatch("outcome and treatment lengths differ")
    if y.size == 0:
        raise EmptyData("no units")
    return y, z


def horvitz_thompson(outcome, treatment, weights: UnitWeights) -> CausalEstimate:
    """Weighted arm totals divided by N; excluded units contribute zero."""
    y, z = _arrays(outcome, treatment)
    w = weights.effective()
    n = y.size
    mu1 = np.sum(np.where(z, w * y, 0.0)) / n
    mu0 = np.sum(np.where(z, 0.0, w * y)) / n
    return CausalEstimate(float(mu1), float(mu0), Estimator.HT, weights.scheme)


def hajek(outcome, treatment, weights: UnitWeights) -> CausalEstimate:
    """Arm means normalized by the included weight total of each arm."""
    y, z = _arrays(outcome, treatment)
    w = weights.effective()
    s1 = np.sum(np.where(z, w, 0.0))
    s0 = np.sum(np.where(z, 0.0, w))
    if s1 == 0.0 or s0 == 0.0:
        raise EmptyArm("an arm has zero included weight")
    mu1 = np.sum(np.where(z, w * y, 0.0)) / s1
    mu0 = np.sum(np.where(z, 0.0, w * y)) / s0
    return CausalEstimate(float(mu1), float(mu0), Estimator.HAJEK, weights.scheme)


def fit_outcome_regression(covariates, outcome, treatment) -> OutcomeFit:
    """Separate least-squares fits of outcome on covariates in each arm."""
    x = _augment(covariates)
    y, z = _arrays(outcome, treatment)
    if x.shape[0] != y.size:
        raise DimensionMismatch("covariate rows differ from outcome length")
    p = x.shape[1]
    coefs = []
    for arm in (False, True):
        mask = z == arm
        if mask.sum() < p + 1:
            raise ArmTooSmall(f"arm {int(arm)} has {mask.sum()} units for {p} coefficients")
        xa = x[mask]
        if np.linalg.matrix_rank(xa) < p:
            raise RankDeficient(f"arm {int(arm)} design is rank deficient")
        coef, *_ = np.linalg.lstsq(xa, y[mask], rcond=None)
        coefs.append(coef)
    return OutcomeFit(coef0=coefs[0], coef1=coefs[1])


def _dr(y, z, e, m0, m1, keep, dr_sign: str) -> tuple[float, float]:
    zf = z.astype(float)
    t1 = np.where(keep, (zf * y - (zf - e) * m1) / e, m1)
    if dr_sign == "standard":
        t0 = np.where(keep, ((1 - zf) * y + (zf - e) * m0) / (1 - e), m0)
    elif dr_sign == "paper":
        t0 = np.where(keep, ((1 - zf) * y - (zf - e) * m0) / (1 - e), m0)
    else:
        raise ValueError(f"dr_sign must be 'standard' or 'paper', got {dr_sign!r}")
    return float(np.mean(t1)), float(np.mean(t0))


def doubly_robust(
    outcome,
    treatment,
    scores,
    outcome_fit: OutcomeFit,
    covariates,
    *,
    dr_sign: str = "standard",
    scheme: str = "",
) -> CausalEstimate:
    """Augmented IPW estimate.

    ``dr_sign="standard"`` uses ``+(Z - e) m0`` in the control term, the
    usual AIPW form.  ``dr_sign="paper"`` flips that sign; the resulting
    estimator is not doubly robust and exists only for literal replication.
    """
    y, z = _arrays(outcome, treatment)
    e = np.asarray(scores, dtype=float).ravel()
    if e.shape != y.shape:
        raise DimensionMismatch("scores length differs from outcome")
    if not np.all((e > 0.0) & (e < 1.0)):
        raise ScoreOutOfRange("scores must lie strictly inside (0, 1)")
    m0, m1 = outcome_fit.predict(covariates)
    mu1, mu0 = _dr(y, z, e, m0, m1, np.ones(y.size, dtype=bool), dr_sign)
    return CausalEstimate(mu1, mu0, Estimator.DR, scheme)


def doubly_robust_weighted(
    outcome,
    treatment,
    weights: UnitWeights,
    outcome_fit: OutcomeFit,
    covariates,
    *,
    dr_sign: str = "standard",
) -> CausalEstimate:
    """:func:`doubly_robust` driven by a weighting scheme.

    Scores are the reciprocals implied by the weights.  A unit excluded by
    trimming keeps only its outcome-model prediction.
    """
    y, z = _arrays(outcome, treatment)
    if weights.n != y.size:
        raise DimensionMismatch("weights length differs from outcome")
    w = np.where(weights.included, weights.w, 2.0)
    inv = 1.0 / w
    e = np.where(z, inv, 1.0 - inv)
    m0, m1 = outcome_fit.predict(covariates)
    mu1, mu0 = _dr(y, z, e, m0, m1, weights.included, dr_sign)
    return CausalEstimate(mu1, mu0, Estimator.DR, weights.scheme)


def subclassification_estimate(outcome, treatment, partition: SubclassPartition) -> CausalEstimate:
    """Class-size-weighted average of within-class differences in means."""
    y, z = _arrays(outcome, treatment)
    if partition.n != y.size:
        raise DimensionMismatch("partition size differs from outcome length")
    if not is_feasible(partition):
        raise InfeasiblePartition("some class lacks a treated or a control unit")
    k = partition.k
    sum1 = np.bincount(partition.class_of, weights=np.where(z, y, 0.0), minlength=k)
    sum0 = np.bincount(partition.class_of, weights=np.where(z, 0.0, y), minlength=k)
    share = partition.n_k / y.size
    mu1 = np.sum(share * sum1 / partition.n1_k)
    mu0 = np.sum(share * sum0 / partition.n0_k)
    scheme = f"subclass({k})"
    return CausalEstimate(float(mu1), float(mu0), Estimator.SUBCLASS, scheme)


def s_ht_oracle(outcome, treatment, partition: SubclassPartition, true_pk) -> CausalEstimate:
    """Infeasible subclass estimator with known class treatment probabilities."""
    y, z = _arrays(outcome, treatment)
    pk = np.asarray(true_pk, dtype=float).ravel()
    if pk.shape[0] != partition.k:
        raise DimensionMismatch(f"need {partition.k} class probabilities, got {pk.shape[0]}")
    if not np.all((pk > 0.0) & (pk < 1.0)):
        raise PkOutOfRange("class probabilities must lie strictly inside (0, 1)")
    p = pk[partition.class_of]
    mu1 = np.sum(np.where(z, y / p, 0.0)) / y.size
    mu0 = np.sum(np.where(z, 0.0, y / (1.0 - p))) / y.size
    return CausalEstimate(float(mu1), float(mu0), Estimator.SHT_ORACLE, f"oracle({partition.k})")
