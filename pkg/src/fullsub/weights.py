"""Per-unit weighting schemes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasiblePartition,
    InvalidQuantile,
    ScoreOutOfRange,
    ZeroWeight,
)
from .subclass import SubclassPartition, is_feasible


@dataclass(frozen=True)
class UnitWeights:
    """Arm-appropriate weight for each unit.

    ``included`` is False for units dropped by trimming.  ``scheme`` is a
    provenance tag such as ``"ipw(logit)"``, ``"trimmed(0.95)"``,
    ``"subclass(5)"``, ``"full_subclass"`` or ``"true_weights"``.
    """

    w: np.ndarray
    included: np.ndarray
    scheme: str

    @property
    def n(self) -> int:
        return int(self.w.shape[0])

    def effective(self) -> np.ndarray:
        """Weights with excluded units zeroed."""
        return np.where(self.included, self.w, 0.0)


def _binary(treatment, n: int) -> np.ndarray:
    z = np.asarray(treatment).ravel()
    if z.shape[0] != n:
        raise DimensionMismatch(f"expected {n} treatment values, got {z.shape[0]}")
    return z == 1


def ipw_weights(scores, treatment, scheme: str = "ipw") -> UnitWeights:
    """``1/e`` for treated units, ``1/(1-e)`` for controls."""
    e = np.asarray(scores, dtype=float).ravel()
    if not np.all((e > 0.0) & (e < 1.0)):
        raise ScoreOutOfRange("scores must lie strictly inside (0, 1)")
    z = _binary(treatment, e.shape[0])
    w = np.where(z, 1.0 / e, 1.0 / (1.0 - e))
    return UnitWeights(w=w, included=np.ones(e.shape[0], dtype=bool), scheme=scheme)


def subclass_weights(
    partition: SubclassPartition, treatment, scheme: str | None = None
) -> UnitWeights:
    """Coarsened weights: ``n_k/n1_k`` for treated, ``n_k/n0_k`` for controls."""
    if not is_feasible(partition):
        raise InfeasiblePartition("some class lacks a treated or a control unit")
    z = _binary(treatment, partition.n)
    k = partition.class_of
    n_k = partition.n_k[k].astype(float)
    w = np.where(z, n_k / partition.n1_k[k], n_k / partition.n0_k[k])
    return UnitWeights(
        w=w,
        included=np.ones(partition.n, dtype=bool),
        scheme=scheme or f"subclass({partition.k})",
    )


def nearest_rank_quantile(values, q: float) -> float:
    """Smallest value with at least ``q`` of the sample at or below it."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(q * v.size - 1e-9))
    return float(v[min(rank, v.size) - 1])


def trimmed_weights(
    base: UnitWeights, quantile: float = 0.95, mode: str = "exclude"
) -> UnitWeights:
    """Trim weights at their pooled nearest-rank ``quantile``.

    The quantile is taken over all N weights, both arms together.  With
    ``mode="exclude"`` units whose weight strictly exceeds it are marked
    not included and the rest keep their weights.  ``mode="cap"`` instead
    lowers those weights to the quantile and keeps every unit.
    """
    if not 0.0 < quantile < 1.0:
        raise InvalidQuantile(f"quantile must lie in (0, 1), got {quantile}")
    if not np.all(base.included):
        raise ValueError("base weights already carry exclusions")
    cut = nearest_rank_quantile(base.w, quantile)
    if mode == "exclude":
        return UnitWeights(
            w=base.w.copy(), included=base.w <= cut, scheme=f"trimmed({quantile:g})"
        )
    if mode == "cap":
        return UnitWeights(
            w=np.minimum(base.w, cut), included=base.included.copy(), scheme=f"capped({quantile:g})"
        )
    raise ValueError(f"mode must be 'exclude' or 'cap', got {mode!r}")


def implied_scores(weights: UnitWeights, treatment) -> np.ndarray:
    """Propensity scores implied by the weights: ``1/w`` or ``1 - 1/w``."""
    if not np.all(weights.included):
        raise ValueError("implied scores need every unit included")
    if np.any(weights.w == 0.0):
        raise ZeroWeight("zero weight has no implied score")
    z = _binary(treatment, weights.n)
    inv = 1.0 / weights.w
    return np.where(z, inv, 1.0 - inv)
