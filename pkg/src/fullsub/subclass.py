"""Rank-based subclassification of propensity scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTreatment, DimensionMismatch, InvalidK


class ScoreRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SubclassPartition:
    """Assignment of N units to ``k`` contiguous rank classes.

    ``class_of`` holds 0-based class indices.  Class ``j`` contains units
    whose scores rank below every unit of class ``j + 1``.
    """

    k: int
    class_of: np.ndarray
    n_k: np.ndarray
    n1_k: np.ndarray
    n0_k: np.ndarray

    @property
    def p_hat(self) -> np.ndarray:
        return self.n1_k / self.n_k

    @property
    def n(self) -> int:
        return int(self.class_of.shape[0])

    def unit_p_hat(self) -> np.ndarray:
        """Each unit's class treated proportion."""
        return self.p_hat[self.class_of]


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Unit indices sorted by (score, original index)."""
    return np.argsort(np.asarray(scores, dtype=float), kind="stable")


def class_sizes(n: int, k: int) -> np.ndarray:
    """Sizes of ``k`` near-equal groups; the first ``n % k`` get one extra."""
    q, r = divmod(n, k)
    sizes = np.full(k, q, dtype=np.int64)
    sizes[:r] += 1
    return sizes


def _check_scores(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=float).ravel()
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if s.size and (s.min() <= 0.0 or s.max() >= 1.0):
        warnings.warn(
            "scores outside (0, 1); partitioning uses ranks only",
            ScoreRangeWarning,
            stacklevel=3,
        )
    return s


def partition_by_rank(
    scores: np.ndarray, k: int, treatment: np.ndarray | None = None
) -> SubclassPartition:
    """Split units into ``k`` near-equal groups of consecutive score ranks.

    Ties in ``scores`` are broken by original index, so tied units may
    land in different classes.  Without ``treatment`` the per-arm counts
    are zero.
    """
    s = _check_scores(scores)
    n = s.shape[0]
    if not 1 <= k <= n:
        raise InvalidK(f"k must lie in [1, {n}], got {k}")
    order = rank_order(s)
    labels_sorted = np.repeat(np.arange(k), class_sizes(n, k))
    class_of = np.empty(n, dtype=np.int64)
    class_of[order] = labels_sorted
    n_k = np.bincount(class_of, minlength=k)
    if treatment is None:
        n1_k = np.zeros(k, dtype=np.int64)
    else:
        z = np.asarray(treatment).ravel()
        if z.shape[0] != n:
            raise DimensionMismatch("treatment length differs from scores")
        n1_k = np.bincount(class_of, weights=(z == 1), minlength=k).astype(np.int64)
    return SubclassPartition(k=k, class_of=class_of, n_k=n_k, n1_k=n1_k, n0_k=n_k - n1_k)


def is_feasible(partition: SubclassPartition) -> bool:
    """True iff every class holds at least one treated and one control unit."""
    return bool(np.all(partition.n1_k > 0) and np.all(partition.n0_k > 0))


def _feasible_sorted(treated_cumsum: np.ndarray, n: int, k: int) -> bool:
    # treated_cumsum[i] = treated count among the first i ranked units
    bounds = np.concatenate([[0], np.cumsum(class_sizes(n, k))])
    n1 = np.diff(treated_cumsum[bounds])
    n_k = np.diff(bounds)
    return bool(np.all(n1 > 0) and np.all(n1 < n_k))


def find_k_max(
    scores: np.ndarray, treatment: np.ndarray
) -> tuple[int, SubclassPartition]:
    """Largest ``k`` whose rank partition has both arms in every class.

    Feasibility need not be monotone in ``k``, so candidates are scanned
    downward from ``min(N1, N0)`` and the first feasible one is returned.
    """
    s = _check_scores(scores)
    z = np.asarray(treatment).ravel()
    if z.shape[0] != s.shape[0]:
        raise DimensionMismatch("treatment length differs from scores")
    n1 = int(np.sum(z == 1))
    n0 = int(z.shape[0] - n1)
    if n1 == 0 or n0 == 0:
        raise DegenerateTreatment("both arms must be present")
    n = s.shape[0]
    z_sorted = (z[rank_order(s)] == 1).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(z_sorted)])
    for k in range(min(n1, n0), 0, -1):
        if _feasible_sorted(csum, n, k):
            break
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ScoreRangeWarning)
        return k, partition_by_rank(s, k, z)
