"""Unit-level data container shared by pipelines, bootstrap and CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch


def _matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    return m[:, None] if m.ndim == 1 else m


@dataclass(frozen=True)
class Dataset:
    """Treatment, outcome and covariate blocks for N units.

    ``ps_covariates`` enter the propensity model, ``or_covariates`` the
    outcome regression and ``balance_covariates`` the imbalance measure.
    The last two default to ``ps_covariates``.  ``true_scores`` is only
    known for simulated data.
    """

    treatment: np.ndarray
    outcome: np.ndarray
    ps_covariates: np.ndarray
    or_covariates: np.ndarray | None = None
    balance_covariates: np.ndarray | None = None
    true_scores: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.treatment).ravel()
        if not np.all((z == 0) | (z == 1)):
            raise DataError("treatment must be 0/1")
        object.__setattr__(self, "treatment", z.astype(np.int8))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=float).ravel())
        object.__setattr__(self, "ps_covariates", _matrix(self.ps_covariates))
        for name in ("or_covariates", "balance_covariates"):
            value = getattr(self, name)
            object.__setattr__(
                self, name, self.ps_covariates if value is None else _matrix(value)
            )
        if self.true_scores is not None:
            object.__setattr__(
                self, "true_scores", np.asarray(self.true_scores, dtype=float).ravel()
            )
        n = z.shape[0]
        blocks = [self.outcome, self.ps_covariates, self.or_covariates, self.balance_covariates]
        if self.true_scores is not None:
            blocks.append(self.true_scores)
        if any(b.shape[0] != n for b in blocks):
            raise DimensionMismatch("all blocks must have one row per unit")

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])

    def take(self, index) -> Dataset:
        """Rows ``index`` (duplicates allowed), e.g. a bootstrap resample."""
        idx = np.asarray(index, dtype=np.int64)
        return Dataset(
            treatment=self.treatment[idx],
            outcome=self.outcome[idx],
            ps_covariates=self.ps_covariates[idx],
            or_covariates=self.or_covariates[idx],
            balance_covariates=self.balance_covariates[idx],
            true_scores=None if self.true_scores is None else self.true_scores[idx],
        )
