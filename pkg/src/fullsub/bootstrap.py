"""Nonparametric bootstrap for full estimation pipelines.

Resample ``r`` draws its N indices with
``Philox(SeedSequence([seed, r])).integers(0, N, N)``, so the result does not
depend on how resamples are scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .errors import ConfigError, FullsubError, TooManyFailures
from .parallel import map_slots, resolve_threads
from .pipeline import FitCache, Pipeline

MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci_low: float
    ci_high: float
    b: int
    failures: int
    level: float
    pct_low: float
    pct_high: float


def resample_indices(n: int, seed: int, r: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, r])))
    return rng.integers(0, n, n)


def _resample_deltas(data: Dataset, pipelines, seed: int, r: int) -> list[float]:
    cache = FitCache(data.take(resample_indices(data.n, seed, r)))
    out = []
    for pipe in pipelines:
        try:
            out.append(pipe.run(cache).delta)
        except FullsubError:
            out.append(math.nan)
    return out


def _summarize(point: float, draws: np.ndarray, level: float) -> BootstrapResult:
    ok = draws[np.isfinite(draws)]
    failures = draws.size - ok.size
    if failures > MAX_FAILURE_FRACTION * draws.size:
        raise TooManyFailures(f"{failures} of {draws.size} bootstrap resamples failed")
    se = float(np.std(ok, ddof=1)) if ok.size > 1 else 0.0
    z = float(norm.ppf(0.5 + level / 2.0))
    alpha = 1.0 - level
    return BootstrapResult(
        point=point,
        se=se,
        ci_low=point - z * se,
        ci_high=point + z * se,
        b=int(ok.size),
        failures=int(failures),
        level=level,
        pct_low=float(np.quantile(ok, alpha / 2)),
        pct_high=float(np.quantile(ok, 1 - alpha / 2)),
    )


def bootstrap_many(
    data: Dataset,
    pipelines: list[Pipeline],
    b: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    threads: int | None = 1,
) -> list[BootstrapResult]:
    """:func:`bootstrap_ci` for several pipelines on shared resamples.

    Pipelines evaluated on the same resample share its propensity and
    outcome fits; each result equals what :func:`bootstrap_ci` returns for
    that pipeline alone.
    """
    if b < 2:
        raise ConfigError("b must be at least 2")
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    full = FitCache(data)
    points = [pipe.run(full).delta for pipe in pipelines]
    draws = np.array(
        map_slots(lambda r: _resample_deltas(data, pipelines, seed, r), b, resolve_threads(threads))
    ).reshape(b, len(pipelines))
    return [_summarize(points[j], draws[:, j], level) for j in range(len(pipelines))]


def bootstrap_ci(
    data: Dataset,
    pipeline: Pipeline,
    b: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    threads: int | None = 1,
) -> BootstrapResult:
    """Wald interval ``point +- z * se`` from ``b`` unit-level resamples.

    Every resample re-runs the whole pipeline, including the propensity
    fit and, for full subclassification, the search for the number of
    classes.  Failed resamples are dropped and counted; more than 5% of
    failures raises :class:`TooManyFailures`.  Percentile bounds are
    reported alongside for comparison.
    """
    return bootstrap_many(data, [pipeline], b, level, seed, threads)[0]
