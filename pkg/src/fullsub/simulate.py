"""Kang-Schafer style simulation designs and Monte Carlo harness.

Random numbers
--------------
Replication ``r`` under master seed ``s`` draws from
``Philox(SeedSequence([s, r]))``.  Uniforms are consumed unit-major, six
per unit (four covariates, the assignment draw, the outcome noise), and
normals come from the inverse normal CDF.  A replication therefore never
depends on how many others ran before it or on which worker ran it, and
the first N units of a larger sample coincide with a sample of size N.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtri

from .balance import standardized_imbalance
from .data import Dataset
from .errors import ConfigError, FullsubError, NonPositiveLogArgument
from .glm import SCORE_CLIP, LinkKind, mean_function
from .parallel import map_slots, resolve_threads
from .estimators import subclassification_estimate
from .pipeline import FitCache, Pipeline, evaluate
from .subclass import find_k_max, is_feasible, partition_by_rank

GAMMA = np.array([-1.0, 0.5, -0.25, -0.1])
OUTCOME_COEF = np.array([210.0, 27.4, 13.7, 13.7, 13.7])
UNIFORMS_PER_UNIT = 6
MAX_REGENERATION_FRACTION = 1e-3


class Design(str, enum.Enum):
    KS_LOGIT = "ks_logit"
    CLOGLOG_VARIANT = "cloglog_variant"

    @property
    def link(self) -> LinkKind:
        return LinkKind.LOGIT if self is Design.KS_LOGIT else LinkKind.CLOGLOG


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    design: Design | str = Design.KS_LOGIT
    ps_spec: str = "correct"
    or_spec: str = "none"
    seed: int = 0
    replication_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        if self.n < 20:
            raise ConfigError(f"n must be at least 20, got {self.n}")
        if self.ps_spec not in ("correct", "incorrect"):
            raise ConfigError(f"ps_spec must be correct/incorrect, got {self.ps_spec!r}")
        if self.or_spec not in ("correct", "incorrect", "none"):
            raise ConfigError(f"or_spec must be correct/incorrect/none, got {self.or_spec!r}")
        if not 0 <= self.seed < 2**64 or self.replication_index < 0:
            raise ConfigError("seed must be a 64-bit unsigned integer, replication >= 0")


@dataclass(frozen=True)
class SimDataset:
    x: np.ndarray
    w: np.ndarray
    z: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    true_scores: np.ndarray
    true_delta: float = 0.0
    regenerated: int = 0

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    def as_dataset(self, ps_spec: str = "correct", or_spec: str = "correct") -> Dataset:
        """Misspecified models see the transformed covariates W instead of X.

        Balance is measured on the covariates of the propensity model.
        """
        ps = self.x if ps_spec == "correct" else self.w
        outcome_cov = self.w if or_spec == "incorrect" else self.x
        return Dataset(
            treatment=self.z,
            outcome=self.y,
            ps_covariates=ps,
            or_covariates=outcome_cov,
            balance_covariates=ps,
            true_scores=self.true_scores,
        )


def replication_stream(seed: int, replication_index: int) -> np.random.Generator:
    """Counter-based generator for one replication."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replication_index])))


def _normal(u: np.ndarray) -> np.ndarray:
    # random() yields multiples of 2**-53 in [0, 1); shift to the cell midpoint
    return ndtri(u + 2.0**-54)


def transform_covariates(x: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4 = x.T
    return np.column_stack([
        np.exp(x1 / 2.0),
        x2 / (1.0 + np.exp(x1)) + 10.0,
        (x1 * x3 / 25.0 + 0.6) ** 3,
        (x2 + x4 + 20.0) ** 2,
    ])


def _linear_outcome(x: np.ndarray) -> np.ndarray:
    return OUTCOME_COEF[0] + x @ OUTCOME_COEF[1:]


def generate(config: ScenarioConfig) -> SimDataset:
    """Draw one simulated sample.

    ``ks_logit``: Z ~ Bernoulli(expit(X gamma)), Y(z) = 210 + 27.4 X1 +
    13.7 (X2 + X3 + X4) + eps.  ``cloglog_variant``: Z ~ Bernoulli(1 -
    exp(-exp(X gamma))), Y(z) = log(same linear term) + eps.  Both arms
    share Y(z), so the true effect is 0.  The assignment model has no
    intercept.
    """
    n = config.n
    rng = replication_stream(config.seed, config.replication_index)
    u = rng.random((n, UNIFORMS_PER_UNIT))
    x = _normal(u[:, :4])
    regenerated = 0
    if config.design is Design.CLOGLOG_VARIANT:
        bad = np.flatnonzero(_linear_outcome(x) <= 0.0)
        for i in bad:
            while _linear_outcome(x[i : i + 1])[0] <= 0.0:
                x[i] = _normal(rng.random(4))
                regenerated += 1
                if regenerated > MAX_REGENERATION_FRACTION * n:
                    raise NonPositiveLogArgument(
                        f"{regenerated} regenerations exceed {MAX_REGENERATION_FRACTION:.1%} of N"
                    )
    eta = x @ GAMMA
    scores = expit(eta) if config.design is Design.KS_LOGIT else mean_function(eta, LinkKind.CLOGLOG)
    # 1 - exp(-exp(eta)) rounds to exactly 1 once eta exceeds about 3.6
    scores = np.clip(scores, SCORE_CLIP, 1.0 - SCORE_CLIP)
    z = (u[:, 4] < scores).astype(np.int8)
    eps = _normal(u[:, 5])
    base = _linear_outcome(x)
    if config.design is Design.CLOGLOG_VARIANT:
        base = np.log(base)
    y_pot = base + eps
    return SimDataset(
        x=x,
        w=transform_covariates(x),
        z=z,
        y=y_pot.copy(),
        y0=y_pot,
        y1=y_pot.copy(),
        true_scores=scores,
        regenerated=regenerated,
    )


@dataclass(frozen=True)
class Cell:
    """One row of a result table."""

    n: int
    estimator: str
    scheme: str
    design: str = "ks_logit"
    ps_spec: str = "correct"
    or_spec: str = "none"
    link: str | None = None
    k: int | None = None
    quantile: float = 0.95
    trim_mode: str = "exclude"
    dr_sign: str = "standard"

    def __post_init__(self):
        ScenarioConfig(self.n, self.design, self.ps_spec, self.or_spec)
        if (self.estimator == "DR") != (self.or_spec != "none"):
            raise ConfigError("or_spec must be set for DR cells and 'none' otherwise")
        self.pipeline()

    def pipeline(self) -> Pipeline:
        link = self.link or Design(self.design).link.value
        return Pipeline(
            self.scheme, self.estimator, link, self.k, self.quantile, self.trim_mode, self.dr_sign
        )

    @property
    def scheme_key(self) -> tuple:
        p = self.pipeline()
        return (
            self.n, self.design, self.ps_spec, self.scheme, p.link, self.k, self.quantile,
            self.trim_mode,
        )


@dataclass
class ResultRow:
    cell: Cell
    bias: float
    rmse: float
    imb_mean: float
    imb_median: float
    n_failures: int
    replications: int
    median_delta: float
    mc_se: float

    def as_record(self) -> dict:
        c = self.cell
        return {
            "n": c.n,
            "design": c.design,
            "ps_spec": c.ps_spec,
            "or_spec": c.or_spec,
            "estimator": c.estimator,
            "scheme": c.scheme,
            "k": "" if c.k is None else c.k,
            "link": c.pipeline().link.value,
            "bias": self.bias,
            "rmse": self.rmse,
            "imb_mean": self.imb_mean,
            "imb_median": self.imb_median,
            "n_failures": self.n_failures,
            "replications": self.replications,
            "median_delta": self.median_delta,
            "mc_se": self.mc_se,
        }


@dataclass
class ResultTable:
    rows: list[ResultRow]
    deltas: np.ndarray  # (R, cells), NaN where a replication failed
    imbalances: np.ndarray
    failures: list[tuple[int, int, str]] = field(default_factory=list)

    def row(self, **match) -> ResultRow:
        hits = [r for r in self.rows if all(getattr(r.cell, k) == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]

    def records(self) -> list[dict]:
        return [r.as_record() for r in self.rows]


def _replicate(cells: list[Cell], seed: int, rep: int) -> tuple[np.ndarray, np.ndarray, list]:
    deltas = np.full(len(cells), np.nan)
    imbs = np.full(len(cells), np.nan)
    failures = []
    sims: dict = {}
    ps_shared: dict = {}
    caches: dict = {}
    imb_done: dict = {}
    for j, cell in enumerate(cells):
        try:
            skey = (cell.n, cell.design)
            if skey not in sims:
                sims[skey] = generate(ScenarioConfig(cell.n, cell.design, seed=seed, replication_index=rep))
            sim = sims[skey]
            pkey = (cell.n, cell.design, cell.ps_spec)
            shared = ps_shared.setdefault(pkey, ({}, {}))
            ckey = pkey + (cell.or_spec,)
            if ckey not in caches:
                caches[ckey] = FitCache(
                    sim.as_dataset(cell.ps_spec, cell.or_spec), ps_fits=shared[0], schemes=shared[1]
                )
            cache = caches[ckey]
            pipe = cell.pipeline()
            built = pipe.build(cache)
            if cell.scheme_key not in imb_done:
                try:
                    imb_done[cell.scheme_key] = standardized_imbalance(
                        cache.data.balance_covariates, sim.z, built.weights
                    )
                except FullsubError:
                    imb_done[cell.scheme_key] = np.nan
            imbs[j] = imb_done[cell.scheme_key]
            deltas[j] = evaluate(cache, built, pipe.estimator, pipe.dr_sign).delta
        except FullsubError as exc:
            failures.append((rep, j, f"{type(exc).__name__}: {exc}"))
    return deltas, imbs, failures


def _summarize(values: np.ndarray) -> tuple[float, float, float, float]:
    ok = values[np.isfinite(values)]
    if ok.size == 0:
        return (math.nan,) * 4
    se = float(np.std(ok, ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan
    return float(np.mean(ok)), float(np.sqrt(np.mean(ok**2))), float(np.median(ok)), se


def run_monte_carlo(
    cells: list[Cell], replications: int, seed: int, threads: int | None = 1
) -> ResultTable:
    """Bias, RMSE and mean/median imbalance of every cell over ``replications``.

    All cells of a replication share one simulated sample per (n, design),
    and cells that share a propensity specification share the fit.  A cell
    that fails in a replication is recorded as NaN and counted.
    """
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    if not cells:
        raise ConfigError("no cells to simulate")
    results = map_slots(lambda r: _replicate(cells, seed, r), replications, resolve_threads(threads))
    deltas = np.vstack([r[0] for r in results])
    imbs = np.vstack([r[1] for r in results])
    failures = [f for r in results for f in r[2]]
    rows = []
    for j, cell in enumerate(cells):
        bias, rmse, med, se = _summarize(deltas[:, j])
        imb = imbs[:, j][np.isfinite(imbs[:, j])]
        rows.append(ResultRow(
            cell=cell,
            bias=bias,
            rmse=rmse,
            imb_mean=float(np.mean(imb)) if imb.size else math.nan,
            imb_median=float(np.median(imb)) if imb.size else math.nan,
            n_failures=int(np.sum(~np.isfinite(deltas[:, j]))),
            replications=replications,
            median_delta=med,
            mc_se=se,
        ))
    return ResultTable(rows=rows, deltas=deltas, imbalances=imbs, failures=failures)


# rate studies ---------------------------------------------------------------

@dataclass(frozen=True)
class KRule:
    kind: str
    value: float | None = None

    @classmethod
    def parse(cls, spec) -> KRule:
        """Accepts ``"k_max"``, ``"nlog2"``, ``"fixed(5)"``, ``"power(0.6)"``
        or a mapping ``{"kind": ..., "value": ...}``."""
        if isinstance(spec, KRule):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], spec.get("value"))._checked()
        text = str(spec).strip()
        if "(" in text and text.endswith(")"):
            kind, arg = text[:-1].split("(", 1)
            try:
                return cls(kind.strip(), float(arg))._checked()
            except ValueError as exc:
                raise ConfigError(f"bad k_rule argument in {text!r}") from exc
        return cls(text)._checked()

    def _checked(self) -> KRule:
        if self.kind in ("k_max", "nlog2"):
            return self
        if self.kind in ("fixed", "power") and self.value is not None and self.value > 0:
            return self
        raise ConfigError(f"invalid k_rule {self}")

    def k_for(self, n: int) -> int | None:
        if self.kind == "k_max":
            return None
        if self.kind == "fixed":
            k = int(self.value)
        elif self.kind == "power":
            k = math.ceil(n ** self.value - 1e-9)
        else:
            k = math.floor(n / math.log(n) ** 2)
        return min(max(k, 1), n)

    def label(self) -> str:
        if self.value is None:
            return self.kind
        return f"{self.kind}({self.value:g})"


@dataclass
class RateRow:
    n: int
    k_mean: float
    feasible_fraction: float
    bias: float
    rmse: float
    n_estimates: int


@dataclass
class RateStudy:
    rule: KRule
    rows: list[RateRow]
    slope: float | None

    def records(self) -> list[dict]:
        return [
            {
                "n": r.n,
                "k_rule": self.rule.label(),
                "k_mean": r.k_mean,
                "feasible_fraction": r.feasible_fraction,
                "bias": r.bias,
                "rmse": r.rmse,
                "n_estimates": r.n_estimates,
                "log_rmse_slope": "NA" if self.slope is None else self.slope,
            }
            for r in self.rows
        ]


def _rate_rep(n, rule, design, ps_spec, seed, rep):
    sim = generate(ScenarioConfig(n, design, ps_spec, seed=seed, replication_index=rep))
    cache = FitCache(sim.as_dataset(ps_spec))
    _, scores = cache.propensity(Design(design).link)
    k = rule.k_for(n)
    if k is None:
        k, part = find_k_max(scores, sim.z)
    else:
        part = partition_by_rank(scores, k, sim.z)
        if not is_feasible(part):
            return k, False, math.nan
    return k, True, subclassification_estimate(sim.y, sim.z, part).delta


def log_log_slope(n_values, rmse_values) -> float | None:
    """OLS slope of log RMSE on log N; None with fewer than two usable points."""
    pts = [(n, r) for n, r in zip(n_values, rmse_values) if np.isfinite(r) and r > 0]
    if len(pts) < 2:
        return None
    ln = np.log([p[0] for p in pts])
    lr = np.log([p[1] for p in pts])
    return float(np.polyfit(ln, lr, 1)[0])


def rate_study(
    n_grid: list[int],
    k_rule,
    replications: int,
    seed: int,
    design: str = "ks_logit",
    ps_spec: str = "correct",
    threads: int | None = 1,
) -> RateStudy:
    """Feasibility fraction, bias and RMSE of the subclass estimator per N.

    The estimator uses ``K = k_rule(N)`` classes; replications where that
    partition leaves a class with one arm only count as infeasible and are
    left out of bias/RMSE.
    """
    if not n_grid or list(n_grid) != sorted(set(n_grid)):
        raise ConfigError("n_grid must be a nonempty increasing list")
    rule = KRule.parse(k_rule)
    workers = resolve_threads(threads)
    rows = []
    for n in n_grid:
        ScenarioConfig(n, design, ps_spec)
        out = map_slots(lambda r: _rate_rep(n, rule, design, ps_spec, seed, r), replications, workers)
        ks = np.array([o[0] for o in out], dtype=float)
        feas = np.array([o[1] for o in out])
        est = np.array([o[2] for o in out])
        bias, rmse, _, _ = _summarize(est)
        rows.append(RateRow(n, float(ks.mean()), float(feas.mean()), bias, rmse, int(feas.sum())))
    return RateStudy(rule, rows, log_log_slope([r.n for r in rows], [r.rmse for r in rows]))

