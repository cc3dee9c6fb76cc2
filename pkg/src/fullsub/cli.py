"""``fullsub`` command line tool.

Subcommands: simulate, analyze, weights, diagnose, rate-study.  Each reads
one JSON config (``--config``) and writes CSV/JSON files into ``--out``.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .balance import balance_report, positivity_check, standardized_imbalance
from .bootstrap import bootstrap_many
from .data import Dataset
from .errors import ConfigError, DataError, FullsubError
from .estimators import Estimator
from .glm import LinkKind
from .parallel import resolve_threads
from .pipeline import PARTITION_SCHEMES, FitCache, Pipeline
from .simulate import Cell, rate_study, run_monte_carlo
from .weights import implied_scores

log = logging.getLogger("fullsub")


# config parsing ---------------------------------------------------------------

def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing field {key!r}")
    return cfg[key]


def _check_keys(cfg: dict, allowed, where: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")


@dataclass(frozen=True)
class SchemeSpec:
    scheme: str
    link: str
    k: int | None = None
    quantile: float = 0.95
    trim_mode: str = "exclude"
    name: str = ""

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        base = self.scheme if self.k is None else f"{self.scheme}({self.k})"
        if self.scheme in ("naive", "true"):
            return base
        return f"{base}/{self.link}"

    def pipeline(self, estimator: str, dr_sign: str) -> Pipeline:
        return Pipeline(
            self.scheme, estimator, self.link, self.k, self.quantile, self.trim_mode, dr_sign
        )


def _scheme_spec(raw, default_link: str, where: str) -> SchemeSpec:
    if isinstance(raw, str):
        raw = {"scheme": raw}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: scheme must be a string or object")
    _check_keys(raw, {"scheme", "link", "k", "quantile", "trim_mode", "name"}, where)
    spec = SchemeSpec(
        scheme=_require(raw, "scheme", where),
        link=raw.get("link", default_link),
        k=raw.get("k"),
        quantile=raw.get("quantile", 0.95),
        trim_mode=raw.get("trim_mode", "exclude"),
        name=raw.get("name", ""),
    )
    try:
        spec.pipeline("HT", "standard")
        LinkKind(spec.link)
    except (ConfigError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return spec


@dataclass
class AnalysisConfig:
    input: Path
    treatment: str
    outcome: str
    covariates: list[str]
    ps_covariates: list[str]
    or_covariates: list[str]
    balance_covariates: list[str]
    id_column: str | None
    ps_link: str
    schemes: list[SchemeSpec]
    estimators: list[str]
    bootstrap_enabled: bool = False
    bootstrap_b: int = 1000
    bootstrap_level: float = 0.95
    seed: int = 0
    dr_sign: str = "standard"
    positivity_delta: float = 0.01

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Path) -> AnalysisConfig:
        allowed = {
            "input", "treatment", "outcome", "covariates", "ps_covariates", "or_covariates",
            "balance_covariates", "id", "ps_link", "schemes", "estimators", "bootstrap",
            "seed", "dr_sign", "positivity_delta", "threads",
        }
        _check_keys(cfg, allowed, "config")
        covs = _require(cfg, "covariates", "config")
        if not isinstance(covs, list) or not covs:
            raise ConfigError("config: 'covariates' must be a nonempty list")
        lists = {}
        for key in ("ps_covariates", "or_covariates", "balance_covariates"):
            value = cfg.get(key) or covs
            if not isinstance(value, list):
                raise ConfigError(f"config: {key!r} must be a list")
            lists[key] = value
        link = cfg.get("ps_link", "logit")
        try:
            LinkKind(link)
        except ValueError as exc:
            raise ConfigError(f"config: ps_link {link!r} is not logit/cloglog") from exc
        schemes = [
            _scheme_spec(s, link, f"config.schemes[{i}]")
            for i, s in enumerate(cfg.get("schemes", ["naive", "ipw", "full_subclass"]))
        ]
        estimators = cfg.get("estimators", ["HT", "Hajek", "DR"])
        for i, e in enumerate(estimators):
            if e not in {m.value for m in Estimator} - {"SHT_oracle"}:
                raise ConfigError(f"config.estimators[{i}]: unknown estimator {e!r}")
        boot = cfg.get("bootstrap", {}) or {}
        _check_keys(boot, {"enabled", "b", "level"}, "config.bootstrap")
        dr_sign = cfg.get("dr_sign", "standard")
        if dr_sign not in ("standard", "paper"):
            raise ConfigError("config.dr_sign must be 'standard' or 'paper'")
        path = Path(_require(cfg, "input", "config"))
        return cls(
            input=path if path.is_absolute() else base_dir / path,
            treatment=_require(cfg, "treatment", "config"),
            outcome=_require(cfg, "outcome", "config"),
            covariates=covs,
            id_column=cfg.get("id"),
            ps_link=link,
            schemes=schemes,
            estimators=list(estimators),
            bootstrap_enabled=bool(boot.get("enabled", False)),
            bootstrap_b=int(boot.get("b", 1000)),
            bootstrap_level=float(boot.get("level", 0.95)),
            seed=int(cfg.get("seed", 0)),
            dr_sign=dr_sign,
            positivity_delta=float(cfg.get("positivity_delta", 0.01)),
            **lists,
        )

    def load(self) -> tuple[Dataset, np.ndarray]:
        names = [self.treatment, self.outcome]
        for group in (self.ps_covariates, self.or_covariates, self.balance_covariates):
            names += [c for c in group if c not in names]
        if self.id_column and self.id_column not in names:
            names.append(self.id_column)
        table = io.read_table(self.input, names, self.treatment)
        ids = table[self.id_column] if self.id_column else np.arange(1, len(table[self.treatment]) + 1)

        def block(cols):
            return np.column_stack([table[c] for c in cols])

        data = Dataset(
            treatment=table[self.treatment],
            outcome=table[self.outcome],
            ps_covariates=block(self.ps_covariates),
            or_covariates=block(self.or_covariates),
            balance_covariates=block(self.balance_covariates),
        )
        return data, ids


_GRID_FIELDS = {f.name for f in fields(Cell)}


def parse_cells(cfg: dict) -> list[Cell]:
    cells: list[Cell] = []
    for i, raw in enumerate(cfg.get("cells", [])):
        where = f"config.cells[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}: must be an object")
        _check_keys(raw, _GRID_FIELDS, where)
        try:
            cells.append(Cell(**raw))
        except (ConfigError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    for i, block in enumerate(cfg.get("grid", [])):
        where = f"config.grid[{i}]"
        if not isinstance(block, dict):
            raise ConfigError(f"{where}: must be an object")
        _check_keys(block, _GRID_FIELDS, where)
        keys = list(block)
        axes = [v if isinstance(v, list) else [v] for v in block.values()]
        for combo in itertools.product(*axes):
            raw = dict(zip(keys, combo))
            try:
                cells.append(Cell(**raw))
            except (ConfigError, TypeError, ValueError) as exc:
                raise ConfigError(f"{where} {raw}: {exc}") from exc
    if not cells:
        raise ConfigError("config: no 'cells' or 'grid' entries")
    return cells


# commands -------------------------------------------------------------------

RESULT_COLUMNS = [
    "n", "design", "ps_spec", "or_spec", "estimator", "scheme", "k", "link",
    "bias", "rmse", "imb_mean", "imb_median", "n_failures", "replications",
    "median_delta", "mc_se",
]


def cmd_simulate(cfg: dict, out: Path, seed: int, threads: int) -> None:
    _check_keys(cfg, {"replications", "seed", "cells", "grid", "threads", "name"}, "config")
    cells = parse_cells(cfg)
    reps = int(_require(cfg, "replications", "config"))
    table = run_monte_carlo(cells, reps, seed, threads)
    records = table.records()
    io.write_csv(out / "results.csv", records, RESULT_COLUMNS)
    io.write_json(out / "results.json", {"seed": seed, "replications": reps, "cells": records})
    series = sorted(
        (
            {k: r[k] for k in ("design", "ps_spec", "or_spec", "estimator", "scheme", "k", "n", "bias", "rmse")}
            for r in records
        ),
        key=lambda r: (r["design"], r["ps_spec"], r["or_spec"], r["estimator"], r["scheme"], str(r["k"]), r["n"]),
    )
    io.write_csv(out / "series.csv", series)
    io.write_csv(
        out / "failures.csv",
        [{"replication": r, "cell": j, "error": msg} for r, j, msg in table.failures],
        ["replication", "cell", "error"],
    )


def _build_all(config: AnalysisConfig, data: Dataset):
    cache = FitCache(data)
    built = {}
    for spec in config.schemes:
        built[spec.label] = (spec, spec.pipeline("HT", config.dr_sign).build(cache))
    return cache, built


def cmd_analyze(config: AnalysisConfig, out: Path, threads: int) -> None:
    data, _ = config.load()
    cache, built = _build_all(config, data)
    rows, pipes = [], []
    for label, (spec, result) in built.items():
        imb = standardized_imbalance(data.balance_covariates, data.treatment, result.weights)
        for est in config.estimators:
            if est == "Subclass" and spec.scheme not in PARTITION_SCHEMES:
                log.warning("skipping Subclass estimator for scheme %s", label)
                continue
            pipe = spec.pipeline(est, config.dr_sign)
            estimate = pipe.run(cache)
            pipes.append(pipe)
            rows.append({
                "estimator": est,
                "scheme": label,
                "delta": estimate.delta,
                "mu1": estimate.mu1,
                "mu0": estimate.mu0,
                "ratio": estimate.ratio,
                "imbalance": imb,
                "k": result.partition.k if result.partition is not None else None,
            })
    columns = ["estimator", "scheme", "k", "delta", "mu1", "mu0", "ratio", "imbalance"]
    if config.bootstrap_enabled:
        boots = bootstrap_many(
            data, pipes, config.bootstrap_b, config.bootstrap_level, config.seed, threads
        )
        for row, boot in zip(rows, boots):
            row.update(
                se=boot.se, ci_low=boot.ci_low, ci_high=boot.ci_high,
                pct_low=boot.pct_low, pct_high=boot.pct_high,
                b=boot.b, failures=boot.failures,
            )
        columns += ["se", "ci_low", "ci_high", "pct_low", "pct_high", "b", "failures"]
    io.write_csv(out / "estimates.csv", rows, columns)
    io.write_json(out / "estimates.json", {"n": data.n, "seed": config.seed, "rows": rows})


def cmd_weights(config: AnalysisConfig, out: Path) -> None:
    data, ids = config.load()
    _, built = _build_all(config, data)
    rows, summary = [], {}
    for label, (spec, result) in built.items():
        w = result.weights
        if result.scores is not None:
            scores = result.scores
        else:
            scores = implied_scores(w, data.treatment)
        entry = {"n_excluded": int(np.sum(~w.included)), "scheme_tag": w.scheme}
        if spec.scheme in PARTITION_SCHEMES:
            recip = 1.0 / w.w
            inside = bool(np.all((recip > 0.0) & (recip < 1.0)))
            if not inside:
                raise DataError(f"{label}: reciprocal weights outside (0, 1)")
            entry["reciprocals_in_unit_interval"] = inside
            entry["k"] = result.partition.k
        summary[label] = entry
        for i in range(data.n):
            rows.append({
                "unit_id": ids[i],
                "treatment": int(data.treatment[i]),
                "score": scores[i],
                "weight": w.w[i],
                "included": bool(w.included[i]),
                "scheme": label,
            })
    io.write_csv(out / "weights.csv", rows, ["unit_id", "treatment", "score", "weight", "included", "scheme"])
    io.write_json(out / "weights_summary.json", summary)


def cmd_diagnose(config: AnalysisConfig, out: Path) -> None:
    data, _ = config.load()
    _, built = _build_all(config, data)
    reports, per_cov = {}, []
    for label, (spec, result) in built.items():
        rep = balance_report(
            data.balance_covariates, data.treatment, result.weights,
            scores=result.scores, delta_threshold=config.positivity_delta,
        )
        payload = rep.to_dict()
        if result.scores is not None:
            payload["positivity_flagged_units"] = positivity_check(
                result.scores, config.positivity_delta
            )[1].tolist()
        reports[label] = payload
        for name, diff in zip(config.balance_covariates, rep.per_covariate_weighted_diff):
            per_cov.append({"scheme": label, "covariate": name, "weighted_diff": diff})
    io.write_json(out / "balance.json", reports)
    io.write_csv(out / "balance_covariates.csv", per_cov, ["scheme", "covariate", "weighted_diff"])


def cmd_rate_study(cfg: dict, out: Path, seed: int, threads: int) -> None:
    _check_keys(cfg, {"n_grid", "k_rule", "replications", "seed", "design", "ps_spec", "threads"}, "config")
    study = rate_study(
        list(_require(cfg, "n_grid", "config")),
        _require(cfg, "k_rule", "config"),
        int(cfg.get("replications", 500)),
        seed,
        cfg.get("design", "ks_logit"),
        cfg.get("ps_spec", "correct"),
        threads,
    )
    io.write_csv(out / "rate.csv", study.records())
    io.write_json(
        out / "rate_summary.json",
        {"k_rule": study.rule.label(), "log_rmse_slope": study.slope, "seed": seed},
    )


# entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fullsub", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "analyze", "weights", "diagnose", "rate-study"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument(
            "--threads", type=int, default=None,
            help="worker threads (0 = all cores; default $FULLSUB_THREADS or 1)",
        )
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = io.load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        threads = resolve_threads(args.threads if args.threads is not None else cfg.get("threads"))
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out, seed, threads)
        elif args.command == "rate-study":
            cmd_rate_study(cfg, args.out, seed, threads)
        else:
            config = AnalysisConfig.from_dict(cfg, args.config.parent)
            config.seed = seed
            if args.command == "analyze":
                cmd_analyze(config, args.out, threads)
            elif args.command == "weights":
                cmd_weights(config, args.out)
            else:
                cmd_diagnose(config, args.out)
    except FullsubError as exc:
        print(f"fullsub {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
