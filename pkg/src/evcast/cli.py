"""Command-line entry point: ``evcast <command> [options]``.

Every command reads an optional JSON config (``--config``) whose top-level
keys are ``seed``, ``threads`` and one block per command; flags override the
file. Artifacts are written atomically to ``--out`` together with a
``manifest.json`` describing the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import tempfile
import time
import zlib
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PRESETS = ("fast", "full")


class UsageError(Exception):
    pass


def derive_seed(root: int, *names: str) -> int:
    """Child seed for a named stage: root seed and stage names through a SeedSequence."""
    keys = [int(root)] + [zlib.crc32(n.encode()) for n in names]
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def _clean_nan(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_nan(v) for v in obj]
    return obj


class Run:
    """Resolved settings of one command plus artifact bookkeeping."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.command = args.command
        cfg: dict = {}
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise UsageError(f"config file not found: {path}")
            try:
                cfg = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise UsageError(f"config is not valid JSON: {exc}") from None
        self.block: dict = dict(cfg.get(self.command, {}))
        self.seed = args.seed if args.seed is not None else cfg.get("seed")
        self.threads = args.threads if args.threads is not None else int(cfg.get("threads", 1))
        out = args.out or cfg.get("out")
        if not out:
            raise UsageError("--out is required")
        self.out = Path(out).resolve()
        self.inputs: list[Path] = []
        self.outputs: list[str] = []
        self.t0 = time.time()

    def opt(self, name: str, default=None):
        v = getattr(self.args, name, None)
        return v if v is not None else self.block.get(name, default)

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError(f"'{self.command}' is stochastic and needs an explicit --seed")
        return int(self.seed)

    def input(self, value, what: str) -> Path:
        if not value:
            raise UsageError(f"missing input: {what}")
        p = Path(value).resolve()
        if not p.exists():
            raise DataError(f"{what} not found: {p}")
        self.inputs.append(p)
        return p

    def write(self, name: str, text: str) -> None:
        atomic_write(self.out / name, text)
        self.outputs.append(name)

    def manifest(self, extra: dict | None = None) -> None:
        import scipy

        files = []
        for p in self.inputs:
            files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
        doc = {
            "command": self.command,
            "seed": self.seed,
            "config": self.block,
            "inputs": {str(p): _sha256(p) for p in files},
            "outputs": sorted(self.outputs),
            "versions": {"evcast": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "pandas": pd.__version__},
            "wall_time_s": round(time.time() - self.t0, 3),
        }
        doc.update(extra or {})
        atomic_write(self.out / "manifest.json", _json(_clean_nan(doc)))


# -- commands ----------------------------------------------------------------


def cmd_synth(run: Run) -> None:
    from .ingest import serialize_transactions
    from .synth import SynthConfig, generate_trial

    seed = run.require_seed()
    block = {k: v for k, v in run.block.items() if k != "seed"}
    if run.args.horizon_days is not None:
        block["horizon_days"] = run.args.horizon_days
    cfg = SynthConfig.from_dict({**block, "seed": derive_seed(seed, "synth")})
    txns = generate_trial(cfg)
    run.write("transactions.csv", serialize_transactions(txns))
    run.manifest({"synth_config": cfg.to_dict(), "n_transactions": len(txns)})


def _load_transactions(run: Run, path):
    from .ingest import parse_transactions

    p = run.input(path, "transactions CSV")
    with open(p, newline="", encoding="utf-8") as fh:
        return parse_transactions(fh, run.block.get("schema"))


def cmd_ingest(run: Run) -> None:
    from .ingest import clean_trial_data, serialize_transactions

    txns, rejects = _load_transactions(run, run.opt("input"))
    clean = clean_trial_data(txns)
    run.write("transactions_clean.csv", serialize_transactions(clean))
    run.write("rejects.jsonl", rejects.to_jsonl())
    run.manifest({"rows_ok": len(txns), "rows_rejected": len(rejects), "rows_trial3_dropped": len(txns) - len(clean)})


def cmd_cluster(run: Run) -> None:
    from .clustering import cluster_owners, cluster_table, summarize_owners

    seed = run.require_seed()
    txns, rejects = _load_transactions(run, run.opt("input"))
    if len(rejects):
        raise DataError(f"{len(rejects)} malformed rows; run 'ingest' first")
    summaries = summarize_owners(txns)
    k = run.opt("k")
    model = cluster_owners(summaries, k=int(k) if k else None, k_max=int(run.opt("k_max", 8)),
                           seed=derive_seed(seed, "cluster"))
    run.write("cluster_model.json", model.to_json() + "\n")
    table = pd.DataFrame(cluster_table(summaries, model.assignments))
    run.write("cluster_summary.csv", table.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
    run.manifest({"k": model.k})


def cmd_series(run: Run) -> None:
    from .clustering import ClusterModel
    from .pipeline import prepare_series
    from .series import DailyClusterSeries, build_daily_series

    txns, rejects = _load_transactions(run, run.opt("input"))
    if len(rejects):
        raise DataError(f"{len(rejects)} malformed rows; run 'ingest' first")
    model = ClusterModel.from_json(run.input(run.opt("clusters"), "cluster model").read_text())
    reports = {}
    for s in build_daily_series(txns, model.assignments):
        run.write(f"series_raw_c{s.cluster}.csv", s.to_csv())
        df, rep = prepare_series(s, outliers=bool(run.opt("outliers", True)))
        run.write(f"series_c{s.cluster}.csv", DailyClusterSeries(s.cluster, df).to_csv())
        reports[str(s.cluster)] = rep
    run.write("preprocessing.json", _json(reports))
    run.manifest()


def _load_series_dir(run: Run, value) -> dict[int, pd.DataFrame]:
    from .series import DailyClusterSeries

    path = run.input(value, "series directory or file")
    files = sorted(path.glob("series_c*.csv")) if path.is_dir() else [path]
    if not files:
        raise DataError(f"no series_c*.csv files in {path}")
    out = {}
    for f in files:
        stem = f.stem.rsplit("_c", 1)
        cluster = int(stem[1]) if len(stem) == 2 and stem[1].isdigit() else 0
        df = DailyClusterSeries.from_csv(cluster, f).frame
        if df[["owners", "users", "trans", "demand", "consumed"]].isna().any().any():
            raise DataError(f"{f.name} has gaps; use the treated series written by 'series'")
        out[cluster] = df
    return out


def _settings(run: Run, seed: int, stage: str):
    from .forecasters import FamilySettings

    preset = run.opt("preset", "fast")
    if preset not in PRESETS:
        raise UsageError(f"preset must be one of {PRESETS}")
    base = FamilySettings.fast if preset == "fast" else FamilySettings.full
    s = base(seed=derive_seed(seed, stage), threads=run.threads)
    overrides = {k: v for k, v in run.block.get("settings", {}).items()}
    if overrides:
        from dataclasses import replace

        s = replace(s, **overrides)
    return s


def _families(run: Run) -> list[str]:
    from .forecasters import Family

    fams = run.opt("families") or [f.value for f in Family]
    if isinstance(fams, str):
        fams = [f.strip() for f in fams.split(",") if f.strip()]
    try:
        return [Family(f).value for f in fams]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_evaluate(run: Run) -> None:
    from .pipeline import FEATURE_SETS, EvaluationReport, evaluate_cluster

    seed = run.require_seed()
    series = _load_series_dir(run, run.opt("series"))
    settings = _settings(run, seed, "evaluate")
    sets = run.opt("feature_sets") or list(FEATURE_SETS)
    if isinstance(sets, str):
        sets = [f.strip() for f in sets.split(",")]
    report = EvaluationReport()
    for cluster, df in sorted(series.items()):
        evaluate_cluster(df, cluster, _families(run), sets, settings, report=report)
    run.write("evaluation.csv", report.to_csv())
    run.write("evaluation.json", _json(_clean_nan(json.loads(report.to_json()))))
    run.write("matrix.csv", report.matrix().to_csv(float_format="%.6f", lineterminator="\n"))
    run.manifest({"settings": settings.to_dict()})


def _scenario(run: Run) -> pd.DataFrame:
    from .features import scenario_frame

    p = run.input(run.opt("scenario"), "scenario CSV")
    df = pd.read_csv(p)
    if list(df.columns[:2]) != ["date", "owners"] or len(df.columns) != 2:
        raise DataError("scenario CSV must have exactly the columns date,owners")
    return scenario_frame(df["date"], df["owners"])


def cmd_forecast(run: Run) -> None:
    from .pipeline import EvaluationReport, deploy_forecast

    seed = run.require_seed()
    series = _load_series_dir(run, run.opt("series"))
    if len(series) != 1:
        raise UsageError("forecast takes one cluster series file")
    cluster, df = next(iter(series.items()))
    family = _families(run)[0]
    decisions = {}
    if run.opt("evaluation"):
        ev = json.loads(run.input(run.opt("evaluation"), "evaluation JSON").read_text())
        rep = EvaluationReport(rows=ev["rows"], decisions=ev["decisions"])
        decisions = rep.majority_decisions(cluster, family)
    out = deploy_forecast(df, _scenario(run), family, run.opt("feature_set", "base"),
                          _settings(run, seed, "forecast"), decisions)
    out["date"] = pd.to_datetime(out["date"]).dt.strftime("%Y-%m-%d")
    run.write("forecast.csv", out.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
    run.manifest({"cluster": cluster, "family": family, "decisions": decisions})


def cmd_impact(run: Run) -> None:
    from .impact import (PENETRATIONS, DeterministicRateProvider, ForecastProvider, NetworkConfig,
                         min_control_for_capacity, plot_data, results_frame, sweep)
    from .series import SEASONS

    net = NetworkConfig.from_dict(run.block.get("network", {})).validate()
    kind = run.opt("provider", "deterministic")
    if kind == "deterministic":
        provider: Any = DeterministicRateProvider()
    elif kind == "forecast":
        from .forecasters import fit_forecaster

        seed = run.require_seed()
        series = _load_series_dir(run, run.opt("series"))
        settings = _settings(run, seed, "impact")
        family = _families(run)[0]
        users = {c: fit_forecaster(family, df, df["users"], settings=settings) for c, df in series.items()}
        cons = {c: fit_forecaster(family, df, df["consumed"], settings=settings) for c, df in series.items()}
        provider = ForecastProvider(users, cons)
    else:
        raise UsageError("provider must be 'deterministic' or 'forecast'")
    results = sweep(net, provider)
    fmt = dict(index=False, float_format="%.9f", lineterminator="\n")
    run.write("impact.csv", results_frame(results).to_csv(**fmt))
    for name, df in plot_data(results, net).items():
        run.write(f"plot_{name}.csv", df.to_csv(**fmt))
    rows = []
    for f in sorted(net.feeder_mix):
        for s in SEASONS:
            for p in PENETRATIONS:
                c = min_control_for_capacity(f, s, p, provider, net)
                rows.append({"feeder": f, "season": s, "penetration": p,
                             "min_user_control": "none" if c is None else c})
    run.write("min_control.csv", pd.DataFrame(rows).to_csv(index=False, lineterminator="\n"))
    run.manifest({"network": net.to_dict(), "provider": kind, "rows": len(results)})


COMMANDS: dict[str, Callable[[Run], None]] = {
    "synth": cmd_synth, "ingest": cmd_ingest, "cluster": cmd_cluster, "series": cmd_series,
    "evaluate": cmd_evaluate, "forecast": cmd_forecast, "impact": cmd_impact,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="root seed for stochastic commands")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (never changes results)")

    parser = argparse.ArgumentParser(prog="evcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic trial")
    p.add_argument("--horizon-days", dest="horizon_days", type=int)
    p = sub.add_parser("ingest", parents=[common], help="validate and clean transactions")
    p.add_argument("--input")
    p = sub.add_parser("cluster", parents=[common], help="cluster owners by battery and energy per charge")
    p.add_argument("--input")
    p.add_argument("--k", type=int)
    p = sub.add_parser("series", parents=[common], help="build treated day-wise series per cluster")
    p.add_argument("--input")
    p.add_argument("--clusters")
    for name in ("evaluate", "forecast", "impact"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--series")
        p.add_argument("--families", help="comma-separated: Regression,RegArima,Gbt,Lstm")
        p.add_argument("--preset", choices=PRESETS)
    sub.choices["evaluate"].add_argument("--feature-sets", dest="feature_sets")
    sub.choices["forecast"].add_argument("--scenario")
    sub.choices["forecast"].add_argument("--feature-set", dest="feature_set")
    sub.choices["forecast"].add_argument("--evaluation")
    sub.choices["impact"].add_argument("--provider", choices=("deterministic", "forecast"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        COMMANDS[args.command](Run(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
