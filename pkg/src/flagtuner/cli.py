"""Command-line entry point: tune, bruteforce and report subcommands.

Configs are strict JSON (unknown keys are rejected so typos fail fast).
Every run writes a self-contained ``report.json`` from which speedup and
time_c can be recomputed, plus the append-only measurement journal.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import platform
import shlex
import statistics
import subprocess
import sys
from pathlib import Path

from . import baselines, model_builder, searcher
from .core import (
    CatalogError,
    CompilerFamily,
    FlagCatalog,
    Sequence,
    TunerConfig,
    TuningResult,
    catalog_from_file,
)
from .evaluator import (
    Budget,
    CompilerTarget,
    MeasurementCache,
    SyntheticLandscape,
    ToolchainError,
    brute_force_best,
    measure,
    measure_baseline,
)

REPORT_SCHEMA = "flagtuner-report-v1"
STRATEGIES = ("comptuner", "high_only", "one_time", "rio", "ga")

# Fields that legitimately differ between reruns of the same seed; report
# consumers (and the determinism check) compare everything else.
VOLATILE_REPORT_KEYS = ("environment", "wall_clock_s", "time_c_s", "wall_s")


class ConfigError(ValueError):
    """User-facing configuration problem (exit code 1)."""


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {path}; allowed: {sorted(allowed)}")


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"missing required key {key!r} in {path}")
    return section[key]


@dataclasses.dataclass
class RunConfig:
    """Fully resolved run configuration."""

    raw: dict
    strategy: str
    seed: int
    output_dir: Path
    catalog: FlagCatalog
    target: CompilerTarget | SyntheticLandscape
    tuner: TunerConfig
    ga: baselines.GAParams


def _load_catalog(section: dict | None, base_dir: Path, synthetic_n: int | None) -> FlagCatalog:
    if section is None:
        if synthetic_n is None:
            raise ConfigError("config needs a 'catalog' section for compiler targets")
        return FlagCatalog.synthetic(synthetic_n)
    _check_keys(section, {"path", "family"}, "catalog")
    family = CompilerFamily(section.get("family", "gcc"))
    path = base_dir / _require(section, "path", "catalog")
    try:
        return catalog_from_file(path, family)
    except (CatalogError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_target(section: dict, base_dir: Path):
    kind = _require(section, "kind", "target")
    if kind == "synthetic":
        _check_keys(
            section,
            {"kind", "n", "base_time_s", "linear_weights", "pair_terms",
             "trap_blocks", "noise_sd", "noise_seed"},
            "target",
        )
        try:
            return SyntheticLandscape(
                n=int(_require(section, "n", "target")),
                linear_weights=[float(w) for w in section.get("linear_weights", [])],
                pair_terms=[(int(i), int(j), float(w)) for i, j, w in section.get("pair_terms", [])],
                trap_blocks=[([int(b) for b in bits], float(p)) for bits, p in section.get("trap_blocks", [])],
                base_time_s=float(section.get("base_time_s", 1.0)),
                noise_sd=float(section.get("noise_sd", 0.0)),
                noise_seed=int(section.get("noise_seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synthetic target: {exc}") from exc
    if kind == "compiler":
        _check_keys(
            section,
            {"kind", "compile_cmd", "run_cmd", "sources", "workdir", "baseline_flags",
             "run_timeout_s", "compile_timeout_s", "expected_output"},
            "target",
        )
        workdir = base_dir / section.get("workdir", ".")
        expected = section.get("expected_output")
        try:
            return CompilerTarget(
                compile_cmd_template=_require(section, "compile_cmd", "target"),
                run_cmd_template=_require(section, "run_cmd", "target"),
                sources=[str(base_dir / s) for s in _require(section, "sources", "target")],
                workdir=str(workdir),
                baseline_flags=section.get("baseline_flags", "-O3"),
                run_timeout_s=float(section.get("run_timeout_s", 60.0)),
                compile_timeout_s=float(section.get("compile_timeout_s", 120.0)),
                expected_output=str(base_dir / expected) if expected else None,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid compiler target: {exc}") from exc
    raise ConfigError(f"unknown target kind {kind!r} (expected 'synthetic' or 'compiler')")


def _dataclass_from_section(cls, section: dict, path: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, allowed, path)
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path} section: {exc}") from exc


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run config; overrides win over file values."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(raw, {"strategy", "seed", "output_dir", "catalog", "target", "tuner", "ga"}, "config")

    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key in ("budget",):
                merged.setdefault("tuner", {})
                merged["tuner"] = {**merged.get("tuner", {}), "time_budget_s": value}
            else:
                merged[key] = value

    strategy = merged.get("strategy", "comptuner")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")

    base_dir = path.parent
    target = _load_target(_require(merged, "target", "config"), base_dir)
    synthetic_n = target.n if isinstance(target, SyntheticLandscape) else None
    catalog = _load_catalog(merged.get("catalog"), base_dir, synthetic_n)
    if isinstance(target, SyntheticLandscape) and len(catalog) != target.n:
        raise ConfigError(f"catalog width {len(catalog)} != landscape n {target.n}")
    if isinstance(target, CompilerTarget):
        target.catalog = catalog

    seed = int(merged.get("seed", 0))
    tuner_section = dict(merged.get("tuner", {}))
    tuner_section["rng_seed"] = seed
    tuner = _dataclass_from_section(TunerConfig, tuner_section, "tuner")
    ga = _dataclass_from_section(baselines.GAParams, merged.get("ga", {}), "ga")
    out_dir = Path(merged.get("output_dir", "runs"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    return RunConfig(raw=raw, strategy=strategy, seed=seed, output_dir=out_dir,
                     catalog=catalog, target=target, tuner=tuner, ga=ga)


def _compiler_version(target) -> str:
    if isinstance(target, SyntheticLandscape):
        return "synthetic"
    exe = shlex.split(target.compile_cmd_template)[0]
    try:
        proc = subprocess.run([exe, "--version"], capture_output=True, timeout=10)
        return proc.stdout.decode(errors="replace").splitlines()[0]
    except (OSError, subprocess.TimeoutExpired, IndexError):
        return "unknown"


def _environment_fingerprint(target) -> dict:
    return {
        "compiler_version": _compiler_version(target),
        "host": platform.node(),
        "platform": platform.platform(),
        "python": platform.python_version(),
    }


def _result_to_dict(result: TuningResult) -> dict:
    return {
        "best_sequence": result.best_sequence.to_bitstring(),
        "predicted_time_s": result.predicted_time_s,
        "measured_time_s": result.measured_time_s,
        "baseline_time_s": result.baseline_time_s,
        "speedup": result.speedup,
        "evaluations_used": result.evaluations_used,
        "wall_clock_s": result.wall_clock_s,
        "time_c_s": result.time_c_s,
        "history": [
            {"phase": ev.phase, "bits": ev.sequence.to_bitstring(),
             "time_s": ev.time_s, "wall_s": ev.wall_s}
            for ev in result.history
        ],
    }


def run_tuning(run: RunConfig, allow_empty: bool = False) -> dict:
    """Measure the baseline, run the selected strategy, write the report."""
    run.output_dir.mkdir(parents=True, exist_ok=True)
    cache = MeasurementCache(len(run.catalog), run.output_dir / "measurements.log")
    budget = Budget.for_run(run.tuner, cache)
    rng = run.tuner.rng()

    report: dict = {
        "schema": REPORT_SCHEMA,
        "strategy": run.strategy,
        "seed": run.seed,
        "config": run.raw,
        "environment": _environment_fingerprint(run.target),
        "catalog": run.catalog.names,
    }
    if run.strategy == "ga":
        report["ga_params"] = dataclasses.asdict(run.ga)

    if budget.exhausted() and not allow_empty:
        raise ConfigError("budget exhausted before baseline (rerun with --allow-empty for a baseline-only report)")

    baseline = measure_baseline(run.target, run.tuner, cache)
    report["baseline"] = {
        "time_s": baseline.exec_time_s,
        "status": baseline.status.value,
        "repeats": baseline.repeats,
    }

    if budget.exhausted():
        report["result"] = None
        report["journal"] = {"phase_log": [], "iterations": []}
    else:
        result, journal = _run_strategy(run, cache, budget, rng)
        report["result"] = _result_to_dict(result)
        report["journal"] = journal

    report_path = run.output_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _run_strategy(run: RunConfig, cache, budget, rng) -> tuple[TuningResult, dict]:
    if run.strategy in ("comptuner", "high_only", "one_time"):
        variant = "default" if run.strategy == "comptuner" else run.strategy
        state = model_builder.build_model(
            run.target, run.tuner, rng, cache, budget, variant=variant
        )
        found = searcher.search(state, state.forest, run.tuner, rng, budget)
        result = searcher.finalize(
            found, run.target, run.tuner, cache, state.forest, budget, strategy=run.strategy
        )
        journal = {"phase_log": state.phase_log, "iterations": found.iterations}
    elif run.strategy == "rio":
        result = baselines.rio_tune(run.target, run.tuner, rng, cache, budget)
        journal = {"phase_log": [], "iterations": []}
    else:
        result = baselines.ga_tune(run.target, run.tuner, run.ga, rng, cache, budget)
        journal = {"phase_log": [], "iterations": []}
    return result, journal


def overlap(tuned: Sequence, best: Sequence, names: list[str]) -> dict:
    """Flag-level agreement between a tuned sequence and the exhaustive best.

    ``unnecessary``: enabled by the tuner but not by the best configuration;
    ``missing``: the reverse; ``accuracy``: fraction of agreeing bits.
    """
    if len(tuned) != len(best) or len(tuned) != len(names):
        raise ValueError("overlap needs sequences and names of equal width")
    unnecessary = [names[i] for i in range(len(tuned)) if tuned[i] == 1 and best[i] == 0]
    missing = [names[i] for i in range(len(tuned)) if tuned[i] == 0 and best[i] == 1]
    agree = sum(1 for a, b in zip(tuned, best) if a == b)
    return {"unnecessary": unnecessary, "missing": missing, "accuracy": agree / len(tuned)}


def run_bruteforce(run: RunConfig, confirm: bool = False) -> dict:
    """Exhaustively measure the whole space and write the value table."""
    n = len(run.catalog)
    if isinstance(run.target, SyntheticLandscape):
        if n > 20:
            raise ConfigError(f"refusing synthetic brute force over n={n} > 20")
        best_seq, best_time = brute_force_best(run.target)
        table = [
            {"bits": "".join(map(str, bits)), "time_s": run.target.time(Sequence(bits))}
            for bits in itertools.product((0, 1), repeat=n)
        ]
    else:
        if n > 12:
            raise ConfigError(f"refusing compiler brute force over n={n} > 12")
        if not confirm:
            raise ConfigError(
                f"compiler brute force runs {2**n} measurements; pass --confirm to proceed"
            )
        cache = MeasurementCache(n, run.output_dir / "bruteforce_measurements.log")
        measure_baseline(run.target, run.tuner, cache)
        table = []
        for bits in itertools.product((0, 1), repeat=n):
            m = measure(run.target, Sequence(bits), run.tuner, cache, phase="bruteforce")
            table.append({"bits": "".join(map(str, bits)), "time_s": m.exec_time_s})
        ok = cache.ok_measurements()
        if not ok:
            raise ToolchainError("every configuration failed to compile or run")
        winner = min(ok, key=lambda m: m.exec_time_s)
        best_seq, best_time = winner.sequence, winner.exec_time_s

    out = {
        "schema": "flagtuner-bruteforce-v1",
        "n": n,
        "catalog": run.catalog.names,
        "best_sequence": best_seq.to_bitstring(),
        "best_time_s": best_time,
        "table": table,
    }
    run.output_dir.mkdir(parents=True, exist_ok=True)
    (run.output_dir / "bruteforce.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    with (run.output_dir / "bruteforce.csv").open("w") as fh:
        fh.write("bits,time_s\n")
        for row in table:
            fh.write(f"{row['bits']},{row['time_s']!r}\n")
    return out


def load_report(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report.json in {run_dir}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corrupt report {path}: {exc}") from exc


def summarize_reports(
    reports: list[dict],
    reference_speedup: float | None = None,
    bruteforce: dict | None = None,
) -> dict:
    """Per-strategy medians plus the never-reached-reference marks.

    Every number here is recomputed from raw report fields.
    """
    runs = []
    for rep in reports:
        result = rep.get("result")
        if result is None:
            continue
        row = {
            "strategy": rep["strategy"],
            "seed": rep.get("seed"),
            "speedup": result["baseline_time_s"] / result["measured_time_s"],
            "time_c_s": result.get("time_c_s"),
            "best_sequence": result["best_sequence"],
        }
        if bruteforce is not None:
            row["overlap"] = overlap(
                Sequence.from_bitstring(result["best_sequence"]),
                Sequence.from_bitstring(bruteforce["best_sequence"]),
                bruteforce["catalog"],
            )
        runs.append(row)
    if not runs:
        raise ConfigError("no completed runs to report")

    by_strategy: dict[str, list[dict]] = {}
    for row in runs:
        by_strategy.setdefault(row["strategy"], []).append(row)

    rows = []
    for strategy, group in sorted(by_strategy.items()):
        speedups = [g["speedup"] for g in group]
        times = [g["time_c_s"] for g in group if g["time_c_s"] is not None]
        rows.append({
            "strategy": strategy,
            "runs": len(group),
            "median_speedup": statistics.median(speedups),
            "best_speedup": max(speedups),
            "median_time_c_s": statistics.median(times) if times else None,
        })
    reference = (
        reference_speedup
        if reference_speedup is not None
        else max(r["median_speedup"] for r in rows)
    )
    for r in rows:
        r["reached_reference"] = r["best_speedup"] >= reference
    return {"reference_speedup": reference, "strategies": rows, "runs": runs}


def _format_summary(summary: dict) -> str:
    lines = [f"reference speedup: {summary['reference_speedup']:.4f}",
             f"{'strategy':<12} {'runs':>4} {'med speedup':>12} {'med time_c':>11}  reached"]
    for r in summary["strategies"]:
        tc = f"{r['median_time_c_s']:.2f}s" if r["median_time_c_s"] is not None else "-"
        mark = "yes" if r["reached_reference"] else "x"
        lines.append(
            f"{r['strategy']:<12} {r['runs']:>4} {r['median_speedup']:>12.4f} {tc:>11}  {mark}"
        )
    return "\n".join(lines)


def _write_summary_csv(summary: dict, path: Path) -> None:
    with path.open("w") as fh:
        fh.write("strategy,runs,median_speedup,best_speedup,median_time_c_s,reached_reference\n")
        for r in summary["strategies"]:
            tc = "" if r["median_time_c_s"] is None else repr(r["median_time_c_s"])
            fh.write(
                f"{r['strategy']},{r['runs']},{r['median_speedup']!r},"
                f"{r['best_speedup']!r},{tc},{int(r['reached_reference'])}\n"
            )


def cmd_tune(args) -> int:
    overrides = {"seed": args.seed, "strategy": args.strategy,
                 "output_dir": args.out, "budget": args.budget}
    run = load_config(args.config, overrides)
    report = run_tuning(run, allow_empty=args.allow_empty)
    result = report.get("result")
    if result:
        print(f"best sequence: {result['best_sequence']}")
        print(f"speedup over baseline: {result['baseline_time_s'] / result['measured_time_s']:.4f}")
    else:
        print("baseline-only report (budget was empty)")
    print(f"report: {run.output_dir / 'report.json'}")
    return 0


def cmd_bruteforce(args) -> int:
    overrides = {"output_dir": args.out}
    run = load_config(args.config, overrides)
    out = run_bruteforce(run, confirm=args.confirm)
    print(f"optimum: {out['best_sequence']} at {out['best_time_s']:.6f}s")
    print(f"table: {run.output_dir / 'bruteforce.json'}")
    return 0


def cmd_report(args) -> int:
    dirs = []
    for d in args.run_dirs:
        p = Path(d)
        if (p / "report.json").exists():
            dirs.append(p)
        else:
            nested = sorted(q.parent for q in p.glob("*/report.json"))
            if not nested:
                raise ConfigError(f"no report.json under {p}")
            dirs.extend(nested)
    reports = [load_report(d) for d in dirs]
    bruteforce = None
    if args.bruteforce:
        bruteforce = json.loads(Path(args.bruteforce).read_text())
    summary = summarize_reports(reports, args.reference, bruteforce)
    print(_format_summary(summary))
    if bruteforce is not None:
        for row in summary["runs"]:
            ov = row["overlap"]
            print(f"  {row['strategy']} seed={row['seed']}: accuracy={ov['accuracy']:.2f} "
                  f"unnecessary={ov['unnecessary']} missing={ov['missing']}")
    if args.csv:
        _write_summary_csv(summary, Path(args.csv))
        print(f"csv: {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flagtuner",
        description="Compiler optimization-flag autotuning with a forest surrogate and binary PSO",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_tune = sub.add_parser("tune", help="run one tuning strategy and write a report")
    p_tune.add_argument("--config", required=True)
    p_tune.add_argument("--seed", type=int, default=None)
    p_tune.add_argument("--budget", type=float, default=None, help="time budget in seconds")
    p_tune.add_argument("--strategy", choices=STRATEGIES, default=None)
    p_tune.add_argument("--out", default=None, help="output directory")
    p_tune.add_argument("--allow-empty", action="store_true",
                        help="write a baseline-only report when the budget is already spent")
    p_tune.set_defaults(func=cmd_tune)

    p_bf = sub.add_parser("bruteforce", help="exhaustively measure the whole flag space")
    p_bf.add_argument("--config", required=True)
    p_bf.add_argument("--out", default=None)
    p_bf.add_argument("--confirm", action="store_true",
                      help="acknowledge the 2^n measurements of a compiler brute force")
    p_bf.set_defaults(func=cmd_bruteforce)

    p_rep = sub.add_parser("report", help="summarize one or more run reports")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--csv", default=None)
    p_rep.add_argument("--reference", type=float, default=None)
    p_rep.add_argument("--bruteforce", default=None,
                       help="bruteforce.json to compute flag overlap against")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ToolchainError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
