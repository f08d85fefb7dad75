"""Command-line front end: run, sweep, report, selftest.

Configuration precedence, lowest to highest: dataclass defaults, the named
preset's fields, explicit keys in the --config file, the dedicated flags
(--seed/--preset/--routing/--distill/--out), then --set overrides in the
order given. The emitted manifest.json is the fully-resolved configuration
document itself, so `run --config <run>/manifest.json` replays the run
exactly; every output file is written atomically (temp then rename) and
contains nothing time-dependent, so a replay is byte-identical.

Exit codes: 0 success; 2 invalid or missing configuration (with one
diagnostic line per offending field, before any output is written);
3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from .config import RunConfig, apply_overrides, from_dict, parse_set_override
from .errors import ConfigError, DivergenceError, StprError
from .fssd import save_importance
from .harness import DISTILL_STRATEGIES, PRESETS, run_sequence
from .bankio import save_bank
from .datagen import generate_stream
from .selftest import run_selftest

# the CLI exposes only task-blind routing; the true-task oracle stays internal
CLI_ROUTINGS = ("td", "avg", "spatial")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".write-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="JSON run configuration file")
    shared.add_argument("--seed", type=int, metavar="N", help="override train.seed")
    shared.add_argument("--preset", choices=sorted(PRESETS), help="named component bundle")
    shared.add_argument("--out", metavar="DIR", help="output directory (default: $STPR_OUT or ./runs)")
    shared.add_argument("--routing", choices=CLI_ROUTINGS, help="override train.routing")
    shared.add_argument("--distill", choices=DISTILL_STRATEGIES, help="override train.distill")
    shared.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
        help="override any setting, e.g. --set train.fssd_weight=5e4 (repeatable)",
    )

    parser = argparse.ArgumentParser(prog="stpr", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[shared], help="train one task sequence and write its outputs")
    sweep = sub.add_parser("sweep", parents=[shared], help="one sequence per value of one setting")
    sweep.add_argument("--param", required=True, metavar="KEY", help="setting to vary, e.g. train.fssd_weight")
    sweep.add_argument("--values", required=True, metavar="V1,V2,...", help="comma-separated values")
    report = sub.add_parser("report", help="summarize a finished run directory")
    report.add_argument("run_dir", metavar="RUN_DIR")
    sub.add_parser("selftest", help="fast numerical health checks")
    return parser


def _resolve_config(args, extra: list[tuple[str, object]] = ()) -> RunConfig:
    if args.config is not None:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError([f"configuration file not found: {args.config}"])
        except json.JSONDecodeError as exc:
            raise ConfigError([f"configuration file {args.config} is not valid JSON: {exc}"])
    else:
        doc = {}
    overrides: list[tuple[str, object]] = []
    if args.preset is not None:
        overrides.append(("preset", args.preset))
    if args.seed is not None:
        overrides.append(("train.seed", args.seed))
    if args.routing is not None:
        overrides.append(("train.routing", args.routing))
    if args.distill is not None:
        overrides.append(("train.distill", args.distill))
    if args.out is not None:
        overrides.append(("out", args.out))
    overrides.extend(parse_set_override(item) for item in args.overrides)
    overrides.extend(extra)
    return from_dict(apply_overrides(doc, overrides))


def _out_dir(rc: RunConfig, default_name: str) -> str:
    if rc.out is not None:
        return rc.out
    return os.path.join(os.environ.get("STPR_OUT", "runs"), default_name)


def _matrix_csv(report) -> str:
    b = report.n_tasks
    lines = ["after_task," + ",".join(f"task_{j}" for j in range(1, b + 1))]
    for i in range(1, b + 1):
        row = report.matrix.row(i)
        cells = [repr(row[j]) if j < i else "" for j in range(b)]
        lines.append(f"{i}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def _curves_csv(curves: dict[int, list[float]]) -> str:
    lines = ["task,epoch,loss"]
    for task_id in sorted(curves):
        for epoch, loss in enumerate(curves[task_id], start=1):
            lines.append(f"{task_id},{epoch},{repr(loss)}")
    return "\n".join(lines) + "\n"


def _execute_run(rc: RunConfig, out_dir: str) -> dict:
    """Train one sequence and write every artifact; returns the metrics doc."""
    stream = generate_stream(rc.train.seed, rc.stream, rc.model)
    state, report = None, None
    from .harness import train_sequence, compute_acc, compute_bwf, param_counts

    state, matrix, last_row = train_sequence(stream, rc.train)
    metrics = {
        "acc": compute_acc(matrix, stream),
        "bwf": compute_bwf(matrix),
        "config_hash": rc.config_hash(),
        "param_counts": param_counts(state),
        "routing_hit_rate": last_row.hit_rate(),
    }

    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "manifest.json"), _json_text(rc.to_dict()))
    _atomic_write(os.path.join(out_dir, "metrics.json"), _json_text(metrics))

    class _Shim:
        n_tasks = matrix.n_tasks
        matrix_ref = matrix

        @property
        def matrix(self):
            return self.matrix_ref

    shim = _Shim()
    _atomic_write(os.path.join(out_dir, "accuracy_matrix.csv"), _matrix_csv(shim))
    _atomic_write(os.path.join(out_dir, "per_task_curves.csv"), _curves_csv(state.curves))

    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".importance-", suffix=".tmp")
    os.close(fd)
    try:
        save_importance(tmp, state.importance)
        os.replace(tmp, os.path.join(out_dir, "importance.json"))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    save_bank(os.path.join(out_dir, "bank.bin"), state.bank, state.anchors, rc.config_hash())
    return metrics


def cmd_run(args) -> int:
    rc = _resolve_config(args)
    out_dir = _out_dir(rc, f"run-{rc.config_hash()[:12]}")
    metrics = _execute_run(rc, out_dir)
    print(f"run complete: acc={metrics['acc']:.4f} bwf={metrics['bwf']:.4f}")
    print(f"outputs in {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    raw_values = [v for v in args.values.split(",") if v]
    if not raw_values:
        raise ConfigError(["--values: need at least one value"])
    # resolve every per-value configuration up front: an invalid value must
    # abort the whole sweep before any training output exists
    configs: list[tuple[str, RunConfig]] = []
    for raw in raw_values:
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        configs.append((raw, _resolve_config(args, extra=[(args.param, value)])))

    base = _resolve_config(args)
    sweep_root = _out_dir(base, f"sweep-{args.param.replace('.', '-')}-{base.config_hash()[:12]}")
    os.makedirs(sweep_root, exist_ok=True)

    rows = [f"{args.param},acc,bwf,config_hash,status"]
    diverged = False
    for raw, rc in configs:
        run_dir = os.path.join(sweep_root, f"{args.param}={raw}")
        try:
            metrics = _execute_run(rc, run_dir)
            rows.append(f"{raw},{repr(metrics['acc'])},{repr(metrics['bwf'])},{metrics['config_hash']},ok")
            print(f"{args.param}={raw}: acc={metrics['acc']:.4f} bwf={metrics['bwf']:.4f}")
        except DivergenceError as exc:
            diverged = True
            rows.append(f"{raw},,,{rc.config_hash()},diverged")
            print(f"{args.param}={raw}: diverged ({exc})", file=sys.stderr)
    _atomic_write(os.path.join(sweep_root, "sweep.csv"), "\n".join(rows) + "\n")
    print(f"sweep table in {sweep_root}/sweep.csv")
    return 3 if diverged else 0


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"not a finished run directory: missing {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path} is not valid JSON: {exc}"])


def cmd_report(args) -> int:
    manifest = _load_json(os.path.join(args.run_dir, "manifest.json"))
    metrics = _load_json(os.path.join(args.run_dir, "metrics.json"))
    print(f"run: {args.run_dir}")
    print(f"configuration hash: {metrics['config_hash']}")
    preset = manifest.get("preset")
    train = manifest.get("train", {})
    print(f"preset: {preset or '(none)'}  routing: {train.get('routing')}  "
          f"distill: {train.get('distill')}  seed: {train.get('seed')}")
    print(f"final accuracy over seen classes: {metrics['acc']:.4f}")
    print(f"backward forgetting: {metrics['bwf']:.4f}")
    if metrics.get("routing_hit_rate") is not None:
        print(f"routing hit rate: {metrics['routing_hit_rate']:.4f}")

    curves_path = os.path.join(args.run_dir, "per_task_curves.csv")
    if os.path.exists(curves_path):
        per_task: dict[str, list[float]] = {}
        with open(curves_path) as fh:
            next(fh, None)
            for line in fh:
                task_id, _, loss = line.strip().split(",")
                per_task.setdefault(task_id, []).append(float(loss))
        print("training curves:")
        for task_id in sorted(per_task, key=int):
            losses = per_task[task_id]
            print(f"  task {task_id}: {len(losses)} epochs, loss {losses[0]:.4f} -> {losses[-1]:.4f}")

    counts = metrics["param_counts"]
    print("parameter counts:")
    print(f"  backbone (frozen): {counts['backbone_frozen']}")
    print(f"  adapters (trainable): {counts['adapter_trainable']}")
    print(f"  experts: {counts['n_experts']} x {counts['per_expert']} = {counts['experts_total']}")

    importance_path = os.path.join(args.run_dir, "importance.json")
    if os.path.exists(importance_path):
        doc = _load_json(importance_path)
        accumulated = doc.get("accumulated")
        if accumulated:
            ranked = sorted(enumerate(accumulated), key=lambda kv: -kv[1])[:5]
            summary = ", ".join(f"{idx} ({val:.3f})" for idx, val in ranked)
            print(f"distillation importance, top channels: {summary}")
    return 0


def cmd_selftest(args) -> int:
    failures = run_selftest()
    if failures:
        print(f"selftest failed: {', '.join(failures)}", file=sys.stderr)
        return 1
    print("selftest passed")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report, "selftest": cmd_selftest}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except StprError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
