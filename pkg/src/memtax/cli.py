"""Command-line front end: train models, dump traces, verify reductions.

Subcommands:
  train          fit one architecture on one task, write model + curve files
  trace          run a saved model over a symbol string, dump internals as CSV
  reduce-verify  check a constraint construction for trajectory equality
  grad-check     compare tape gradients against finite differences
  matrix         train every architecture on every task, emit a capability CSV

Exit codes: 0 success; 2 training budget exhausted without reaching the
success threshold; 3 training diverged; 64 bad usage; 65 bad input data
(e.g. a symbol outside the model's alphabet).  File writes are atomic
(.tmp then rename), outputs are deterministic for fixed flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cells as cl
from . import modelio
from . import reductions as rd
from . import tasks as tk
from . import training as tr
from .numcore import Tape

EX_OK = 0
EX_BUDGET = 2
EX_DIVERGED = 3
EX_USAGE = 64
EX_DATAERR = 65

ARCHES = ("rnn", "lstm", "stack", "ram")
TASK_ORDER = ("count", "count-interf", "reverse", "repeat-copy")

# best-of-k seed counts for the capability matrix (0 in --seeds means these)
DEFAULT_MATRIX_SEEDS = {("ram", "repeat-copy"): 5}
DEFAULT_MATRIX_SEED_COUNT = 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits 64 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, "%s: error: %s\n" % (self.prog, message))


def build_parser():
    parser = _Parser(prog="memtax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="train one cell on one task")
    p.add_argument("--arch", required=True, choices=ARCHES)
    p.add_argument("--task", required=True, choices=TASK_ORDER)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument(
        "--config",
        default=None,
        metavar="JSON",
        help="overrides merged onto the default training config; the 'cell' "
        "key merges into the cell config",
    )
    p.add_argument(
        "--paper-init",
        action="store_true",
        help="unit-variance weight draws instead of 1/sqrt(fan-in) scaling",
    )
    p.add_argument("--out-model", default=None)
    p.add_argument("--out-curve", default=None)

    p = sub.add_parser("trace", help="dump per-step internals for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="symbol string, e.g. bbacac")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--task", default=None, choices=TASK_ORDER,
                   help="only needed when the model file lacks training metadata")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")

    p = sub.add_parser("reduce-verify", help="check a constraint construction")
    p.add_argument("--pair", required=True, choices=rd.PAIRS)
    p.add_argument("--len", dest="length", type=int, default=20)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", default=None, help="JSON report path (default: stdout)")

    p = sub.add_parser("grad-check", help="tape gradients vs finite differences")
    p.add_argument("--arch", required=True, choices=ARCHES)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("matrix", help="all 16 architecture x task cells")
    p.add_argument("--budget-scale", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=0,
                   help="seeds per cell (0 = per-cell defaults)")
    p.add_argument("--seed", type=int, default=1, help="first seed value")
    p.add_argument("--out", default="matrix.csv")
    return parser


# ---------------------------------------------------------------------------
# train


def merged_config(args):
    config = tr.default_config(args.arch, args.task, seed=args.seed)
    if args.paper_init:
        config.init_scheme = "raw"
    if not args.config:
        return config
    doc = config.to_dict()
    overrides = json.loads(args.config)
    if not isinstance(overrides, dict):
        raise ValueError("--config must be a JSON object")
    cell_overrides = overrides.pop("cell", {})
    unknown = set(overrides) - set(doc)
    if unknown:
        raise ValueError("unknown config keys: %s" % sorted(unknown))
    doc.update(overrides)
    unknown = set(cell_overrides) - set(doc["cell"])
    if unknown:
        raise ValueError("unknown cell config keys: %s" % sorted(unknown))
    doc["cell"].update(cell_overrides)
    return tr.TrainConfig.from_dict(doc)


def write_curve(path, curve):
    lines = ["episode,loss,success"]
    lines += [
        "%d,%r,%r" % (episode, float(loss), float(metric))
        for episode, loss, metric in curve
    ]
    modelio.write_text_atomic(path, "\n".join(lines) + "\n")


def cmd_train(args):
    try:
        config = merged_config(args)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print("memtax train: bad --config: %s" % exc, file=sys.stderr)
        return EX_USAGE
    try:
        result = tr.train(config)
    except tr.TrainingDiverged as exc:
        print("memtax train: diverged: %s" % exc, file=sys.stderr)
        if args.out_curve:
            write_curve(args.out_curve, exc.curve)
        return EX_DIVERGED
    if args.out_curve:
        write_curve(args.out_curve, result.curve)
    if args.out_model:
        modelio.save_model(
            args.out_model,
            result.cell,
            init={"seed": config.seed, "scheme": config.init_scheme},
            training=config.to_dict(),
            result={
                "success": result.success,
                "episodes_run": result.episodes_run,
                "final_metric": result.final_metric,
                "success_episode": result.success_episode,
            },
        )
    print(
        "train %s/%s seed=%d: %s after %d episodes, final metric %r"
        % (
            config.arch,
            config.task,
            config.seed,
            "success" if result.success else "budget exhausted",
            result.episodes_run,
            result.final_metric,
        )
    )
    return EX_OK if result.success else EX_BUDGET


# ---------------------------------------------------------------------------
# trace


def trace_rows(cell, steps):
    """Long-format rows (step, symbol, series, row, col, value)."""
    tape = Tape()
    p = cell.bind(tape)
    state = cell.init_state(tape)
    rows = []
    for t, (token, vec) in enumerate(steps):
        trace = {}
        state, _ = cell.step(tape, p, state, tape.leaf(vec.reshape(-1, 1)), trace)
        for series in sorted(trace):
            value = np.atleast_2d(trace[series])
            for r in range(value.shape[0]):
                for c in range(value.shape[1]):
                    rows.append((t, token, series, r, c, float(value[r, c])))
    return rows


def cmd_trace(args):
    try:
        cell, doc = modelio.load_model(args.model)
    except (OSError, ValueError, KeyError) as exc:
        print("memtax trace: cannot load model: %s" % exc, file=sys.stderr)
        return EX_DATAERR
    task = args.task or doc.get("training", {}).get("task")
    if task not in tk.TASKS:
        print(
            "memtax trace: model file lacks a task tag; pass --task",
            file=sys.stderr,
        )
        return EX_USAGE
    try:
        steps = tk.text_to_steps(task, args.input)
    except tk.UnknownSymbolError as exc:
        print("memtax trace: %s" % exc, file=sys.stderr)
        return EX_DATAERR
    lines = ["step,symbol,series,row,col,value"]
    lines += [
        "%d,%s,%s,%d,%d,%r" % row for row in trace_rows(cell, steps)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        modelio.write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EX_OK


# ---------------------------------------------------------------------------
# reduce-verify / grad-check


def cmd_reduce_verify(args):
    try:
        report = rd.verify_equivalence(
            args.pair, length=args.length, seeds=args.seeds, alpha=args.alpha
        )
    except ValueError as exc:
        print("memtax reduce-verify: %s" % exc, file=sys.stderr)
        return EX_USAGE
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        modelio.write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EX_OK if report["verdict"] == "equivalent" else 1


def cmd_grad_check(args):
    if args.trials < 1:
        print("memtax grad-check: --trials must be >= 1", file=sys.stderr)
        return EX_USAGE
    worst = 0.0
    for label in tr.GRAD_CHECK_ARCH[args.arch]:
        err = tr.grad_check_cell(label, trials=args.trials, seed=args.seed)
        worst = max(worst, err)
        print("grad-check %-12s max rel err %.3e" % (label, err))
    print("grad-check %-12s max rel err %.3e" % ("overall", worst))
    return EX_OK if worst < 1e-5 else 1


# ---------------------------------------------------------------------------
# matrix


def matrix_seed_count(arch, task, flag):
    if flag > 0:
        return flag
    return DEFAULT_MATRIX_SEEDS.get((arch, task), DEFAULT_MATRIX_SEED_COUNT)


def run_matrix_cell(job):
    """Best-of-k seeds for one (arch, task) cell; returns one CSV row dict."""
    arch, task, first_seed, n_seeds, budget_scale = job
    lower_is_better = tk.TASKS[task].metric == "mse"
    best = None
    episodes_total = 0
    for seed in range(first_seed, first_seed + n_seeds):
        config = tr.default_config(arch, task, seed=seed)
        config.episodes = int(round(config.episodes * budget_scale))
        try:
            result = tr.train(config)
        except tr.TrainingDiverged as exc:
            episodes_total += exc.episodes_run
            continue
        episodes_total += result.episodes_run
        metric = float(result.final_metric)
        if best is None or (metric < best) == lower_is_better:
            best = metric
        if result.success:
            return {
                "arch": arch,
                "task": task,
                "success": 1,
                "seed_used": seed,
                "episodes": episodes_total,
                "metric": metric,
            }
    if best is None:  # every seed diverged
        best = float("inf") if lower_is_better else 0.0
    return {
        "arch": arch,
        "task": task,
        "success": 0,
        "seed_used": 0,
        "episodes": episodes_total,
        "metric": best,
    }


def matrix_jobs(args):
    return [
        (arch, task, args.seed, matrix_seed_count(arch, task, args.seeds),
         args.budget_scale)
        for task in TASK_ORDER
        for arch in ARCHES
    ]


def cmd_matrix(args):
    if args.budget_scale < 0:
        print("memtax matrix: --budget-scale must be >= 0", file=sys.stderr)
        return EX_USAGE
    jobs = matrix_jobs(args)
    workers = int(os.environ.get("MEMTAX_THREADS", os.cpu_count() or 1))
    workers = max(1, min(workers, len(jobs)))
    if workers > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            rows = pool.map(run_matrix_cell, jobs)
    else:
        rows = [run_matrix_cell(job) for job in jobs]
    lines = ["arch,task,success,seed_used,episodes,metric"]
    lines += [
        "%s,%s,%d,%d,%d,%r"
        % (r["arch"], r["task"], r["success"], r["seed_used"], r["episodes"],
           r["metric"])
        for r in rows
    ]
    modelio.write_text_atomic(args.out, "\n".join(lines) + "\n")
    solved = sum(r["success"] for r in rows)
    print("matrix: %d/%d cells solved; wrote %s" % (solved, len(rows), args.out))
    return EX_OK


# ---------------------------------------------------------------------------


COMMANDS = {
    "train": cmd_train,
    "trace": cmd_trace,
    "reduce-verify": cmd_reduce_verify,
    "grad-check": cmd_grad_check,
    "matrix": cmd_matrix,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
