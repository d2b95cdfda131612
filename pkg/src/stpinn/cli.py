"""Experiment driver: reference generation, training, evaluation, comparison.

Commands (all exit 0 on success, nonzero with a message on stderr):

  stpinn gen-ref --config C [--out DIR]
      Solve the configured problem and write <out>/ref.grid.
  stpinn train --config C [--baseline] [--seed N] [--out DIR] [--dump-pseudo]
      Train one run against <out>/ref.grid; writes <arm>.ckpt and
      history_<arm>.csv (plus figures unless disabled).
  stpinn eval --checkpoint F --grid F [--out DIR]
      Evaluate a checkpoint on a reference grid; writes eval.csv and
      error.grid, prints relative L2 and MSE.
  stpinn compare --config C [--seeds N] [--seed N] [--out DIR]
      Paired baseline/self-training runs over N seeds; writes per-run
      histories and checkpoints, report.csv, and comparison figures.

Timing note: standalone train runs record real per-iteration wall_ms in the
history CSV; compare zeroes that column so repeated invocations are
byte-identical, and reports wall-clock runtimes in report.csv instead.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    load_config,
    make_mlp_spec,
    make_problem,
    make_train_settings,
    save_config,
    with_overrides,
)
from .network import forward, load_checkpoint, save_checkpoint
from .refsolve import GridSolution, SolverInstability, mse, relative_l2, solve_problem
from .runtime import configure_runtime
from .training import TrainingDiverged, read_history, train, write_history

REF_NAME = "ref.grid"
REPORT_HEADER = "seed,arm,rel_l2,mse,runtime_s"


class CliError(RuntimeError):
    pass


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ref_path(cfg: RunConfig) -> Path:
    return _out_dir(cfg) / REF_NAME


def gen_ref(cfg: RunConfig) -> Path:
    """Solve the configured problem onto its reference grid and save it."""
    problem = make_problem(cfg)
    refine = cfg.grid.refine if cfg.grid.refine > 0 else None
    tic = time.perf_counter()
    grid = solve_problem(problem, cfg.grid.nx, cfg.grid.nt, refine=refine)
    path = _ref_path(cfg)
    grid.save(path)
    print(f"wrote {path} ({cfg.grid.nx}x{cfg.grid.nt}) in {time.perf_counter() - tic:.1f}s")
    return path


def _load_ref(cfg: RunConfig) -> GridSolution:
    path = _ref_path(cfg)
    if not path.exists():
        raise CliError(f"missing reference grid {path}; run 'stpinn gen-ref' first")
    return GridSolution.load(path)


def _arm_name(cfg: RunConfig, baseline: bool) -> str:
    return "baseline" if baseline or not cfg.selftrain.enabled else "selftrain"


def train_run(cfg: RunConfig, baseline: bool, dump_pseudo: bool = False,
              timing: bool = True, seed=None, arm: str | None = None):
    """One training run against the stored reference; returns its artifacts."""
    ref = _load_ref(cfg)
    problem = make_problem(cfg)
    spec = make_mlp_spec(cfg)
    settings = make_train_settings(cfg, baseline=baseline)
    arm = arm or _arm_name(cfg, baseline)
    out = _out_dir(cfg)
    run_seed = cfg.run.seed if seed is None else seed
    dump = out / f"pseudo_{arm}_seed{run_seed}.csv" if dump_pseudo else None
    result = train(problem, ref, spec, settings, run_seed,
                   pseudo_dump=dump, timing=timing)
    ckpt = out / f"{arm}_seed{run_seed}.ckpt"
    hist = out / f"history_{arm}_seed{run_seed}.csv"
    save_checkpoint(ckpt, result.params, spec)
    write_history(hist, result.history)
    return result, ckpt, hist, ref


def cmd_train(cfg: RunConfig, baseline: bool, dump_pseudo: bool) -> int:
    result, ckpt, hist, _ = train_run(cfg, baseline, dump_pseudo, timing=True)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"final losses: total={last.loss_total:.6g} f={last.loss_f:.6g} "
              f"d={last.loss_d:.6g} p={last.loss_p:.6g} (pseudo={last.n_pseudo})")
    print(f"wrote {ckpt}")
    print(f"wrote {hist}")
    if cfg.run.figures and result.history:
        from . import figures

        arm = _arm_name(cfg, baseline)
        fig = Path(cfg.run.out_dir) / f"history_{arm}_seed{cfg.run.seed}.png"
        figures.plot_history({arm: result.history}, fig)
        print(f"wrote {fig}")
    return 0


def predict_grid(theta, spec, ref: GridSolution, chunk: int = 65536) -> GridSolution:
    """Network values on every node of the reference grid."""
    coords = ref.node_coords()
    preds = np.concatenate([
        np.asarray(forward(theta, spec, coords[i:i + chunk]))
        for i in range(0, len(coords), chunk)
    ])
    return GridSolution(ref.nx, ref.nt, ref.x_lo, ref.x_hi, ref.t_hi,
                        preds.reshape(ref.nt, ref.nx))


def evaluate(theta, spec, ref: GridSolution):
    pred = predict_grid(theta, spec, ref)
    err = GridSolution(ref.nx, ref.nt, ref.x_lo, ref.x_hi, ref.t_hi,
                       pred.values - ref.values)
    return pred, err, relative_l2(pred, ref), mse(pred, ref)


def cmd_eval(ckpt_path, grid_path, out_dir, figures_on: bool) -> int:
    theta, spec = load_checkpoint(ckpt_path)
    ref = GridSolution.load(grid_path)
    pred, err, rel, m = evaluate(theta, spec, ref)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    err.save(out / "error.grid")
    with open(out / "eval.csv", "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"relative_l2,{rel!r}\n")
        fh.write(f"mse,{m!r}\n")
    print(f"relative_l2 = {rel:.6e}")
    print(f"mse = {m:.6e}")
    print(f"wrote {out / 'error.grid'}")
    print(f"wrote {out / 'eval.csv'}")
    if figures_on:
        from . import figures

        figures.plot_solution_maps(pred, ref, out / "solution_maps.png")
        figures.plot_time_slices(pred, ref, out / "time_slices.png")
        print(f"wrote {out / 'solution_maps.png'}")
        print(f"wrote {out / 'time_slices.png'}")
    return 0


def compare(cfg: RunConfig, n_seeds: int):
    """Paired runs over seeds; returns (entries, improvement_factor, ref)."""
    if n_seeds < 1:
        raise CliError("--seeds must be >= 1")
    if not _ref_path(cfg).exists():
        gen_ref(cfg)
    ref = _load_ref(cfg)
    spec = make_mlp_spec(cfg)
    entries = []
    ratios = []
    per_seed_hist = {}
    for k in range(n_seeds):
        seed = cfg.run.seed + k
        per_seed_hist[seed] = {}
        rel_by_arm = {}
        for arm, baseline in (("baseline", True), ("selftrain", False)):
            tic = time.perf_counter()
            result, ckpt, hist, _ = train_run(cfg, baseline, timing=False,
                                              seed=seed, arm=arm)
            runtime = time.perf_counter() - tic
            theta, sp = load_checkpoint(ckpt)
            _, _, rel, m = evaluate(theta, sp, ref)
            entries.append((seed, arm, rel, m, runtime))
            rel_by_arm[arm] = rel
            per_seed_hist[seed][arm] = result.history
            print(f"seed {seed} {arm:9s}: rel_l2={rel:.4e} mse={m:.4e} "
                  f"({runtime:.0f}s)")
        ratios.append(rel_by_arm["baseline"] / rel_by_arm["selftrain"])
    improvement = float(np.exp(np.mean(np.log(ratios))))
    return entries, improvement, per_seed_hist


def write_report(path, entries, improvement) -> None:
    with open(path, "w") as fh:
        fh.write(REPORT_HEADER + "\n")
        for seed, arm, rel, m, runtime in entries:
            fh.write(f"{seed},{arm},{rel!r},{m!r},{runtime:.3f}\n")
        fh.write(f"geomean,improvement,{improvement!r},,\n")


def cmd_compare(cfg: RunConfig, n_seeds: int) -> int:
    entries, improvement, per_seed_hist = compare(cfg, n_seeds)
    out = _out_dir(cfg)
    report = out / "report.csv"
    write_report(report, entries, improvement)
    print(f"geometric-mean improvement factor (baseline/selftrain): {improvement:.3f}")
    print(f"wrote {report}")
    if cfg.run.figures:
        from . import figures

        figures.plot_compare(per_seed_hist, out / "compare_losses.png")
        print(f"wrote {out / 'compare_losses.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stpinn",
                                 description="Self-training PINN benchmark driver")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out_dir")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("gen-ref", help="generate the reference grid")
    add_common(p)

    p = sub.add_parser("train", help="train one run")
    add_common(p)
    p.add_argument("--baseline", action="store_true",
                   help="disable the pseudo-label path")
    p.add_argument("--dump-pseudo", action="store_true",
                   help="write per-event pseudo-set CSV")

    p = sub.add_parser("eval", help="evaluate a checkpoint against a grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("compare", help="paired baseline/self-training comparison")
    add_common(p)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds")
    return ap


def main(argv=None) -> int:
    configure_runtime()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.grid, args.out,
                            figures_on=not args.no_figures)
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, out_dir=args.out,
                             figures=False if args.no_figures else None)
        if args.command == "gen-ref":
            gen_ref(cfg)
            return 0
        if args.command == "train":
            return cmd_train(cfg, baseline=args.baseline,
                             dump_pseudo=args.dump_pseudo)
        if args.command == "compare":
            return cmd_compare(cfg, n_seeds=args.seeds)
        raise CliError(f"unknown command {args.command!r}")
    except (ConfigError, CliError, TrainingDiverged, SolverInstability,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
