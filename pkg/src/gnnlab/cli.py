"""Command-line front ends.

`bench` runs experiments, depth sweeps, and the layer-residual diagnostic,
emitting CSV reports. `mrf` solves pairwise MRF model files with mean-field
inference. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
divergence.
"""

import argparse
import os
import sys
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, load_experiment_config
from .data import DatasetError, load_dataset
from .models import GraphContext, build_model
from .mrf import exact_marginals, free_energy, parse_mrf_file, run_mean_field
from .train import DivergenceError, preset_configs, repeat_runs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


@dataclass
class ReportRow:
    variant: str
    depth: int
    mean_acc: float
    std_acc: float
    runs: int
    seconds: float


def derive_cell_seed(base_seed, variant, depth):
    """Stable per-(variant, depth) seed so sweeps can resume piecewise."""
    return zlib.crc32(f"{base_seed}:{variant}:{depth}".encode()) & 0x7FFFFFFF


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_report(rows, path, no_timing=False):
    lines = ["variant,depth,mean_acc,std_acc,runs,seconds"]
    for r in sorted(rows, key=lambda r: (r.variant, r.depth)):
        secs = 0.0 if no_timing else r.seconds
        lines.append(f"{r.variant},{r.depth},{r.mean_acc:.6f},{r.std_acc:.6f},"
                     f"{r.runs},{secs:.3f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def parse_report(path):
    """Read a report.csv back into ReportRows (round-trips write_report)."""
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "variant,depth,mean_acc,std_acc,runs,seconds":
            raise ValueError(f"unexpected report header: {header}")
        for ln in f:
            v, d, m, s, n, t = ln.strip().split(",")
            rows.append(ReportRow(v, int(d), float(m), float(s), int(n), float(t)))
    return rows


def emit_plot_data(rows, path):
    """Plot-friendly CSV: one (depth, mean, std) series per variant."""
    write_report(rows, path)


def write_runs(cells, path, no_timing=False):
    lines = ["variant,depth,run,seed,accuracy,epochs,seconds"]
    for (variant, depth, seeds, stats) in cells:
        for i, met in enumerate(stats.metrics):
            secs = 0.0 if no_timing else met.wall_time
            lines.append(f"{variant},{depth},{i},{seeds[i]},"
                         f"{stats.accuracies[i]:.6f},{met.epochs_run},{secs:.3f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_curves(metrics, path):
    lines = ["epoch,train_loss,val_accuracy"]
    for e, (loss, acc) in enumerate(zip(metrics.train_loss, metrics.val_accuracy)):
        lines.append(f"{e},{loss:.10f},{acc:.6f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def run_cells(ds, cfg, depths, jobs=1):
    """Train every (variant, depth) cell; returns (rows, cell details)."""
    from .train import derive_run_seed

    variant = cfg.variant
    overrides = {k: v for k, v in {**cfg.model, **cfg.train}.items()
                 if k not in ("variant", "depth", "seed")}
    ctx = GraphContext(ds)

    def run_cell(depth):
        cell_seed = derive_cell_seed(cfg.base_seed, variant, depth)
        model_cfg, train_cfg = preset_configs(
            variant, depth=depth, seed=cell_seed, **overrides)
        stats = repeat_runs(ds, model_cfg, train_cfg, cfg.runs, ctx=ctx)
        seeds = [derive_run_seed(cell_seed, r) for r in range(cfg.runs)]
        return depth, seeds, stats

    if jobs > 1 and len(depths) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, depths))
    else:
        results = [run_cell(d) for d in depths]

    rows, cells = [], []
    for depth, seeds, stats in results:
        rows.append(ReportRow(variant, depth, stats.mean, stats.std,
                              cfg.runs, stats.wall_time))
        cells.append((variant, depth, seeds, stats))
    return rows, cells


def run_experiment(cfg, depths=None, jobs=1, no_timing=False,
                   checkpoint=None):
    """Execute the experiment; writes report.csv, runs.csv, curves.csv."""
    ds = load_dataset(cfg.dataset_path, row_normalize=cfg.row_normalize)
    if depths is None:
        depths = cfg.depths or [int(cfg.model.get("depth", 2))]
    rows, cells = run_cells(ds, cfg, depths, jobs=jobs)
    out = cfg.out_dir
    write_report(rows, os.path.join(out, "report.csv"), no_timing)
    write_runs(cells, os.path.join(out, "runs.csv"), no_timing)
    write_curves(cells[0][3].metrics[0], os.path.join(out, "curves.csv"))
    if checkpoint:
        save_checkpoint(cfg, ds, depths[0], checkpoint)
    return rows


def save_checkpoint(cfg, ds, depth, path):
    """Retrain the first run of the cell and save its parameters."""
    from .train import derive_run_seed, train_model

    cell_seed = derive_cell_seed(cfg.base_seed, cfg.variant, depth)
    overrides = {k: v for k, v in {**cfg.model, **cfg.train}.items()
                 if k not in ("variant", "depth", "seed")}
    model_cfg, train_cfg = preset_configs(
        cfg.variant, depth=depth, seed=derive_run_seed(cell_seed, 0), **overrides)
    _, model = train_model(ds, model_cfg, train_cfg)
    arrays = {f"param/{k}": v for k, v in model.state().items()}
    np.savez(path, variant=cfg.variant, depth=depth, **arrays)


def layer_residual_diagnostic(model, ctx):
    """Relative Frobenius change between consecutive layer representations.

    This is a convergence/oversmoothing proxy computed on the forward pass,
    not the per-layer approximation error itself. Pairs with mismatched
    widths (e.g. the output projection) are skipped.
    """
    _, hidden = model.forward(ctx, collect_hidden=True)
    residuals = []
    for l in range(len(hidden) - 1):
        a, b = hidden[l].data, hidden[l + 1].data
        if a.shape != b.shape:
            continue
        denom = np.linalg.norm(a)
        residuals.append((l, float(np.linalg.norm(b - a) / max(denom, 1e-300))))
    return residuals


def _resolve_seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        cfg.train["seed"] = int(args.seed)
    elif "BENCH_SEED" in os.environ:
        cfg.train["seed"] = int(os.environ["BENCH_SEED"])


def bench_main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bench", description="node-classification benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment in a config file")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--no-timing", action="store_true",
                       help="write 0.0 in timing columns for byte-reproducible reports")
    p_run.add_argument("--save-checkpoint", metavar="FILE",
                       help="retrain the first run and save its parameters")

    p_sweep = sub.add_parser("sweep", help="depth sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--depths", required=True)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--no-timing", action="store_true")

    p_diag = sub.add_parser("diagnose", help="per-layer residual diagnostic")
    p_diag.add_argument("config")
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--out")

    args = parser.parse_args(argv)
    try:
        cfg = load_experiment_config(args.config)
        _resolve_seed(args, cfg)
        if args.out:
            cfg.out_dir = args.out

        if args.command == "run":
            rows = run_experiment(cfg, jobs=args.jobs, no_timing=args.no_timing,
                                  checkpoint=args.save_checkpoint)
        elif args.command == "sweep":
            depths = [int(v) for v in args.depths.split(",")]
            if any(b <= a for a, b in zip(depths, depths[1:])):
                raise ConfigError("depths must be strictly increasing")
            rows = run_experiment(cfg, depths=depths, jobs=args.jobs,
                                  no_timing=args.no_timing)
        else:  # diagnose
            ds = load_dataset(cfg.dataset_path, row_normalize=cfg.row_normalize)
            ckpt = np.load(args.checkpoint)
            variant = str(ckpt["variant"])
            depth = int(ckpt["depth"])
            overrides = {k: v for k, v in cfg.model.items()
                         if k not in ("variant", "depth")}
            model_cfg, _ = preset_configs(variant, depth=depth, **overrides)
            model = build_model(model_cfg, ds.d, ds.c)
            model.load_state({k[len("param/"):]: ckpt[k]
                              for k in ckpt.files if k.startswith("param/")})
            residuals = layer_residual_diagnostic(model, GraphContext(ds))
            lines = ["layer,relative_residual"]
            lines += [f"{l},{r:.10f}" for l, r in residuals]
            _atomic_write(os.path.join(cfg.out_dir, "residuals.csv"),
                          "\n".join(lines) + "\n")
            print("\n".join(lines))
            return EXIT_OK

        for r in rows:
            print(f"{r.variant} depth={r.depth}: "
                  f"{r.mean_acc:.4f} +/- {r.std_acc:.4f} ({r.runs} runs)")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def mrf_main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mrf", description="mean-field inference on pairwise MRF files")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="run mean-field inference on a model file")
    p.add_argument("file")
    p.add_argument("--schedule", choices=["seq", "par"], default="seq")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--exact", action="store_true",
                   help="also print brute-force marginals and log-partition")
    args = parser.parse_args(argv)

    try:
        model = parse_mrf_file(args.file)
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    schedule = "sequential" if args.schedule == "seq" else "parallel"
    state = run_mean_field(model, schedule=schedule, tol=args.tol,
                           max_iters=args.max_iters)
    print("record,index," + ",".join(f"v{i}" for i in range(model.k)))
    for i in range(model.n):
        print(f"marginal,{i}," + ",".join(f"{v:.10f}" for v in state.q[i]))
    for sweep, fe in enumerate(state.free_energy_trace):
        print(f"free_energy,{sweep},{fe:.10f}")
    print(f"converged,{int(state.converged)},")
    if args.exact:
        marg, log_z = exact_marginals(model)
        for i in range(model.n):
            print(f"exact_marginal,{i}," + ",".join(f"{v:.10f}" for v in marg[i]))
        print(f"log_partition,0,{log_z:.10f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(bench_main())
