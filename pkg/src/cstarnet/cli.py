"""Command line entry point: ``cstarnet <subcommand>``.

Subcommands: density, fewshot, validate, appendix-c, export-data. Runs
write their artifacts to ``<out>/<hash>/`` where the hash is taken over the
effective configuration, so identical configurations land in the same place.
Effective values come from flags, then a JSON config file, then defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from cstarnet import __version__
from cstarnet import data as datasets
from cstarnet import density as dens
from cstarnet import fewshot as fs
from cstarnet import flows, linreg, validate

# fixed per dataset so heatmaps of different methods share one colour scale
HEATMAP_VMAX = {"swiss": 0.20, "circles": 0.12}
DENSITY_FIELDS = {f.name for f in fields(dens.DensityConfig)}


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("CSTAR_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise SystemExit(f"CSTAR_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(n, n_jobs))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()[:12]


def _parse_list(text: str, cast):
    try:
        return [cast(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse list {text!r}") from None


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    # a run manifest can be fed back in directly
    return cfg.get("config", cfg)


def _merge(flags: dict, file_cfg: dict, defaults: dict) -> dict:
    out = dict(defaults)
    out.update({k: v for k, v in file_cfg.items() if k in defaults})
    out.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- density ------------------------------------------------------------------------

DENSITY_DEFAULTS = {
    "methods": ["ours"], "dataset": "swiss", "epochs": 3000, "repeats": 5, "seed": 0,
    "data_seed": 0, "grid": 60, "grid_mc": 256, "n_mc_eval": 1024, "reg_unscaled": False,
    "mu": None, "lambda_tilde": None, "n_layers": 5, "hidden": 64, "reduction": "sum",
}


def _density_job(args):
    method, repeat, eff, want_grid = args
    cfg = _density_config(method, repeat, eff)
    ds = datasets.load(eff["dataset"], eff["data_seed"])
    run = dens.train(cfg, ds.train)
    nll = run.nll(ds.test)
    grid = None
    if want_grid:
        res = int(eff["grid"])
        grid = flows.density_grid(lambda p: run.density(p, n_mc=int(eff["grid_mc"])),
                                  (-4.0, 4.0), res)
    return method, repeat, run.losses, nll, run.seconds, grid, cfg.to_dict()


def _density_config(method: str, repeat: int, eff: dict) -> dens.DensityConfig:
    kw = dict(method=method, dataset=eff["dataset"], epochs=int(eff["epochs"]),
              seed=int(eff["seed"]) + repeat, data_seed=int(eff["data_seed"]),
              n_layers=int(eff["n_layers"]), hidden=int(eff["hidden"]),
              reduction=eff["reduction"], n_mc_eval=int(eff["n_mc_eval"]),
              scale_reg_by_lr=not eff["reg_unscaled"])
    if method == "ours":
        if eff["mu"] is not None:
            kw["mu"] = float(eff["mu"])
        if eff["lambda_tilde"] is not None:
            kw["lambda_tilde"] = float(eff["lambda_tilde"])
    return dens.DensityConfig(**kw)


def _heatmaps(path: Path, grids: dict, dataset: str, nlls: dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(grids)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 4), squeeze=False)
    ds = datasets.load(dataset, 0)
    for ax, (method, g) in zip(axes[0], grids.items()):
        im = ax.imshow(g, origin="lower", extent=(-4, 4, -4, 4), cmap="viridis",
                       vmin=0.0, vmax=HEATMAP_VMAX.get(dataset, float(np.max(g))))
        ax.scatter(ds.train[:, 0], ds.train[:, 1], s=3, c="w", alpha=0.6)
        ax.set_title(f"{method}: test NLL {nlls[method]:.3f}")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def cmd_density(args) -> int:
    flags = {"methods": args.method, "dataset": args.dataset, "epochs": args.epochs,
             "repeats": args.repeats, "seed": args.seed, "grid": args.grid,
             "n_mc_eval": args.n_mc_eval, "reg_unscaled": True if args.reg_unscaled else None,
             "mu": args.mu, "lambda_tilde": args.lambda_tilde}
    eff = _merge(flags, _load_config(args.config), DENSITY_DEFAULTS)
    methods = eff["methods"]
    if isinstance(methods, str):
        methods = _parse_list(methods, str)
    bad = [m for m in methods if m not in dens.METHODS]
    if bad or eff["dataset"] not in datasets.GENERATORS or int(eff["epochs"]) < 1 or int(eff["repeats"]) < 1:
        print(f"error: invalid options (methods {methods}, dataset {eff['dataset']!r}, "
              f"epochs {eff['epochs']}, repeats {eff['repeats']})", file=sys.stderr)
        return 2
    eff["methods"] = methods
    key = config_hash(eff)
    out = Path(args.out) / key
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(m, r, eff, r == 0) for m in methods for r in range(int(eff["repeats"]))]
    n_workers = worker_count(len(jobs))
    t0 = time.perf_counter()
    try:
        if n_workers > 1:
            with ProcessPoolExecutor(n_workers) as ex:
                results = list(ex.map(_density_job, jobs))
        else:
            results = [_density_job(j) for j in jobs]
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    metrics, table, grids, configs, nll_by = [], [], {}, {}, {}
    for method, rep, losses, nll, secs, grid, cfgd in results:
        configs.setdefault(method, cfgd)
        nll_by.setdefault(method, []).append(nll)
        table.append([method, eff["dataset"], eff["epochs"], rep, cfgd["seed"], f"{nll:.6f}", f"{secs:.2f}"])
        for e, row in enumerate(losses):
            metrics.append([method, rep, e + 1, repr(float(row.mean())), repr(float(row.min())),
                            repr(float(row.max()))])
        if grid is not None:
            grids[method] = grid
    summary = {}
    for method, vals in nll_by.items():
        v = np.asarray(vals)
        summary[method] = {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
                           "values": v.tolist()}
        table.append([method, eff["dataset"], eff["epochs"], "mean", "", f"{v.mean():.6f}", ""])
        table.append([method, eff["dataset"], eff["epochs"], "std", "",
                      f"{summary[method]['std']:.6f}", ""])

    _write_csv(out / "nll_table.csv", ["method", "dataset", "epochs", "repeat", "seed", "test_nll", "seconds"], table)
    _write_csv(out / "metrics.csv", ["method", "repeat", "epoch", "loss_mean", "loss_min", "loss_max"], metrics)
    res = int(eff["grid"])
    xs = np.linspace(-4.0, 4.0, res)
    rows = []
    for method, g in grids.items():
        for iy in range(res):
            for ix in range(res):
                rows.append([method, repr(float(xs[ix])), repr(float(xs[iy])), repr(float(g[iy, ix]))])
    _write_csv(out / "density.csv", ["method", "x", "y", "p"], rows)
    _heatmaps(out / "density.png", grids, eff["dataset"],
              {m: summary[m]["mean"] for m in grids})

    first = _density_config(methods[0], 0, eff)
    _, proj, D = dens.setup(first)
    manifest = {
        "hash": key, "version": __version__, "command": "density", "config": eff,
        "runs": configs,
        "architecture": flows.FlowModel(n_layers=int(eff["n_layers"]), hidden=int(eff["hidden"])).to_dict(),
        "projector": proj.to_dict(), "measure_D": D.to_dict(),
        "dataset": datasets.load(eff["dataset"], eff["data_seed"]).constants(),
        "prng": datasets.PRNG_ID, "lr_schedule": "eta0 * (1 + t) ** -decay_rate",
        "results": summary, "workers": n_workers, "seconds": time.perf_counter() - t0,
        "python": platform.python_version(), "numpy": np.__version__,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    for method, s in summary.items():
        print(f"{method:<9} {eff['dataset']:<8} epochs={eff['epochs']} "
              f"NLL {s['mean']:.3f} +- {s['std']:.3f} over {len(s['values'])} runs")
    print(f"artifacts: {out}")
    return 0


# -- few-shot -----------------------------------------------------------------------

FEWSHOT_DEFAULTS = {"l": [1, 7, 10], "mu": [0.05], "tasks": 20, "seeds": 5, "steps": 100,
                    "task_seed0": 0}


def _fewshot_job(args):
    ts, eff = args
    return fs.sweep([ts], eff["l"], eff["mu"], list(range(int(eff["seeds"]))), int(eff["steps"]))


def ordering_report(rows) -> list[str]:
    keys = sorted({(r["l"], r["mu"]) for r in rows})
    lines = []
    means = {}
    for l, mu in keys:
        acc = np.array([r["accuracy"] for r in rows if r["l"] == l and r["mu"] == mu])
        means[(l, mu)] = acc.mean()
        lines.append(f"l={l:<3} mu={mu:<5} accuracy {acc.mean():.4f} +- {acc.std(ddof=1) if len(acc) > 1 else 0.0:.4f} (n={len(acc)})")
    ls = sorted({k[0] for k in keys})
    for mu in sorted({k[1] for k in keys}):
        seq = [means[(l, mu)] for l in ls if (l, mu) in means]
        mono = all(b >= a for a, b in zip(seq[:-1], seq[1:]))
        lines.append(f"mu={mu}: accuracy nondecreasing in l: {'yes' if mono else 'no'}")
    return lines


def cmd_fewshot(args) -> int:
    flags = {"l": args.l, "mu": args.mu, "tasks": args.tasks, "seeds": args.seeds, "steps": args.steps}
    eff = _merge(flags, _load_config(args.config), FEWSHOT_DEFAULTS)
    for k, cast in (("l", int), ("mu", float)):
        if isinstance(eff[k], str):
            eff[k] = _parse_list(eff[k], cast)
    if any(not 1 <= l <= 10 for l in eff["l"]) or any(m < 0 for m in eff["mu"]) \
            or int(eff["tasks"]) < 1 or int(eff["seeds"]) < 1:
        print("error: need 1 <= l <= 10, mu >= 0, tasks >= 1, seeds >= 1", file=sys.stderr)
        return 2
    key = config_hash({"command": "fewshot", **eff})
    out = Path(args.out) / key
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(eff["task_seed0"]) + t for t in range(int(eff["tasks"]))]
    jobs = [(t, eff) for t in seeds]
    n_workers = worker_count(len(jobs))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as ex:
            parts = list(ex.map(_fewshot_job, jobs))
    else:
        parts = [_fewshot_job(j) for j in jobs]
    rows = [r for p in parts for r in p]
    _write_csv(out / "fewshot.csv", ["task", "l", "mu", "seed", "accuracy"],
               [[r["task"], r["l"], r["mu"], r["seed"], f"{r['accuracy']:.6f}"] for r in rows])
    report = ordering_report(rows)
    (out / "summary.txt").write_text("\n".join(report) + "\n")
    manifest = {"hash": key, "version": __version__, "command": "fewshot", "config": eff,
                "generator": fs.GeneratorConfig().to_dict(), "dims": fs.DIMS.__dict__,
                "workers": n_workers}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print("\n".join(report))
    print(f"artifacts: {out}")
    return 0


# -- the rest ----------------------------------------------------------------------

def cmd_validate(args) -> int:
    checks = validate.run_all()
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_appendix_c(args) -> int:
    print("noise-free data")
    print(linreg.format_table(linreg.comparison_table(noise=0.0)))
    print("\nnoisy data (sigma = 0.1)")
    print(linreg.format_table(linreg.comparison_table(noise=0.1)))
    return 0


def cmd_export_data(args) -> int:
    ds = datasets.load(args.dataset, args.seed)
    path = Path(args.output or f"{args.dataset}_seed{args.seed}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    datasets.to_csv(ds, path)
    print(f"wrote {len(ds.points)} points to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cstarnet", description="Networks with function-valued parameters.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("density", help="train density estimators and write an NLL table")
    d.add_argument("--method", type=lambda s: _parse_list(s, str), default=None,
                   help="comma list of standard, discrete, ours (default ours)")
    d.add_argument("--dataset", choices=sorted(datasets.GENERATORS), default=None)
    d.add_argument("--epochs", type=int, default=None)
    d.add_argument("--repeats", type=int, default=None)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--mu", type=float, default=None)
    d.add_argument("--lambda-tilde", type=float, default=None)
    d.add_argument("--grid", type=int, default=None, help="heatmap resolution")
    d.add_argument("--n-mc-eval", type=int, default=None)
    d.add_argument("--reg-unscaled", action="store_true",
                   help="do not scale the regularization step by the learning rate")
    d.add_argument("--config", default=None, help="JSON config or a previous manifest.json")
    d.add_argument("--out", default="runs")
    d.set_defaults(func=cmd_density)

    f = sub.add_parser("fewshot", help="few-shot accuracy sweeps over l and mu")
    f.add_argument("--l", type=lambda s: _parse_list(s, int), default=None)
    f.add_argument("--mu", type=lambda s: _parse_list(s, float), default=None)
    f.add_argument("--tasks", type=int, default=None)
    f.add_argument("--seeds", type=int, default=None)
    f.add_argument("--steps", type=int, default=None)
    f.add_argument("--config", default=None)
    f.add_argument("--out", default="runs")
    f.set_defaults(func=cmd_fewshot)

    v = sub.add_parser("validate", help="run the property checks")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("appendix-c", help="separate vs simultaneous linear regressions")
    a.set_defaults(func=cmd_appendix_c)

    e = sub.add_parser("export-data", help="write a toy dataset to CSV")
    e.add_argument("--dataset", choices=sorted(datasets.GENERATORS), default="swiss")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output", "-o", default=None)
    e.set_defaults(func=cmd_export_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return int(args.func(args))


if __name__ == "__main__":
    raise SystemExit(main())
