"""Command-line entry point: generate, inject, train, eval, sweep.

Exit codes: 0 success, 1 validation/config error, 2 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datasets import DatasetFormatError, load_csv, save_csv
from .experiment import (SWEEP_PARAMS, ConfigError, build_config, dump_config, generate,
                         load_config, parse_config_text, run, summarize, sweep, write_metrics_csv,
                         write_results_csv)
from .metrics import accuracy
from .model import ParamSet
from .noise import NoiseSpec, inject, parse_pair_map
from .rng import substream
from .trainer import TrainingDiverged

log = logging.getLogger("rectmeta")


def _config_values(path: str | None) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}


def cmd_generate(args) -> int:
    values = _config_values(args.config)
    for key in ("source", "n", "c", "d", "spread", "separation"):
        v = getattr(args, key if key != "source" else "kind")
        if v is not None:
            values[f"data.{key}"] = str(v)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = build_config(values)
    if cfg.data.source == "csv":
        raise ConfigError("generate needs a synthetic source (blobs or rings)")
    ds = generate(cfg.data, substream(cfg.seed, "data"))
    save_csv(ds, args.out)
    counts = np.bincount(ds.clean_labels, minlength=ds.n_classes)
    print(f"wrote {len(ds)} rows to {args.out}; class counts {counts.tolist()}")
    return 0


def cmd_inject(args) -> int:
    values = _config_values(args.config)
    kind = args.kind or values.get("noise.kind")
    rho = args.rho if args.rho is not None else float(values.get("noise.rho", "0"))
    pairs = args.pairs or values.get("noise.pairs", "")
    seed = args.seed if args.seed is not None else int(values.get("seed", "0"))
    if kind is None:
        raise ConfigError("noise kind is required (--kind or noise.kind)")
    if kind in ("asymmetric", "mixed") and not pairs:
        raise ConfigError(f"--pairs is required for {kind} noise")
    ds = load_csv(args.input)
    pair_map = parse_pair_map(pairs, ds.n_classes) if pairs else None
    spec = NoiseSpec(kind, rho, pair_map, seed)
    ds.noisy_labels, report = inject(ds.clean_labels, ds.n_classes, spec, substream(seed, "noise"))
    save_csv(ds, args.out)
    print(report.summary())
    return 0


def _experiment(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _experiment(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))

    def progress(state, row):
        log.info("epoch %d ce=%.4f meta=%.5f val=%.4f lc=%.4f", row.epoch, row.ce_loss,
                 row.meta_loss, row.val_accuracy, row.label_correction_accuracy)

    res = run(cfg, checkpoint_dir=out / "checkpoints", callback=progress)
    write_metrics_csv(res.history, out / "metrics.csv")
    res.state.params.save(out / "final.params")
    if res.report is not None:
        print(f"noise: {res.report.summary()}")
    last = res.history[-1]
    print(f"final val_accuracy={last.val_accuracy:.4f} "
          f"label_correction_accuracy={last.label_correction_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    params = ParamSet.load(args.params)
    ds = load_csv(args.data, n_classes=params.spec.n_classes)
    report = accuracy(params, ds)
    if args.out:
        report.to_csv(args.out)
    print(report.summary())
    return 0


def _grid_value(param: str, text: str):
    if param == "q":
        return int(text)
    if param == "weighting":
        return text
    return float(text)


def cmd_sweep(args) -> int:
    base = _experiment(args)
    grid = [_grid_value(args.param, t) for t in args.grid.split(",") if t.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    rows = sweep(base, args.param, grid, seeds, jobs=args.jobs)
    out = Path(args.results or Path(base.out) / f"sweep_{args.param}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(rows, out)
    for v, (m, se) in summarize(rows).items():
        print(f"{args.param}={v}: val_accuracy {m:.4f} +/- {se:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rectmeta", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("--config")
    g.add_argument("--kind", choices=["blobs", "rings"])
    g.add_argument("--n", type=int)
    g.add_argument("--c", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--spread", type=float)
    g.add_argument("--separation", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("inject", help="corrupt the labels of a CSV dataset")
    i.add_argument("--config")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--kind", choices=["symmetric", "asymmetric", "mixed"])
    i.add_argument("--rho", type=float)
    i.add_argument("--pairs", help="'adjacent' or '0:1,2:3'")
    i.add_argument("--seed", type=int)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_inject)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset (clean labels)")
    e.add_argument("--params", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="per-class report CSV")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train+eval over a parameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--grid", required=True, help="comma-separated values")
    s.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--results", help="results CSV path (default OUT/sweep_PARAM.csv)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, ad.NonFiniteError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
