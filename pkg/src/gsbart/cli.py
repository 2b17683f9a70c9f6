"""Command-line interface.

Exit status: 0 on success, 1 when inputs fail validation, 2 on any other
failure.  Tables are written as TSV with a header row.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import WORKERS_ENV, ConfigError, load_config
from .data import Schema, SchemaError, load_dataset, load_schema, write_table
from .model import (
    diagnostic_report,
    fit,
    partial_dependence,
    predict,
    root_split_tables,
    variable_importance,
)
from .store import PosteriorStore, StoreError
from .synthetic import SYNTH_KINDS, generate_synthetic

__all__ = ["main", "build_parser"]

log = logging.getLogger("gsbart")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _workers(store: PosteriorStore | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if w < 1:
            raise ConfigError(f"{WORKERS_ENV} must be at least 1")
        return w
    if store is not None:
        return int(store.meta.get("config", {}).get("workers", 1))
    return 1


def _level(value: str) -> float:
    v = float(value)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def parse_grid(text: str) -> np.ndarray:
    """``a,b,c`` lists values; ``start:stop:num`` spaces ``num`` values evenly."""
    try:
        if ":" in text:
            a, b, k = text.split(":")
            if int(k) < 1:
                raise ValueError
            return np.linspace(float(a), float(b), int(k))
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}; use 'a,b,c' or 'start:stop:num'") from None
    if not vals:
        raise ConfigError("empty grid")
    return np.array(vals)


def _store_schema(store: PosteriorStore, data_path) -> Schema:
    """Schema saved at training time, keeping only the optional columns present in ``data_path``."""
    saved = store.meta.get("schema")
    if saved is None:
        raise StoreError("store lacks a schema; pass --schema")
    schema = Schema(**saved)
    with open(data_path) as fh:
        first = fh.readline()
    header = [h.strip() for h in first.rstrip("\n").split("\t" if "\t" in first else ",")]
    return replace(schema, **{k: (getattr(schema, k) if getattr(schema, k) in header else None)
                              for k in ("offset", "split", "truth")})


def _load_for_store(args, store):
    if not Path(args.data).is_file():
        raise SchemaError(f"data file not found: {args.data}")
    schema = load_schema(args.schema) if args.schema else _store_schema(store, args.data)
    return load_dataset(args.data, schema, store.meta["model"], test_fraction=0.0, require_response=False)


def _train_mask(store, ds):
    """Rows used for training when ``ds`` is the training file itself, else all rows count as test.

    A split column in the data wins; otherwise the random split saved at
    training time is reused if the row count matches.
    """
    split = store.meta.get("schema", {}).get("split")
    if split and split in ds.columns:
        return ds.train_mask
    saved = store.meta.get("train_mask")
    if saved is not None and len(saved) == ds.n:
        return np.array(saved, dtype=bool)
    return np.zeros(ds.n, dtype=bool)


# ------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.sampler.seed = args.seed
    schema = load_schema(args.schema)
    ds = load_dataset(args.data, schema, cfg.model, cfg.test_fraction, seed=[cfg.sampler.seed, 2])
    if args.dump_split_tables:
        rows = root_split_tables(ds, cfg)
        write_table(args.dump_split_tables, ["graph", "label", "vertex", "leaf", "edge_type", "right_count",
                                             "log_ratio"], rows)

    def progress(c, sweep):
        if args.verbose:
            log.info("fit %d sweep %d/%d", c, sweep + 1, cfg.sampler.n_sweeps)

    store = fit(ds, cfg, progress)
    store.meta["schema"] = vars(schema)
    store.meta["train_mask"] = [int(b) for b in ds.train_mask]
    store.save(args.out)
    log.info("saved %d draws to %s", store.n_draws, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    store = PosteriorStore.load(args.model_store)
    ds = _load_for_store(args, store)
    pred = predict(store, ds, seed=args.seed, level=args.level, workers=_workers(store))
    mask = _train_mask(store, ds)
    header, rows = pred.rows(mask if (~mask).any() else None)
    write_table(args.out, header, rows)
    return EXIT_OK


def cmd_importance(args) -> int:
    store = PosteriorStore.load(args.model_store)
    rows, any_split = variable_importance(store)
    if not any_split:
        log.warning("no split recorded in any retained draw; shares reported as 0")
    write_table(args.out, ["label", "count", "share", "no_splits"],
                [(k, c, s, int(not any_split)) for k, c, s in rows])
    return EXIT_OK


def cmd_pd(args) -> int:
    store = PosteriorStore.load(args.model_store)
    ds = _load_for_store(args, store)
    if args.grid:
        grid = parse_grid(args.grid)
    else:
        x = ds.feature(args.feature)
        grid = np.linspace(x.min(), x.max(), 20)
    rows = partial_dependence(store, ds, args.feature, grid, args.level, _workers(store))
    write_table(args.out, ["value", "quantity", "mean", "lower", "upper"], rows)
    return EXIT_OK


def cmd_synth(args) -> int:
    syn = generate_synthetic(args.kind, args.n, args.sigma, args.seed)
    header, rows = syn.header_and_rows()
    write_table(args.out, header, rows)
    if syn.graph is not None:
        if args.edges_out is None:
            raise ConfigError("graph-step data needs --edges-out for the lattice edge list")
        lines = [f"{a} {b}" for a, b in syn.graph.edges]
        Path(args.edges_out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_diag(args) -> int:
    store = PosteriorStore.load(args.model_store)
    ds = _load_for_store(args, store)
    ds.train_mask = _train_mask(store, ds)
    rows = diagnostic_report(store, ds, args.level, args.seed, _workers(store))
    write_table(args.out, ["section", "fit", "index", "metric", "value"], rows)
    return EXIT_OK


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsbart", description="Graph-split Bayesian additive regression trees.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model and save its posterior store")
    t.add_argument("--data", required=True)
    t.add_argument("--schema", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="posterior store directory")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--dump-split-tables", metavar="PATH",
                   help="write the first tree's initial split tables as TSV (debugging)")
    t.set_defaults(func=cmd_train)

    def store_cmd(name, func, helptext, data=True):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--model-store", required=True)
        if data:
            s.add_argument("--data", required=True)
            s.add_argument("--schema", help="defaults to the schema saved with the model")
            s.add_argument("--level", type=_level, default=0.95)
            s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default="-")
        s.set_defaults(func=func)
        return s

    store_cmd("predict", cmd_predict, "posterior means and intervals for every row")
    store_cmd("importance", cmd_importance, "split counts per feature or graph", data=False)
    pd = store_cmd("pd", cmd_pd, "partial dependence of one feature")
    pd.add_argument("--feature", required=True)
    pd.add_argument("--grid", help="'a,b,c' or 'start:stop:num'; default 20 points over the data range")
    store_cmd("diag", cmd_diag, "traces, effective sample sizes and coverage")

    s = sub.add_parser("synth", help="generate synthetic data")
    s.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="-")
    s.add_argument("--edges-out", help="edge-list path for graph-step data")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported, mapped to the runtime exit status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
