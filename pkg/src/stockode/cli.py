"""``stockode`` command line: synth, train, eval, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path


from stockode.checkpoint import load_checkpoint, save_checkpoint
from stockode.config import RunConfig, load_run_config, parse_run_config
from stockode.errors import ConfigError, DataError, DeterminismError, NumericError, StockODEError
from stockode.evalkit import DailyEvaluation, average_reports, backtest_topk, export_trajectories, write_heatmap
from stockode.hhcn import build_hypergraph
from stockode.market import (
    Normalizer,
    load_bars,
    load_relations,
    load_universe,
    prepare_dataset,
    synth_market,
    write_bars,
    write_relations,
    write_universe,
)
from stockode.model import VARIANTS, StockODE
from stockode.numerics import no_grad
from stockode.training import gradient_check, model_from_checkpoint, train, write_metric_log

log = logging.getLogger("stockode")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_MAX_STOCKS = 8
GRADCHECK_MAX_WINDOW = 6


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fractions(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--fractions expects comma-separated numbers, got {text!r}") from None


def _seeds(text: str) -> list:
    try:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds):
        raise UsageError(f"--seeds needs distinct integers, got {text!r}")
    return seeds


def _load_market(rc: RunConfig):
    rc.require("universe", "bars", "relations")
    universe = load_universe(rc.universe)
    bars = load_bars(rc.bars, universe)
    relations = load_relations(rc.relations, universe)
    return universe, bars, relations


def _graph_for(rc: RunConfig, relations, universe):
    return build_hypergraph(relations, universe) if len(relations) else None


# -- synth -------------------------------------------------------------------
def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    m = synth_market(args.stocks, args.days, args.hyperedges, args.signal, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    write_universe(out / "universe.txt", m.universe)
    write_bars(out / "bars.csv", m.bars)
    write_relations(out / "relations.txt", m.relations, m.universe)
    with open(out / "oracle.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "score"])
        for t, s in zip(m.universe.tickers, m.scores):
            w.writerow([t, repr(float(s))])
    log.info("wrote synthetic market (%d stocks, %d days) to %s", args.stocks, args.days, out)
    return EXIT_OK


# -- train -------------------------------------------------------------------
def cmd_train(args) -> int:
    overrides = {"variant": args.variant} if args.variant else {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.out:
        overrides["out_dir"] = str(Path(args.out).resolve())
    rc = load_run_config(args.config, overrides)
    rc.log_resolved()
    universe, bars, relations = _load_market(rc)
    ds = prepare_dataset(bars, universe.tickers, rc.model.w, rc.split, price_mode=rc.price_mode)
    graph = _graph_for(rc, relations, universe)
    if args.seeds:
        runs = [(dataclasses.replace(rc.model, seed=s), rc.out_dir / f"seed{s}") for s in _seeds(args.seeds)]
    else:
        runs = [(rc.model, rc.out_dir)]
    for cfg, out in runs:
        result = train(ds, graph, cfg)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint.meta["price_mode"] = rc.price_mode
        save_checkpoint(out / "checkpoint.bin", result.checkpoint)
        write_metric_log(out / "metrics.csv", result.history)
        log.info("seed %d: best epoch %d; wrote %s and %s", cfg.seed, result.best_epoch, out / "checkpoint.bin",
                 out / "metrics.csv")
    return EXIT_OK


# -- eval --------------------------------------------------------------------
def _evaluate_checkpoint(path, rc: RunConfig, universe, bars, relations, split: str):
    ckpt = load_checkpoint(path)
    tickers = ckpt.meta.get("tickers")
    if tickers is not None and list(tickers) != list(universe.tickers):
        raise ConfigError(f"{path}: checkpoint was trained on a different stock universe")
    graph = _graph_for(rc, relations, universe)
    if graph is not None and ckpt.meta.get("n_edges", graph.n_edges) != graph.n_edges:
        raise ConfigError(f"{path}: checkpoint expects {ckpt.meta['n_edges']} hyperedges, "
                          f"relations give {graph.n_edges}")
    normalizer = Normalizer.from_arrays(ckpt.arrays)
    price_mode = ckpt.meta.get("price_mode", rc.price_mode)
    ds = prepare_dataset(bars, universe.tickers, ckpt.config.w, rc.split, normalizer, price_mode=price_mode)
    windows = getattr(ds, split)
    if not windows:
        raise DataError(f"{split} split is empty")
    model = model_from_checkpoint(ckpt, graph)
    with no_grad():
        evals = [DailyEvaluation(w.target_day, model.predict(w).r_hat, w.target) for w in windows]
    return model, windows, evals


def cmd_eval(args) -> int:
    rc = load_run_config(args.config)
    rc.log_resolved()
    universe, bars, relations = _load_market(rc)
    k = args.k if args.k is not None else rc.k
    runs = [_evaluate_checkpoint(p, rc, universe, bars, relations, args.split) for p in args.checkpoint]
    reports = [backtest_topk(evals, k) for _, _, evals in runs]
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    if len(reports) == 1:
        text = reports[0].to_json()
    else:
        text = json.dumps(average_reports(reports), sort_keys=True, indent=2) + "\n"
    Path(args.report).write_text(text, encoding="utf-8")
    for path, rep in zip(args.checkpoint, reports):
        log.info("%s: sr=%s mrr=%.6f ndcg5=%.6f", path, rep.sr, rep.mrr, rep.ndcg5)
    log.info("wrote %s", args.report)

    # exports describe the first checkpoint
    model, windows, evals = runs[0]
    if args.fractions:
        path = args.trajectories or str(Path(args.report).with_name("trajectories.csv"))
        export_trajectories(model, windows, _fractions(args.fractions), path)
        log.info("wrote trajectories to %s", path)
    if args.heatmap:
        stocks = range(min(args.heatmap_stocks, len(universe)))
        days = range(min(args.heatmap_days, len(evals)))
        write_heatmap(args.heatmap, evals, stocks, days, universe.tickers)
        log.info("wrote heat map to %s", args.heatmap)
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    overrides = {"d": args.d, "beta": args.beta, "w": args.window, "seed": args.seed}
    if args.variant:
        overrides["variant"] = args.variant
    if args.config:
        rc = load_run_config(args.config, overrides)
    else:
        rc = parse_run_config("", overrides=overrides)
    rc.log_resolved()
    if rc.model.w > GRADCHECK_MAX_WINDOW:
        raise ConfigError(f"gradcheck needs w <= {GRADCHECK_MAX_WINDOW}, got {rc.model.w}")
    if rc.bars is not None:
        universe, bars, relations = _load_market(rc)
    else:
        if args.stocks > GRADCHECK_MAX_STOCKS:
            raise ConfigError(f"gradcheck needs at most {GRADCHECK_MAX_STOCKS} stocks, got {args.stocks}")
        m = synth_market(args.stocks, args.days, args.hyperedges, 1.0, args.seed)
        universe, bars, relations = m.universe, m.bars, m.relations
    if len(universe) > GRADCHECK_MAX_STOCKS:
        raise ConfigError(f"gradcheck needs at most {GRADCHECK_MAX_STOCKS} stocks, got {len(universe)}")
    ds = prepare_dataset(bars, universe.tickers, rc.model.w, rc.split, price_mode=rc.price_mode)
    model = StockODE(rc.model, _graph_for(rc, relations, universe))
    rep = gradient_check(model, ds.train[0], 0.0 if args.at_init else args.jitter, rc.model.seed, args.precision,
                         args.fd_step)
    print(f"max_relative_error={rep.max_error:.3e} worst_param={rep.worst_param} "
          f"index={tuple(int(i) for i in rep.worst_index)} analytic={rep.analytic!r} "
          f"numeric={rep.numeric!r} checked={rep.n_checked}")
    if not rep.max_error < args.threshold:
        log.error("gradient check failed: %.3e >= %.3e at %s", rep.max_error, args.threshold, rep.worst_param)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stockode", description="Stock ranking with neural ODE dynamics and hypergraph knowledge.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic market with a planted ranking")
    s.add_argument("--out", required=True)
    s.add_argument("--stocks", type=int, default=16)
    s.add_argument("--days", type=int, default=400)
    s.add_argument("--hyperedges", type=int, default=6)
    s.add_argument("--signal", type=float, default=1.0, help="signal strength (0 = no planted ranking)")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("config")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--seeds", help="comma-separated seeds; one run per seed under <out>/seed<N>/")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="backtest a checkpoint")
    e.add_argument("config")
    e.add_argument("--checkpoint", required=True, nargs="+",
                   help="one checkpoint, or several seeded runs whose metrics are averaged")
    e.add_argument("--report", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--k", type=int, help="portfolio size (default: config k, 5)")
    e.add_argument("--fractions", help="comma-separated fractional times in (0, 1] for trajectory export")
    e.add_argument("--trajectories", help="trajectory CSV path (default: next to the report)")
    e.add_argument("--heatmap", help="write a rank heat-map CSV to this path")
    e.add_argument("--heatmap-stocks", type=int, default=20)
    e.add_argument("--heatmap-days", type=int, default=20)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full loss gradient")
    g.add_argument("config", nargs="?")
    g.add_argument("--stocks", type=int, default=4)
    g.add_argument("--days", type=int, default=80)
    g.add_argument("--hyperedges", type=int, default=2)
    g.add_argument("--window", type=int, default=5)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--beta", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--variant", choices=VARIANTS)
    g.add_argument("--threshold", type=float, default=1e-5)
    g.add_argument("--precision", choices=("double", "extended"), default="extended",
                   help="arithmetic used for the finite differences")
    g.add_argument("--fd-step", type=float, default=1e-4, help="central-difference step")
    g.add_argument("--jitter", type=float, default=0.1, help="uniform parameter shift before checking")
    g.add_argument("--at-init", action="store_true", help="check at the initial parameters (no jitter)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    try:
        args = build_parser().parse_args(argv)
        if args.quiet:
            logging.getLogger().setLevel(logging.WARNING)
        return args.func(args)
    except (NumericError, DeterminismError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ConfigError, StockODEError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
