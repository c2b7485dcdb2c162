import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from scoretree import __version__
from scoretree.core.config import settings
from scoretree.core.errors import InvalidParameterError, ScoreTreeError
from scoretree.core.logging import configure_logging
from scoretree.db.datasets import load_csv, load_predictors, save_csv
from scoretree.db.models import load_model, save_model
from scoretree.db.results import read_results, read_table, write_table
from scoretree.schemas.experiment import ExperimentConfig
from scoretree.schemas.scoring import INTERVAL_KINDS, ScoreKind, ScoringRule
from scoretree.schemas.tree import TreeConfig
from scoretree.services import bench, synth
from scoretree.services.tree import apply, evaluate, fit, summarize, parse_summary, tree_stats

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_USAGE = 2

USAGE_ERRORS = (InvalidParameterError, ValidationError)


def _rule(score: str, alpha: float) -> ScoringRule:
    """'is1' with --alpha 0.2 and 'is1:0.2' mean the same rule."""
    text = score.strip().lower()
    if ":" not in text and text in {k.value for k in INTERVAL_KINDS}:
        text = f"{text}:{alpha}"
    return ScoringRule.parse(text)


def _print_stats(tree) -> None:
    stats = tree_stats(tree)
    print(f"depth={stats.depth} leaves={stats.leaf_count} splits={len(stats.splits)}")
    for s in stats.splits:
        print(f"  node {s.node} (depth {s.depth}, n={s.n}): {s.describe()} delta={s.delta:.6g}")


# --- Handlers ---

def cmd_fit(args: argparse.Namespace) -> None:
    config = TreeConfig(
        rule=_rule(args.score, args.alpha),
        max_depth=args.depth,
        min_node_size=args.min_node,
        quantile_step=args.quantile_step,
        kappa=args.kappa,
        discrete_unique_cutoff=args.discrete_cutoff,
        seed=args.seed,
    )
    dataset = load_csv(args.data, args.response)
    tree = fit(dataset, config)
    save_model(tree, args.out)
    _print_stats(tree)


def cmd_predict(args: argparse.Namespace) -> None:
    name, _ = parse_summary(args.summary)
    tree = load_model(args.model)
    frame = load_predictors(args.data, tree.feature_names, tree.feature_kinds)
    leaves = apply(tree, frame)
    if name == "samples":
        values = [" ".join(repr(float(v)) for v in tree.nodes[int(t)].ecdf.samples) for t in leaves]
        column = "samples"
    else:
        cache = {int(t): summarize(tree.nodes[int(t)].ecdf, args.summary) for t in np.unique(leaves)}
        values = [cache[int(t)] for t in leaves]
        column = args.summary.strip().lower()
    out = pd.DataFrame({"row": np.arange(len(leaves)), "leaf": leaves, column: values})
    write_table(out, args.out)


def cmd_eval(args: argparse.Namespace) -> None:
    rule = _rule(args.score, args.alpha)
    tree = load_model(args.model)
    dataset = load_csv(args.data, tree.response_name if args.response is None else args.response,
                       dict(zip(tree.feature_names, tree.feature_kinds)))
    total = evaluate(tree, dataset, rule)
    mean = total / dataset.n if dataset.n else 0.0
    print(f"score={rule} n={dataset.n} total={total:.10g} mean={mean:.10g}")


def cmd_synth(args: argparse.Namespace) -> None:
    dataset = synth.generate(synth.preset(args.preset), args.n, args.seed)
    save_csv(dataset, args.out)


def cmd_scan(args: argparse.Namespace) -> None:
    rule = _rule(args.score, args.alpha)
    bench.check_grid_step(args.grid_step)
    dataset = load_csv(args.data, args.response)
    result = bench.criterion_scan(dataset, rule, bench.scan_grid(dataset, args.grid_step))
    write_table(result.points, args.out, [f"score={rule} argmin={result.argmin!r}"])
    print(f"argmin={result.argmin:g}")


def _load_experiment(path: str) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise InvalidParameterError(f"cannot parse {path}: {e}")
    if not isinstance(document, dict):
        raise InvalidParameterError(f"{path} must hold a mapping")
    return ExperimentConfig.model_validate(document)


def cmd_bench(args: argparse.Namespace) -> None:
    config = _load_experiment(args.config)
    logger.info("Running %s (config %s) on %d thread(s)", args.config, config.config_hash()[:16], args.threads)
    results = bench.run_experiment(config, threads=args.threads)
    written = bench.write_benchmark(results, args.out_dir)
    print(f"{len(results.frame)} records; wrote {', '.join(sorted(written))} to {args.out_dir}")


def cmd_tune(args: argparse.Namespace) -> None:
    results = bench.ExperimentResults(frame=read_results(args.results))
    choice = bench.tune_kappa(results, _rule(args.score, args.alpha), args.train_size, args.sample)
    for kappa, mean in choice.means.items():
        print(f"kappa={kappa:g} mean_{args.sample}={mean:.10g}")
    print(f"kappa_star={choice.kappa_star:g}")


def cmd_audit(args: argparse.Namespace) -> None:
    bench.check_margin(args.margin)
    models = Path(args.models)
    index = read_table(models / "index.csv")
    if args.build is not None:
        index = index[index["build"] == str(_rule(args.build, args.alpha))]
    if args.kappa is not None:
        index = index[np.isclose(index["kappa"], args.kappa)]
    if args.train_size is not None:
        index = index[index["train_size"] == args.train_size]
    trees = [load_model(models / name) for name in index["file"]]
    report = bench.split_recovery_audit(trees, args.true_splits, args.margin)
    for v, rate in report.recovery_rate.items():
        print(f"split {v:g}: recovered in {rate:.0%} of {report.n_trees} trees")
    print(f"mean incorrect splits: {report.mean_incorrect:.3g}")


# --- Parser ---

def _add_score(p: argparse.ArgumentParser, default: str = "crps") -> None:
    p.add_argument("--score", default=default, help=f"one of {', '.join(k.value for k in ScoreKind)}; is1/is2 take --alpha or is1:ALPHA")
    p.add_argument("--alpha", type=float, default=settings.ALPHA)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoretree", description="Scoring-rule regression trees with ECDF leaves.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        type=str.upper)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="grow a tree on a CSV and save it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--response", required=True)
    _add_score(p)
    p.add_argument("--depth", type=int, default=settings.DEPTH)
    p.add_argument("--min-node", type=int, default=settings.MIN_NODE_SIZE)
    p.add_argument("--quantile-step", type=float, default=settings.QUANTILE_STEP)
    p.add_argument("--kappa", type=float, default=settings.KAPPA)
    p.add_argument("--discrete-cutoff", type=int, default=settings.DISCRETE_UNIQUE_CUTOFF)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("predict", help="predict leaf distributions for CSV rows")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--summary", default="mean", help="mean, quantile:p or samples")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", help="total score of a saved model on a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--response", default=None, help="defaults to the model's response column")
    _add_score(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("synth", help="draw a synthetic dataset")
    p.add_argument("--preset", required=True, choices=sorted(synth.PRESETS))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("scan", help="split criterion over a threshold grid")
    p.add_argument("--data", required=True)
    p.add_argument("--response", default="y")
    _add_score(p)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_scan)

    p = sub.add_parser("bench", help="run a replicated experiment")
    p.add_argument("--config", required=True, help="YAML or JSON experiment document")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=settings.THREADS)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("tune", help="pick kappa* from a results table")
    p.add_argument("--results", required=True)
    _add_score(p)
    p.add_argument("--train-size", type=int, default=None)
    p.add_argument("--sample", choices=["out", "in"], default="out")
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("audit", help="split recovery over saved models")
    p.add_argument("--models", required=True)
    p.add_argument("--true-splits", type=_float_list, required=True)
    p.add_argument("--margin", type=float, default=settings.MARGIN)
    p.add_argument("--build", default=None)
    p.add_argument("--alpha", type=float, default=settings.ALPHA)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--train-size", type=int, default=None)
    p.set_defaults(handler=cmd_audit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.handler(args)
    except USAGE_ERRORS as e:
        print(f"scoretree {args.command}: {_one_line(e)}", file=sys.stderr)
        return EXIT_USAGE
    except (ScoreTreeError, OSError, KeyError) as e:
        print(f"scoretree {args.command}: {_one_line(e)}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def _one_line(e: Exception) -> str:
    if isinstance(e, ValidationError):
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        return f"invalid {where}: {first['msg']}" if where else first["msg"]
    return " ".join(str(e).split())
