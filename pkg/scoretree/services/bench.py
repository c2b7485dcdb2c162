"""
Replicated score-tree experiments: every (build score, kappa) tree evaluated
under every eval score, in sample and out of sample, with common random
numbers inside each replicate; plus the statistics computed on top.
"""
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from scoretree.core.errors import ExperimentError, InvalidParameterError, MissingCellError, ScoreTreeError
from scoretree.db.datasets import Dataset, load_csv
from scoretree.db.models import save_model
from scoretree.db.results import RESULT_COLUMNS, provenance_line, write_table
from scoretree.schemas.dataset import ColumnKind
from scoretree.schemas.experiment import (
    AuditReport,
    BootstrapSource,
    ExperimentConfig,
    HypothesisTest,
    KappaChoice,
    OptimalComparison,
    SyntheticSource,
)
from scoretree.schemas.scoring import ScoringRule
from scoretree.services import synth
from scoretree.services.scoring import variance_floor_for
from scoretree.services.tree import PredictiveTree, evaluate, fit, prune, split_objective, tree_stats

logger = logging.getLogger(__name__)

RuleLike = Union[ScoringRule, str]
TreeKey = Tuple[int, int, str, float]

CONFIDENCE = 0.95
PVALUE_ORIENTATION = (
    "one-sided paired t-test per (eval, build): H0 mean(O_eval(eval) - O_eval(build)) <= 0; "
    "small p means the eval-built tree scored worse"
)


def _label(rule: RuleLike) -> str:
    return str(rule if isinstance(rule, ScoringRule) else ScoringRule.parse(rule))


@dataclass
class ExperimentResults:
    """Tidy I/O score table keyed by (train_size, replicate, build, kappa, eval)."""
    frame: pd.DataFrame
    config: Optional[ExperimentConfig] = None
    provenance: str = ""
    trees: Dict[TreeKey, PredictiveTree] = field(default_factory=dict)

    @property
    def train_sizes(self) -> List[int]:
        return sorted(int(n) for n in self.frame["train_size"].unique())

    def resolve_train_size(self, train_size: Optional[int]) -> int:
        sizes = self.train_sizes
        if train_size is None:
            if len(sizes) != 1:
                raise InvalidParameterError(f"results hold several train sizes {sizes}; pick one")
            return sizes[0]
        if train_size not in sizes:
            raise MissingCellError(f"no results for train size {train_size}")
        return train_size

    def check_complete(self) -> None:
        """Exactly r x |build| x |kappa| x |eval| finite records per train size."""
        frame = self.frame
        if frame[["in_sample", "out_sample"]].isna().any().any() or not np.isfinite(
            frame[["in_sample", "out_sample"]].to_numpy(dtype=np.float64)
        ).all():
            raise ScoreTreeError("results contain non-finite scores")
        for n, group in frame.groupby("train_size"):
            expected = (
                group["replicate"].nunique() * group["build"].nunique()
                * group["kappa"].nunique() * group["eval"].nunique()
            )
            keys = group[["replicate", "build", "kappa", "eval"]]
            if len(group) != expected or keys.duplicated().any():
                raise ScoreTreeError(f"results for train size {n} are incomplete: {len(group)} of {expected} records")
        if self.config is not None:
            c = self.config
            per_size = c.replicates * len(c.build_scores) * len(c.kappas) * len(c.eval_scores)
            if len(frame) != per_size * frame["train_size"].nunique():
                raise ScoreTreeError(f"expected {per_size} records per train size, found {len(frame)} in total")

    def cell(self, build: RuleLike, eval_rule: RuleLike, kappa: float,
             train_size: Optional[int] = None, column: str = "out_sample") -> pd.Series:
        """Scores of one (build, eval, kappa) cell indexed by replicate."""
        n = self.resolve_train_size(train_size)
        frame = self.frame
        mask = (
            (frame["train_size"] == n)
            & (frame["build"] == _label(build))
            & (frame["eval"] == _label(eval_rule))
            & np.isclose(frame["kappa"], kappa, rtol=0.0, atol=1e-12)
        )
        selected = frame.loc[mask, ["replicate", column]]
        if selected.empty:
            raise MissingCellError(
                f"no results for build={_label(build)} eval={_label(eval_rule)} kappa={kappa} train_size={n}"
            )
        return selected.set_index("replicate")[column].sort_index()

    def kappas(self) -> List[float]:
        return sorted(float(k) for k in self.frame["kappa"].unique())


# --- Data per replicate ---

@functools.lru_cache(maxsize=4)
def _csv_dataset(path: str, response: str, overrides: Tuple[Tuple[str, ColumnKind], ...]) -> Dataset:
    return load_csv(path, response, dict(overrides))


def replicate_data(config: ExperimentConfig, train_size: int, b: int) -> Tuple[Dataset, Dataset]:
    """(training set, test set) for replicate b; seeds derive from base_seed only."""
    source = config.data_source
    seed = config.base_seed + b
    if isinstance(source, SyntheticSource):
        spec = synth.preset(source.preset)
        return synth.generate(spec, train_size, seed), synth.generate(spec, source.test_size, config.test_seed)

    data = _csv_dataset(source.path, source.response, tuple(sorted(source.overrides.items())))
    rng = synth.rng_for(seed)
    if source.train_fraction is None:
        rows = rng.integers(0, data.n, size=data.n)
        out_of_bag = np.setdiff1d(np.arange(data.n), rows)
        return data.take(rows), data.take(out_of_bag)
    order = rng.permutation(data.n)
    n_train = max(1, int(round(source.train_fraction * data.n)))
    return data.take(np.sort(order[:n_train])), data.take(np.sort(order[n_train:]))


def _train_sizes(config: ExperimentConfig) -> List[int]:
    source = config.data_source
    if isinstance(source, SyntheticSource):
        return list(source.train_sizes)
    data = _csv_dataset(source.path, source.response, tuple(sorted(source.overrides.items())))
    return [data.n]


def _run_replicate(config: ExperimentConfig, train_size: int, b: int, keep_trees: bool):
    train, test = replicate_data(config, train_size, b)
    records = []
    trees: Dict[TreeKey, PredictiveTree] = {}
    for build in config.build_scores:
        # growth failures surface under the smallest kappa, the first tree a direct fit would grow
        context = {"train_size": train_size, "b": b, "build": str(build), "kappa": min(config.kappas)}
        try:
            grown = fit(train, config.tree_config(build, kappa=0.0))
        except ScoreTreeError as e:
            raise ExperimentError(context, e)
        # growth of a node never depends on kappa, so every kappa is a cut of one grown tree
        for kappa in config.kappas:
            tree = prune(grown, kappa)
            if keep_trees:
                trees[(train_size, b, str(build), kappa)] = tree
            for eval_rule in config.eval_scores:
                records.append({
                    "replicate": b,
                    "train_size": train_size,
                    "build": str(build),
                    "eval": str(eval_rule),
                    "kappa": kappa,
                    "in_sample": evaluate(tree, train, eval_rule),
                    "out_sample": evaluate(tree, test, eval_rule),
                })
    logger.info("Replicate %d (n=%d) done: %d records", b, train_size, len(records))
    return records, trees


def run_experiment(config: ExperimentConfig, threads: int = 1, keep_trees: bool = True) -> ExperimentResults:
    """
    Replicates run serially or on a process pool; pool.map keeps task order, so
    the table is identical at any worker count.
    """
    tasks = [(n, b) for n in _train_sizes(config) for b in range(config.replicates)]
    sizes = [n for n, _ in tasks]
    reps = [b for _, b in tasks]
    logger.info("Running %d replicate tasks on %d worker(s)", len(tasks), max(threads, 1))
    if threads <= 1:
        outputs = [_run_replicate(config, n, b, keep_trees) for n, b in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_run_replicate, repeat(config), sizes, reps, repeat(keep_trees)))

    records = [rec for recs, _ in outputs for rec in recs]
    trees = {key: tree for _, ts in outputs for key, tree in ts.items()}
    results = ExperimentResults(
        frame=pd.DataFrame(records, columns=RESULT_COLUMNS),
        config=config,
        provenance=provenance_line(config.config_hash(), config.base_seed, config.test_seed),
        trees=trees,
    )
    results.check_complete()
    return results


# --- Statistics ---

def paired_differences(results: ExperimentResults, eval_rule: RuleLike, build: RuleLike, kappa: float,
                       train_size: Optional[int] = None) -> np.ndarray:
    """OD_b = O_b^Eval(Eval, kappa) - O_b^Eval(Build, kappa); negative favours the Eval-built tree."""
    own = results.cell(eval_rule, eval_rule, kappa, train_size)
    other = results.cell(build, eval_rule, kappa, train_size)
    if not own.index.equals(other.index):
        raise MissingCellError("replicates differ between the two cells")
    return (own - other).to_numpy(dtype=np.float64)


def normalized_paired_differences(results: ExperimentResults, eval_rule: RuleLike, build: RuleLike,
                                  kappa: float, train_size: Optional[int] = None) -> np.ndarray:
    """OD_b divided by the sample standard deviation of the OD_b vector."""
    od = paired_differences(results, eval_rule, build, kappa, train_size)
    if od.size < 2:
        return np.full_like(od, np.nan)
    sd = float(np.std(od, ddof=1))
    if sd == 0.0:
        return np.zeros_like(od) if not od.any() else np.full_like(od, np.nan)
    return od / sd


def tune_kappa(results: ExperimentResults, score: RuleLike, train_size: Optional[int] = None,
               sample: str = "out") -> KappaChoice:
    """kappa* = argmin_kappa mean_b O_b^Score(Score, kappa); ties go to the larger kappa."""
    if sample not in ("out", "in"):
        raise InvalidParameterError(f"sample must be 'out' or 'in', got {sample!r}")
    n = results.resolve_train_size(train_size)
    column = "out_sample" if sample == "out" else "in_sample"
    means = {k: float(results.cell(score, score, k, n, column).mean()) for k in results.kappas()}
    best = min(means.values())
    kappa_star = max(k for k, m in means.items() if m == best)
    return KappaChoice(score=_label(score), train_size=n, sample=sample, kappa_star=kappa_star, means=means)


def _t_interval(values: np.ndarray) -> Tuple[float, float]:
    r = values.size
    mean = float(values.mean())
    if r < 2:
        return math.nan, math.nan
    half = float(stats.t.ppf(0.5 + CONFIDENCE / 2.0, r - 1)) * float(np.std(values, ddof=1)) / math.sqrt(r)
    return mean - half, mean + half


def optimal_paired_differences(results: ExperimentResults, eval_rule: RuleLike, build: RuleLike,
                               train_size: Optional[int] = None) -> OptimalComparison:
    """OD*_b with each tree at its own kappa*, plus a t interval and the success probability."""
    n = results.resolve_train_size(train_size)
    kappa_eval = tune_kappa(results, eval_rule, n).kappa_star
    kappa_build = tune_kappa(results, build, n).kappa_star
    own = results.cell(eval_rule, eval_rule, kappa_eval, n)
    other = results.cell(build, eval_rule, kappa_build, n)
    if not own.index.equals(other.index):
        raise MissingCellError("replicates differ between the two cells")
    diffs = (own - other).to_numpy(dtype=np.float64)
    low, high = _t_interval(diffs)
    return OptimalComparison(
        eval=_label(eval_rule),
        build=_label(build),
        train_size=n,
        kappa_eval=kappa_eval,
        kappa_build=kappa_build,
        differences=diffs.tolist(),
        mean=float(diffs.mean()),
        ci_low=low,
        ci_high=high,
        success_probability=float(np.mean(own.to_numpy() <= other.to_numpy())),
    )


def hypothesis_test(results: ExperimentResults, eval_rule: RuleLike, build: RuleLike, kappa: float,
                    train_size: Optional[int] = None) -> HypothesisTest:
    """
    Paired one-sided t-test of H0: the Eval-built tree is at least as good as
    the Build-built tree under Eval. Zero-variance differences return p = 1
    flagged as degenerate.
    """
    n = results.resolve_train_size(train_size)
    own = results.cell(eval_rule, eval_rule, kappa, n).to_numpy(dtype=np.float64)
    other = results.cell(build, eval_rule, kappa, n).to_numpy(dtype=np.float64)
    r = own.size
    if r < 2:
        raise InvalidParameterError("a paired t-test needs at least 2 replicates")
    common = dict(eval=_label(eval_rule), build=_label(build), train_size=n, kappa=kappa, r=r)
    if np.std(own - other) == 0.0:
        logger.warning("Degenerate t-test for eval=%s build=%s kappa=%s: zero variance", common["eval"], common["build"], kappa)
        return HypothesisTest(t_statistic=0.0, p_value=1.0, degenerate=True, **common)
    result = stats.ttest_rel(own, other, alternative="greater")
    return HypothesisTest(t_statistic=float(result.statistic), p_value=float(result.pvalue), **common)


def check_margin(margin: float) -> None:
    if not margin >= 0.0:
        raise InvalidParameterError(f"margin must be non-negative, got {margin}")


def split_recovery_audit(trees: Sequence[PredictiveTree], true_splits: Sequence[float],
                         margin: float) -> AuditReport:
    """
    A tree recovers a true split v when one of its thresholds lies within
    [v - margin, v + margin]; thresholds near no true split count as incorrect.
    """
    check_margin(margin)
    if not trees:
        raise InvalidParameterError("split recovery needs at least one tree")
    hits = {float(v): 0 for v in true_splits}
    incorrect = 0
    for tree in trees:
        if len(tree.feature_names) != 1 or tree.feature_kinds[0] is not ColumnKind.NUMERIC:
            raise InvalidParameterError("split recovery only applies to single numeric-predictor trees")
        thresholds = tree_stats(tree).thresholds
        for v in hits:
            if any(abs(s - v) <= margin + 1e-12 for s in thresholds):
                hits[v] += 1
        incorrect += sum(all(abs(s - v) > margin + 1e-12 for v in hits) for s in thresholds)
    return AuditReport(
        n_trees=len(trees),
        margin=margin,
        true_splits=list(hits),
        recovery_rate={v: count / len(trees) for v, count in hits.items()},
        mean_incorrect=incorrect / len(trees),
    )


# --- Criterion scans ---

@dataclass(frozen=True)
class ScanResult:
    points: pd.DataFrame
    argmin: float


def check_grid_step(step: float) -> None:
    if not step > 0.0:
        raise InvalidParameterError(f"grid step must be positive, got {step}")


def scan_grid(dataset: Dataset, step: float) -> np.ndarray:
    """Multiples of `step` covering the predictor range."""
    check_grid_step(step)
    x = dataset.column_values(0)
    ks = np.arange(math.ceil(x.min() / step), math.floor(x.max() / step) + 1)
    return np.round(ks * step, 12)


def criterion_scan(dataset: Dataset, rule: ScoringRule, grid: Sequence[float]) -> ScanResult:
    """C(s) for every grid point s splitting the single predictor; grid points with an empty side are skipped."""
    if dataset.p != 1 or dataset.feature_kinds[0] is not ColumnKind.NUMERIC:
        raise InvalidParameterError("criterion scans need exactly one numeric predictor")
    floor = variance_floor_for(dataset.response)
    x = dataset.column_values(0)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], dataset.response[order]
    points = []
    for s in grid:
        n_left = int(np.searchsorted(xs, s, side="right"))
        if n_left == 0 or n_left == xs.size:
            continue
        points.append((float(s), split_objective(rule, ys[:n_left], ys[n_left:], floor)))
    if not points:
        raise InvalidParameterError("no grid point splits the data")
    frame = pd.DataFrame(points, columns=["threshold", "objective"])
    return ScanResult(points=frame, argmin=float(frame["threshold"].iloc[int(frame["objective"].to_numpy().argmin())]))


# --- Benchmark outputs ---

def _comparison_pairs(config: ExperimentConfig) -> List[Tuple[ScoringRule, ScoringRule]]:
    builds = list(config.build_scores)
    return [(ev, b) for ev in config.eval_scores if ev in builds for b in builds if b != ev]


def summary_tables(results: ExperimentResults) -> Dict[str, pd.DataFrame]:
    config = results.config
    pairs = _comparison_pairs(config)
    kappa_rows, odstar_rows, paired_rows, pvalue_rows = [], [], [], []
    for n in results.train_sizes:
        for score in config.build_scores:
            if score not in config.eval_scores:
                continue
            for sample in ("out", "in"):
                choice = tune_kappa(results, score, n, sample)
                for kappa, mean in choice.means.items():
                    kappa_rows.append({
                        "train_size": n, "score": choice.score, "sample": sample, "kappa": kappa,
                        "mean_score": mean, "kappa_star": choice.kappa_star,
                    })
        for ev, build in pairs:
            # kappa*(build) is tuned on O^build(build), which only exists for evaluated builds
            if build in config.eval_scores:
                cmp = optimal_paired_differences(results, ev, build, n)
                odstar_rows.append(cmp.model_dump(exclude={"differences"}) | {"r": len(cmp.differences)})
            for kappa in results.kappas():
                od = paired_differences(results, ev, build, kappa, n)
                normalized = normalized_paired_differences(results, ev, build, kappa, n)
                for b, (d, z) in enumerate(zip(od, normalized)):
                    paired_rows.append({
                        "train_size": n, "kappa": kappa, "eval": str(ev), "build": str(build),
                        "replicate": b, "od": d, "od_normalized": z,
                    })
                if config.replicates >= 2:
                    pvalue_rows.append(hypothesis_test(results, ev, build, kappa, n).model_dump())
    return {
        "kappa_star": pd.DataFrame(kappa_rows),
        "odstar": pd.DataFrame(odstar_rows),
        "paired": pd.DataFrame(paired_rows),
        "pvalues": pd.DataFrame(pvalue_rows),
    }


def audit_table(results: ExperimentResults) -> pd.DataFrame:
    config = results.config
    true_splits = config.true_splits
    if true_splits is None and isinstance(config.data_source, SyntheticSource):
        true_splits = synth.preset(config.data_source.preset).boundaries
    if not true_splits or not results.trees:
        return pd.DataFrame()
    rows = []
    for n in results.train_sizes:
        for build in config.build_scores:
            if build not in config.eval_scores:
                continue
            kappa_star = tune_kappa(results, build, n).kappa_star
            trees = [results.trees[(n, b, str(build), kappa_star)] for b in range(config.replicates)]
            report = split_recovery_audit(trees, true_splits, config.margin)
            for v, rate in report.recovery_rate.items():
                rows.append({
                    "train_size": n, "build": str(build), "kappa_star": kappa_star, "true_split": v,
                    "recovery_rate": rate, "mean_incorrect": report.mean_incorrect, "n_trees": report.n_trees,
                })
    return pd.DataFrame(rows)


def scan_table(config: ExperimentConfig) -> pd.DataFrame:
    """Criterion curves of every build score on replicate 0 of the largest train size."""
    if not isinstance(config.data_source, SyntheticSource):
        return pd.DataFrame()
    train, _ = replicate_data(config, max(config.data_source.train_sizes), 0)
    grid = scan_grid(train, config.scan_step)
    frames = []
    for rule in config.build_scores:
        points = criterion_scan(train, rule, grid).points
        points.insert(0, "build", str(rule))
        frames.append(points)
    return pd.concat(frames, ignore_index=True)


def model_filename(key: TreeKey) -> str:
    n, b, build, kappa = key
    return f"n{n}_b{b}_{build.replace(':', '-')}_k{kappa:g}.json"


def write_benchmark(results: ExperimentResults, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Writes results.csv, the summary tables and models/ into out_dir."""
    out_dir = Path(out_dir)
    header = [results.provenance]
    written = {}

    def _write(name: str, frame: pd.DataFrame, extra: Sequence[str] = ()):
        path = out_dir / f"{name}.csv"
        write_table(frame, path, header + list(extra))
        written[name] = path

    _write("results", results.frame)
    tables = summary_tables(results)
    _write("kappa_star", tables["kappa_star"])
    _write("odstar", tables["odstar"], [f"OD* = O_eval(eval, kappa*(eval)) - O_eval(build, kappa*(build)); {CONFIDENCE:.0%} t interval"])
    _write("paired", tables["paired"])
    _write("pvalues", tables["pvalues"], [PVALUE_ORIENTATION])
    audit = audit_table(results)
    if not audit.empty:
        _write("audit", audit)
    scan = scan_table(results.config)
    if not scan.empty:
        _write("scan", scan)

    index_rows = []
    for key, tree in sorted(results.trees.items()):
        name = model_filename(key)
        save_model(tree, out_dir / "models" / name)
        n, b, build, kappa = key
        index_rows.append({"file": name, "train_size": n, "replicate": b, "build": build, "kappa": kappa})
    if index_rows:
        write_table(pd.DataFrame(index_rows), out_dir / "models" / "index.csv", header)
        written["models"] = out_dir / "models"
    return written
