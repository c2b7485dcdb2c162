"""
Score-minimizing binary trees with ECDF leaves.

Nodes are indexed breadth-first: the root is 0 and node t has children
2t+1 (left) and 2t+2 (right).
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from scoretree.core.errors import (
    CategoricalCardinalityError,
    EmptySampleError,
    InvalidParameterError,
    MissingValueError,
    SchemaMismatchError,
)
from scoretree.db.datasets import Dataset
from scoretree.schemas.dataset import ColumnKind
from scoretree.schemas.scoring import ScoringRule
from scoretree.schemas.tree import SplitRecord, SplitRule, TreeConfig, TreeStats
from scoretree.services.scoring import (
    Ecdf,
    quantile,
    score_many,
    sorted_quantile,
    sorted_total,
    variance_floor_for,
)

logger = logging.getLogger(__name__)

MONOTONICITY_TOLERANCE = 1e-9
ROUNDING_TOLERANCE = 1e-12


@dataclass(frozen=True)
class InternalNode:
    split: SplitRule
    delta: float
    n: int
    total: float


@dataclass(frozen=True)
class LeafNode:
    ecdf: Ecdf

    @property
    def n(self) -> int:
        return self.ecdf.n


Node = Union[InternalNode, LeafNode]


@dataclass(frozen=True)
class PredictiveTree:
    nodes: Dict[int, Node]
    config: TreeConfig
    root_delta: float
    root_n: int
    variance_floor: float
    feature_names: Tuple[str, ...]
    feature_kinds: Tuple[ColumnKind, ...]
    response_name: str = "y"

    def leaves(self) -> Dict[int, LeafNode]:
        return {t: node for t, node in sorted(self.nodes.items()) if isinstance(node, LeafNode)}

    @property
    def leaf_count(self) -> int:
        return sum(isinstance(node, LeafNode) for node in self.nodes.values())


def node_depth(t: int) -> int:
    return int(math.floor(math.log2(t + 1)))


# --- Candidates & objective ---

def quantile_levels(step: float) -> List[float]:
    """{step, 2*step, ...} strictly below 1."""
    levels = []
    k = 1
    while k * step < 1.0 - 1e-9:
        levels.append(k * step)
        k += 1
    return levels


def _is_categorical(column: np.ndarray) -> bool:
    return column.dtype == object or column.dtype.kind in "US"


def candidate_splits(
    column: np.ndarray,
    quantile_step: float,
    cutoff: int,
    feature: int = 0,
    kind: Optional[ColumnKind] = None,
    name: Optional[str] = None,
) -> List[SplitRule]:
    column = np.asarray(column)
    if column.size == 0:
        raise EmptySampleError()
    if kind is None:
        kind = ColumnKind.CATEGORICAL if _is_categorical(column) else ColumnKind.NUMERIC

    if kind is ColumnKind.CATEGORICAL:
        categories = sorted(set(str(v) for v in column.tolist()))
        if len(categories) > cutoff:
            raise CategoricalCardinalityError(name or f"#{feature}", len(categories), cutoff)
        # left sets never hold the last category, so each partition appears once
        pool = categories[:-1]
        subsets = [
            combo
            for size in range(1, len(pool) + 1)
            for combo in itertools.combinations(pool, size)
        ]
        return [SplitRule(feature=feature, left_categories=combo) for combo in sorted(subsets)]

    values = np.sort(column.astype(np.float64), kind="stable")
    uniques = np.unique(values)
    if uniques.size <= 1:
        return []
    if uniques.size <= cutoff:
        thresholds = uniques[:-1]
    else:
        thresholds = np.unique([sorted_quantile(values, p) for p in quantile_levels(quantile_step)])
        thresholds = thresholds[thresholds < uniques[-1]]
    return [SplitRule(feature=feature, threshold=float(s)) for s in thresholds]


def split_objective(
    rule: ScoringRule,
    left_y: Sequence[float],
    right_y: Sequence[float],
    variance_floor: float = 1e-12,
) -> float:
    """C(k, s) = |L| ES(F_L, F_L) + |R| ES(F_R, F_R)."""
    left = np.sort(np.asarray(left_y, dtype=np.float64), kind="stable")
    right = np.sort(np.asarray(right_y, dtype=np.float64), kind="stable")
    if left.size == 0 or right.size == 0:
        raise InvalidParameterError("split leaves an empty side")
    return sorted_total(rule, left, variance_floor) + sorted_total(rule, right, variance_floor)


def goes_left(split: SplitRule, column: np.ndarray) -> np.ndarray:
    if split.is_categorical:
        return np.isin(column.astype(str), list(split.left_categories))
    return column.astype(np.float64) <= split.threshold


def _best_split(
    rows: np.ndarray,
    y: np.ndarray,
    columns: Sequence[np.ndarray],
    kinds: Sequence[ColumnKind],
    names: Sequence[str],
    config: TreeConfig,
    variance_floor: float,
) -> Optional[Tuple[SplitRule, float]]:
    rule = config.rule
    min_size = config.min_node_size
    n = rows.size
    node_y = y[rows]
    best: Optional[Tuple[SplitRule, float]] = None

    for k, (column, kind) in enumerate(zip(columns, kinds)):
        node_x = column[rows]
        candidates = candidate_splits(
            node_x, config.quantile_step, config.discrete_unique_cutoff, feature=k, kind=kind, name=names[k]
        )
        if not candidates:
            continue

        if kind is ColumnKind.NUMERIC:
            order = np.argsort(node_x, kind="stable")
            xs = node_x[order]
            ys = node_y[order]
            for split in candidates:
                n_left = int(np.searchsorted(xs, split.threshold, side="right"))
                if n_left < min_size or n - n_left < min_size:
                    continue
                objective = split_objective(rule, ys[:n_left], ys[n_left:], variance_floor)
                if best is None or objective < best[1]:
                    best = (split, objective)
        else:
            for split in candidates:
                mask = goes_left(split, node_x)
                n_left = int(mask.sum())
                if n_left < min_size or n - n_left < min_size:
                    continue
                objective = split_objective(rule, node_y[mask], node_y[~mask], variance_floor)
                if best is None or objective < best[1]:
                    best = (split, objective)
    return best


def best_split(
    node_rows: Sequence[int],
    dataset: Dataset,
    config: TreeConfig,
    variance_floor: Optional[float] = None,
) -> Optional[Tuple[SplitRule, float]]:
    """
    argmin of C_t(k, s) over all admissible candidates (both children keep at
    least min_node_size rows). Ties go to the smallest feature index, then the
    smallest threshold or lexicographically smallest category set.
    """
    if variance_floor is None:
        variance_floor = variance_floor_for(dataset.response)
    columns = [dataset.column_values(k) for k in range(dataset.p)]
    return _best_split(
        np.asarray(node_rows, dtype=np.intp),
        dataset.response,
        columns,
        dataset.feature_kinds,
        dataset.feature_names,
        config,
        variance_floor,
    )


# --- Pruning rule ---

def accepts(delta: float, n_t: int, root_delta: float, root_n: int, kappa: float, pruning: bool = True) -> bool:
    """Delta_t / n_t > kappa * Delta_0 / n, with zero-gain splits always refused."""
    if delta <= 0.0:
        return False
    if not pruning:
        return True
    return delta / n_t > kappa * root_delta / root_n


@dataclass
class GrowthState:
    """Bookkeeping of a tree being grown: node totals and sizes plus Delta_0."""
    config: TreeConfig
    root_n: int
    totals: Dict[int, float] = field(default_factory=dict)
    sizes: Dict[int, int] = field(default_factory=dict)
    deltas: Dict[int, float] = field(default_factory=dict)
    root_delta: float = 0.0


def accept_split(state: GrowthState, t: int, objective_after: float) -> bool:
    parent_total = state.totals[t]
    delta = parent_total - objective_after
    # gains at rounding level (e.g. a constant node under DSS) count as zero
    if abs(delta) <= ROUNDING_TOLERANCE * (1.0 + abs(parent_total)):
        delta = 0.0
    state.deltas[t] = delta
    if t == 0:
        state.root_delta = delta
    if delta < -MONOTONICITY_TOLERANCE * (1.0 + abs(parent_total)):
        logger.warning("Node %d: best split increases the total score by %.3g", t, -delta)
    accepted = accepts(
        delta, state.sizes[t], state.root_delta, state.root_n, state.config.kappa, state.config.pruning
    )
    logger.debug("Node %d (n=%d): delta=%.6g %s", t, state.sizes[t], delta, "accepted" if accepted else "rejected")
    return accepted


# --- Fitting ---

def fit(dataset: Dataset, config: TreeConfig) -> PredictiveTree:
    """Breadth-first growth to depth D with kappa pre-pruning."""
    if dataset.n < 1:
        raise EmptySampleError("cannot fit a tree on an empty dataset")

    y = dataset.response
    floor = variance_floor_for(y)
    columns = [dataset.column_values(k) for k in range(dataset.p)]
    kinds = dataset.feature_kinds
    names = dataset.feature_names
    state = GrowthState(config=config, root_n=dataset.n)
    nodes: Dict[int, Node] = {}

    frontier = [(0, np.arange(dataset.n, dtype=np.intp))]
    for depth in range(config.max_depth + 1):
        next_frontier = []
        for t, rows in frontier:
            node_y = np.sort(y[rows], kind="stable")
            state.totals[t] = sorted_total(config.rule, node_y, floor)
            state.sizes[t] = rows.size

            split = None
            if depth < config.max_depth and rows.size > config.min_node_size:
                found = _best_split(rows, y, columns, kinds, names, config, floor)
                if found is not None and accept_split(state, t, found[1]):
                    split = found[0]

            if split is None:
                nodes[t] = LeafNode(ecdf=Ecdf(node_y))
                continue
            mask = goes_left(split, columns[split.feature][rows])
            nodes[t] = InternalNode(split=split, delta=state.deltas[t], n=int(rows.size), total=state.totals[t])
            next_frontier.append((2 * t + 1, rows[mask]))
            next_frontier.append((2 * t + 2, rows[~mask]))
        frontier = next_frontier

    tree = PredictiveTree(
        nodes=dict(sorted(nodes.items())),
        config=config,
        root_delta=state.root_delta,
        root_n=dataset.n,
        variance_floor=floor,
        feature_names=names,
        feature_kinds=kinds,
        response_name=dataset.response_name,
    )
    logger.debug("Fitted %s tree: %d leaves", config.rule, tree.leaf_count)
    return tree


def _descendant_samples(tree: PredictiveTree, t: int) -> np.ndarray:
    parts = []
    stack = [t]
    while stack:
        s = stack.pop()
        node = tree.nodes[s]
        if isinstance(node, LeafNode):
            parts.append(node.ecdf.samples)
        else:
            stack.extend((2 * s + 1, 2 * s + 2))
    return np.sort(np.concatenate(parts), kind="stable")


def prune(tree: PredictiveTree, kappa: float) -> PredictiveTree:
    """
    Cuts a grown tree back to what fit() would have grown with `kappa`: every
    internal node failing the acceptance rule becomes a leaf holding the
    responses of its subtree.
    """
    if not 0.0 <= kappa <= 1.0:
        raise InvalidParameterError(f"kappa must be in [0, 1], got {kappa}")
    if tree.config.pruning and kappa < tree.config.kappa:
        raise InvalidParameterError(f"cannot relax a tree grown with kappa={tree.config.kappa} to kappa={kappa}")

    config = tree.config.model_copy(update={"kappa": kappa, "pruning": True})
    nodes: Dict[int, Node] = {}
    stack = [0]
    while stack:
        t = stack.pop()
        node = tree.nodes[t]
        if isinstance(node, InternalNode):
            if accepts(node.delta, node.n, tree.root_delta, tree.root_n, kappa):
                nodes[t] = node
                stack.extend((2 * t + 1, 2 * t + 2))
            else:
                nodes[t] = LeafNode(ecdf=Ecdf(_descendant_samples(tree, t)))
        else:
            nodes[t] = node

    return PredictiveTree(
        nodes=dict(sorted(nodes.items())),
        config=config,
        root_delta=tree.root_delta,
        root_n=tree.root_n,
        variance_floor=tree.variance_floor,
        feature_names=tree.feature_names,
        feature_kinds=tree.feature_kinds,
        response_name=tree.response_name,
    )


# --- Routing & prediction ---

def _is_missing(value) -> bool:
    if value is None:
        return True
    try:
        return bool(pd.isna(value))
    except (TypeError, ValueError):
        return False


def route(tree: PredictiveTree, x: Union[Sequence, Mapping]) -> int:
    """
    Leaf id for one predictor row, given positionally or by column name.
    Unseen categories go right; missing values are an error.
    """
    t = 0
    node = tree.nodes[t]
    while isinstance(node, InternalNode):
        k = node.split.feature
        name = tree.feature_names[k]
        try:
            value = x[name] if isinstance(x, (Mapping, pd.Series)) else x[k]
        except (KeyError, IndexError):
            raise SchemaMismatchError(f"row has no value for feature '{name}'")
        if _is_missing(value):
            raise MissingValueError(f"missing value for feature '{name}'")
        if node.split.is_categorical:
            left = str(value) in node.split.left_categories
        else:
            left = float(value) <= node.split.threshold
        t = 2 * t + 1 if left else 2 * t + 2
        node = tree.nodes[t]
    return t


def _aligned_predictors(tree: PredictiveTree, data: Union[Dataset, pd.DataFrame]) -> pd.DataFrame:
    frame = data.predictors if isinstance(data, Dataset) else data
    missing = [name for name in tree.feature_names if name not in frame.columns]
    if missing:
        raise SchemaMismatchError(f"data lacks model features: {missing}")
    frame = frame[list(tree.feature_names)]
    if frame.isna().any().any():
        raise MissingValueError("data contains missing predictor values")
    return frame


def apply(tree: PredictiveTree, data: Union[Dataset, pd.DataFrame]) -> np.ndarray:
    """Leaf id for every row, routed column-wise."""
    frame = _aligned_predictors(tree, data)
    columns = {}
    for k, (name, kind) in enumerate(zip(tree.feature_names, tree.feature_kinds)):
        col = frame[name]
        if kind is ColumnKind.NUMERIC:
            try:
                columns[k] = col.to_numpy(dtype=np.float64)
            except (TypeError, ValueError):
                raise SchemaMismatchError(f"feature '{name}' must be numeric")
        else:
            columns[k] = col.astype(str).to_numpy(dtype=object)

    leaf_ids = np.zeros(len(frame), dtype=np.int64)
    stack = [(0, np.arange(len(frame), dtype=np.intp))]
    while stack:
        t, rows = stack.pop()
        node = tree.nodes[t]
        if isinstance(node, LeafNode):
            leaf_ids[rows] = t
            continue
        mask = goes_left(node.split, columns[node.split.feature][rows])
        stack.append((2 * t + 1, rows[mask]))
        stack.append((2 * t + 2, rows[~mask]))
    return leaf_ids


def predict_distribution(tree: PredictiveTree, x: Union[Sequence, Mapping]) -> Ecdf:
    return tree.nodes[route(tree, x)].ecdf


def parse_summary(summary: str) -> Tuple[str, Optional[float]]:
    """'mean', 'quantile:p' or 'samples'."""
    name, _, arg = summary.strip().lower().partition(":")
    if name in ("mean", "samples") and not arg:
        return name, None
    if name == "quantile" and arg:
        try:
            p = float(arg)
        except ValueError:
            raise InvalidParameterError(f"bad quantile level in summary '{summary}'")
        if not 0.0 < p <= 1.0:
            raise InvalidParameterError(f"quantile level must satisfy 0 < p <= 1, got {p}")
        return name, p
    raise InvalidParameterError(f"unknown summary '{summary}' (use mean, quantile:p or samples)")


def summarize(ecdf: Ecdf, summary: str) -> float:
    name, p = parse_summary(summary)
    if name == "mean":
        return ecdf.mean
    if name == "quantile":
        return quantile(ecdf, p)
    raise InvalidParameterError("'samples' is not a point summary")


def predict_point(tree: PredictiveTree, x: Union[Sequence, Mapping], summary: str = "mean") -> float:
    return summarize(predict_distribution(tree, x), summary)


# --- Evaluation & reporting ---

def evaluate(tree: PredictiveTree, dataset: Dataset, eval_rule: ScoringRule) -> float:
    """sum_j S(F_hat_leaf(x_j), y_j) over the rows of `dataset`."""
    if dataset.n == 0:
        return 0.0
    leaf_ids = apply(tree, dataset)
    total = 0.0
    for t in np.unique(leaf_ids):
        ys = dataset.response[leaf_ids == t]
        total += float(score_many(eval_rule, tree.nodes[int(t)].ecdf, ys, tree.variance_floor).sum())
    return total


def tree_stats(tree: PredictiveTree) -> TreeStats:
    splits = []
    for t, node in sorted(tree.nodes.items()):
        if isinstance(node, InternalNode):
            splits.append(
                SplitRecord(
                    node=t,
                    depth=node_depth(t),
                    feature=node.split.feature,
                    feature_name=tree.feature_names[node.split.feature],
                    threshold=node.split.threshold,
                    left_categories=node.split.left_categories,
                    delta=node.delta,
                    n=node.n,
                )
            )
    leaves = tree.leaves()
    return TreeStats(
        depth=max(node_depth(t) for t in leaves),
        leaf_count=len(leaves),
        splits=splits,
    )
