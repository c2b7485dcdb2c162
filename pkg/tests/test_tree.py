import math

import numpy as np
import pandas as pd
import pytest

from scoretree.core.errors import (
    CategoricalCardinalityError,
    EmptySampleError,
    InvalidParameterError,
    MissingValueError,
    SchemaMismatchError,
)
from scoretree.db.models import tree_to_document
from scoretree.schemas.dataset import ColumnKind
from scoretree.schemas.scoring import ScoringRule
from scoretree.schemas.tree import SplitRule, TreeConfig
from scoretree.services import synth
from scoretree.services.scoring import ecdf_from_samples, node_total_score, quantile, variance_floor_for
from scoretree.services.tree import (
    InternalNode,
    LeafNode,
    PredictiveTree,
    accepts,
    apply,
    best_split,
    candidate_splits,
    evaluate,
    fit,
    parse_summary,
    predict_distribution,
    predict_point,
    prune,
    quantile_levels,
    route,
    split_objective,
    tree_stats,
)
from tests.conftest import ALL_RULES, mixed_dataset, numeric_dataset, random_samples

KAPPAS = [0.0, 0.1, 0.3, 0.5, 0.8]


def stump(split: SplitRule, names=("x",), kinds=(ColumnKind.NUMERIC,)) -> PredictiveTree:
    return PredictiveTree(
        nodes={
            0: InternalNode(split=split, delta=1.0, n=4, total=2.0),
            1: LeafNode(ecdf=ecdf_from_samples([0.0, 1.0])),
            2: LeafNode(ecdf=ecdf_from_samples([5.0, 6.0])),
        },
        config=TreeConfig(rule=ScoringRule.crps()),
        root_delta=1.0,
        root_n=4,
        variance_floor=1e-12,
        feature_names=names,
        feature_kinds=kinds,
    )


def node_docs(tree: PredictiveTree):
    return tree_to_document(tree).nodes


class TestCandidateSplits:
    def test_low_cardinality_numeric(self):
        splits = candidate_splits(np.array([1.0, 2.0, 3.0, 2.0]), 0.05, 10)
        assert [s.threshold for s in splits] == [1.0, 2.0]

    def test_quantile_grid(self, rng):
        splits = candidate_splits(rng.uniform(size=1000), 0.05, 10)
        assert len(splits) == 19
        thresholds = [s.threshold for s in splits]
        assert thresholds == sorted(thresholds)

    def test_quantile_levels(self):
        levels = quantile_levels(0.05)
        assert len(levels) == 19
        assert levels[0] == pytest.approx(0.05) and levels[-1] == pytest.approx(0.95)

    def test_categorical_partitions(self):
        splits = candidate_splits(np.array(["b", "a", "c", "a"], dtype=object), 0.05, 10)
        assert [s.left_categories for s in splits] == [("a",), ("a", "b"), ("b",)]

    def test_constant_column(self):
        assert candidate_splits(np.array([4.0, 4.0]), 0.05, 10) == []

    def test_cardinality_over_cutoff(self):
        column = np.array([f"c{i}" for i in range(11)], dtype=object)
        with pytest.raises(CategoricalCardinalityError, match="categorical cardinality exceeds cutoff"):
            candidate_splits(column, 0.05, 10)

    def test_empty_column(self):
        with pytest.raises(EmptySampleError):
            candidate_splits(np.array([]), 0.05, 10)


class TestSplitObjective:
    def test_constant_children(self):
        assert split_objective(ScoringRule.sse(), [1, 1], [5, 5]) == 0.0

    def test_crps_copies(self):
        assert split_objective(ScoringRule.crps(), [0, 2], [0, 2]) == pytest.approx(2.0)

    def test_sse_singleton_side(self):
        assert split_objective(ScoringRule.sse(), [0, 2], [4]) == pytest.approx(2.0)

    def test_empty_side(self):
        with pytest.raises(InvalidParameterError):
            split_objective(ScoringRule.sse(), [], [1.0])

    def test_monotonicity(self, rng):
        for _ in range(200):
            y = random_samples(rng, int(rng.integers(10, 501)))
            floor = variance_floor_for(y)
            for rule in ALL_RULES:
                parent = node_total_score(rule, y, floor).total
                for _ in range(3):
                    order = rng.permutation(y.size)
                    m = int(rng.integers(1, y.size))
                    after = split_objective(rule, y[order[:m]], y[order[m:]], floor)
                    assert after <= parent + 1e-9 * (1.0 + abs(parent)), f"{rule}: {after} > {parent}"

    def test_sse_decomposition(self, rng):
        for _ in range(500):
            y = rng.normal(rng.uniform(-3, 3), rng.uniform(0.5, 4.0), size=int(rng.integers(2, 300)))
            m = int(rng.integers(1, y.size))
            left, right = y[:m], y[m:]
            parent = node_total_score(ScoringRule.sse(), y).total
            gain = left.size * right.size / y.size * (left.mean() - right.mean()) ** 2
            after = split_objective(ScoringRule.sse(), left, right)
            assert after == pytest.approx(parent - gain, rel=1e-9, abs=1e-9 * (1.0 + parent))


class TestBestSplit:
    def test_perfect_separation(self):
        data = numeric_dataset([0, 0, 1, 1], [0, 0, 10, 10])
        config = TreeConfig(rule=ScoringRule.sse(), min_node_size=1)
        split, objective = best_split(range(4), data, config)
        assert split.threshold == 0.0
        assert objective == 0.0

    def test_no_admissible_candidate(self):
        data = numeric_dataset([0, 0, 1, 1], [0, 0, 10, 10])
        assert best_split(range(4), data, TreeConfig(rule=ScoringRule.sse(), min_node_size=3)) is None

    def test_ties_go_to_smallest_threshold(self):
        # every threshold separates the same constant responses equally well
        data = numeric_dataset([0, 1, 2, 3], [1, 1, 1, 1])
        split, objective = best_split(range(4), data, TreeConfig(rule=ScoringRule.sse(), min_node_size=1))
        assert split.threshold == 0.0 and objective == 0.0

    def test_categorical_split(self, coloured_data):
        config = TreeConfig(rule=ScoringRule.crps(), min_node_size=20)
        split, _ = best_split(range(coloured_data.n), coloured_data, config)
        assert split.feature == 1
        assert split.left_categories == ("blue", "green")


class TestAccepts:
    def test_kappa_zero_accepts_any_gain(self):
        assert accepts(1e-6, 10, 100.0, 100, 0.0)

    def test_zero_gain_refused(self):
        assert not accepts(0.0, 10, 100.0, 100, 0.0)
        assert not accepts(0.0, 10, 100.0, 100, 0.0, pruning=False)

    def test_root_with_kappa_one(self):
        assert not accepts(50.0, 100, 50.0, 100, 1.0)

    def test_relative_gain_below_threshold(self):
        # delta_0 / n = 2.0, delta_t / n_t = 0.9, kappa = 0.5
        assert not accepts(9.0, 10, 200.0, 100, 0.5)
        assert accepts(11.0, 10, 200.0, 100, 0.5)


class TestFit:
    def test_constant_response(self):
        data = numeric_dataset(np.linspace(0, 1, 200), np.full(200, 3.0))
        for rule in ALL_RULES:
            assert fit(data, TreeConfig(rule=rule)).leaf_count == 1

    def test_kappa_one_is_root_only(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.crps(), kappa=1.0))
        assert tree.leaf_count == 1
        assert tree.root_delta > 0.0

    def test_kappa_zero_matches_unpruned(self, step_data):
        for rule in ALL_RULES:
            pruned = fit(step_data, TreeConfig(rule=rule, min_node_size=20, kappa=0.0))
            unpruned = fit(step_data, TreeConfig(rule=rule, min_node_size=20, pruning=False))
            assert node_docs(pruned) == node_docs(unpruned), str(rule)

    def test_finds_the_step(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.sse(), max_depth=1))
        root = tree.nodes[0]
        assert isinstance(root, InternalNode)
        assert abs(root.split.threshold) < 0.1

    @pytest.mark.parametrize("rule", ALL_RULES, ids=str)
    def test_partition_and_leaf_sizes(self, rule, step_data):
        tree = fit(step_data, TreeConfig(rule=rule, min_node_size=30))
        leaves = tree.leaves()
        pooled = np.sort(np.concatenate([leaf.ecdf.samples for leaf in leaves.values()]))
        assert np.array_equal(pooled, np.sort(step_data.response))
        for t, leaf in leaves.items():
            if t > 0:
                assert leaf.n >= 30, f"leaf {t} has {leaf.n} rows"
        for t, node in tree.nodes.items():
            if isinstance(node, InternalNode):
                assert node.delta > 0.0

    def test_leaf_count_non_increasing_in_kappa(self):
        for name in ("easy", "hard"):
            data = synth.generate(synth.preset(name), 800, seed=5)
            counts = [fit(data, TreeConfig(rule=ScoringRule.crps(), kappa=k)).leaf_count for k in KAPPAS]
            assert counts == sorted(counts, reverse=True), f"{name}: {counts}"

    def test_deterministic(self, coloured_data):
        config = TreeConfig(rule=ScoringRule.is2(0.2), min_node_size=15)
        assert tree_to_document(fit(coloured_data, config)) == tree_to_document(fit(coloured_data, config))

    def test_cardinality_error(self):
        colours = [f"c{i % 11}" for i in range(44)]
        data = mixed_dataset(np.arange(44.0), colours, np.arange(44.0))
        with pytest.raises(CategoricalCardinalityError):
            fit(data, TreeConfig(rule=ScoringRule.sse(), min_node_size=2))

    def test_empty_dataset(self, step_data):
        with pytest.raises(EmptySampleError):
            fit(step_data.take([]), TreeConfig(rule=ScoringRule.sse()))

    def test_depth_limit(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.sse(), max_depth=2, min_node_size=5))
        assert max(tree.nodes) <= 6


class TestPrune:
    @pytest.mark.parametrize("rule", ALL_RULES, ids=str)
    def test_matches_fit_at_each_kappa(self, rule):
        data = synth.generate(synth.HARD, 800, seed=11)
        grown = fit(data, TreeConfig(rule=rule, kappa=0.0))
        for kappa in KAPPAS + [1.0]:
            direct = fit(data, TreeConfig(rule=rule, kappa=kappa))
            cut = prune(grown, kappa)
            assert node_docs(cut) == node_docs(direct), f"{rule} kappa={kappa}"
            assert cut.config == direct.config

    def test_cannot_relax(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.sse(), kappa=0.5))
        with pytest.raises(InvalidParameterError):
            prune(tree, 0.1)


class TestRouting:
    def test_single_leaf(self):
        tree = fit(numeric_dataset([0, 1, 2], [1, 2, 3]), TreeConfig(rule=ScoringRule.sse()))
        assert route(tree, [123.0]) == 0

    def test_boundary_goes_left(self):
        tree = stump(SplitRule(feature=0, threshold=0.5))
        assert route(tree, [0.5]) == 1
        assert route(tree, [0.6]) == 2
        assert route(tree, {"x": 0.4}) == 1

    def test_unseen_category_goes_right(self):
        tree = stump(SplitRule(feature=0, left_categories=("red",)), names=("colour",), kinds=(ColumnKind.CATEGORICAL,))
        assert route(tree, {"colour": "red"}) == 1
        assert route(tree, {"colour": "purple"}) == 2

    def test_missing_value(self):
        tree = stump(SplitRule(feature=0, threshold=0.5))
        with pytest.raises(MissingValueError):
            route(tree, [math.nan])
        with pytest.raises(MissingValueError):
            route(tree, {"x": None})

    def test_missing_feature(self):
        with pytest.raises(SchemaMismatchError):
            route(stump(SplitRule(feature=0, threshold=0.5)), {"z": 1.0})

    def test_apply_matches_route(self, coloured_data):
        tree = fit(coloured_data, TreeConfig(rule=ScoringRule.crps(), min_node_size=15))
        leaf_ids = apply(tree, coloured_data)
        for i in range(0, coloured_data.n, 7):
            assert leaf_ids[i] == route(tree, coloured_data.predictors.iloc[i])

    def test_apply_on_frame_missing_column(self):
        tree = stump(SplitRule(feature=0, threshold=0.5))
        with pytest.raises(SchemaMismatchError):
            apply(tree, pd.DataFrame({"z": [1.0]}))


class TestPrediction:
    def test_single_leaf_distribution(self):
        tree = fit(numeric_dataset([0, 1, 2], [3, 1, 2]), TreeConfig(rule=ScoringRule.crps()))
        assert predict_distribution(tree, [5.0]) == ecdf_from_samples([1, 2, 3])

    def test_point_summaries(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.crps()))
        x = [0.3]
        f = predict_distribution(tree, x)
        assert predict_point(tree, x, "mean") == f.mean
        assert predict_point(tree, x, "quantile:0.8") == quantile(f, 0.8)

    @pytest.mark.parametrize("summary", ["median", "quantile:", "quantile:1.5", "mean:2"])
    def test_unknown_summary(self, summary):
        with pytest.raises(InvalidParameterError):
            parse_summary(summary)

    def test_samples_is_not_a_point(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.crps()))
        with pytest.raises(InvalidParameterError):
            predict_point(tree, [0.0], "samples")


class TestEvaluate:
    def test_single_leaf_in_sample(self):
        data = numeric_dataset([0, 1], [0, 2])
        tree = fit(data, TreeConfig(rule=ScoringRule.sse()))
        assert evaluate(tree, data, ScoringRule.sse()) == pytest.approx(2.0)

    def test_empty_set(self, step_data):
        tree = fit(step_data, TreeConfig(rule=ScoringRule.sse()))
        assert evaluate(tree, step_data.take([]), ScoringRule.crps()) == 0.0

    @pytest.mark.parametrize("rule", ALL_RULES, ids=str)
    def test_in_sample_equals_leaf_totals(self, rule, step_data):
        tree = fit(step_data, TreeConfig(rule=rule, min_node_size=25))
        expected = sum(
            node_total_score(rule, leaf.ecdf.samples, tree.variance_floor).total for leaf in tree.leaves().values()
        )
        assert evaluate(tree, step_data, rule) == pytest.approx(expected, rel=1e-9)


class TestTreeStats:
    def test_single_leaf(self):
        stats = tree_stats(fit(numeric_dataset([0, 1], [0, 2]), TreeConfig(rule=ScoringRule.sse())))
        assert (stats.depth, stats.leaf_count, stats.splits) == (0, 1, [])

    def test_root_split_only(self, step_data):
        stats = tree_stats(fit(step_data, TreeConfig(rule=ScoringRule.sse(), max_depth=1)))
        assert stats.leaf_count == 2
        assert len(stats.splits) == 1
        assert stats.splits[0].feature_name == "x"

    def test_depth_four_bound(self, step_data):
        stats = tree_stats(fit(step_data, TreeConfig(rule=ScoringRule.crps(), min_node_size=5)))
        assert len(stats.splits) <= 15
        assert stats.depth <= 4
        assert len(stats.thresholds) == len(stats.splits)
