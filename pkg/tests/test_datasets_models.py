import json

import numpy as np
import pandas as pd
import pytest

from scoretree.core.errors import (
    DatasetFormatError,
    EmptyFileError,
    MissingResponseError,
    MissingValueError,
    ModelFormatError,
    ModelVersionError,
    NonNumericResponseError,
    RaggedRowError,
    SchemaMismatchError,
)
from scoretree.db.datasets import load_csv, load_predictors, save_csv
from scoretree.db.models import load_model, save_model, tree_to_document
from scoretree.db.results import RESULT_COLUMNS, provenance_line, read_results, read_table, write_table
from scoretree.schemas.dataset import ColumnKind
from scoretree.schemas.scoring import ScoringRule
from scoretree.schemas.tree import TreeConfig
from scoretree.services import synth
from scoretree.services.tree import apply, evaluate, fit, route, tree_stats


def write(tmp_path, text: str, name: str = "data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_numeric(self, tmp_path):
        data = load_csv(write(tmp_path, "x,y\n1,2\n2,4.5\n3,-1e3\n"), "y")
        assert (data.n, data.p) == (3, 1)
        assert data.feature_kinds == (ColumnKind.NUMERIC,)
        assert data.response.tolist() == [2.0, 4.5, -1000.0]

    def test_categorical_inference(self, tmp_path):
        data = load_csv(write(tmp_path, "c,x,y\na,1,1\nb,2,2\na,3,3\n"), "y")
        assert data.feature_kinds == (ColumnKind.CATEGORICAL, ColumnKind.NUMERIC)
        assert data.columns[0].categories == ("a", "b")

    def test_override_forces_categorical(self, tmp_path):
        data = load_csv(write(tmp_path, "zip,y\n100,1\n200,2\n"), "y", {"zip": "categorical"})
        assert data.feature_kinds == (ColumnKind.CATEGORICAL,)
        assert data.column_values(0).tolist() == ["100", "200"]

    def test_non_numeric_response(self, tmp_path):
        with pytest.raises(NonNumericResponseError, match="non-numeric response"):
            load_csv(write(tmp_path, "x,y\n1,2\n2,abc\n"), "y")

    def test_missing_response(self, tmp_path):
        with pytest.raises(MissingResponseError):
            load_csv(write(tmp_path, "x,z\n1,2\n"), "y")

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyFileError):
            load_csv(write(tmp_path, ""), "y")

    def test_header_only(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="no data rows"):
            load_csv(write(tmp_path, "x,y\n"), "y")

    def test_ragged_row(self, tmp_path):
        with pytest.raises(RaggedRowError):
            load_csv(write(tmp_path, "x,y\n1,2\n3,4,5\n"), "y")

    def test_missing_predictor_value(self, tmp_path):
        with pytest.raises(MissingValueError):
            load_csv(write(tmp_path, "x,y\n1,2\n,4\n"), "y")

    def test_error_messages_are_distinct(self, tmp_path):
        messages = set()
        for text in ("x,y\n1,a\n", "x,z\n1,2\n", "", "x,y\n1,2\n3,4,5\n"):
            with pytest.raises(DatasetFormatError) as info:
                load_csv(write(tmp_path, text), "y")
            messages.add(type(info.value))
        assert len(messages) == 4

    def test_save_then_load_is_idempotent(self, tmp_path, coloured_data):
        first = tmp_path / "first.csv"
        save_csv(coloured_data, first)
        loaded = load_csv(first, "y")
        second = tmp_path / "second.csv"
        save_csv(loaded, second)
        assert load_csv(second, "y") == loaded
        assert np.array_equal(loaded.response, coloured_data.response)
        assert np.array_equal(loaded.column_values(0), coloured_data.column_values(0))

    def test_full_precision_floats_read_back_exactly(self, tmp_path):
        data = synth.generate(synth.HARD, 300, seed=11)
        path = tmp_path / "hard.csv"
        save_csv(data, path)
        loaded = load_csv(path, "y")
        assert np.array_equal(loaded.response, data.response)
        assert np.array_equal(loaded.column_values(0), data.column_values(0))

    def test_seventeen_digit_cell(self, tmp_path):
        loaded = load_csv(write(tmp_path, "x,y\n1,0.18962695595998003\n"), "y")
        assert loaded.response[0] == float("0.18962695595998003")

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "latin.csv"
        path.write_bytes(b"x,y\n\xff,1\n")
        with pytest.raises(DatasetFormatError, match="not UTF-8"):
            load_csv(path, "y")


class TestLoadPredictors:
    def test_forces_model_kinds(self, tmp_path):
        frame = load_predictors(write(tmp_path, "y,zip,x\n1,100,0.5\n"), ["x", "zip"], [ColumnKind.NUMERIC, ColumnKind.CATEGORICAL])
        assert list(frame.columns) == ["x", "zip"]
        assert frame["zip"].tolist() == ["100"]
        assert frame["x"].tolist() == [0.5]

    def test_missing_column(self, tmp_path):
        with pytest.raises(SchemaMismatchError):
            load_predictors(write(tmp_path, "a\n1\n"), ["x"], [ColumnKind.NUMERIC])

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(SchemaMismatchError):
            load_predictors(write(tmp_path, "x\nred\n"), ["x"], [ColumnKind.NUMERIC])


class TestModelFiles:
    def test_round_trip_routes_identically(self, tmp_path, rng):
        data = synth.generate(synth.HARD, 1600, seed=9)
        tree = fit(data, TreeConfig(rule=ScoringRule.crps(), kappa=0.1))
        path = tmp_path / "model.json"
        save_model(tree, path)
        loaded = load_model(path)

        grid = pd.DataFrame({"x": rng.uniform(-1.2, 1.2, size=10_000)})
        # thresholds themselves are the sharpest test points
        grid = pd.concat([grid, pd.DataFrame({"x": tree_stats(tree).thresholds})], ignore_index=True)
        assert np.array_equal(apply(loaded, grid), apply(tree, grid))
        for t, leaf in tree.leaves().items():
            assert np.array_equal(loaded.nodes[t].ecdf.samples, leaf.ecdf.samples)
        assert tree_to_document(loaded) == tree_to_document(tree)

    def test_round_trip_preserves_scores(self, tmp_path, coloured_data):
        tree = fit(coloured_data, TreeConfig(rule=ScoringRule.dss(), min_node_size=20))
        path = tmp_path / "model.json"
        save_model(tree, path)
        loaded = load_model(path)
        held_out = coloured_data.take(np.arange(0, coloured_data.n, 3))
        for rule in (ScoringRule.dss(), ScoringRule.crps(), ScoringRule.is1(0.2)):
            assert evaluate(loaded, held_out, rule) == evaluate(tree, held_out, rule)
        assert route(loaded, {"x": 0.3, "colour": "red"}) == route(tree, {"x": 0.3, "colour": "red"})

    def test_single_leaf_document(self, tmp_path):
        tree = fit(synth.generate(synth.TOY, 10, seed=0), TreeConfig(rule=ScoringRule.sse()))
        path = tmp_path / "leaf.json"
        save_model(tree, path)
        document = json.loads(path.read_text())
        assert len(document["nodes"]) == 1
        assert document["nodes"][0]["type"] == "leaf"
        assert len(document["nodes"][0]["samples"]) == 10

    def test_version_mismatch(self, tmp_path):
        tree = fit(synth.generate(synth.TOY, 10, seed=0), TreeConfig(rule=ScoringRule.sse()))
        path = tmp_path / "model.json"
        save_model(tree, path)
        document = json.loads(path.read_text())
        document["version"] = 99
        path.write_text(json.dumps(document))
        with pytest.raises(ModelVersionError):
            load_model(path)

    def test_malformed_json(self, tmp_path):
        with pytest.raises(ModelFormatError):
            load_model(write(tmp_path, "{not json", "bad.json"))

    def test_missing_child(self, tmp_path):
        data = synth.generate(synth.EASY, 400, seed=1)
        tree = fit(data, TreeConfig(rule=ScoringRule.sse(), max_depth=1))
        path = tmp_path / "model.json"
        save_model(tree, path)
        document = json.loads(path.read_text())
        document["nodes"] = [node for node in document["nodes"] if node["id"] != 2]
        path.write_text(json.dumps(document))
        with pytest.raises(ModelFormatError):
            load_model(path)


class TestResultTables:
    def test_header_and_round_trip(self, tmp_path):
        frame = pd.DataFrame(
            [[0, 100, "crps", "is1:0.2", 0.1, 1.0 / 3.0, 2.0 ** 0.5]], columns=RESULT_COLUMNS
        )
        path = tmp_path / "results.csv"
        line = provenance_line("ab" * 32, 7, 1_000_010)
        write_table(frame, path, [line])
        first = path.read_text().splitlines()[0]
        assert first == "# scoretree config_hash=abababababababab base_seed=7 test_seed=1000010"
        back = read_results(path)
        assert back["in_sample"].iloc[0] == 1.0 / 3.0
        assert back["out_sample"].iloc[0] == 2.0 ** 0.5
        assert back["eval"].iloc[0] == "is1:0.2"

    def test_not_a_results_table(self, tmp_path):
        write_table(pd.DataFrame({"a": [1]}), tmp_path / "other.csv")
        with pytest.raises(DatasetFormatError):
            read_results(tmp_path / "other.csv")

    def test_read_empty(self, tmp_path):
        with pytest.raises(EmptyFileError):
            read_table(write(tmp_path, ""))

    def test_read_malformed(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="malformed table"):
            read_table(write(tmp_path, "a,b\n1,2\n3,4,5\n"))
