import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pffpclass.errors import DataError, EmptySet
from pffpclass.evaluation import (
    CSV_COLUMNS,
    ConfusionMatrix,
    evaluate,
    format_accuracy,
    load_report,
    write_report,
)
from pffpclass.pipeline import held_out_test

matrices = st.lists(st.integers(0, 40), min_size=16, max_size=16).filter(lambda v: sum(v) > 0).map(
    lambda v: ConfusionMatrix(np.array(v).reshape(4, 4))
)


class TestConfusionMatrix:
    def test_perfect_predictions(self):
        m = ConfusionMatrix.from_labels([1, 2, 3, 4, 4], [1, 2, 3, 4, 4])
        np.testing.assert_array_equal(np.diag(m.row_percent), [100.0] * 4)
        assert m.accuracy == 1.0

    def test_class_two_row_pattern(self):
        m = ConfusionMatrix.from_labels([2, 2, 2, 2], [2, 2, 2, 1])
        np.testing.assert_allclose(m.row_percent[1], [25.0, 75.0, 0.0, 0.0])

    def test_blind_set_accuracy(self):
        actual = [1] * 34
        predicted = [1] * 30 + [2] * 4
        m = ConfusionMatrix.from_labels(actual, predicted)
        assert m.accuracy == pytest.approx(30 / 34)
        assert format_accuracy(m.accuracy) == "88.2%"

    def test_empty(self):
        with pytest.raises(EmptySet):
            ConfusionMatrix.from_labels([], [])
        with pytest.raises(EmptySet):
            ConfusionMatrix(np.zeros((4, 4))).accuracy

    def test_diagonal_precision_recall(self):
        m = ConfusionMatrix(np.diag([5, 0, 3, 2]))
        assert np.all(m.precision[[0, 2, 3]] == 1.0) and np.all(m.recall[[0, 2, 3]] == 1.0)
        assert np.isnan(m.precision[1]) and np.isnan(m.recall[1])

    @given(matrices)
    def test_invariants(self, m):
        assert 0.0 <= m.accuracy <= 1.0
        off_diagonal = m.counts.sum() - np.trace(m.counts)
        assert (m.accuracy == 1.0) == (off_diagonal == 0)
        rows = m.counts.sum(axis=1)
        for i in range(4):
            if rows[i]:
                assert abs(m.row_percent[i].sum() - 100.0) < 1e-6
                np.testing.assert_allclose(m.row_percent[i], 100.0 * m.counts[i] / rows[i])
            else:
                assert not m.row_percent[i].any()


class TestReport:
    def test_round_trip(self, tmp_path):
        m = ConfusionMatrix(np.array([[7, 1, 0, 0], [2, 6, 0, 0], [0, 0, 3, 1], [0, 0, 0, 9]]))
        csv_path, json_path = write_report(m, tmp_path, {"note": "x"})
        assert csv_path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        back = load_report(tmp_path)
        np.testing.assert_array_equal(back.counts, m.counts)
        report = json.loads(json_path.read_text())
        assert report["n"] == 29 and report["accuracy_text"] == "86.2%"

    def test_empty_row_footnote(self, tmp_path):
        m = ConfusionMatrix(np.array([[5, 1, 0, 0], [0, 4, 0, 0], [0, 1, 3, 0], [0, 0, 0, 0]]))
        write_report(m, tmp_path)
        report = json.loads((tmp_path / "report.json").read_text())
        assert any("class 4" in n for n in report["notes"])
        last = (tmp_path / "confusion.csv").read_text().splitlines()[-1].split(",")
        assert last[:6] == ["4", "0", "0", "0", "0", "0"] and last[-1] == ""

    def test_sum_check_on_load(self, tmp_path):
        m = ConfusionMatrix(np.eye(4, dtype=int) * 3)
        write_report(m, tmp_path)
        report = json.loads((tmp_path / "report.json").read_text())
        report["n"] = 13
        (tmp_path / "report.json").write_text(json.dumps(report))
        with pytest.raises(DataError):
            load_report(tmp_path)

    @settings(max_examples=30, deadline=None)
    @given(matrices)
    def test_round_trip_property(self, tmp_path_factory, m):
        out = tmp_path_factory.mktemp("rep")
        write_report(m, out)
        np.testing.assert_array_equal(load_report(out).counts, m.counts)


class TestEvaluate:
    def test_held_out_split(self, trained, synthetic_table):
        bundle, _ = trained
        test = held_out_test(bundle, synthetic_table)
        assert test.ids == bundle.provenance["test_ids"]
        result = evaluate(bundle, test, seed=0)
        assert result.matrix.total == len(test)
        assert result.accuracy >= 0.9

    def test_deterministic(self, trained, synthetic_table):
        bundle, _ = trained
        a = evaluate(bundle, synthetic_table, seed=3)
        b = evaluate(bundle, synthetic_table, seed=3)
        np.testing.assert_array_equal(a.predicted, b.predicted)
        np.testing.assert_array_equal(a.estimates[0].samples, b.estimates[0].samples)

    def test_empty_set(self, trained, synthetic_table):
        bundle, _ = trained
        with pytest.raises(EmptySet):
            evaluate(bundle, synthetic_table.take([]))
