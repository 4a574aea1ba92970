import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsieve.metrics import (C45_COLUMN_NAME, C45_REPORTED, REPORT_ROWS,
                               ClassReport, ConfusionMatrix, build_report,
                               confusion, format_percent, parse_report_csv,
                               rates, render_csv, render_table, round_percent)


class TestConfusion:
    def test_perfect(self):
        cm = confusion([1, 1, 0, 0], [1, 1, 0, 0], positive_class=1)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 2, 0, 0)

    def test_all_positive_predictor(self):
        cm = confusion([1, 1, 1, 1], [1, 0, 1, 0], positive_class=1)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 0, 2, 0)

    def test_orientation_flip_swaps_counts(self):
        preds = [1, 0, 1, 1, 0]
        labels = [1, 1, 0, 1, 0]
        a = confusion(preds, labels, positive_class=1)
        b = confusion(preds, labels, positive_class=0)
        assert (a.tp, a.tn, a.fp, a.fn) == (b.tn, b.tp, b.fn, b.fp)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            confusion([1], [1, 0], positive_class=1)

    def test_counts_sum_to_total(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 50))
            preds = rng.integers(0, 2, n)
            labels = rng.integers(0, 2, n)
            cm = confusion(preds, labels, positive_class=1)
            assert cm.total == n


class TestRates:
    def test_worked_example(self):
        r = rates(ConfusionMatrix(tp=98, fn=2, fp=1, tn=99))
        assert r.acc == pytest.approx(0.985)
        assert r.dr == pytest.approx(0.98)
        assert r.fpr == pytest.approx(0.01)
        assert r.ppv == pytest.approx(0.9899, abs=1e-4)

    def test_undefined_dr(self):
        r = rates(ConfusionMatrix(tp=0, fn=0, fp=3, tn=7))
        assert r.dr is None
        assert r.fpr == pytest.approx(0.3)

    def test_perfect_classifier(self):
        r = rates(ConfusionMatrix(tp=10, fn=0, fp=0, tn=10))
        assert (r.acc, r.dr, r.fpr, r.ppv) == (1.0, 1.0, 0.0, 1.0)

    def test_matches_direct_arithmetic(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            tp, tn, fp, fn = (int(v) for v in rng.integers(0, 50, 4))
            if tp + tn + fp + fn == 0:
                continue
            r = rates(ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn))
            assert r.acc == (tp + tn) / (tp + tn + fp + fn)
            assert r.dr == (tp / (tp + fn) if tp + fn else None)
            assert r.fpr == (fp / (fp + tn) if fp + tn else None)
            assert r.ppv == (tp / (tp + fp) if tp + fp else None)


class TestReport:
    def test_perfect_predictions(self):
        report = build_report([1, 1, 0, 0], [1, 1, 0, 0])
        assert report["dr_tor"] == 100.0
        assert report["ppv_tor"] == 100.0
        assert report["fpr_tor"] == 0.0
        assert report["dr_nontor"] == 100.0
        assert report["overall_acc"] == 100.0

    def test_published_column_shape_renders_seven_rows(self):
        column = ClassReport(values={
            "dr_tor": 98.8, "fpr_tor": 0.03, "ppv_tor": 99.8,
            "dr_nontor": 100.0, "fpr_nontor": 1.2, "ppv_nontor": 99.8,
            "overall_acc": 99.8})
        table = render_table({"CFS-ANN": column})
        lines = table.strip().splitlines()
        assert len(lines) == 1 + 7  # header + the seven report rows
        assert "DR (Tor) %" in lines[1]
        assert "Overall ACC. %" in lines[7]

    def test_degenerate_all_one_class(self):
        report = build_report([1, 1, 1, 1], [1, 1, 0, 0])
        assert report["overall_acc"] == 50.0
        assert report["dr_tor"] == 100.0
        assert report["fpr_tor"] == 100.0
        assert report["dr_nontor"] == 0.0

    def test_cross_orientation_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            preds = rng.integers(0, 2, n)
            labels = rng.integers(0, 2, n)
            tor = rates(confusion(preds, labels, positive_class=1))
            nontor = rates(confusion(preds, labels, positive_class=0))
            # DR with A positive = specificity of the flipped orientation.
            if tor.dr is not None:
                fn = confusion(preds, labels, 1).fn
                tp = confusion(preds, labels, 1).tp
                assert tor.dr == pytest.approx(1.0 - fn / (tp + fn))
                assert nontor.fpr is not None
                assert tor.dr == pytest.approx(1.0 - nontor.fpr)

    @settings(max_examples=30)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)),
                    min_size=1, max_size=30),
           st.randoms(use_true_random=False))
    def test_permutation_invariance(self, pairs, rand):
        preds = [p for p, _ in pairs]
        labels = [l for _, l in pairs]
        base = build_report(preds, labels)
        order = list(range(len(pairs)))
        rand.shuffle(order)
        shuffled = build_report([preds[i] for i in order],
                                [labels[i] for i in order])
        assert base.values == shuffled.values


class TestRendering:
    def test_round_half_away_from_zero(self):
        assert round_percent(0.25) == 0.3
        assert round_percent(99.85) == 99.9
        assert round_percent(0.04) == 0.0
        assert round_percent(1.15) == 1.2
        assert round_percent(100.0) == 100.0

    def test_undefined_cells_marked(self):
        report = ClassReport(values={key: None for key, _ in REPORT_ROWS})
        table = render_table({"X": report})
        for line in table.strip().splitlines()[1:]:
            assert line.rstrip().endswith("-")

    def test_reference_column_appended(self):
        report = build_report([1, 0], [1, 0])
        table = render_table({"ANN": report}, include_reference=True)
        assert C45_COLUMN_NAME in table
        assert "93.4" in table and "94.8" in table
        # the baseline's FPR cells are blank markers, never zeros
        fpr_line = [l for l in table.splitlines() if l.startswith("FPR (Tor)")][0]
        assert fpr_line.rstrip().endswith("-")

    def test_csv_reparse_reproduces_rounded_values(self):
        rng = np.random.default_rng(3)
        preds = rng.integers(0, 2, 25)
        labels = rng.integers(0, 2, 25)
        report = build_report(preds, labels)
        text = render_csv({"model": report})
        parsed = parse_report_csv(text)["model"]
        for key, _ in REPORT_ROWS:
            value = report[key]
            expected = None if value is None else round_percent(value)
            assert parsed[key] == expected

    def test_format_percent(self):
        assert format_percent(None) == "-"
        assert format_percent(99.97) == "100.0"
        assert format_percent(0.03) == "0.0"

    def test_reference_values_pinned(self):
        assert C45_REPORTED["dr_tor"] == 93.4
        assert C45_REPORTED["ppv_tor"] == 94.8
        assert C45_REPORTED["dr_nontor"] == 99.2
        assert C45_REPORTED["ppv_nontor"] == 99.4
        assert C45_REPORTED["fpr_tor"] is None
