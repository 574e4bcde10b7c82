import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_mask
from flowsim.errors import EmptyGroundTruth, ShapeMismatch
from flowsim.media_io import SaliencyMap, save_mask
from flowsim.metrics import (
    aggregate_scores,
    evaluate_dataset,
    f_measure,
    format_report_table,
    mae,
    s_measure,
)
from oracles import oracle_f_measure, oracle_mae, oracle_s_measure


def random_pred(h, w, seed):
    return SaliencyMap(np.random.default_rng(seed).random((h, w)))


def random_gt(h, w, seed):
    rng = np.random.default_rng(seed)
    g = (rng.random((h, w)) > 0.6).astype(np.float64)
    if not g.any():
        g[h // 2, w // 2] = 1.0
    if g.all():
        g[0, 0] = 0.0
    return SaliencyMap(g, is_binary=True)


class TestMae:
    def test_equal_is_zero(self):
        gt = random_gt(8, 8, 0)
        assert mae(SaliencyMap(gt.values.copy()), gt) == 0.0

    def test_complement_is_one(self):
        gt = random_gt(8, 8, 1)
        assert mae(SaliencyMap(1.0 - gt.values), gt) == 1.0

    def test_hand_example(self):
        pred = SaliencyMap(np.array([[0.2, 0.8], [0.5, 0.0]]))
        gt = SaliencyMap(np.array([[0.0, 1.0], [1.0, 0.0]]), is_binary=True)
        assert mae(pred, gt) == pytest.approx(0.225)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mae(random_pred(4, 4, 0), random_gt(8, 8, 0))

    def test_matches_oracle(self):
        for seed in range(5):
            pred = random_pred(16, 16, seed)
            gt = random_gt(16, 16, seed + 300)
            assert mae(pred, gt) == pytest.approx(
                oracle_mae(pred.values.tolist(), gt.values.tolist()), abs=1e-12
            )

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_complement_sum_property(self, seed):
        pred = random_pred(8, 8, seed)
        gt = random_gt(8, 8, seed + 1)
        assert mae(pred, gt) + mae(SaliencyMap(1.0 - pred.values), gt) == pytest.approx(1.0)


class TestFMeasure:
    def test_perfect_prediction(self):
        gt = random_gt(16, 16, 2)
        pred = SaliencyMap(gt.values.copy())
        assert f_measure(pred, gt, mode="max") == pytest.approx(1.0)
        assert f_measure(pred, gt, mode="fixed:0.5") == pytest.approx(1.0)

    def test_uniform_one_closed_form(self):
        # pred all ones, gt foreground fraction rho: P = rho, R = 1
        gt = SaliencyMap(np.zeros((16, 16)))
        g = gt.values.copy()
        g[:8, :8] = 1.0  # rho = 0.25
        gt = SaliencyMap(g, is_binary=True)
        pred = SaliencyMap(np.ones((16, 16)))
        expected = 1.3 * 0.25 / (0.3 * 0.25 + 1.0)
        assert f_measure(pred, gt, mode="max") == pytest.approx(expected)
        assert expected == pytest.approx(0.3023, abs=5e-5)

    def test_precision_recall_half(self):
        # construct P = R = 0.5: gt 2 fg pixels, pred hits 1 plus 1 false positive
        g = np.zeros((4, 4))
        g[0, 0] = g[0, 1] = 1.0
        p = np.zeros((4, 4))
        p[0, 0] = 1.0  # true positive
        p[3, 3] = 1.0  # false positive
        score = f_measure(SaliencyMap(p), SaliencyMap(g, is_binary=True), mode="fixed:0.5")
        assert score == pytest.approx(1.3 * 0.25 / (0.3 * 0.5 + 0.5))
        assert score == pytest.approx(0.5)

    def test_empty_gt_rejected(self):
        with pytest.raises(EmptyGroundTruth):
            f_measure(random_pred(8, 8, 0), SaliencyMap(np.zeros((8, 8)), is_binary=True))

    def test_max_dominates_fixed(self):
        pred = random_pred(16, 16, 3)
        gt = random_gt(16, 16, 4)
        best = f_measure(pred, gt, mode="max")
        for tau in (0.1, 0.3, 0.5, 0.7, 0.9):
            assert best >= f_measure(pred, gt, mode=f"fixed:{tau}") - 1e-12

    def test_matches_oracle(self):
        for seed in range(5):
            pred = random_pred(16, 16, seed)
            gt = random_gt(16, 16, seed + 100)
            assert f_measure(pred, gt, mode="max") == pytest.approx(
                oracle_f_measure(pred.values.tolist(), gt.values.tolist()), abs=1e-6
            )


class TestSMeasure:
    def test_perfect_binary(self):
        for seed in range(5):
            gt = random_gt(24, 24, seed + 50)
            assert s_measure(SaliencyMap(gt.values.copy()), gt) == pytest.approx(1.0, abs=1e-6)

    def test_all_background_edge_rule(self):
        gt = SaliencyMap(np.zeros((8, 8)), is_binary=True)
        pred = random_pred(8, 8, 5)
        assert s_measure(pred, gt) == pytest.approx(1.0 - pred.values.mean())
        assert s_measure(SaliencyMap(np.zeros((8, 8))), gt) == pytest.approx(1.0)

    def test_all_foreground_edge_rule(self):
        gt = SaliencyMap(np.ones((8, 8)), is_binary=True)
        pred = random_pred(8, 8, 6)
        assert s_measure(pred, gt) == pytest.approx(pred.values.mean())

    def test_alpha_one_is_object_term(self):
        pred = random_pred(16, 16, 7)
        gt = random_gt(16, 16, 8)
        full = s_measure(pred, gt, alpha=1.0)
        blend = s_measure(pred, gt, alpha=0.5)
        region_only = s_measure(pred, gt, alpha=0.0)
        assert blend == pytest.approx(0.5 * full + 0.5 * region_only, abs=1e-6)

    def test_matches_oracle(self):
        for seed in range(5):
            pred = random_pred(16, 16, seed + 20)
            gt = random_gt(16, 16, seed + 200)
            assert s_measure(pred, gt) == pytest.approx(
                oracle_s_measure(pred.values.tolist(), gt.values.tolist()), abs=1e-6
            )

    def test_flip_invariance(self):
        pred = random_pred(16, 16, 9)
        gt = random_gt(16, 16, 10)
        flipped_p = SaliencyMap(pred.values[:, ::-1].copy())
        flipped_g = SaliencyMap(gt.values[:, ::-1].copy(), is_binary=True)
        assert s_measure(flipped_p, flipped_g) == pytest.approx(s_measure(pred, gt), abs=1e-9)
        assert f_measure(flipped_p, flipped_g) == pytest.approx(f_measure(pred, gt), abs=1e-12)
        assert mae(flipped_p, flipped_g) == pytest.approx(mae(pred, gt), abs=1e-12)


class TestAggregation:
    def test_four_dataset_average(self):
        assert aggregate_scores([94.5, 92.6, 80.3, 96.2]) == pytest.approx(90.9, abs=0.05)

    def test_two_frame_mean(self, tmp_path):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        gt = blob_mask(16, 16)
        save_mask(gt, gt_dir / "a.png")
        save_mask(gt, gt_dir / "b.png")
        # frame a: perfect; frame b: off by a constant 0.2 outside nothing
        save_mask(SaliencyMap(gt.values.copy()), pred_dir / "a.png")
        off = np.clip(np.abs(gt.values - 0.2), 0, 1)
        save_mask(SaliencyMap(off), pred_dir / "b.png")
        report = evaluate_dataset(pred_dir, gt_dir)
        expected_b = np.abs(off - gt.values).mean()
        assert report.mae == pytest.approx((0.0 + expected_b) / 2, abs=1e-2)

    def test_identical_pred_dataset(self, tmp_path):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        for name in ("x.png", "y.png"):
            save_mask(blob_mask(16, 16), gt_dir / name)
            save_mask(blob_mask(16, 16), pred_dir / name)
        report = evaluate_dataset(pred_dir, gt_dir)
        assert report.s_measure == pytest.approx(1.0, abs=1e-6)
        assert report.f_measure == pytest.approx(1.0)
        assert report.mae == 0.0

    def test_missing_prediction_worst_case(self, tmp_path):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        save_mask(blob_mask(16, 16), gt_dir / "a.png")
        save_mask(blob_mask(16, 16), pred_dir / "a.png")
        save_mask(blob_mask(16, 16), gt_dir / "b.png")
        report = evaluate_dataset(pred_dir, gt_dir)
        assert report.missing == ["b.png"]
        assert report.mae == pytest.approx(0.5)
        assert report.s_measure == pytest.approx(0.5, abs=1e-6)

    def test_table_rendering_scale(self):
        from flowsim.metrics import MetricReport

        reports = [
            MetricReport(0.945, 0.939, 0.9, 0.010, dataset="d1"),
            MetricReport(0.926, 0.906, 0.88, 0.028, dataset="d2"),
        ]
        table = format_report_table(reports)
        assert "94.5" in table and "92.6" in table
        assert "Average" in table
