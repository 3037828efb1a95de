import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cracenet.data import save_gray
from cracenet.metrics import (
    DatasetMismatchError,
    e_measure,
    evaluate_dataset,
    evaluate_pairs,
    f_beta,
    mae,
    max_f,
    mean_f,
    pr_curve,
    s_measure,
    weighted_f,
)
from oracles import (
    e_measure_bruteforce,
    f_beta_scalar,
    pr_bruteforce,
    s_measure_bruteforce,
    weighted_f_bruteforce,
)


def toy_pair(seed=0, side=3):
    rng = np.random.default_rng(seed)
    pred = np.round(rng.uniform(size=(side, side)) * 255) / 255.0
    gt = (rng.uniform(size=(side, side)) > 0.5).astype(np.float64)
    if not gt.any():
        gt[side // 2, side // 2] = 1.0
    return pred, gt


class TestPrCurve:
    def test_perfect_map_all_thresholds(self):
        _, gt = toy_pair(1)
        precision, recall = pr_curve([gt], [gt])
        assert np.all(precision == 1.0) and np.all(recall == 1.0)

    def test_all_positive_predictor(self):
        _, gt = toy_pair(2, side=4)
        ones = np.ones_like(gt)
        precision, recall = pr_curve([ones], [gt])
        assert np.all(recall == 1.0)
        assert np.allclose(precision, gt.mean())

    def test_matches_bruteforce_counting(self):
        pairs = [toy_pair(3), toy_pair(4)]
        preds = [p for p, _ in pairs]
        gts = [g for _, g in pairs]
        precision, recall = pr_curve(preds, gts)
        ref_p, ref_r = pr_bruteforce(preds, gts)
        assert np.allclose(precision, ref_p, atol=1e-12)
        assert np.allclose(recall, ref_r, atol=1e-12)

    def test_recall_monotone_nonincreasing(self):
        preds = [toy_pair(5, 8)[0]]
        gts = [toy_pair(6, 8)[1]]
        _, recall = pr_curve(preds, gts)
        assert np.all(np.diff(recall) <= 0.0)

    def test_empty_dataset_error(self):
        with pytest.raises(ValueError):
            pr_curve([], [])

    def test_all_empty_gt_error(self):
        z = np.zeros((4, 4))
        with pytest.raises(ValueError):
            pr_curve([z], [z])

    def test_per_image_variant(self):
        pairs = [toy_pair(7), toy_pair(8)]
        precision, recall = pr_curve([p for p, _ in pairs], [g for _, g in pairs], per_image=True)
        assert precision.shape == (256,) and recall.shape == (256,)
        assert np.all((0 <= precision) & (precision <= 1))


class TestFMeasure:
    def test_fixed_point(self):
        for p in (0.2, 0.5, 0.9):
            assert f_beta(p, p) == pytest.approx(p, abs=1e-12)

    def test_zero_recall(self):
        assert f_beta(1.0, 0.0) == 0.0

    def test_direct_evaluation(self):
        # frozen: 1.3 * 0.8 * 0.5 / (0.3 * 0.8 + 0.5) = 0.52 / 0.74
        assert f_beta(0.8, 0.5) == pytest.approx(0.52 / 0.74, abs=1e-12)
        assert f_beta(0.8, 0.5) == pytest.approx(f_beta_scalar(0.8, 0.5), abs=1e-15)

    def test_max_and_mean_on_identical_maps(self):
        _, gt = toy_pair(9, 6)
        curve = pr_curve([gt], [gt])
        assert max_f(curve) == 1.0
        assert mean_f([gt], [gt]) == 1.0

    def test_max_dominates_mean(self):
        pred, gt = toy_pair(10, 8)
        assert max_f(pr_curve([pred], [gt])) >= mean_f([pred], [gt])

    def test_adaptive_convention_runs(self):
        pred, gt = toy_pair(11, 8)
        val = mean_f([pred], [gt], convention="adaptive")
        assert 0.0 <= val <= 1.0


class TestMae:
    def test_identical(self):
        _, gt = toy_pair(12)
        assert mae([gt], [gt]) == 0.0

    def test_extremes(self):
        z = np.zeros((4, 4))
        assert mae([np.ones((4, 4))], [z]) == 1.0

    def test_constant_offset(self):
        assert mae([np.full((4, 4), 0.25)], [np.zeros((4, 4))]) == 0.25


class TestWeightedF:
    def test_identical_binary_is_exactly_one(self):
        _, gt = toy_pair(13, 7)
        assert weighted_f([gt], [gt]) == 1.0

    def test_empty_prediction_is_zero(self):
        _, gt = toy_pair(14, 7)
        assert weighted_f([np.zeros_like(gt)], [gt]) == 0.0

    def test_matches_dense_oracle_5x5(self):
        for seed in range(6):
            pred, gt = toy_pair(seed + 20, 5)
            assert weighted_f([pred], [gt]) == pytest.approx(
                weighted_f_bruteforce(pred, gt), abs=1e-9
            )

    def test_skips_empty_gt_images(self):
        pred, gt = toy_pair(15, 5)
        with_eq = weighted_f([pred], [gt])
        with_extra = weighted_f([pred, np.ones((5, 5))], [gt, np.zeros((5, 5))])
        assert with_extra == with_eq


class TestSMeasure:
    def test_identical_is_one(self):
        _, gt = toy_pair(16, 8)
        assert s_measure([gt], [gt]) == 1.0

    def test_matches_transcription_oracle(self):
        for seed in range(6):
            pred, gt = toy_pair(seed + 30, 8)
            assert s_measure([pred], [gt]) == pytest.approx(
                s_measure_bruteforce(pred, gt), abs=1e-9
            )

    def test_degenerate_branches(self):
        pred = np.full((6, 6), 0.3)
        assert s_measure([pred], [np.zeros((6, 6))]) == pytest.approx(0.7, abs=1e-6)
        assert s_measure([pred], [np.ones((6, 6))]) == pytest.approx(0.3, abs=1e-6)


class TestEMeasure:
    def test_identical_is_one(self):
        _, gt = toy_pair(17, 8)
        assert e_measure([gt], [gt]) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_is_zero(self):
        _, gt = toy_pair(18, 8)
        assert e_measure([1.0 - gt], [gt]) == pytest.approx(0.0, abs=1e-12)

    def test_matches_transcription_oracle(self):
        for seed in range(6):
            pred, gt = toy_pair(seed + 40, 8)
            assert e_measure([pred], [gt]) == pytest.approx(
                e_measure_bruteforce(pred, gt), abs=1e-9
            )

    def test_degenerate_branches(self):
        pred = np.full((6, 6), 0.2)
        assert e_measure([pred], [np.zeros((6, 6))]) == pytest.approx(0.8, abs=1e-6)
        assert e_measure([pred], [np.ones((6, 6))]) == pytest.approx(0.2, abs=1e-6)


class TestInvariances:
    def test_order_invariance(self):
        pairs = [toy_pair(s, 6) for s in range(50, 54)]
        preds = [p for p, _ in pairs]
        gts = [g for _, g in pairs]
        fwd = evaluate_pairs(preds, gts)
        rev = evaluate_pairs(preds[::-1], gts[::-1])
        assert fwd.as_dict() == rev.as_dict()

    def test_quantization_stability(self):
        rng = np.random.default_rng(60)
        pred = rng.uniform(size=(16, 16))
        gt = (rng.uniform(size=(16, 16)) > 0.5).astype(np.float64)
        quant = np.round(pred * 255) / 255.0
        assert abs(max_f(pr_curve([pred], [gt])) - max_f(pr_curve([quant], [gt]))) <= 0.02
        assert abs(mean_f([pred], [gt]) - mean_f([quant], [gt])) <= 0.02
        assert mae([quant], [gt]) == mae([quant.copy()], [gt])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**16 - 1))
    def test_report_values_in_unit_interval(self, seed):
        pred, gt = toy_pair(seed, 6)
        report = evaluate_pairs([pred], [gt])
        for value in report.as_dict().values():
            assert 0.0 <= value <= 1.0
        assert report.max_f >= report.mean_f


class TestEvaluateDataset:
    def test_identical_dirs_perfect_report(self, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir(), gt_dir.mkdir()
        for i in range(3):
            _, gt = toy_pair(i + 70, 8)
            save_gray(pred_dir / f"{i}.pgm", gt)
            save_gray(gt_dir / f"{i}.pgm", gt)
        report = evaluate_dataset(pred_dir, gt_dir)
        assert report.max_f == 1.0 and report.mean_f == 1.0
        assert report.weighted_f == 1.0 and report.s_measure == 1.0
        assert report.mae == 0.0
        assert report.pr.shape == (256, 2)

    def test_inverted_predictions_mae(self, tmp_path):
        # expected value computed directly on the same toy set
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir(), gt_dir.mkdir()
        expected = []
        for i in range(3):
            _, gt = toy_pair(i + 90, 8)
            save_gray(pred_dir / f"{i}.pgm", 1.0 - gt)
            save_gray(gt_dir / f"{i}.pgm", gt)
            expected.append(np.abs((1.0 - gt) - gt).mean())
        report = evaluate_dataset(pred_dir, gt_dir)
        assert report.mae == pytest.approx(np.mean(expected), abs=1e-12)

    def test_unmatched_files_error(self, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir(), gt_dir.mkdir()
        _, gt = toy_pair(80, 6)
        save_gray(pred_dir / "a.pgm", gt)
        save_gray(gt_dir / "b.pgm", gt)
        with pytest.raises(DatasetMismatchError) as err:
            evaluate_dataset(pred_dir, gt_dir)
        assert "a" in str(err.value) and "b" in str(err.value)

    def test_report_formats(self):
        pred, gt = toy_pair(81, 6)
        report = evaluate_pairs([pred], [gt])
        assert "maxF" in report.text_table()
        assert report.delimited().count("\n") == 7
        assert len(report.pr_rows().strip().splitlines()) == 256
