import json
import math
import sys

import numpy as np
import pytest
from PIL import Image

from egoexo.errors import InvalidArgument, ValidationError
from egoexo.metrics import (
    MetricReport,
    check_holdout_listing,
    depth_rmse,
    emit_leaderboard,
    evaluate_split,
    psnr,
    ssim,
)

# literal per-window references, written independently of the production
# implementations

def reference_psnr(pred, gt, mask=None):
    diff = (np.asarray(pred, float) - np.asarray(gt, float)) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, bool)]
    mse = diff.mean()
    if mse == 0:
        return 99.0
    return min(99.0, 10.0 * math.log10(1.0 / mse))


def _ref_kernel2d():
    k = np.array([math.exp(-(i - 5) ** 2 / (2 * 1.5 ** 2)) for i in range(11)])
    k = k / k.sum()
    return np.outer(k, k)


def reference_ssim(pred, gt):
    pred = np.asarray(pred, float)
    gt = np.asarray(gt, float)
    if pred.ndim == 2:
        pred = pred[..., None]
        gt = gt[..., None]
    w = _ref_kernel2d()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, wd, ch = pred.shape
    scores = []
    for c in range(ch):
        vals = []
        for i in range(h - 10):
            for j in range(wd - 10):
                x = pred[i:i + 11, j:j + 11, c]
                y = gt[i:i + 11, j:j + 11, c]
                mx = (w * x).sum()
                my = (w * y).sum()
                vx = (w * x * x).sum() - mx * mx
                vy = (w * y * y).sum() - my * my
                vxy = (w * x * y).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * vxy + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        scores.append(np.mean(vals))
    return float(np.mean(scores))


def reference_depth_rmse(pred, gt, lo=0.0, hi=60.0):
    pred = np.asarray(pred, float)
    gt = np.asarray(gt, float)
    valid = gt > 0
    p = np.clip(pred[valid], lo, hi)
    g = np.clip(gt[valid], lo, hi)
    return float(np.sqrt(np.mean((p - g) ** 2)))


class TestPsnr:
    def test_identical_images_hit_the_cap(self):
        img = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(img, img) == 99.0

    def test_black_vs_white_is_zero(self):
        assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0

    def test_mid_gray_hand_value(self):
        # MSE = (128/255)^2  ->  -20 log10(128/255)
        pred = np.zeros((4, 4))
        gt = np.full((4, 4), 128.0 / 255.0)
        assert psnr(pred, gt) == pytest.approx(5.9866042157217361, abs=1e-12)

    def test_monotone_in_noise_amplitude(self):
        rng = np.random.default_rng(1)
        gt = rng.random((16, 16))
        noise = rng.standard_normal((16, 16))
        values = []
        for amplitude in (0.01, 0.02, 0.05, 0.1, 0.2):
            pred = np.clip(gt + amplitude * noise, 0, 1)
            values.append(psnr(pred, gt))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_empty_mask_rejected(self):
        with pytest.raises(InvalidArgument):
            psnr(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4), bool))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgument):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_full_mask_equals_unmasked(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert psnr(a, b, np.ones((8, 8), bool)) == psnr(a, b)


class TestSsim:
    def test_identical_is_one(self):
        img = np.random.default_rng(3).random((16, 16, 3))
        assert ssim(img, img) == 1.0

    def test_inverted_binary_is_negative(self):
        rng = np.random.default_rng(4)
        img = (rng.random((16, 16)) > 0.5).astype(float)
        assert ssim(img, 1.0 - img) < 0.0

    def test_matches_literal_reference(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = rng.random((16, 16))
            b = rng.random((16, 16))
            assert ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-7)

    def test_multichannel_matches_reference(self):
        rng = np.random.default_rng(6)
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        assert ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-7)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_image_smaller_than_window_rejected(self):
        with pytest.raises(InvalidArgument):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_full_mask_equals_unmasked(self):
        rng = np.random.default_rng(8)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(a, b, np.ones((16, 16), bool)) == ssim(a, b)

    def test_masked_uses_fully_covered_windows_only(self):
        rng = np.random.default_rng(9)
        a, b = rng.random((16, 32)), rng.random((16, 32))
        mask = np.zeros((16, 32), bool)
        mask[:, :16] = True
        left = ssim(a[:, :16], b[:, :16])
        assert ssim(a, b, mask) == pytest.approx(left, abs=1e-12)

    def test_mask_without_full_window_rejected(self):
        mask = np.zeros((16, 16), bool)
        mask[8, 8] = True
        with pytest.raises(InvalidArgument):
            ssim(np.zeros((16, 16)), np.zeros((16, 16)), mask)


class TestDepthRmse:
    def test_identical_is_zero(self):
        gt = np.full((4, 4), 10.0)
        assert depth_rmse(gt, gt) == 0.0

    def test_uniform_offset(self):
        gt = np.full((4, 4), 10.0)
        assert depth_rmse(gt + 1.0, gt) == pytest.approx(1.0, abs=1e-12)

    def test_clipping_removes_error_above_ceiling(self):
        gt = np.full((4, 4), 70.0)
        pred = np.full((4, 4), 65.0)
        assert depth_rmse(pred, gt) == 0.0

    def test_perturbations_above_ceiling_are_invisible(self):
        rng = np.random.default_rng(10)
        gt = 61.0 + rng.random((8, 8)) * 30
        pred = 61.0 + rng.random((8, 8)) * 30
        assert depth_rmse(pred, gt) == 0.0

    def test_invalid_gt_pixels_excluded(self):
        gt = np.array([[0.0, 10.0]])
        pred = np.array([[55.0, 12.0]])
        assert depth_rmse(pred, gt) == pytest.approx(2.0, abs=1e-12)

    def test_no_valid_pixels_rejected(self):
        with pytest.raises(InvalidArgument):
            depth_rmse(np.ones((2, 2)), np.zeros((2, 2)))

    def test_matches_reference(self):
        rng = np.random.default_rng(11)
        gt = rng.random((16, 16)) * 80
        pred = gt + rng.standard_normal((16, 16)) * 3
        assert depth_rmse(pred, gt) == pytest.approx(
            reference_depth_rmse(pred, gt), abs=1e-12)


def _write_image_pair(pred_dir, gt_dir, name, pred, gt):
    for root, arr in ((pred_dir, pred), (gt_dir, gt)):
        path = root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray((np.asarray(arr) * 255).astype(np.uint8)).save(path)


class TestEvaluateSplit:
    def test_gt_against_itself_hits_fixed_points(self, tmp_path):
        rng = np.random.default_rng(12)
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        for i in range(3):
            img = rng.random((16, 16, 3))
            _write_image_pair(pred_dir, gt_dir, f"scene0/{i}_rgb.png", img, img)
        report = evaluate_split(pred_dir, gt_dir)
        assert report.mean_over_images["psnr_db"] == 99.0
        assert report.mean_over_images["ssim"] == 1.0
        assert report.metadata["n_images"] == 3

    def test_masked_beats_unmasked_when_holes_are_black(self, tmp_path):
        rng = np.random.default_rng(13)
        gt = rng.random((16, 16, 3)) * 0.5 + 0.25
        mask = np.zeros((16, 16), bool)
        mask[:, :16] = False
        mask[:, :12] = True
        pred = gt.copy()
        pred[~mask] = 0.0
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        masks_dir = tmp_path / "masks"
        _write_image_pair(pred_dir, gt_dir, "s/0_rgb.png", pred, gt)
        mpath = masks_dir / "s/0_rgb.png"
        mpath.parent.mkdir(parents=True)
        Image.fromarray((mask * 255).astype(np.uint8)).save(mpath)

        unmasked = evaluate_split(pred_dir, gt_dir)
        masked = evaluate_split(pred_dir, gt_dir, masked=True, masks_dir=masks_dir)
        assert (masked.mean_over_images["psnr_db"]
                >= unmasked.mean_over_images["psnr_db"])
        img = masked.images["s/0_rgb.png"]
        assert img.mask_coverage == pytest.approx(12 / 16)

    def test_missing_mask_names_directory(self, tmp_path):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        _write_image_pair(pred_dir, gt_dir, "0_rgb.png",
                          np.zeros((16, 16, 3)), np.zeros((16, 16, 3)))
        missing = tmp_path / "nope"
        with pytest.raises(InvalidArgument, match="nope"):
            evaluate_split(pred_dir, gt_dir, masked=True, masks_dir=missing)

    def test_filename_mismatch_lists_unmatched(self, tmp_path):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        _write_image_pair(pred_dir, gt_dir, "a_rgb.png",
                          np.zeros((16, 16, 3)), np.zeros((16, 16, 3)))
        extra = gt_dir / "b_rgb.png"
        Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(extra)
        with pytest.raises(ValidationError) as exc:
            evaluate_split(pred_dir, gt_dir)
        assert any("b_rgb.png" in str(d) for d in exc.value.details)

    def test_holdout_town_refused(self, tmp_path):
        listing = tmp_path / "train.json"
        listing.write_text(json.dumps(
            {"train": ["Town01/a.png", "Town02/b.png"], "test": []}))
        with pytest.raises(ValidationError, match="Town02"):
            check_holdout_listing(listing)

    def test_clean_listing_accepted(self, tmp_path):
        listing = tmp_path / "train.json"
        listing.write_text(json.dumps({"train": ["Town01/a.png"], "test": []}))
        check_holdout_listing(listing)

    def test_depth_pairs_scored(self, tmp_path):
        from egoexo.dataset_store import encode_depth, write_png_gray16

        rng = np.random.default_rng(14)
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        img = rng.random((16, 16, 3))
        _write_image_pair(pred_dir, gt_dir, "0_rgb.png", img, img)
        depth = rng.random((16, 16)) * 50 + 1
        write_png_gray16(gt_dir / "0_depth.png", encode_depth(depth))
        write_png_gray16(pred_dir / "0_depth.png", encode_depth(depth + 2.0))
        report = evaluate_split(pred_dir, gt_dir)
        assert report.images["0_rgb.png"].drmse_m == pytest.approx(2.0, abs=1e-3)

    def test_non_rgb_sensor_planes_ignored_in_pairing(self, tmp_path):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        img = np.full((16, 16, 3), 0.5)
        _write_image_pair(pred_dir, gt_dir, "0_rgb.png", img, img)
        # extra ground-truth-only sensor planes must not count as images
        Image.fromarray(np.zeros((16, 16), np.uint8)).save(
            gt_dir / "0_semantic_seg.png")
        Image.fromarray(np.zeros((16, 16), np.uint8)).save(
            gt_dir / "0_instance_seg.png")
        report = evaluate_split(pred_dir, gt_dir)
        assert list(report.images) == ["0_rgb.png"]

    def test_external_perceptual_hook(self, tmp_path):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        _write_image_pair(pred_dir, gt_dir, "0_rgb.png",
                          np.zeros((16, 16, 3)), np.zeros((16, 16, 3)))
        stub = tmp_path / "stub.py"
        stub.write_text("import sys; print(0.25)\n")
        report = evaluate_split(pred_dir, gt_dir,
                                lpips_cmd=[sys.executable, str(stub)])
        assert report.images["0_rgb.png"].lpips == 0.25
        assert report.mean_over_images["lpips"] == 0.25


class TestLeaderboard:
    def _report(self, psnr_db, ssim_v, n=4, drmse=None, lpips=None):
        return MetricReport(
            images={}, mean_over_scenes={},
            mean_over_images={k: v for k, v in (
                ("psnr_db", psnr_db), ("ssim", ssim_v),
                ("drmse_m", drmse), ("lpips", lpips)) if v is not None},
            metadata={"split": "test", "masked": False, "n_images": n},
        )

    def test_single_method(self, tmp_path):
        json_path, md_path = emit_leaderboard(
            [("methodA", self._report(20.0, 0.8))], tmp_path / "board")
        rows = json.loads(json_path.read_text())["leaderboard"]
        assert [r["method"] for r in rows] == ["methodA"]
        assert "methodA" in md_path.read_text()

    def test_sorted_by_psnr_then_ssim_then_name(self, tmp_path):
        reports = [
            ("b", self._report(20.0, 0.7)),
            ("a", self._report(20.0, 0.7)),
            ("c", self._report(20.0, 0.9)),
            ("d", self._report(25.0, 0.1)),
        ]
        json_path, _ = emit_leaderboard(reports, tmp_path / "board")
        rows = json.loads(json_path.read_text())["leaderboard"]
        assert [r["method"] for r in rows] == ["d", "c", "a", "b"]

    def test_reemission_is_byte_identical(self, tmp_path):
        reports = [("x", self._report(21.5, 0.81, drmse=3.25))]
        p1 = emit_leaderboard(reports, tmp_path / "b1")
        p2 = emit_leaderboard(reports, tmp_path / "b2")
        assert p1[0].read_bytes() == p2[0].read_bytes()
        assert p1[1].read_bytes() == p2[1].read_bytes()

    def test_duplicate_method_names_rejected(self, tmp_path):
        reports = [("x", self._report(1, 1)), ("x", self._report(2, 1))]
        with pytest.raises(InvalidArgument):
            emit_leaderboard(reports, tmp_path / "board")

    def test_missing_perceptual_column_is_omitted(self, tmp_path):
        _, md_path = emit_leaderboard(
            [("m", self._report(20.0, 0.8))], tmp_path / "board")
        header = md_path.read_text().splitlines()[0]
        assert "LPIPS" not in header
        _, md2 = emit_leaderboard(
            [("m", self._report(20.0, 0.8, lpips=0.3))], tmp_path / "board2")
        assert "LPIPS" in md2.read_text().splitlines()[0]

    def test_empty_reports_rejected(self, tmp_path):
        with pytest.raises(InvalidArgument):
            emit_leaderboard([], tmp_path / "board")
