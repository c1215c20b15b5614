"""IoU counting and dataset evaluation."""
import numpy as np
import pytest

from ovam.dataset import DatasetManifest, ManifestEntry
from ovam.errors import DimensionMismatchError
from ovam.masks import BinaryMask, save_mask
from ovam.metrics import evaluate_dataset, iou, render_table

from oracles import iou_oracle


def grid_from(coords, shape=(2, 2)):
    g = np.zeros(shape, dtype=bool)
    for y, x in coords:
        g[y, x] = True
    return g


class TestIou:
    def test_identical_nonempty_masks(self):
        g = grid_from([(0, 0), (1, 1)])
        assert iou(g, g) == (2, 0, 0, 1.0)

    def test_reference_pixel_case_is_exactly_one_third(self):
        pred = grid_from([(0, 0), (0, 1)])
        gt = grid_from([(0, 1), (1, 1)])
        tp, fp, fn, value = iou(pred, gt)
        assert (tp, fp, fn) == (1, 1, 1)
        assert value == 1 / 3

    def test_disjoint_nonempty_masks(self):
        assert iou(grid_from([(0, 0)]), grid_from([(1, 1)]))[3] == 0.0

    def test_empty_vs_empty_is_one_by_convention(self):
        empty = np.zeros((3, 3), dtype=bool)
        assert iou(empty, empty) == (0, 0, 0, 1.0)

    def test_swapping_masks_swaps_fp_fn(self):
        rng = np.random.default_rng(0)
        a = rng.random((6, 6)) > 0.5
        b = rng.random((6, 6)) > 0.5
        tp1, fp1, fn1, v1 = iou(a, b)
        tp2, fp2, fn2, v2 = iou(b, a)
        assert (tp1, fp1, fn1) == (tp2, fn2, fp2)
        assert v1 == v2

    def test_matches_pixel_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = rng.random((5, 7)) > 0.4
            b = rng.random((5, 7)) > 0.6
            assert iou(a, b) == iou_oracle(a, b)

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.random((4, 4)) > rng.random()
            b = rng.random((4, 4)) > rng.random()
            assert 0.0 <= iou(a, b)[3] <= 1.0

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            iou(np.zeros((2, 2), bool), np.zeros((3, 2), bool))

    def test_accepts_binary_mask_objects(self):
        m = BinaryMask.from_grid(grid_from([(0, 0)]), "x")
        assert iou(m, m)[3] == 1.0


def _write_fixture(tmp_path, rng, classes, n_per_class, shape=(8, 8)):
    """Random pred/gt mask pairs on disk plus the matching manifest."""
    entries = []
    gt_dir = tmp_path / "gt"
    gt_dir.mkdir()
    pairs = {}
    for cls in classes:
        for i in range(n_per_class):
            eid = f"{cls}_{i:06d}"
            pred = rng.random(shape) > 0.5
            gt = rng.random(shape) > 0.5
            save_mask(BinaryMask.from_grid(pred, cls),
                      tmp_path / "masks" / f"{eid}.png")
            save_mask(BinaryMask.from_grid(gt, cls), gt_dir / f"{eid}.png")
            entries.append(ManifestEntry(
                id=eid, class_name=cls, prompt="p", seed=i,
                image_path=f"images/{eid}.png",
                mask_path=f"masks/{eid}.png",
                area_fraction=float(pred.mean())))
            pairs[eid] = (pred, gt)
    return DatasetManifest(entries=entries), gt_dir, pairs


class TestEvaluateDataset:
    def test_single_image_per_class_reduces_to_plain_iou(self, tmp_path):
        rng = np.random.default_rng(3)
        manifest, gt_dir, pairs = _write_fixture(tmp_path, rng, ["dog"], 1)
        report = evaluate_dataset(manifest, gt_dir, ["dog"], root=tmp_path)
        pred, gt = pairs["dog_000000"]
        assert report.per_class["dog"].iou == iou(pred, gt)[3]
        assert report.miou == report.per_class["dog"].iou

    def test_three_class_fixture_matches_hand_loop(self, tmp_path):
        rng = np.random.default_rng(4)
        classes = ["dog", "cat", "bus"]
        manifest, gt_dir, pairs = _write_fixture(tmp_path, rng, classes, 3)
        report = evaluate_dataset(manifest, gt_dir, classes, root=tmp_path)
        expected_ious = []
        for cls in classes:
            tp = fp = fn = 0
            for eid, (pred, gt) in pairs.items():
                if eid.startswith(cls):
                    a, b, c, _ = iou_oracle(pred, gt)
                    tp, fp, fn = tp + a, fp + b, fn + c
            expected_ious.append(tp / (tp + fp + fn))
        assert abs(report.miou - np.mean(expected_ious)) < 1e-9
        for cls, expected in zip(classes, expected_ious):
            assert abs(report.per_class[cls].iou - expected) < 1e-9

    def test_counts_aggregate_not_average(self, tmp_path):
        # dataset-level IoU: duplicating every image leaves class IoU unchanged
        rng = np.random.default_rng(5)
        manifest, gt_dir, _ = _write_fixture(tmp_path, rng, ["dog"], 2)
        report1 = evaluate_dataset(manifest, gt_dir, ["dog"], root=tmp_path)
        doubled = DatasetManifest(entries=manifest.entries * 2)
        report2 = evaluate_dataset(doubled, gt_dir, ["dog"], root=tmp_path)
        assert report2.per_class["dog"].tp == 2 * report1.per_class["dog"].tp
        assert report2.per_class["dog"].iou == report1.per_class["dog"].iou

    def test_missing_ground_truth_listed_and_skipped(self, tmp_path):
        rng = np.random.default_rng(6)
        manifest, gt_dir, _ = _write_fixture(tmp_path, rng, ["dog"], 2)
        (gt_dir / "dog_000001.png").unlink()
        report = evaluate_dataset(manifest, gt_dir, ["dog"], root=tmp_path)
        assert len(report.missing) == 1
        assert report.per_class["dog"].n_images == 1

    def test_absent_class_excluded_from_mean(self, tmp_path):
        rng = np.random.default_rng(7)
        manifest, gt_dir, _ = _write_fixture(tmp_path, rng, ["dog"], 1)
        report = evaluate_dataset(manifest, gt_dir, ["dog", "unicorn"],
                                  root=tmp_path)
        assert report.absent_classes == ["unicorn"]
        assert report.miou == report.per_class["dog"].iou

    def test_dropped_entries_not_scored(self, tmp_path):
        rng = np.random.default_rng(8)
        manifest, gt_dir, _ = _write_fixture(tmp_path, rng, ["dog"], 2)
        manifest.entries[1].kept = False
        manifest.entries[1].drop_reason = "area_low"
        report = evaluate_dataset(manifest, gt_dir, ["dog"], root=tmp_path)
        assert report.per_class["dog"].n_images == 1

    def test_table_renders_classes_and_miou(self, tmp_path):
        rng = np.random.default_rng(9)
        manifest, gt_dir, _ = _write_fixture(tmp_path, rng, ["dog", "cat"], 1)
        report = evaluate_dataset(manifest, gt_dir, ["dog", "cat"],
                                  root=tmp_path)
        table = render_table(report, ["dog", "cat"])
        assert "dog" in table and "cat" in table and "mIoU" in table

    def test_report_json_round_trip(self, tmp_path):
        import json
        rng = np.random.default_rng(10)
        manifest, gt_dir, _ = _write_fixture(tmp_path, rng, ["dog"], 1)
        report = evaluate_dataset(manifest, gt_dir, ["dog"], root=tmp_path)
        data = json.loads(report.to_json())
        assert data["miou"] == report.miou
        assert data["per_class"]["dog"]["tp"] == report.per_class["dog"].tp
