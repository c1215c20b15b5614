"""Segmentation metrics: per-class IoU from aggregated pixel counts.

Counts are summed over all of a class's images before the division (the
standard dataset-level protocol), then class IoUs are averaged into mIoU.
The degenerate empty-prediction/empty-truth case is defined as IoU 1 and
flagged in the report.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError
from .masks import load_mask


def iou(pred, gt):
    """Pixel counts and IoU between two boolean masks of equal dims.

    Returns (tp, fp, fn, iou); both-empty masks score 1 by convention.
    """
    p = np.asarray(getattr(pred, "grid", pred), dtype=bool)
    g = np.asarray(getattr(gt, "grid", gt), dtype=bool)
    if p.shape != g.shape:
        raise DimensionMismatchError(
            f"prediction dims {p.shape} do not match ground truth {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    denom = tp + fp + fn
    return tp, fp, fn, (tp / denom if denom > 0 else 1.0)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_images: int = 0

    @property
    def iou(self):
        denom = self.tp + self.fp + self.fn
        return self.tp / denom if denom > 0 else 1.0

    @property
    def empty_convention(self):
        return self.n_images > 0 and (self.tp + self.fp + self.fn) == 0


@dataclass
class EvalReport:
    per_class: dict = field(default_factory=dict)  # class -> ClassCounts
    miou: float = 0.0
    missing: list = field(default_factory=list)
    absent_classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_class": {
                cls: {
                    "tp": c.tp, "fp": c.fp, "fn": c.fn,
                    "iou": c.iou, "n_images": c.n_images,
                    "empty_convention": c.empty_convention,
                }
                for cls, c in self.per_class.items()
            },
            "miou": self.miou,
            "missing_ground_truth": self.missing,
            "absent_classes": self.absent_classes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate_dataset(manifest, gt_dir, class_list, root=None):
    """Score every kept manifest entry against ``gt_dir/<id>.png``.

    Entries without a ground-truth file are listed under ``missing`` and
    skipped. Classes from ``class_list`` with no scored image are reported
    absent and excluded from the mean.
    """
    gt_dir = Path(gt_dir)
    root = Path(root) if root is not None else None
    counts = {cls: ClassCounts() for cls in class_list}
    report = EvalReport(per_class=counts)

    for entry in manifest.kept_entries():
        if entry.class_name not in counts:
            continue
        gt_path = gt_dir / f"{entry.id}.png"
        if not gt_path.is_file():
            report.missing.append(str(gt_path))
            continue
        mask_path = entry.mask_path if root is None else root / entry.mask_path
        pred = load_mask(mask_path, entry.class_name)
        gt = load_mask(gt_path, entry.class_name)
        tp, fp, fn, _ = iou(pred, gt)
        c = counts[entry.class_name]
        c.tp += tp
        c.fp += fp
        c.fn += fn
        c.n_images += 1

    scored = {cls: c for cls, c in counts.items() if c.n_images > 0}
    report.absent_classes = sorted(set(class_list) - set(scored))
    report.miou = (sum(c.iou for c in scored.values()) / len(scored)) if scored else 0.0
    return report


def render_table(report, class_list=None):
    """Plain-text per-class table with an mIoU footer."""
    classes = class_list or sorted(report.per_class)
    rows = [f"{'class':<16} {'images':>6} {'tp':>10} {'fp':>10} {'fn':>10} {'IoU %':>8}"]
    rows.append("-" * len(rows[0]))
    for cls in classes:
        c = report.per_class.get(cls)
        if c is None or c.n_images == 0:
            rows.append(f"{cls:<16} {0:>6} {'-':>10} {'-':>10} {'-':>10} {'absent':>8}")
            continue
        note = "*" if c.empty_convention else ""
        rows.append(
            f"{cls:<16} {c.n_images:>6} {c.tp:>10} {c.fp:>10} {c.fn:>10} "
            f"{100 * c.iou:>7.1f}{note}")
    rows.append("-" * len(rows[0]))
    rows.append(f"{'mIoU':<16} {'':>6} {'':>10} {'':>10} {'':>10} {100 * report.miou:>8.1f}")
    if report.missing:
        rows.append(f"missing ground truth: {len(report.missing)} entries")
    if any(c.empty_convention for c in report.per_class.values()):
        rows.append("* empty prediction vs empty truth scored as IoU 1")
    return "\n".join(rows)
