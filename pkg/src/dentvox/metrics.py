"""Segmentation, boundary, and instance-detection metrics.

Per-class scores follow the usual conventions: a class absent from both
volumes is undefined (excluded from averages), absent from exactly one gives
DSC 0. Surface metrics use 6-connectivity surface voxels; out-of-volume
counts as background.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import LABEL, InstanceMap, Volume

_STRUCT6 = ndimage.generate_binary_structure(3, 1)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MetricReport:
    """Per-class and aggregate scores for one scan pair."""

    per_class: dict[int, dict[str, float | None]]
    aggregate: dict[str, float | None]
    matching: tuple[tuple[int, int, float], ...] = ()
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "per_class": {str(c): dict(v) for c, v in self.per_class.items()},
            "aggregate": dict(self.aggregate),
            "matching": [list(m) for m in self.matching],
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "MetricReport":
        return cls(
            per_class={int(c): dict(v) for c, v in blob["per_class"].items()},
            aggregate=dict(blob["aggregate"]),
            matching=tuple((int(g), int(p), float(i))
                           for g, p, i in blob["matching"]),
            schema=int(blob["schema"]))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_label_pair(pred: Volume, gt: Volume):
    for name, v in (("pred", pred), ("gt", gt)):
        if v.payload != LABEL:
            raise ValueError(f"{name} must be a label volume")
    if pred.dims != gt.dims:
        raise ValueError(f"shape mismatch: {pred.dims} vs {gt.dims}")


def dice_pr_rc(pred: Volume, gt: Volume, cls: int) -> dict[str, float | None] | None:
    """DSC/precision/recall for one class; None if absent from both."""
    _check_label_pair(pred, gt)
    p = pred.data == cls
    g = gt.data == cls
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    if tp + fp + fn == 0:
        return None
    return {
        "dsc": 2.0 * tp / (2 * tp + fp + fn),
        "precision": tp / (tp + fp) if tp + fp > 0 else None,
        "recall": tp / (tp + fn) if tp + fn > 0 else None,
    }


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Voxels of the mask with at least one 6-neighbor outside it (the
    volume border counts as outside)."""
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_STRUCT6, border_value=0)
    return mask & ~interior


def _distance_to_set(target: np.ndarray, spacing) -> np.ndarray:
    """Euclidean distance from every voxel to the target set.

    Isotropic grids go through the integer-squared transform so results are
    bit-identical to an all-pairs scan."""
    sx, sy, sz = spacing
    if sx == sy == sz:
        return ndimage.distance_transform_edt(~target) * sx
    return ndimage.distance_transform_edt(~target, sampling=spacing)


def hausdorff_mm(pred: Volume, gt: Volume, cls: int) -> float:
    """Symmetric Hausdorff distance (mm) between class surfaces, exact max."""
    _check_label_pair(pred, gt)
    sp = surface_voxels(pred.data == cls)
    sg = surface_voxels(gt.data == cls)
    if not sp.any() or not sg.any():
        raise ValueError(f"class {cls} missing on one side")
    d_to_g = _distance_to_set(sg, gt.spacing)
    d_to_p = _distance_to_set(sp, gt.spacing)
    return float(max(d_to_g[sp].max(), d_to_p[sg].max()))


def hausdorff95_mm(pred: Volume, gt: Volume, cls: int) -> float:
    """95th-percentile variant of the symmetric Hausdorff distance."""
    _check_label_pair(pred, gt)
    sp = surface_voxels(pred.data == cls)
    sg = surface_voxels(gt.data == cls)
    if not sp.any() or not sg.any():
        raise ValueError(f"class {cls} missing on one side")
    d_to_g = _distance_to_set(sg, gt.spacing)
    d_to_p = _distance_to_set(sp, gt.spacing)
    return float(max(np.percentile(d_to_g[sp], 95),
                     np.percentile(d_to_p[sg], 95)))


def nsd1(pred: Volume, gt: Volume, *, tolerance_voxels: float = 1.0) -> float:
    """Normalized surface Dice at a 1-voxel Euclidean tolerance (binary)."""
    _check_label_pair(pred, gt)
    sp = surface_voxels(pred.data > 0)
    sg = surface_voxels(gt.data > 0)
    np_, ng = int(sp.sum()), int(sg.sum())
    if np_ + ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    d_to_g = ndimage.distance_transform_edt(~sg)
    d_to_p = ndimage.distance_transform_edt(~sp)
    hit_p = int(np.count_nonzero(d_to_g[sp] <= tolerance_voxels))
    hit_g = int(np.count_nonzero(d_to_p[sg] <= tolerance_voxels))
    return (hit_p + hit_g) / (np_ + ng)


def binary_recall(pred: Volume, gt: Volume) -> float | None:
    """Recall over the union of all tooth classes; None for empty gt."""
    _check_label_pair(pred, gt)
    g = gt.data > 0
    if not g.any():
        return None
    tp = int(np.count_nonzero((pred.data > 0) & g))
    return tp / int(g.sum())


def detection_match(pred: InstanceMap, gt: InstanceMap
                    ) -> tuple[tuple[int, int, float], ...]:
    """Greedy one-to-one matching of gt/pred instances by descending IoU.

    Returns (gt_id, pred_id, iou) triples for every matched overlapping
    pair; detection requires IoU strictly above the threshold (see
    :func:`detection_accuracy`)."""
    g = gt.labels.data.astype(np.int64)
    p = pred.labels.data.astype(np.int64)
    if g.shape != p.shape:
        raise ValueError("instance maps must share dims")
    kg, kp = gt.count, pred.count
    sizes_g = np.bincount(g.ravel(), minlength=kg + 1)
    sizes_p = np.bincount(p.ravel(), minlength=kp + 1)
    both = (g > 0) & (p > 0)
    inter = np.bincount(g[both] * (kp + 1) + p[both],
                        minlength=(kg + 1) * (kp + 1))
    pairs = []
    for flat in np.nonzero(inter)[0]:
        gi, pi = divmod(int(flat), kp + 1)
        union = sizes_g[gi] + sizes_p[pi] - inter[flat]
        pairs.append((float(inter[flat] / union), gi, pi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_g: set[int] = set()
    used_p: set[int] = set()
    matching = []
    for iou, gi, pi in pairs:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        matching.append((gi, pi, iou))
    return tuple(matching)


def detection_accuracy(matching, gt_count: int, *,
                       iou_thresh: float = 0.5) -> float | None:
    """Fraction of gt instances matched with IoU strictly above threshold."""
    if gt_count == 0:
        return None
    detected = sum(1 for _, _, iou in matching if iou > iou_thresh)
    return detected / gt_count


def classification_f1(matching, pred: InstanceMap, gt: InstanceMap, *,
                      iou_thresh: float = 0.5) -> float:
    """Micro F1 over detected instance pairs: equal assigned class is a TP,
    mislabeled matches count as FP and FN, unmatched instances as FP/FN."""
    gt_class = {r.instance_id: r.assigned_class for r in gt.records}
    pred_class = {r.instance_id: r.assigned_class for r in pred.records}
    detected = [(gi, pi) for gi, pi, iou in matching if iou > iou_thresh]
    tp = sum(1 for gi, pi in detected
             if gt_class.get(gi) is not None
             and gt_class.get(gi) == pred_class.get(pi))
    mislabeled = len(detected) - tp
    fp = mislabeled + (pred.count - len(detected))
    fn = mislabeled + (gt.count - len(detected))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2 * tp + fp + fn)


def evaluate(pred_labels: Volume, gt_labels: Volume,
             pred_instances: InstanceMap | None = None,
             gt_instances: InstanceMap | None = None) -> MetricReport:
    """Assemble the full per-class and aggregate report for one scan pair."""
    _check_label_pair(pred_labels, gt_labels)
    present_gt = {int(c) for c in np.unique(gt_labels.data) if 0 < c <= 32}
    present_pred = {int(c) for c in np.unique(pred_labels.data) if 0 < c <= 32}
    per_class: dict[int, dict[str, float | None]] = {}
    for cls in sorted(present_gt | present_pred):
        scores = dice_pr_rc(pred_labels, gt_labels, cls)
        assert scores is not None  # cls is present on at least one side
        if cls in present_gt and cls in present_pred:
            scores["hd_mm"] = hausdorff_mm(pred_labels, gt_labels, cls)
        else:
            scores["hd_mm"] = None
        per_class[cls] = scores

    def _mean(values):
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if vals else None

    aggregate: dict[str, float | None] = {
        "dsc_mean": _mean(per_class[c]["dsc"] for c in present_gt),
        "pr_mean": _mean(per_class[c]["precision"] for c in present_gt),
        "rc_mean": _mean(per_class[c]["recall"] for c in present_gt),
        "hd_mean_mm": _mean(per_class[c]["hd_mm"] for c in present_gt),
        "nsd1": nsd1(pred_labels, gt_labels),
        "rc_b": binary_recall(pred_labels, gt_labels),
        "da": None,
        "f1": None,
    }
    matching: tuple = ()
    if pred_instances is not None and gt_instances is not None:
        matching = detection_match(pred_instances, gt_instances)
        aggregate["da"] = detection_accuracy(matching, gt_instances.count)
        aggregate["f1"] = classification_f1(matching, pred_instances,
                                            gt_instances)
    return MetricReport(per_class=per_class, aggregate=aggregate,
                        matching=matching)
