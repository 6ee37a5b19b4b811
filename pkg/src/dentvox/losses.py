"""Reference loss kernels: geometric Wasserstein Dice, weighted cross-entropy,
energy-map MSE, and the angular direction loss, plus their analytic gradients.

All reductions accumulate in float64 with a fixed order, so repeated runs are
bit-identical. The kernels are meant as numeric oracles for training code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PenaltyMatrix
from .volume import LABEL, N_CLASSES, PROB_STACK, VECTOR3, Volume, argmax_labels

LOG_CLAMP = 1e-12
PROB_TOL = 1e-4
UNIT_NORM_TOL = 1e-3
ZERO_NORM = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Combination weights and the class frequencies for WCE."""

    lambda_edt: float = 10.0
    lambda_seg: float = 0.1
    lambda_dir: float = 1e-6
    class_frequencies: np.ndarray = field(
        default_factory=lambda: np.ones(N_CLASSES))

    def __post_init__(self):
        if min(self.lambda_edt, self.lambda_seg, self.lambda_dir) < 0:
            raise ValueError("loss weights must be non-negative")
        freq = np.asarray(self.class_frequencies, dtype=np.float64)
        if freq.shape != (N_CLASSES,):
            raise ValueError(f"class_frequencies must have shape ({N_CLASSES},)")
        if freq.min() < 0 or freq.max() <= 0:
            raise ValueError("class frequencies must be non-negative, one positive")
        object.__setattr__(self, "class_frequencies", freq)

    def wce_class_weights(self) -> np.ndarray:
        """Inverse-frequency weights scaled so they sum to 33 (mean 1)."""
        freq = self.class_frequencies
        inv = np.zeros_like(freq)
        nz = freq > 0
        inv[nz] = 1.0 / freq[nz]
        return inv * (N_CLASSES / inv.sum())


def _check_prob_pair(pred: Volume, gt: Volume) -> tuple[np.ndarray, np.ndarray]:
    for name, v in (("pred", pred), ("gt", gt)):
        if v.payload != PROB_STACK or v.channels != N_CLASSES:
            raise ValueError(f"{name} must be a {N_CLASSES}-channel prob-stack")
    if pred.dims != gt.dims:
        raise ValueError(f"shape mismatch: {pred.dims} vs {gt.dims}")
    p = pred.data.reshape(-1, N_CLASSES).astype(np.float64)
    g = gt.data.reshape(-1, N_CLASSES).astype(np.float64)
    if p.size == 0:
        raise ValueError("empty volume")
    for name, a in (("pred", p), ("gt", g)):
        if a.min() < -PROB_TOL:
            raise ValueError(f"{name} has negative probabilities")
        if np.abs(a.sum(axis=1) - 1.0).max() > PROB_TOL:
            raise ValueError(f"{name} probabilities do not sum to 1")
    return p, g


def wasserstein_mass(pred: np.ndarray, gt: np.ndarray, pm: PenaltyMatrix) -> float:
    """Penalty-weighted probability mass between two class distributions."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != (N_CLASSES,) or gt.shape != (N_CLASSES,):
        raise ValueError(f"distributions must have {N_CLASSES} entries")
    for name, a in (("pred", pred), ("gt", gt)):
        if a.min() < 0:
            raise ValueError(f"{name} has negative probabilities")
        if abs(a.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"{name} does not sum to 1")
    return float(gt @ pm.m @ pred)


def _voxel_wasserstein(p: np.ndarray, g: np.ndarray, pm: PenaltyMatrix) -> np.ndarray:
    return np.einsum("vl,lm,vm->v", g, pm.m, p)


def geo_wdl(pred: Volume, gt: Volume, pm: PenaltyMatrix) -> float:
    """Geometric Wasserstein Dice loss over a volume (background excluded
    from the outer class sums, included in the per-voxel transport cost)."""
    p, g = _check_prob_pair(pred, gt)
    w = _voxel_wasserstein(p, g, pm)
    tooth = g[:, 1:].sum(axis=1)
    s = float((tooth * (1.0 - w)).sum())
    t = float(w.sum())
    denom = 2.0 * s + t
    if denom == 0.0:
        return 0.0
    return float(1.0 - 2.0 * s / denom)


def geo_wdl_grad(pred: Volume, gt: Volume, pm: PenaltyMatrix) -> np.ndarray:
    """Analytic derivative of :func:`geo_wdl` w.r.t. every pred entry."""
    p, g = _check_prob_pair(pred, gt)
    w = _voxel_wasserstein(p, g, pm)
    tooth = g[:, 1:].sum(axis=1)
    s = float((tooth * (1.0 - w)).sum())
    t = float(w.sum())
    denom = 2.0 * s + t
    if denom == 0.0:
        return np.zeros_like(pred.data, dtype=np.float64)
    gm = g @ pm.m  # dW_i/dpred_ic
    grad = 2.0 * gm * (tooth * t + s)[:, np.newaxis] / denom ** 2
    return grad.reshape(pred.data.shape)


def weighted_cross_entropy(pred: Volume, gt_labels: Volume,
                           weights: LossWeights) -> float:
    """Mean inverse-class-frequency weighted cross-entropy."""
    if pred.payload != PROB_STACK or pred.channels != N_CLASSES:
        raise ValueError(f"pred must be a {N_CLASSES}-channel prob-stack")
    if gt_labels.payload != LABEL:
        raise ValueError("gt_labels must be a label volume")
    if pred.dims != gt_labels.dims:
        raise ValueError(f"shape mismatch: {pred.dims} vs {gt_labels.dims}")
    labels = gt_labels.data.astype(np.int64).ravel()
    if labels.max(initial=0) >= N_CLASSES:
        raise ValueError("label value exceeds 32")
    present = np.unique(labels)
    freq = weights.class_frequencies
    missing = [int(c) for c in present if freq[c] == 0]
    if missing:
        raise ValueError(f"classes present in gt with zero frequency: {missing}")
    w = weights.wce_class_weights()
    p = pred.data.reshape(-1, N_CLASSES).astype(np.float64)
    picked = p[np.arange(labels.size), labels]
    losses = -w[labels] * np.log(np.maximum(picked, LOG_CLAMP))
    return float(losses.mean())


def segmentation_loss(pred: Volume, gt: Volume, pm: PenaltyMatrix,
                      weights: LossWeights, *, geo_weight: float = 1.0,
                      wce_weight: float = 1.0) -> float:
    """Unit-weight sum of the Wasserstein Dice and weighted cross-entropy
    (gt labels taken as the one-hot argmax)."""
    gt_labels = argmax_labels(gt)
    return (geo_weight * geo_wdl(pred, gt, pm)
            + wce_weight * weighted_cross_entropy(pred, gt_labels, weights))


def edt_loss(pred_energy: Volume, gt_energy: Volume) -> float:
    """Mean squared error between two scalar energy volumes."""
    if pred_energy.dims != gt_energy.dims:
        raise ValueError(
            f"shape mismatch: {pred_energy.dims} vs {gt_energy.dims}")
    diff = (pred_energy.data.astype(np.float64)
            - gt_energy.data.astype(np.float64))
    return float((diff ** 2).mean())


def edt_loss_grad(pred_energy: Volume, gt_energy: Volume) -> np.ndarray:
    """Analytic derivative of :func:`edt_loss` w.r.t. every pred voxel."""
    diff = (pred_energy.data.astype(np.float64)
            - gt_energy.data.astype(np.float64))
    return 2.0 * diff / diff.size


def _direction_inputs(pred_dir: Volume, gt_dir: Volume, tooth_mask: Volume):
    for name, v in (("pred_dir", pred_dir), ("gt_dir", gt_dir)):
        if v.payload != VECTOR3:
            raise ValueError(f"{name} must be a vector3 volume")
    if tooth_mask.payload != LABEL:
        raise ValueError("tooth_mask must be a label volume")
    if not (pred_dir.dims == gt_dir.dims == tooth_mask.dims):
        raise ValueError("direction fields and mask must share dims")
    if tooth_mask.data.max(initial=0) > 32:
        raise ValueError("tooth mask labels must lie in [0, 32]")
    sel = tooth_mask.data > 0
    p = pred_dir.data[sel].astype(np.float64)
    g = gt_dir.data[sel].astype(np.float64)
    gn = np.linalg.norm(g, axis=1)
    live = gn > ZERO_NORM  # voxels with an undefined (zero) target are skipped
    p, g, gn = p[live], g[live], gn[live]
    pn = np.linalg.norm(p, axis=1)
    if np.any(pn <= ZERO_NORM):
        raise ValueError("zero-length predicted direction inside the tooth mask")
    if np.abs(gn - 1.0).max(initial=0) > UNIT_NORM_TOL \
            or np.abs(pn - 1.0).max(initial=0) > UNIT_NORM_TOL:
        raise ValueError("direction vectors must be unit-norm inside the mask")
    return p, g, sel, live


def direction_loss(pred_dir: Volume, gt_dir: Volume, tooth_mask: Volume,
                   *, reduction: str = "sum") -> float:
    """Sum of squared angular errors over tooth voxels, arccos input clamped
    to [-1, 1]. ``reduction='mean'`` divides by the number of compared voxels."""
    if reduction not in ("sum", "mean"):
        raise ValueError("reduction must be 'sum' or 'mean'")
    p, g, _, _ = _direction_inputs(pred_dir, gt_dir, tooth_mask)
    if p.shape[0] == 0:
        return 0.0
    theta = np.arccos(np.clip((p * g).sum(axis=1), -1.0, 1.0))
    total = float((theta ** 2).sum())
    return total / p.shape[0] if reduction == "mean" else total


def direction_loss_grad(pred_dir: Volume, gt_dir: Volume,
                        tooth_mask: Volume) -> np.ndarray:
    """Analytic derivative of the summed angular loss w.r.t. pred components."""
    p, g, sel, live = _direction_inputs(pred_dir, gt_dir, tooth_mask)
    grad = np.zeros(pred_dir.data.shape, dtype=np.float64)
    if p.shape[0] == 0:
        return grad
    c = np.clip((p * g).sum(axis=1), -1.0, 1.0)
    theta = np.arccos(c)
    s2 = 1.0 - c ** 2
    # d(theta^2)/dc -> -2 as theta -> 0; unbounded near antiparallel
    factor = np.where(s2 > 1e-12, -2.0 * theta / np.sqrt(np.maximum(s2, 1e-300)),
                      -2.0)
    inner = np.zeros((int(sel.sum()), 3))
    inner[live] = factor[:, np.newaxis] * g
    grad[sel] = inner
    return grad


def total_loss(edt: float, seg: float, direction: float,
               weights: LossWeights) -> float:
    """Weighted combination of the three loss parts."""
    parts = np.array([edt, seg, direction], dtype=np.float64)
    if not np.isfinite(parts).all():
        raise ValueError("loss parts must be finite")
    return float(weights.lambda_edt * parts[0] + weights.lambda_seg * parts[1]
                 + weights.lambda_dir * parts[2])
