"""Seeded 3D watershed: seed extraction from energy basins, priority-flood
instance separation, and majority-vote class assignment.

All tie-breaking rules are total orders, so results are deterministic and
independent of any parallelism in the caller.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .fields import EnergyField
from .volume import (LABEL, PROB_STACK, InstanceMap, InstanceRecord, Volume,
                     argmax_labels)

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)
_STRUCT6 = ndimage.generate_binary_structure(3, 1)

_OFFSETS6 = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))
_OFFSETS26 = tuple((dx, dy, dz)
                   for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                   if (dx, dy, dz) != (0, 0, 0))


@dataclass(frozen=True)
class WatershedConfig:
    """Seed extraction and flooding parameters."""

    beta: float = 0.5
    seed_connectivity: int = 26
    flood_connectivity: int = 6
    min_seed_voxels: int = 8
    min_instance_voxels: int = 50

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.seed_connectivity not in (6, 26) \
                or self.flood_connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")
        if self.min_seed_voxels < 1 or self.min_instance_voxels < 0:
            raise ValueError("size thresholds must be positive")


@dataclass(frozen=True)
class Seed:
    """One seed component: its voxels, peak energy, and peak location."""

    voxels: np.ndarray  # (N, 3) integer indices
    peak_energy: float
    peak_voxel: tuple[int, int, int]


def _structure(connectivity: int) -> np.ndarray:
    return _STRUCT6 if connectivity == 6 else _STRUCT26


def binarize_segmentation(seg: Volume) -> Volume:
    """Foreground mask: label != 0, or argmax channel != 0 for prob stacks."""
    if seg.payload == PROB_STACK:
        seg = argmax_labels(seg)
    if seg.payload != LABEL:
        raise ValueError("segmentation must be labels or a prob-stack")
    mask = (seg.data != 0).astype(np.uint16)
    return replace(seg, data=mask, payload=LABEL)


def _regional_maxima(energy: np.ndarray, mask: np.ndarray,
                     structure: np.ndarray):
    """Plateau-aware regional maxima of energy restricted to the mask.

    Returns a list of (peak_value, component_mask). Plateaus partially
    drained by a higher in-mask neighbor are rejected; non-positive peaks
    never seed."""
    masked = np.where(mask, energy, -np.inf)
    dil = ndimage.grey_dilation(masked, footprint=structure,
                                mode="constant", cval=-np.inf)
    cand = mask & (masked == dil) & (energy > 0)
    labeled, n = ndimage.label(cand, structure=structure)
    maxima = []
    for comp_id in range(1, n + 1):
        comp = labeled == comp_id
        peak = float(energy[comp].flat[0])
        ring = ndimage.binary_dilation(comp, structure=structure) & ~comp & mask
        if np.any(energy[ring] == peak):
            continue  # plateau continues outside the candidate set: drained
        maxima.append((peak, comp))
    return maxima


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def extract_seeds(field: EnergyField, mask: Volume,
                  cfg: WatershedConfig | None = None) -> list[Seed]:
    """Grow each regional maximum to the connected region above beta times
    its peak, merge overlapping regions, and drop undersized ones.

    Seeds are ordered by (peak energy descending, lexicographic voxel index).
    An empty mask yields an empty list."""
    cfg = cfg or WatershedConfig()
    energy = field.energy.data.astype(np.float64)
    if mask.payload != LABEL:
        raise ValueError("mask must be a label volume")
    if mask.dims != field.energy.dims:
        raise ValueError("energy and mask must share dims")
    fg = mask.data > 0
    if not fg.any():
        return []
    structure = _structure(cfg.seed_connectivity)
    maxima = _regional_maxima(energy, fg, structure)
    regions = []
    for peak, comp in maxima:
        above = fg & (energy >= cfg.beta * peak)
        labeled, _ = ndimage.label(above, structure=structure)
        anchor = tuple(int(i[0]) for i in np.nonzero(comp))
        region = labeled == labeled[anchor]
        regions.append((peak, anchor, region))

    # merge regions that share voxels (union-find over region indices)
    uf = _UnionFind(len(regions))
    claim = np.full(energy.shape, -1, dtype=np.int64)
    for i, (_, _, region) in enumerate(regions):
        holders = np.unique(claim[region])
        for h in holders:
            if h >= 0:
                uf.union(i, int(h))
        claim[region] = i
    groups: dict[int, list[int]] = {}
    for i in range(len(regions)):
        groups.setdefault(uf.find(i), []).append(i)

    seeds = []
    for members in groups.values():
        union_mask = np.zeros(energy.shape, dtype=bool)
        peak = -np.inf
        for i in members:
            p, _, region = regions[i]
            union_mask |= region
            peak = max(peak, p)
        voxels = np.argwhere(union_mask)
        if voxels.shape[0] < cfg.min_seed_voxels:
            continue
        peak_candidates = voxels[energy[tuple(voxels.T)] == peak]
        peak_voxel = tuple(int(v) for v in min(map(tuple, peak_candidates)))
        seeds.append(Seed(voxels=voxels, peak_energy=float(peak),
                          peak_voxel=peak_voxel))
    seeds.sort(key=lambda s: (-s.peak_energy, tuple(s.voxels[0])))
    return seeds


def seeded_watershed(field: EnergyField, seeds: list[Seed], mask: Volume,
                     cfg: WatershedConfig | None = None) -> InstanceMap:
    """Priority-flood the energy landscape from labeled seeds.

    The highest-energy queued voxel is expanded first; a claimed neighbor is
    queued at min(its energy, the popped priority). Ties break by (lower
    instance id, lexicographic voxel index). Mask voxels unreachable from any
    seed stay background; instances below min_instance_voxels are erased."""
    cfg = cfg or WatershedConfig()
    energy = field.energy.data.astype(np.float64)
    if mask.dims != field.energy.dims:
        raise ValueError("energy and mask must share dims")
    fg = mask.data > 0
    labels = np.zeros(energy.shape, dtype=np.int32)
    heap: list[tuple] = []
    for sid, seed in enumerate(seeds, start=1):
        for vox in seed.voxels:
            v = tuple(int(i) for i in vox)
            if not fg[v]:
                raise ValueError(f"seed {sid} extends outside the mask at {v}")
            if labels[v] != 0:
                raise ValueError(f"seeds {labels[v]} and {sid} overlap at {v}")
            labels[v] = sid
            heapq.heappush(heap, (-energy[v], sid, v[0], v[1], v[2]))
    offsets = _OFFSETS6 if cfg.flood_connectivity == 6 else _OFFSETS26
    nx, ny, nz = energy.shape
    while heap:
        negp, sid, x, y, z = heapq.heappop(heap)
        priority = -negp
        for dx, dy, dz in offsets:
            ax, ay, az = x + dx, y + dy, z + dz
            if not (0 <= ax < nx and 0 <= ay < ny and 0 <= az < nz):
                continue
            if labels[ax, ay, az] != 0 or not fg[ax, ay, az]:
                continue
            labels[ax, ay, az] = sid
            heapq.heappush(
                heap, (-min(energy[ax, ay, az], priority), sid, ax, ay, az))

    counts = np.bincount(labels.ravel(), minlength=len(seeds) + 1)
    keep = [sid for sid in range(1, len(seeds) + 1)
            if counts[sid] >= cfg.min_instance_voxels and counts[sid] > 0]
    remap = np.zeros(len(seeds) + 1, dtype=np.int32)
    records = []
    for new_id, sid in enumerate(keep, start=1):
        remap[sid] = new_id
        seed = seeds[sid - 1]
        records.append(InstanceRecord(
            instance_id=new_id,
            seed_voxels=tuple(tuple(int(i) for i in v) for v in seed.voxels),
            voxel_count=int(counts[sid]),
            seed_peak_energy=seed.peak_energy))
    out = remap[labels].astype(np.uint16)
    vol = replace(mask, data=out, payload=LABEL)
    return InstanceMap(labels=vol, records=tuple(records))


def majority_vote(instances: InstanceMap, seg: Volume) -> InstanceMap:
    """Assign each instance the tooth class most frequent among its voxels,
    background votes excluded; ties break toward the lower class index.

    Classes are unique across instances: instances claim classes in order of
    decreasing size (then lower id), each taking its most-voted class still
    available; an instance with no available voted class stays unassigned."""
    if seg.payload == PROB_STACK:
        seg = argmax_labels(seg)
    if seg.payload != LABEL:
        raise ValueError("segmentation must be labels or a prob-stack")
    if seg.dims != instances.labels.dims:
        raise ValueError("segmentation and instances must share dims")
    classes = seg.data.astype(np.int64)
    if classes.max(initial=0) > 32:
        raise ValueError("semantic labels must lie in [0, 32]")
    ids = instances.labels.data.astype(np.int64)
    k = instances.count
    hist = np.zeros((k + 1, 33), dtype=np.int64)
    np.add.at(hist, (ids.ravel(), classes.ravel()), 1)
    order = sorted(instances.records,
                   key=lambda r: (-r.voxel_count, r.instance_id))
    taken: set[int] = set()
    assigned: dict[int, int | None] = {}
    for rec in order:
        votes = hist[rec.instance_id, 1:]  # tooth classes only
        choice = None
        for cls in np.argsort(-votes, kind="stable"):
            if votes[cls] == 0:
                break
            if int(cls) + 1 not in taken:
                choice = int(cls) + 1
                break
        if choice is not None:
            taken.add(choice)
        assigned[rec.instance_id] = choice
    records = tuple(replace(r, assigned_class=assigned[r.instance_id])
                    for r in instances.records)
    return InstanceMap(labels=instances.labels, records=records)


def run_pipeline(field: EnergyField, seg: Volume,
                 cfg: WatershedConfig | None = None) -> InstanceMap:
    """binarize -> extract seeds -> flood -> majority vote."""
    cfg = cfg or WatershedConfig()
    mask = binarize_segmentation(seg)
    seeds = extract_seeds(field, mask, cfg)
    instances = seeded_watershed(field, seeds, mask, cfg)
    return majority_vote(instances, seg)


def instances_to_labels(instances: InstanceMap) -> Volume:
    """Semantic label volume from classified instances (unassigned -> 0)."""
    lut = np.zeros(instances.count + 1, dtype=np.uint16)
    for rec in instances.records:
        lut[rec.instance_id] = rec.assigned_class or 0
    data = lut[instances.labels.data.astype(np.int64)]
    return replace(instances.labels, data=data, payload=LABEL)
