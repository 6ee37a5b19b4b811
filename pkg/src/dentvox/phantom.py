"""Deterministic synthetic dentition phantoms with known ground truth.

Teeth sit on two parabolic arches (upper and lower, separated by a small
bite gap) and are classed by the Universal Numbering System consistent with
quadrant geometry. All placement and noise use plain float arithmetic plus a
splitmix64 counter generator, so a given spec is bit-reproducible across
platforms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .fields import DirectionField, EnergyField, SOURCE_PREDICTION, descent_targets
from .geometry import quadrant_position_to_universal
from .volume import (LABEL, N_CLASSES, PROB_STACK, InstanceMap, InstanceRecord,
                     Volume, one_hot)

SPHERE = "sphere"
ELLIPSOID = "ellipsoid"
TWO_ROOT = "two-root"
SHAPES = (SPHERE, ELLIPSOID, TWO_ROOT)

SEPARATED = "separated"
TOUCHING = "touching"

_MARGIN = 2
_CROWN_R = 3.6          # base crown radius, voxels
_BITE_GAP = 3.0         # vertical clearance between arch crown shells
_SEP_GAP = 3.0          # extra arc spacing between separated crowns
_TOUCH_OVERLAP = 1.2    # arc overlap between touching crowns
_JITTER = 0.25          # per-tooth center jitter amplitude, voxels

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # wraparound mod 2^64 is the semantics
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def stream_uniform(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Counter-based uniforms in [0, 1): splitmix64 of seed + index*gamma."""
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        keyed = np.uint64(seed) + idx * _GAMMA
    bits = _mix64(keyed)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def stream_gauss(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Approximate standard normals (Irwin-Hall sum of 12 uniforms); uses
    only +,-,* so the stream is bit-identical across platforms."""
    u = stream_uniform(seed, count * 12, offset=offset * 12)
    return u.reshape(count, 12).sum(axis=1) - 6.0


def substream_seed(seed: int, tag: int) -> int:
    with np.errstate(over="ignore"):
        keyed = np.uint64(seed) * _GAMMA + np.uint64(tag)
    return int(_mix64(keyed))


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of one synthetic dentition volume."""

    dims: tuple[int, int, int] = (104, 80, 48)
    teeth_per_quadrant: int = 4
    tooth_shape: str = ELLIPSOID
    contact: str = SEPARATED
    jitter_seed: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not 1 <= self.teeth_per_quadrant <= 8:
            raise ValueError("teeth_per_quadrant must be 1..8")
        if self.tooth_shape not in SHAPES:
            raise ValueError(f"tooth_shape must be one of {SHAPES}")
        if self.contact not in (SEPARATED, TOUCHING):
            raise ValueError("contact must be 'separated' or 'touching'")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {"dims": list(self.dims),
                "teeth_per_quadrant": self.teeth_per_quadrant,
                "tooth_shape": self.tooth_shape, "contact": self.contact,
                "jitter_seed": self.jitter_seed,
                "noise_sigma": self.noise_sigma}

    @classmethod
    def from_dict(cls, blob: dict) -> "PhantomSpec":
        return cls(dims=tuple(int(n) for n in blob.get("dims", (104, 80, 48))),
                   teeth_per_quadrant=int(blob.get("teeth_per_quadrant", 4)),
                   tooth_shape=str(blob.get("tooth_shape", ELLIPSOID)),
                   contact=str(blob.get("contact", SEPARATED)),
                   jitter_seed=int(blob.get("jitter_seed", 0)),
                   noise_sigma=float(blob.get("noise_sigma", 0.0)))

    @classmethod
    def from_json(cls, path: str | Path) -> "PhantomSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_dims(teeth_per_quadrant: int,
                 tooth_shape: str = ELLIPSOID) -> tuple[int, int, int]:
    """Volume size that comfortably fits the requested dentition."""
    pitch = 2 * _CROWN_R + _SEP_GAP
    arc = teeth_per_quadrant * pitch
    nx = int(2 * (0.72 * arc + _CROWN_R + _MARGIN + 4))
    ny = int(0.62 * arc + 2 * _CROWN_R + 2 * _MARGIN + 10)
    nz = 48 if tooth_shape == TWO_ROOT else 36
    return (max(nx, 40), max(ny, 32), nz)


def _arch_xy(arc_offsets: np.ndarray, half_width: float,
             apex_y: float) -> np.ndarray:
    """Map signed arc-length offsets (midline = 0) onto a parabola
    y = apex - a*x^2 whose +x branch reaches half_width at the largest arc."""
    s_max = float(np.abs(arc_offsets).max())
    if s_max <= half_width * 1.01:
        a = 0.02
    else:
        # more curvature pulls x(s_max) inward; bisect to land on half_width
        lo, hi = 1e-4, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _arc_to_x(mid, s_max) > half_width:
                lo = mid
            else:
                hi = mid
        a = 0.5 * (lo + hi)
    xs = np.array([np.sign(s) * _arc_to_x(a, abs(float(s)))
                   for s in arc_offsets])
    ys = apex_y - a * xs ** 2
    return np.stack([xs, ys], axis=1)


def _arc_to_x(a: float, s: float) -> float:
    # walk the +x branch in fixed steps, accumulating chord length
    if s <= 0:
        return 0.0
    step = 1.0 / 64.0
    x, acc = 0.0, 0.0
    while acc < s:
        nx = x + step
        acc += np.sqrt(step * step + (a * (nx * nx - x * x)) ** 2)
        x = nx
        if x > 1e4:
            break
    return x


@dataclass(frozen=True)
class _Tooth:
    universal: int
    quadrant: int
    center: tuple[float, float, float]
    upper: bool


def _plan_teeth(spec: PhantomSpec) -> list[_Tooth]:
    nx, ny, nz = spec.dims
    t = spec.teeth_per_quadrant
    r = _CROWN_R
    pitch = 2 * r + _SEP_GAP if spec.contact == SEPARATED \
        else 2 * r - _TOUCH_OVERLAP
    cx = (nx - 1) / 2.0
    cz = (nz - 1) / 2.0
    apex_y = ny - 1 - _MARGIN - r - 1.0
    half_width = cx - _MARGIN - r - 1.0
    offsets = np.array([(m - 0.5) * pitch for m in range(1, t + 1)])
    teeth: list[_Tooth] = []
    for upper in (True, False):
        hw = half_width if upper else half_width - 1.5
        apex = apex_y if upper else apex_y - 1.5
        arcs = np.concatenate([-offsets[::-1], offsets])
        pts = _arch_xy(arcs, hw, apex)
        rz = r * 1.25 if spec.tooth_shape == ELLIPSOID else r * 0.9 \
            if spec.tooth_shape == TWO_ROOT else r
        z = cz + _BITE_GAP / 2.0 + rz if upper else cz - _BITE_GAP / 2.0 - rz
        for i, (x, y) in enumerate(pts):
            if i < t:  # -x side: Q2 upper, Q3 lower; position grows outward
                quadrant = 2 if upper else 3
                position = t - i
            else:
                quadrant = 1 if upper else 4
                position = i - t + 1
            universal = quadrant_position_to_universal(quadrant, position)
            jseed = substream_seed(spec.jitter_seed, universal)
            jit = (stream_uniform(jseed, 1)[0] - 0.5) * 2 * _JITTER
            # jitter only vertically: tangential jitter would perturb contacts
            teeth.append(_Tooth(
                universal=universal, quadrant=quadrant,
                center=(float(x + cx), float(y), float(z + jit)),
                upper=upper))
    return sorted(teeth, key=lambda tooth: tooth.universal)


def _shape_form(tooth: _Tooth, shape: str, dims) -> tuple[tuple, np.ndarray]:
    """Bounding box plus membership form (<= 1 inside) for one tooth."""
    r = _CROWN_R
    cx, cy, cz = tooth.center
    # crowns stay round in the arch plane so touching contacts are uniform
    if shape == SPHERE:
        semi = (r, r, r)
    elif shape == ELLIPSOID:
        semi = (r, r, r * 1.25)
    else:
        semi = (r, r, r * 0.9)
    root_len = 2.0 * r if shape == TWO_ROOT else 0.0
    root_sign = 1.0 if tooth.upper else -1.0
    zlo = cz - semi[2] - (root_len if root_sign < 0 else 0.0)
    zhi = cz + semi[2] + (root_len if root_sign > 0 else 0.0)
    ext_lo = (cx - semi[0], cy - semi[1], zlo)
    ext_hi = (cx + semi[0], cy + semi[1], zhi)
    if any(e < _MARGIN for e in ext_lo) \
            or any(e > n - 1 - _MARGIN for e, n in zip(ext_hi, dims)):
        raise ValueError("phantom spec too dense to honor margins")
    lo = [max(0, int(np.floor(e)) - 1) for e in ext_lo]
    hi = [min(n, int(np.ceil(e)) + 2) for e, n in zip(ext_hi, dims)]
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    xs = np.arange(lo[0], hi[0], dtype=np.float64)[:, None, None]
    ys = np.arange(lo[1], hi[1], dtype=np.float64)[None, :, None]
    zs = np.arange(lo[2], hi[2], dtype=np.float64)[None, None, :]
    form = (((xs - cx) / semi[0]) ** 2 + ((ys - cy) / semi[1]) ** 2
            + ((zs - cz) / semi[2]) ** 2)
    if shape == TWO_ROOT:
        # two tapering root lobes leaving the crown away from the bite plane;
        # apex radius stays >= ~1.2 voxels so the energy landscape has no
        # long unit-level plateaus (they would spawn spurious basin maxima
        # under prediction noise)
        z0 = cz + root_sign * semi[2] * 0.4
        for dx in (-0.45 * r, 0.45 * r):
            depth = root_sign * (zs - z0)  # 0 at the crown, grows to apex
            frac = np.clip(depth / (root_len + semi[2] * 0.6), 0.0, 1.0)
            rad = (0.62 * r) * (1.0 - 0.45 * frac)
            radial = (((xs - (cx + dx)) ** 2 + (ys - cy) ** 2)
                      / np.maximum(rad, 1e-6) ** 2)
            inside_z = (depth >= 0) & (depth <= root_len + semi[2] * 0.6)
            root_form = np.where(inside_z, radial, np.inf)
            form = np.minimum(form, root_form)
    return box, form


def _instance_cores(owner: np.ndarray) -> np.ndarray:
    """Per instance: the 6-connected region of {edt > 1} voxels holding its
    energy maximum. These voxels (and their 6-neighbors) are claimed by the
    watershed strictly before boundary-level flooding starts."""
    from scipy import ndimage
    core = np.zeros(owner.shape, dtype=bool)
    struct = ndimage.generate_binary_structure(3, 1)
    for inst in np.unique(owner):
        if inst == 0:
            continue
        mask = owner == inst
        idx = np.nonzero(mask)
        lo = [max(int(i.min()) - 1, 0) for i in idx]
        hi = [min(int(i.max()) + 2, n) for i, n in zip(idx, owner.shape)]
        box = tuple(slice(a, b) for a, b in zip(lo, hi))
        sub = mask[box]
        dist = ndimage.distance_transform_edt(sub)
        deep = dist > 1.0
        labeled, _ = ndimage.label(deep, structure=struct)
        peak_label = labeled[np.unravel_index(np.argmax(dist), dist.shape)]
        if peak_label > 0:
            core[box] |= labeled == peak_label
    return core


def _trim_ambiguous_contacts(owner: np.ndarray) -> np.ndarray:
    """Remove instance voxels that touch a rival instance without backing
    from their own core: such voxels race the rival at equal flood priority
    and could not be recovered deterministically. Iterates to a fixpoint."""
    from scipy import ndimage
    struct = ndimage.generate_binary_structure(3, 1)
    owner = owner.copy()
    while True:
        fg = owner > 0
        core = _instance_cores(owner)
        safe = core | (ndimage.binary_dilation(core, structure=struct) & fg)
        # contact voxels: 6-adjacent to a different instance
        contact = np.zeros(owner.shape, dtype=bool)
        for axis in range(3):
            a = [slice(None)] * 3
            b = [slice(None)] * 3
            a[axis] = slice(None, -1)
            b[axis] = slice(1, None)
            sa, sb = owner[tuple(a)], owner[tuple(b)]
            differs = (sa != sb) & (sa > 0) & (sb > 0)
            contact[tuple(a)] |= differs
            contact[tuple(b)] |= differs
        unsafe = contact & ~safe
        if not unsafe.any():
            return owner
        owner[unsafe] = 0


def generate(spec: PhantomSpec) -> tuple[Volume, InstanceMap]:
    """Build ground-truth labels and instances for a phantom spec."""
    dims = spec.dims
    teeth = _plan_teeth(spec)
    labels = np.zeros(dims, dtype=np.uint16)
    owner = np.zeros(dims, dtype=np.int32)
    best = np.full(dims, np.inf)
    for idx, tooth in enumerate(teeth, start=1):
        box, form = _shape_form(tooth, spec.tooth_shape, dims)
        # contested voxels go to the shape that contains them more deeply;
        # ties keep the earlier (lower class) tooth
        win = (form <= 1.0) & (form < best[box])
        best[box][win] = form[win]
        owner[box][win] = idx
    if spec.contact == TOUCHING:
        owner = _trim_ambiguous_contacts(owner)
    records = []
    for idx, tooth in enumerate(teeth, start=1):
        mask = owner == idx
        count = int(mask.sum())
        if count == 0:
            raise ValueError(f"tooth {tooth.universal} vanished (spec too dense)")
        labels[mask] = tooth.universal
        center = tuple(int(np.floor(c + 0.5)) for c in tooth.center)
        if owner[center] != idx:  # jitter pushed the center out; use any voxel
            center = tuple(int(i) for i in np.argwhere(mask)[0])
        records.append(InstanceRecord(
            instance_id=idx, seed_voxels=(center,), voxel_count=count,
            assigned_class=tooth.universal))
    if spec.contact == TOUCHING:
        _check_touching(owner, teeth)
    vol = Volume(data=labels, spacing=(0.4, 0.4, 0.4), payload=LABEL)
    imap = InstanceMap(
        labels=Volume(data=owner.astype(np.uint16), spacing=(0.4, 0.4, 0.4),
                      payload=LABEL),
        records=tuple(records))
    return vol, imap


def _adjacent_universal_pairs(teeth: list[_Tooth]) -> list[tuple[int, int]]:
    pairs = []
    for upper in (True, False):
        arch = [t for t in teeth if t.upper == upper]
        arch.sort(key=lambda t: t.center[0])
        for a, b in zip(arch, arch[1:]):
            pairs.append((a.universal, b.universal))
    return pairs


def _check_touching(owner: np.ndarray, teeth: list[_Tooth]) -> None:
    uni_to_idx = {t.universal: i + 1 for i, t in enumerate(teeth)}
    for ua, ub in _adjacent_universal_pairs(teeth):
        ia, ib = uni_to_idx[ua], uni_to_idx[ub]
        if not _face_adjacent(owner, ia, ib):
            raise ValueError(
                f"touching phantom lost contact between teeth {ua} and {ub}")


def _face_adjacent(owner: np.ndarray, ia: int, ib: int) -> bool:
    a = owner == ia
    b = owner == ib
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        if np.any(a[tuple(lo)] & b[tuple(hi)]) or np.any(b[tuple(lo)] & a[tuple(hi)]):
            return True
    return False


def corrupt(gt_labels: Volume, gt_instances: InstanceMap, spec: PhantomSpec
            ) -> tuple[Volume, EnergyField, DirectionField]:
    """Simulated model outputs: softened probabilities, per-tooth rescaled
    energy basins, and noisy directions. noise_sigma = 0 returns exact
    ground-truth encodings.

    The energy perturbation multiplies each tooth's basin by its own
    gaussian factor (1 + sigma*g, clamped to [0.88, 1.15]). A per-basin
    monotone rescale models depth/confidence error without minting new
    regional maxima; additive voxel noise of any amplitude would split the
    flat quantization plateaus of the distance transform into spurious low
    maxima whose half-peak thresholds flood across tooth contacts. The
    clamp keeps neighboring depth ratios above interface/(beta*peak), the
    bound past which seed regions of adjacent basins legitimately merge."""
    sigma = spec.noise_sigma
    probs = one_hot(gt_labels)
    if sigma > 0:
        alpha = sigma / (1.0 + sigma)
        soft = (1.0 - alpha) * probs.data + alpha / N_CLASSES
        probs = Volume(data=soft.astype(np.float32), spacing=probs.spacing,
                       origin=probs.origin, payload=PROB_STACK, normalized=True)
    energy, direction = descent_targets(gt_instances)
    if sigma == 0:
        return probs, energy, direction
    fg = gt_labels.data > 0
    e = energy.energy.data.astype(np.float64)
    factors = 1.0 + sigma * stream_gauss(
        substream_seed(spec.jitter_seed, 101), gt_instances.count)
    factors = np.clip(factors, 0.88, 1.15)
    scale = np.ones(gt_instances.count + 1)
    scale[1:] = factors
    e *= scale[gt_instances.labels.data.astype(np.int64)]
    noisy_energy = EnergyField(
        energy=replace(energy.energy, data=e.astype(np.float32)),
        source=SOURCE_PREDICTION)
    d = direction.directions.data.astype(np.float64)
    live = fg & (np.linalg.norm(d, axis=3) > 1e-6)
    n_live = int(live.sum())
    if n_live == 0:
        return probs, noisy_energy, direction
    noise = 0.5 * sigma * stream_gauss(
        substream_seed(spec.jitter_seed, 202), n_live * 3).reshape(n_live, 3)
    perturbed = d[live] + noise
    norms = np.linalg.norm(perturbed, axis=1)
    ok = norms > 1e-6
    perturbed[ok] /= norms[ok, None]
    perturbed[~ok] = d[live][~ok]  # degenerate after noise: keep gt direction
    d[live] = perturbed
    noisy_dir = DirectionField(
        directions=replace(direction.directions, data=d.astype(np.float32)),
        magnitude=direction.magnitude)
    return probs, noisy_energy, noisy_dir


def standard_suite() -> list[PhantomSpec]:
    """The documented phantom configurations used by the end-to-end tests."""
    return [
        PhantomSpec(dims=default_dims(1), teeth_per_quadrant=1,
                    tooth_shape=SPHERE, contact=SEPARATED, jitter_seed=11),
        PhantomSpec(dims=default_dims(4), teeth_per_quadrant=4,
                    tooth_shape=ELLIPSOID, contact=SEPARATED, jitter_seed=22),
        PhantomSpec(dims=default_dims(4), teeth_per_quadrant=4,
                    tooth_shape=SPHERE, contact=TOUCHING, jitter_seed=33),
        PhantomSpec(dims=default_dims(8), teeth_per_quadrant=8,
                    tooth_shape=ELLIPSOID, contact=TOUCHING, jitter_seed=44),
        PhantomSpec(dims=default_dims(4, TWO_ROOT), teeth_per_quadrant=4,
                    tooth_shape=TWO_ROOT, contact=SEPARATED, jitter_seed=55),
        PhantomSpec(dims=default_dims(8, TWO_ROOT), teeth_per_quadrant=8,
                    tooth_shape=TWO_ROOT, contact=TOUCHING, jitter_seed=66),
    ]
