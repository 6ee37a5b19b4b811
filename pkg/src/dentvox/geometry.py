"""Dentition centroid tables and the 33x33 class penalty matrix.

Tooth classes follow the Universal Numbering System (1 = upper right third
molar, counting across the upper arch to 16, resuming at 17 = lower left
third molar and ending at 32 = lower right third molar). Within a quadrant,
position 1 is the central incisor and position 8 the third molar.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

QUADRANTS = (1, 2, 3, 4)
POSITIONS = tuple(range(1, 9))

CLASS_NAMES = ("background",) + tuple(f"tooth_{n:02d}" for n in range(1, 33))

_DATA_DIR = Path(__file__).parent / "data"


def universal_to_quadrant_position(n: int) -> tuple[int, int]:
    """Map a Universal tooth number (1..32) to (quadrant, position)."""
    if not 1 <= n <= 32:
        raise ValueError(f"tooth number out of range: {n}")
    quadrant = (n - 1) // 8 + 1
    offset = (n - 1) % 8
    position = 8 - offset if quadrant in (1, 3) else offset + 1
    return quadrant, position


def quadrant_position_to_universal(quadrant: int, position: int) -> int:
    """Inverse of :func:`universal_to_quadrant_position`."""
    if quadrant not in QUADRANTS or position not in POSITIONS:
        raise ValueError(f"invalid quadrant/position: ({quadrant}, {position})")
    base = {1: 9, 2: 8, 3: 25, 4: 24}[quadrant]
    return base - position if quadrant in (1, 3) else base + position


@dataclass(frozen=True)
class CentroidTable:
    """Per-tooth 2D geometric centers keyed by (quadrant, position)."""

    entries: dict[tuple[int, int], tuple[float, float]]
    provenance: str = ""

    def point(self, quadrant: int, position: int) -> np.ndarray:
        return np.array(self.entries[(quadrant, position)], dtype=np.float64)

    def is_complete(self) -> bool:
        return all((k, m) in self.entries for k in QUADRANTS for m in POSITIONS)


@dataclass(frozen=True)
class QuadrantPenalty:
    """4x4 flat penalty modifiers between quadrants."""

    q: np.ndarray = field(default_factory=lambda: np.array([
        [0.0, 0.1, 0.3, 0.2],
        [0.1, 0.0, 0.2, 0.3],
        [0.3, 0.2, 0.0, 0.1],
        [0.2, 0.3, 0.1, 0.0],
    ]))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.shape != (4, 4):
            raise ValueError("quadrant penalty must be 4x4")
        if np.any(np.diag(q) != 0.0):
            raise ValueError("quadrant penalty diagonal must be zero")
        if not np.array_equal(q, q.T):
            raise ValueError("quadrant penalty must be symmetric")
        if not np.isin(q, (0.0, 0.1, 0.2, 0.3)).all():
            raise ValueError("quadrant penalty entries must be in {0, 0.1, 0.2, 0.3}")
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class PenaltyMatrix:
    """33x33 class-dissimilarity matrix (background first, then teeth 1..32).

    ``m`` is the final-normalized matrix (max entry 1, background row/column
    equal to 1). ``m * normalizer`` recovers the pre-final-normalization
    scale, where the tooth block spans (0, 1) and background carries its raw
    penalty; the reference anchor penalties for the bundled tables are quoted
    on that scale.
    """

    m: np.ndarray
    class_order: tuple[str, ...] = CLASS_NAMES
    background_penalty_raw: float = 2.0
    normalizer: float = 2.0

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (33, 33):
            raise ValueError("penalty matrix must be 33x33")
        if np.any(np.diag(m) != 0.0):
            raise ValueError("penalty matrix diagonal must be zero")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12):
            raise ValueError("penalty matrix must be symmetric")
        if m.min() < 0.0 or m.max() > 1.0 + 1e-12:
            raise ValueError("penalty matrix entries must lie in [0, 1]")
        bg = np.concatenate([m[0, 1:], m[1:, 0]])
        if not np.allclose(bg, 1.0, rtol=0, atol=1e-12):
            raise ValueError("background penalties must equal the maximum (1)")
        object.__setattr__(self, "m", m)

    @property
    def m_raw(self) -> np.ndarray:
        return self.m * self.normalizer


def _recenter(entries: dict) -> dict:
    incisors = [entries[(k, 1)] for k in QUADRANTS]
    ox = sum(p[0] for p in incisors) / 4.0
    oy = sum(p[1] for p in incisors) / 4.0
    return {key: (x - ox, y - oy) for key, (x, y) in entries.items()}


def interpolate_third_molar(table: CentroidTable) -> CentroidTable:
    """Fill missing position-8 centroids by extrapolating the molar row:
    G8 = G7 + (G7 - G6). Existing entries are kept."""
    entries = dict(table.entries)
    for k in QUADRANTS:
        if (k, 6) not in entries or (k, 7) not in entries:
            raise ValueError(f"quadrant {k} lacks positions 6/7 for interpolation")
        if (k, 8) in entries:
            continue
        x6, y6 = entries[(k, 6)]
        x7, y7 = entries[(k, 7)]
        if x6 == x7 and y6 == y7:
            raise ValueError(f"quadrant {k}: positions 6 and 7 coincide")
        entries[(k, 8)] = (2.0 * x7 - x6, 2.0 * y7 - y6)
    return CentroidTable(entries=entries, provenance=table.provenance)


def load_centroids(path: str | Path) -> CentroidTable:
    """Load a centroid CSV (columns quadrant,position,x,y), recenter on the
    central-incisor midpoint, and fill missing third molars."""
    path = Path(path)
    if not path.exists():
        raise OSError(f"no such file: {path}")
    entries: dict[tuple[int, int], tuple[float, float]] = {}
    with path.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "quadrant":
                continue
            k, m = int(row[0]), int(row[1])
            x, y = float(row[2]), float(row[3])
            if k not in QUADRANTS or m not in POSITIONS:
                raise ValueError(f"invalid quadrant/position in CSV: ({k}, {m})")
            if (k, m) in entries:
                raise ValueError(f"duplicate centroid for quadrant {k} position {m}")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"non-finite coordinate for quadrant {k} position {m}")
            entries[(k, m)] = (x, y)
    for k in QUADRANTS:
        missing = [m for m in range(1, 8) if (k, m) not in entries]
        if missing:
            raise ValueError(f"quadrant {k} missing positions {missing}")
    table = CentroidTable(entries=_recenter(entries), provenance=path.stem)
    return interpolate_third_molar(table)


def intra_quadrant_distances(table: CentroidTable, quadrant: int) -> np.ndarray:
    """8x8 pairwise Euclidean distances between one quadrant's centroids."""
    if quadrant not in QUADRANTS:
        raise ValueError(f"invalid quadrant: {quadrant}")
    missing = [m for m in POSITIONS if (quadrant, m) not in table.entries]
    if missing:
        raise ValueError(f"quadrant {quadrant} incomplete: missing {missing}")
    pts = np.array([table.entries[(quadrant, m)] for m in POSITIONS])
    diff = pts[:, np.newaxis, :] - pts[np.newaxis, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def average_dentitions(male: CentroidTable, female: CentroidTable) -> CentroidTable:
    """Entrywise mean of two complete tables, recentered on its own origin."""
    if set(male.entries) != set(female.entries):
        raise ValueError("centroid tables carry different keys")
    if not male.is_complete():
        raise ValueError("centroid tables must be complete before averaging")
    mean = {key: ((male.entries[key][0] + female.entries[key][0]) / 2.0,
                  (male.entries[key][1] + female.entries[key][1]) / 2.0)
            for key in male.entries}
    tag = f"average({male.provenance},{female.provenance})"
    return CentroidTable(entries=_recenter(mean), provenance=tag)


def assemble_raw_blocks(table: CentroidTable,
                        penalty: QuadrantPenalty | None = None) -> np.ndarray:
    """Raw 32x32 tooth block in quadrant-major layout, before symmetrization.

    Block (k, k') entry (m, n) is the row quadrant's positional distance
    D_k[m, n] plus the flat quadrant modifier q[k, k'].
    """
    penalty = penalty or QuadrantPenalty()
    dist = {k: intra_quadrant_distances(table, k) for k in QUADRANTS}
    raw = np.zeros((32, 32))
    for k in QUADRANTS:
        for kp in QUADRANTS:
            block = dist[k] + penalty.q[k - 1, kp - 1]
            raw[(k - 1) * 8:k * 8, (kp - 1) * 8:kp * 8] = block
    return raw


def _block_to_universal_permutation() -> np.ndarray:
    # perm[universal n - 1] = quadrant-major block index of tooth n
    perm = np.zeros(32, dtype=np.int64)
    for n in range(1, 33):
        k, m = universal_to_quadrant_position(n)
        perm[n - 1] = (k - 1) * 8 + (m - 1)
    return perm


def build_penalty_matrix(table: CentroidTable,
                         penalty: QuadrantPenalty | None = None,
                         background_penalty: float = 2.0) -> PenaltyMatrix:
    """Assemble, symmetrize, and normalize the 33x33 penalty matrix."""
    penalty = penalty or QuadrantPenalty()
    if background_penalty <= 0:
        raise ValueError("background penalty must be positive")
    if not table.is_complete():
        raise ValueError("centroid table incomplete")
    raw = assemble_raw_blocks(table, penalty)
    sym = (raw + raw.T) / 2.0
    tooth_max = sym.max()
    if tooth_max <= 0:
        raise ValueError("degenerate centroid table: zero tooth-block maximum")
    sym /= tooth_max
    if background_penalty <= 1.0:
        raise ValueError(
            "background penalty must exceed the normalized tooth-block maximum (1)")
    perm = _block_to_universal_permutation()
    full = np.zeros((33, 33))
    full[1:, 1:] = sym[np.ix_(perm, perm)]
    full[0, 1:] = background_penalty
    full[1:, 0] = background_penalty
    normalizer = full.max()  # the background penalty, by the check above
    return PenaltyMatrix(m=full / normalizer,
                         background_penalty_raw=background_penalty,
                         normalizer=normalizer)


def export_penalty_matrix(pm: PenaltyMatrix, path: str | Path) -> None:
    """Write the matrix as CSV with class-name header row and column."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + list(pm.class_order))
        for name, row in zip(pm.class_order, pm.m):
            writer.writerow([name] + [f"{v:.17g}" for v in row])


def load_penalty_matrix(path: str | Path) -> PenaltyMatrix:
    """Load a matrix CSV written by :func:`export_penalty_matrix`."""
    path = Path(path)
    if not path.exists():
        raise OSError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "class" or tuple(rows[0][1:]) != CLASS_NAMES:
        raise ValueError("penalty matrix CSV header does not match class order")
    m = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return PenaltyMatrix(m=m)


def export_penalty_matrix_json(pm: PenaltyMatrix, path: str | Path) -> None:
    """JSON export for programmatic consumers."""
    blob = {
        "class_order": list(pm.class_order),
        "matrix": pm.m.tolist(),
        "background_penalty_raw": pm.background_penalty_raw,
        "normalizer": pm.normalizer,
    }
    Path(path).write_text(json.dumps(blob) + "\n")


def bundled_centroid_path(which: str) -> Path:
    """Path of a bundled centroid table: 'male', 'female', or 'average'."""
    path = _DATA_DIR / f"centroids_{which}.csv"
    if not path.exists():
        raise OSError(f"no bundled centroid table {which!r}")
    return path


def bundled_average_table() -> CentroidTable:
    return load_centroids(bundled_centroid_path("average"))
