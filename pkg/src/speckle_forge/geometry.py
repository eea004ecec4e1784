"""Myocardial mesh construction, interpolation, propagation and fold detection.

Points are stored as ``(x, z)`` pairs in millimetres, ``x`` lateral and ``z``
depth.  A single-frame mesh has shape ``(l, r, 2)``: index ``i`` runs along the
wall (base -> apex -> base) and index ``j`` across it, ``j = 0`` on the
endocardium and ``j = r - 1`` on the epicardium.

Cell ``(i, j)`` has corners ``P[i, j]``, ``P[i + 1, j]``, ``P[i, j + 1]`` and
``P[i + 1, j + 1]``; local coordinate ``u`` follows ``i`` and ``v`` follows ``j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from shapely.geometry import LineString

logger = logging.getLogger(__name__)

# tolerance on (u, v) when deciding that a point lies inside a cell
CELL_TOL = 1e-9


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass
class TemporalMesh:
    """T x l x r x 2 myocardial point grid with its end-systolic frame."""

    points: np.ndarray
    es_index: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.es_index = int(self.es_index)
        if self.points.ndim != 4 or self.points.shape[-1] != 2:
            raise ValueError(f"mesh points must be T x l x r x 2, got {self.points.shape}")
        T, l, r, _ = self.points.shape
        if l < 2 or r < 2:
            raise ValueError(f"mesh needs l >= 2 and r >= 2, got l={l}, r={r}")
        if not 0 <= self.es_index < T:
            raise ValueError(f"es_index {self.es_index} outside [0, {T})")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("mesh contains non-finite positions")
        if not is_fold_free(self.points[self.es_index]):
            raise ValueError("mesh is folded at its ES frame")

    @property
    def T(self) -> int:
        return self.points.shape[0]

    @property
    def l(self) -> int:
        return self.points.shape[1]

    @property
    def r(self) -> int:
        return self.points.shape[2]

    @property
    def es_frame(self) -> np.ndarray:
        return self.points[self.es_index]

    def to_dict(self) -> dict:
        return {
            "es_index": self.es_index,
            "l": self.l,
            "r": self.r,
            "points_mm": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalMesh":
        pts = np.asarray(d["points_mm"], dtype=float)
        if pts.shape[1:3] != (d["l"], d["r"]):
            raise ValueError(f"points_mm shape {pts.shape} disagrees with l={d['l']}, r={d['r']}")
        return cls(pts, d["es_index"])


@dataclass
class MeshCoords:
    """A batch of mesh-local coordinates (cell index + fractional position).

    ``cells`` is K x 2 integer (longitudinal, radial) and ``fracs`` is K x 2
    with ``(u, v)`` in the unit square.
    """

    cells: np.ndarray
    fracs: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        self.fracs = np.asarray(self.fracs, dtype=float).reshape(-1, 2)
        if len(self.cells) != len(self.fracs):
            raise ValueError("cells and fracs length differ")

    def __len__(self) -> int:
        return len(self.cells)

    def check(self, l: int, r: int) -> None:
        if len(self) == 0:
            return
        ci, cj = self.cells[:, 0], self.cells[:, 1]
        if ci.min() < 0 or cj.min() < 0 or ci.max() > l - 2 or cj.max() > r - 2:
            raise ValueError(f"cell index outside [0, {l - 2}] x [0, {r - 2}]")
        if self.fracs.min() < 0.0 or self.fracs.max() > 1.0:
            raise ValueError("fractional coordinate outside [0, 1]")


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample an open polyline to ``n`` points equally spaced in arc length."""
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(target, s, points[:, 0]), np.interp(target, s, points[:, 1])], axis=1)


def check_contour(points: np.ndarray, name: str = "contour") -> np.ndarray:
    """Validate an open contour and return it as a float array."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{name} must be N x 2, got {pts.shape}")
    if len(pts) < 3:
        raise ValueError(f"{name} needs at least 3 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} has non-finite points")
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(steps == 0):
        k = int(np.flatnonzero(steps == 0)[0])
        raise ValueError(f"{name} repeats point {k} at index {k + 1}")
    if not LineString(pts).is_simple:
        raise ValueError(f"{name} is self-intersecting")
    return pts


def build_mesh(endo, epi, l: int, r: int) -> np.ndarray:
    """Build a single-frame l x r mesh between endocardial and epicardial contours.

    Both contours must run base -> apex -> base in the same direction.  Each is
    resampled to ``l`` arc-length-uniform points; interior radial rows are
    linear blends of the two.

    Raises:
        ValueError: if ``l`` or ``r`` is below 2 or a contour is malformed
            (too short, repeated consecutive points, self-intersecting).
    """
    if l < 2 or r < 2:
        raise ValueError(f"need l >= 2 and r >= 2, got l={l}, r={r}")
    endo = check_contour(endo, "endo contour")
    epi = check_contour(epi, "epi contour")
    a = resample_polyline(endo, l)
    b = resample_polyline(epi, l)
    w = np.linspace(0.0, 1.0, r)[None, :, None]
    return (1.0 - w) * a[:, None, :] + w * b[:, None, :]


def cell_corners(frame: np.ndarray, cells: np.ndarray):
    i, j = cells[:, 0], cells[:, 1]
    return frame[i, j], frame[i + 1, j], frame[i, j + 1], frame[i + 1, j + 1]


def mesh_point_at(frame: np.ndarray, coords: MeshCoords) -> np.ndarray:
    """Bilinear position of each coordinate within a single-frame mesh (K x 2)."""
    p00, p10, p01, p11 = cell_corners(frame, coords.cells)
    u = coords.fracs[:, 0:1]
    v = coords.fracs[:, 1:2]
    return (1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + (1 - u) * v * p01 + u * v * p11


def propagate_coords(mesh: TemporalMesh, coords: MeshCoords) -> np.ndarray:
    """Trajectories (T x K x 2) of mesh-attached points through every frame."""
    p00, p10, p01, p11 = (
        mesh.points[:, coords.cells[:, 0] + di, coords.cells[:, 1] + dj]
        for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1))
    )
    u = coords.fracs[None, :, 0:1]
    v = coords.fracs[None, :, 1:2]
    return (1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + (1 - u) * v * p01 + u * v * p11


def inverse_bilinear(q, p00, p10, p01, p11, newton_steps: int = 3):
    """Solve ``bilinear(u, v) = q`` for each quad; returns (u, v) arrays.

    The closed-form quadratic root nearest the unit square is taken and then
    polished with a few Newton steps.
    """
    q, p00, p10, p01, p11 = (np.asarray(a, dtype=float) for a in (q, p00, p10, p01, p11))
    e = p10 - p00
    f = p01 - p00
    g = p00 - p10 - p01 + p11
    h = q - p00
    k2 = _cross(g, f)
    k1 = _cross(e, f) + _cross(h, g)
    k0 = _cross(h, e)

    scale = np.abs(k1) + np.abs(k0) + 1e-300
    linear = np.abs(k2) <= 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.sqrt(np.maximum(k1 * k1 - 4.0 * k0 * k2, 0.0))
        v1 = np.where(linear, -k0 / k1, (-k1 + disc) / (2.0 * k2))
        v2 = np.where(linear, v1, (-k1 - disc) / (2.0 * k2))

    def u_of(v):
        d = e + v[..., None] * g
        nn = np.sum(d * d, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sum((h - v[..., None] * f) * d, axis=-1) / nn

    u1, u2 = u_of(v1), u_of(v2)

    def outside(u, v):
        d = np.maximum(0, -u) + np.maximum(0, u - 1) + np.maximum(0, -v) + np.maximum(0, v - 1)
        return np.where(np.isfinite(d), d, np.inf)

    pick2 = outside(u2, v2) < outside(u1, v1)
    u = np.where(pick2, u2, u1)
    v = np.where(pick2, v2, v1)
    u = np.where(np.isfinite(u), u, 0.5)
    v = np.where(np.isfinite(v), v, 0.5)

    for _ in range(newton_steps):
        res = p00 + u[..., None] * e + v[..., None] * f + (u * v)[..., None] * g - q
        ju = e + v[..., None] * g
        jv = f + u[..., None] * g
        det = _cross(ju, jv)
        ok = np.abs(det) > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            du = _cross(res, jv) / det
            dv = _cross(ju, res) / det
        u = np.where(ok, u - du, u)
        v = np.where(ok, v - dv, v)
    return u, v


def locate_points(frame: np.ndarray, points: np.ndarray, tol: float = CELL_TOL):
    """Find the containing cell and (u, v) for each point of a single-frame mesh.

    Cells are searched in scan order (i, then j); the first cell containing a
    point wins.  Returns ``(coords, found)`` where ``found`` marks points that
    fell inside some cell; unfound points carry cell (0, 0) and frac (0, 0).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    cells = np.zeros((n, 2), dtype=np.int64)
    fracs = np.zeros((n, 2))
    found = np.zeros(n, dtype=bool)
    l, r = frame.shape[:2]
    for i in range(l - 1):
        for j in range(r - 1):
            quad = frame[i : i + 2, j : j + 2]
            lo = quad.reshape(-1, 2).min(axis=0) - 1e-9
            hi = quad.reshape(-1, 2).max(axis=0) + 1e-9
            cand = ~found & np.all((points >= lo) & (points <= hi), axis=1)
            if not cand.any():
                continue
            idx = np.flatnonzero(cand)
            u, v = inverse_bilinear(points[idx], quad[0, 0], quad[1, 0], quad[0, 1], quad[1, 1])
            inside = (u >= -tol) & (u <= 1 + tol) & (v >= -tol) & (v <= 1 + tol)
            hit = idx[inside]
            cells[hit] = (i, j)
            fracs[hit, 0] = np.clip(u[inside], 0.0, 1.0)
            fracs[hit, 1] = np.clip(v[inside], 0.0, 1.0)
            found[hit] = True
    return MeshCoords(cells, fracs), found


def triangle_areas(frames: np.ndarray) -> np.ndarray:
    """Signed areas of the two triangles of every cell: shape (..., l-1, r-1, 2).

    Each cell is split along the diagonal (i, j) -> (i+1, j+1); triangle 0 is
    (i,j), (i+1,j), (i+1,j+1) and triangle 1 is (i,j), (i+1,j+1), (i,j+1).
    """
    p00 = frames[..., :-1, :-1, :]
    p10 = frames[..., 1:, :-1, :]
    p01 = frames[..., :-1, 1:, :]
    p11 = frames[..., 1:, 1:, :]
    a0 = 0.5 * _cross(p10 - p00, p11 - p00)
    a1 = 0.5 * _cross(p11 - p00, p01 - p00)
    return np.stack([a0, a1], axis=-1)


def is_fold_free(frame: np.ndarray) -> bool:
    """True when no two triangles of a single frame have opposite orientation."""
    a = triangle_areas(frame)
    return not (np.any(a > 0) and np.any(a < 0))


@dataclass
class FoldReport:
    counts: np.ndarray  # folded cells per frame
    degenerate: np.ndarray  # cells whose reference triangle has zero area
    folded: np.ndarray  # T x (l-1) x (r-1) bool
    reference: int

    @property
    def any_fold(self) -> bool:
        return bool(self.counts.sum() > 0)


def detect_folds(mesh: TemporalMesh, reference: int | None = None) -> FoldReport:
    """Count cells whose mapping from the reference frame reverses orientation.

    A cell folds at frame t when the signed-area ratio of either of its two
    triangles against the reference frame is negative.  The reference defaults
    to the ES frame; pass ``reference=0`` for the first frame instead.
    """
    ref = mesh.es_index if reference is None else int(reference)
    areas = triangle_areas(mesh.points)
    ref_area = areas[ref]
    degenerate_tri = ref_area == 0
    flipped = (areas * ref_area[None]) < 0
    folded = np.any(flipped & ~degenerate_tri[None], axis=-1)
    degenerate_cell = np.any(degenerate_tri, axis=-1)
    counts = folded.reshape(mesh.T, -1).sum(axis=1)
    if degenerate_cell.any():
        logger.info("%d cells have a degenerate reference triangle", int(degenerate_cell.sum()))
    deg = np.full(mesh.T, int(degenerate_cell.sum()))
    return FoldReport(counts=counts, degenerate=deg, folded=folded, reference=ref)


def centerline(mesh: TemporalMesh | np.ndarray) -> np.ndarray:
    """Mid-wall trajectories, T x l x 2 (or l x 2 for a single frame)."""
    pts = mesh.points if isinstance(mesh, TemporalMesh) else np.asarray(mesh)
    r = pts.shape[-2]
    if r < 2:
        raise ValueError("centerline needs r >= 2")
    if r % 2:
        return pts[..., r // 2, :].copy()
    return 0.5 * (pts[..., r // 2 - 1, :] + pts[..., r // 2, :])

