"""Speckle-correlation measurement and coherence maps.

Image frames are indexed ``[row, col]``; a point ``(x, z)`` in millimetres sits
at pixel ``(col, row) = (x, z) / pixel_spacing``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .geometry import MeshCoords, TemporalMesh, inverse_bilinear, is_fold_free

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 25
DEFAULT_SEARCH_RADIUS = 5


@dataclass
class CorrelationArray:
    """Per-point speckle correlation against the ES frame (T x l x r).

    Points whose window left the image are stored as NaN.
    """

    values: np.ndarray
    es_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError(f"correlation array must be T x l x r, got {self.values.shape}")
        if not 0 <= self.es_index < self.values.shape[0]:
            raise ValueError("es_index out of range")
        v = self.values[np.isfinite(self.values)]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("correlation values must lie in [0, 1]")
        es = self.values[self.es_index]
        if np.any(es[np.isfinite(es)] != 1.0):
            raise ValueError("correlation at es_index must be exactly 1")

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def filled(self) -> np.ndarray:
        """Values with missing points replaced by the per-frame mean (1 if none valid)."""
        out = self.values.copy()
        for t in range(out.shape[0]):
            bad = ~np.isfinite(out[t])
            if bad.any():
                good = out[t][~bad]
                out[t][bad] = good.mean() if good.size else 1.0
        out[self.es_index] = 1.0
        return out


@dataclass
class CoherenceMap:
    values: np.ndarray  # T x H x W in [0, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("coherence map must be T x H x W")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("coherence values must lie in [0, 1]")

    def sample(self, t: int, points_mm: np.ndarray, pixel_spacing_mm: float) -> np.ndarray:
        """Nearest-pixel lookup at frame ``t``; points off the image read 0."""
        frame = self.values[t]
        H, W = frame.shape
        pts = np.asarray(points_mm, dtype=float).reshape(-1, 2)
        col = np.rint(pts[:, 0] / pixel_spacing_mm).astype(np.int64)
        row = np.rint(pts[:, 1] / pixel_spacing_mm).astype(np.int64)
        ok = (row >= 0) & (row < H) & (col >= 0) & (col < W)
        out = np.zeros(len(pts))
        out[ok] = frame[row[ok], col[ok]]
        return out


def _ncc_many(ref: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Pearson correlation of one w x w patch against a stack of candidates."""
    a = ref - ref.mean()
    b = cands - cands.mean(axis=(-2, -1), keepdims=True)
    num = np.einsum("ij,nij->n", a, b)
    den = np.sqrt(np.einsum("ij,ij->", a, a) * np.einsum("nij,nij->n", b, b))
    flat_ref = np.ptp(ref) == 0
    flat = (np.ptp(cands.reshape(len(cands), -1), axis=1) == 0) | flat_ref
    out = np.zeros(len(cands))
    ok = ~flat & (den > 0)
    out[ok] = num[ok] / den[ok]
    return np.clip(out, -1.0, 1.0)


def normalized_xcorr(patch_a, patch_b) -> float:
    """Zero-mean normalised correlation of two equal-size patches.

    Returns 0 when either patch is constant.
    """
    a = np.asarray(patch_a, dtype=float)
    b = np.asarray(patch_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"patch shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < 2:
        raise ValueError("patches must be 2-D with side >= 2")
    return float(_ncc_many(a, b[None])[0])


def to_pixels(points_mm: np.ndarray, pixel_spacing_mm: float) -> np.ndarray:
    """(x, z) millimetres -> (col, row) fractional pixels."""
    return np.asarray(points_mm, dtype=float) / pixel_spacing_mm


def search_ncc(
    frame_b: np.ndarray,
    ref: np.ndarray,
    center_rc: tuple[int, int],
    radius: int,
    windows: np.ndarray | None = None,
) -> np.ndarray:
    """NCC of ``ref`` against frame_b patches centred at every offset within ``radius``.

    Returns a (2R+1) x (2R+1) array indexed ``[d_row + R, d_col + R]``; offsets
    whose patch leaves the frame are NaN.
    """
    w = ref.shape[0]
    half = w // 2
    H, W = frame_b.shape
    if windows is None:
        windows = sliding_window_view(frame_b, (w, w))
    n = 2 * radius + 1
    offs = np.arange(-radius, radius + 1)
    top = center_rc[0] - half + offs
    left = center_rc[1] - half + offs
    ok_r = (top >= 0) & (top <= H - w)
    ok_c = (left >= 0) & (left <= W - w)
    out = np.full((n, n), np.nan)
    if not ok_r.any() or not ok_c.any():
        return out
    rr = top[ok_r]
    cc = left[ok_c]
    cands = windows[rr[:, None], cc[None, :]].reshape(-1, w, w)
    vals = _ncc_many(ref, cands).reshape(len(rr), len(cc))
    out[np.ix_(ok_r, ok_c)] = vals
    return out


def patch_at(frame: np.ndarray, center_rc, w: int) -> np.ndarray | None:
    half = w // 2
    r0, c0 = center_rc[0] - half, center_rc[1] - half
    if r0 < 0 or c0 < 0 or r0 + w > frame.shape[0] or c0 + w > frame.shape[1]:
        return None
    return frame[r0 : r0 + w, c0 : c0 + w]


def correlation_curves(
    video: np.ndarray,
    mesh: TemporalMesh,
    pixel_spacing_mm: float,
    window: int = DEFAULT_WINDOW,
    search_radius: int = DEFAULT_SEARCH_RADIUS,
) -> CorrelationArray:
    """Speckle correlation of every mesh point against its ES appearance.

    The ES patch centred on the point is the reference.  At frame t the
    correlation is the maximum NCC over patches centred within
    ``search_radius`` pixels of the point's frame-t location; negatives clamp
    to 0.  Points whose reference or centred patch leaves the image are NaN.
    """
    video = np.asarray(video, dtype=float)
    if window % 2 != 1 or window < 3:
        raise ValueError("window must be an odd size >= 3")
    if video.shape[0] != mesh.T:
        raise ValueError(f"video has {video.shape[0]} frames, mesh has {mesh.T}")
    T, l, r = mesh.T, mesh.l, mesh.r
    es = mesh.es_index
    centers = np.rint(to_pixels(mesh.points, pixel_spacing_mm)[..., ::-1]).astype(np.int64)
    centers = centers.reshape(T, l * r, 2)  # (row, col)
    values = np.full((T, l * r), np.nan)

    refs = [patch_at(video[es], centers[es, k], window) for k in range(l * r)]
    n_bad = sum(p is None for p in refs)
    if n_bad:
        logger.info("%d mesh points have a reference window outside the image", n_bad)
    for t in range(T):
        if t == es:
            values[t] = [1.0 if p is not None else np.nan for p in refs]
            continue
        windows = sliding_window_view(video[t], (window, window))
        for k, ref in enumerate(refs):
            if ref is None or patch_at(video[t], centers[t, k], window) is None:
                continue
            scores = search_ncc(video[t], ref, centers[t, k], search_radius, windows)
            values[t, k] = max(0.0, float(np.nanmax(scores)))
    return CorrelationArray(values.reshape(T, l, r), es)


def static_coherence_map(masks: np.ndarray, p: float, falloff_mm: float, pixel_spacing_mm: float) -> CoherenceMap:
    """``p`` inside each mask, ramping linearly to 0 at ``falloff_mm`` outside it."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    masks = np.asarray(masks).astype(bool)
    if masks.ndim == 2:
        masks = masks[None]
    out = np.zeros(masks.shape)
    for t, m in enumerate(masks):
        if not m.any():
            continue
        d = ndimage.distance_transform_edt(~m, sampling=pixel_spacing_mm)
        if falloff_mm > 0:
            out[t] = p * np.clip(1.0 - d / falloff_mm, 0.0, 1.0)
        else:
            out[t] = np.where(m, p, 0.0)
    return CoherenceMap(out)


def coherence_at_coords(corr_frame: np.ndarray, coords: MeshCoords) -> np.ndarray:
    """Bilinear blend of per-point correlation values at mesh-local coordinates."""
    i, j = coords.cells[:, 0], coords.cells[:, 1]
    u, v = coords.fracs[:, 0], coords.fracs[:, 1]
    return (
        (1 - u) * (1 - v) * corr_frame[i, j]
        + u * (1 - v) * corr_frame[i + 1, j]
        + (1 - u) * v * corr_frame[i, j + 1]
        + u * v * corr_frame[i + 1, j + 1]
    )


def rasterize_mesh_field(
    frame_pts: np.ndarray, node_values: np.ndarray, image_shape, pixel_spacing_mm: float
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly interpolate node values over the quads of one mesh frame.

    Returns ``(values, covered)`` on the H x W pixel grid.  Overlapping cells
    keep the first covering cell in scan order.
    """
    H, W = image_shape
    out = np.zeros((H, W))
    covered = np.zeros((H, W), dtype=bool)
    l, r = frame_pts.shape[:2]
    for i in range(l - 1):
        for j in range(r - 1):
            quad = frame_pts[i : i + 2, j : j + 2]
            flat = quad.reshape(-1, 2) / pixel_spacing_mm
            c0 = max(int(np.floor(flat[:, 0].min())), 0)
            c1 = min(int(np.ceil(flat[:, 0].max())), W - 1)
            r0 = max(int(np.floor(flat[:, 1].min())), 0)
            r1 = min(int(np.ceil(flat[:, 1].max())), H - 1)
            if c1 < c0 or r1 < r0:
                continue
            rows, cols = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
            q = np.stack([cols.ravel(), rows.ravel()], axis=1) * pixel_spacing_mm
            u, v = inverse_bilinear(q, quad[0, 0], quad[1, 0], quad[0, 1], quad[1, 1])
            inside = (u >= -1e-9) & (u <= 1 + 1e-9) & (v >= -1e-9) & (v <= 1 + 1e-9)
            rr, cc = rows.ravel()[inside], cols.ravel()[inside]
            fresh = ~covered[rr, cc]
            rr, cc = rr[fresh], cc[fresh]
            u = np.clip(u[inside][fresh], 0, 1)
            v = np.clip(v[inside][fresh], 0, 1)
            nv = node_values[i : i + 2, j : j + 2]
            out[rr, cc] = (1 - u) * (1 - v) * nv[0, 0] + u * (1 - v) * nv[1, 0] + (1 - u) * v * nv[0, 1] + u * v * nv[1, 1]
            covered[rr, cc] = True
    return out, covered


def mesh_masks(mesh: TemporalMesh, image_shape, pixel_spacing_mm: float) -> np.ndarray:
    """Binary myocardial footprint of the mesh at every frame (T x H x W)."""
    ones = np.ones((mesh.l, mesh.r))
    return np.stack(
        [rasterize_mesh_field(f, ones, image_shape, pixel_spacing_mm)[1] for f in mesh.points]
    )


def dynamic_coherence_map(
    corr: CorrelationArray, mesh: TemporalMesh, image_shape, pixel_spacing_mm: float
) -> CoherenceMap:
    """Rasterise per-point correlation over the mesh footprint of each frame.

    Missing points take the per-frame mean of valid ones.  Pixels outside the
    footprint are 0.
    """
    if corr.shape != (mesh.T, mesh.l, mesh.r):
        raise ValueError(f"correlation shape {corr.shape} does not match mesh {(mesh.T, mesh.l, mesh.r)}")
    vals = corr.filled()
    frames = []
    folded = [t for t in range(mesh.T) if not is_fold_free(mesh.points[t])]
    if folded:
        logger.info("folded mesh at frames %s; overlapping pixels take the first cell in scan order", folded)
    for t in range(mesh.T):
        frames.append(rasterize_mesh_field(mesh.points[t], vals[t], image_shape, pixel_spacing_mm)[0])
    return CoherenceMap(np.clip(np.stack(frames), 0.0, 1.0))
