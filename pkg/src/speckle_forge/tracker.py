"""Bidirectional block-matching speckle tracker.

Mesh points are propagated frame to frame from ES, forwards to the last frame
and backwards to the first, by normalised cross-correlation block matching.
After each frame the mesh displacement field is smoothed with an implicit
graph-Laplacian step.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .coherence import patch_at, search_ncc
from .geometry import TemporalMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackerConfig:
    block: int = 25
    search_radius: int = 7
    subpixel: str = "parabolic"
    smoothing_lambda: float = 0.1

    def __post_init__(self):
        if self.block % 2 != 1 or self.block < 3:
            raise ValueError("block must be odd and >= 3")
        if self.search_radius < 1:
            raise ValueError("search_radius must be >= 1")
        if self.subpixel not in ("none", "parabolic"):
            raise ValueError("subpixel must be 'none' or 'parabolic'")
        if self.smoothing_lambda < 0:
            raise ValueError("smoothing_lambda must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BlockMatch:
    displacement: np.ndarray  # (dx, dz) in pixels
    score: float
    confident: bool  # False for a flat reference block
    valid: bool  # False when the reference block leaves the frame


def _parabolic(lo: float, mid: float, hi: float) -> float:
    if not (np.isfinite(lo) and np.isfinite(hi)):
        return 0.0
    den = lo - 2.0 * mid + hi
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (lo - hi) / den, -0.5, 0.5))


def best_offset(scores: np.ndarray) -> tuple[int, int]:
    """Argmax of a (2R+1)^2 score grid as (d_row, d_col).

    Ties go to the smallest displacement magnitude, then to the smallest
    (dx, dz) lexicographically.
    """
    R = scores.shape[0] // 2
    best = np.nanmax(scores)
    rows, cols = np.nonzero(scores == best)
    dz, dx = rows - R, cols - R
    k = np.lexsort((dz, dx, dx * dx + dz * dz))[0]
    return int(dz[k]), int(dx[k])


def match_block(frame_a, frame_b, point, cfg: TrackerConfig, windows_b=None) -> BlockMatch:
    """Displacement of the block around ``point`` from ``frame_a`` to ``frame_b``.

    ``point`` is ``(x, z)`` in pixels (column, row); the block is centred on
    the nearest pixel.
    """
    center = (int(np.rint(point[1])), int(np.rint(point[0])))
    ref = patch_at(frame_a, center, cfg.block)
    if ref is None or patch_at(frame_b, center, cfg.block) is None:
        return BlockMatch(np.zeros(2), 0.0, False, False)
    if np.ptp(ref) == 0:
        return BlockMatch(np.zeros(2), 0.0, False, True)
    scores = search_ncc(frame_b, ref, center, cfg.search_radius, windows_b)
    dz, dx = best_offset(scores)
    R = cfg.search_radius
    disp = np.array([float(dx), float(dz)])
    score = float(scores[dz + R, dx + R])
    # a perfect match is an exact integer displacement; a parabola fitted to an
    # asymmetric NCC peak would bias it
    if cfg.subpixel == "parabolic" and score < 1.0 - 1e-12:
        i, j = dz + R, dx + R
        s = scores
        if 0 < j < 2 * R:
            disp[0] += _parabolic(s[i, j - 1], s[i, j], s[i, j + 1])
        if 0 < i < 2 * R:
            disp[1] += _parabolic(s[i - 1, j], s[i, j], s[i + 1, j])
    return BlockMatch(disp, score, True, True)


def grid_laplacian(l: int, r: int) -> np.ndarray:
    n = l * r
    idx = np.arange(n).reshape(l, r)
    L = np.zeros((n, n))
    for a, b in ((idx[:-1, :], idx[1:, :]), (idx[:, :-1], idx[:, 1:])):
        a, b = a.ravel(), b.ravel()
        L[a, b] -= 1
        L[b, a] -= 1
        L[a, a] += 1
        L[b, b] += 1
    return L


@dataclass
class TrackResult:
    mesh: TemporalMesh
    confident: np.ndarray  # T x l x r
    valid: np.ndarray  # T x l x r; False once a point has been frozen


def track_bidirectional(
    video: np.ndarray,
    mesh_es: np.ndarray,
    es_index: int,
    pixel_spacing_mm: float,
    cfg: TrackerConfig = TrackerConfig(),
) -> TrackResult:
    """Track an l x r ES mesh (mm) through a video in both directions from ES."""
    video = np.asarray(video, dtype=float)
    mesh_es = np.asarray(mesh_es, dtype=float)
    T = video.shape[0]
    if not 0 <= es_index < T:
        raise ValueError(f"es_index {es_index} outside [0, {T})")
    l, r, _ = mesh_es.shape
    smooth = None
    if cfg.smoothing_lambda > 0:
        smooth = np.linalg.inv(np.eye(l * r) + cfg.smoothing_lambda * grid_laplacian(l, r))

    out = np.empty((T, l, r, 2))
    out[es_index] = mesh_es
    confident = np.ones((T, l, r), dtype=bool)
    valid = np.ones((T, l, r), dtype=bool)
    start = (mesh_es / pixel_spacing_mm).reshape(-1, 2)

    for step in (1, -1):
        cum = np.zeros_like(start)  # pixels from ES; added to mesh_es so zero motion is exact
        cur = start.copy()
        frozen = np.zeros(l * r, dtype=bool)
        t = es_index + step
        while 0 <= t < T:
            prev = t - step
            windows = sliding_window_view(video[t], (cfg.block, cfg.block))
            disp = np.zeros_like(cur)
            conf = np.ones(l * r, dtype=bool)
            for k in range(l * r):
                if frozen[k]:
                    conf[k] = False
                    continue
                m = match_block(video[prev], video[t], cur[k], cfg, windows)
                if not m.valid:
                    frozen[k] = True
                    conf[k] = False
                    continue
                disp[k] = m.displacement
                conf[k] = m.confident
            if smooth is not None:
                disp = smooth @ disp
            disp[frozen] = 0.0
            cum = cum + disp
            cur = start + cum
            out[t] = mesh_es + (cum * pixel_spacing_mm).reshape(l, r, 2)
            confident[t] = conf.reshape(l, r)
            valid[t] = ~frozen.reshape(l, r)
            t += step
    if (~valid).any():
        logger.info("%d point-frames frozen after leaving the image", int((~valid).sum()))
    return TrackResult(TemporalMesh(out, es_index), confident, valid)
