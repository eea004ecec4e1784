"""Meshes from 2D+t label masks (1 = cavity, 2 = myocardium).

The endocardial contour is the part of the cavity outline that touches the
myocardium; the epicardial contour is the outer outline of cavity plus
myocardium with the basal cut removed.  Both are open polylines ordered
base -> apex -> base and meshed independently per frame.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.measure import find_contours

from .geometry import TemporalMesh, build_mesh

CAVITY = 1
MYOCARDIUM = 2


def _largest_contour(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask.astype(float), 1)
    cs = find_contours(padded, 0.5)
    if not cs:
        raise ValueError("empty mask")
    c = max(cs, key=len) - 1.0  # (row, col), closed
    return c[:-1] if np.allclose(c[0], c[-1]) else c


def _longest_run(flags: np.ndarray) -> np.ndarray:
    """Indices of the longest cyclic run of True."""
    n = len(flags)
    if flags.all():
        return np.arange(n)
    start = int(np.flatnonzero(~flags)[0])
    order = (np.arange(n) + start + 1) % n
    best, cur = [], []
    for k in order:
        if flags[k]:
            cur.append(k)
            if len(cur) > len(best):
                best = list(cur)
        else:
            cur = []
    return np.array(best, dtype=int)


def _near(label_frame: np.ndarray, pts_rc: np.ndarray, value: int, radius: float = 1.0) -> np.ndarray:
    grown = ndimage.binary_dilation(label_frame == value, iterations=int(np.ceil(radius)))
    r = np.clip(np.rint(pts_rc[:, 0]).astype(int), 0, label_frame.shape[0] - 1)
    c = np.clip(np.rint(pts_rc[:, 1]).astype(int), 0, label_frame.shape[1] - 1)
    return grown[r, c]


def frame_contours(labels: np.ndarray, pixel_spacing_mm: float):
    """Endo and epi contours (mm, ``(x, z)``) of one label frame."""
    cav = labels == CAVITY
    myo = labels == MYOCARDIUM
    if not cav.any() or not myo.any():
        raise ValueError("label frame needs both cavity and myocardium")
    c_cav = _largest_contour(cav)
    endo_rc = c_cav[_longest_run(_near(labels, c_cav, MYOCARDIUM))]
    if len(endo_rc) < 3:
        raise ValueError("cavity does not border the myocardium")
    e0, e1 = endo_rc[0], endo_rc[-1]

    c_out = _largest_contour(cav | myo)
    # drop the basal cut: points on or beyond the line through the endo ends
    base_dir = e1 - e0
    normal = np.array([-base_dir[1], base_dir[0]]) / max(np.linalg.norm(base_dir), 1e-12)
    apex_side = np.sign(np.dot(endo_rc[len(endo_rc) // 2] - e0, normal)) or 1.0
    dist = apex_side * ((c_out - e0) @ normal)
    epi_rc = c_out[_longest_run((dist > 1.0) & ~_near(labels, c_out, CAVITY, 0.5))]
    if len(epi_rc) < 3:
        raise ValueError("could not isolate the epicardial contour")
    # orient epi to start next to the first endo end
    if np.linalg.norm(epi_rc[0] - e0) > np.linalg.norm(epi_rc[-1] - e0):
        epi_rc = epi_rc[::-1]
    to_mm = lambda rc: rc[:, ::-1] * pixel_spacing_mm  # noqa: E731
    return to_mm(endo_rc), to_mm(epi_rc)


def mesh_from_masks(labels: np.ndarray, es_index: int, pixel_spacing_mm: float, l: int = 24, r: int = 3) -> TemporalMesh:
    """Per-frame meshes built from label frames, stacked into a TemporalMesh."""
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ValueError(f"labels must be T x H x W, got {labels.shape}")
    frames = []
    for t in range(labels.shape[0]):
        try:
            endo, epi = frame_contours(labels[t], pixel_spacing_mm)
            frames.append(build_mesh(endo, epi, l, r))
        except ValueError as exc:
            raise ValueError(f"frame {t}: {exc}") from None
    return TemporalMesh(np.stack(frames), es_index)
