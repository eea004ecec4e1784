"""Longitudinal strain from centerline trajectories.

Strain is the relative change of centerline length versus a reference frame,
in percent.  The reference defaults to frame 0 (ED by container convention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_REGIONS = 6


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("a polyline needs at least 2 points")
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=-1).sum())


def _lengths(traj: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(traj, axis=1), axis=-1).sum(axis=1)


@dataclass
class StrainCurve:
    values: np.ndarray  # percent, one per frame
    reference_frame: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not 0 <= self.reference_frame < len(self.values):
            raise ValueError("reference_frame outside the curve")
        if self.values[self.reference_frame] != 0.0:
            raise ValueError("strain at the reference frame must be 0")

    def __len__(self) -> int:
        return len(self.values)


def _strain(lengths: np.ndarray, reference_frame: int) -> StrainCurve:
    L_ref = lengths[reference_frame]
    if L_ref <= 0:
        raise ValueError("reference length is zero")
    vals = 100.0 * (lengths - L_ref) / L_ref
    vals[reference_frame] = 0.0
    return StrainCurve(vals, reference_frame)


def gls_curve(centerline, reference_frame: int = 0) -> StrainCurve:
    """Global longitudinal strain curve of a T x l x 2 centerline."""
    cl = np.asarray(centerline, dtype=float)
    if cl.ndim != 3 or cl.shape[0] < 2 or cl.shape[1] < 2:
        raise ValueError(f"expected a T x l x 2 centerline with T, l >= 2, got {cl.shape}")
    if not 0 <= reference_frame < cl.shape[0]:
        raise ValueError("reference_frame outside the sequence")
    return _strain(_lengths(cl), reference_frame)


def peak_gls(curve: StrainCurve) -> float:
    """Signed value of largest magnitude; the first one wins ties."""
    v = curve.values
    return float(v[int(np.argmax(np.abs(v)))]) if len(v) else 0.0


@dataclass(frozen=True)
class SegmentMap:
    """Assignment of each centerline segment (between points k and k+1) to a region.

    Regions are numbered 0..5 from one base to the other.
    """

    region_of_segment: tuple[int, ...]

    def __post_init__(self):
        seg = np.asarray(self.region_of_segment)
        if seg.size == 0:
            raise ValueError("empty segment map")
        if seg.min() < 0 or seg.max() >= N_REGIONS:
            raise ValueError("region ids must lie in [0, 6)")
        if np.any(np.diff(seg) < 0):
            raise ValueError("regions must be contiguous along the centerline")

    @property
    def n_points(self) -> int:
        return len(self.region_of_segment) + 1

    @classmethod
    def equal_spans(cls, n_points: int) -> "SegmentMap":
        """Six spans with (near) equal point counts, base to base."""
        if n_points < N_REGIONS + 1:
            raise ValueError(f"need at least {N_REGIONS + 1} points for {N_REGIONS} regions")
        n_seg = n_points - 1
        return cls(tuple(int(k * N_REGIONS // n_seg) for k in range(n_seg)))

    def points_of(self, region: int) -> np.ndarray:
        seg = np.flatnonzero(np.asarray(self.region_of_segment) == region)
        if seg.size == 0:
            return seg
        return np.arange(seg[0], seg[-1] + 2)


def regional_strain(centerline, segmap: SegmentMap, reference_frame: int = 0) -> list[StrainCurve]:
    """Six regional strain curves from the sub-polylines of each region."""
    cl = np.asarray(centerline, dtype=float)
    if cl.shape[1] != segmap.n_points:
        raise ValueError(f"segment map covers {segmap.n_points} points, centerline has {cl.shape[1]}")
    out = []
    for reg in range(N_REGIONS):
        idx = segmap.points_of(reg)
        if idx.size < 2:
            raise ValueError(f"region {reg + 1} has fewer than 2 points")
        out.append(_strain(_lengths(cl[:, idx]), reference_frame))
    return out


def strain_table(centerline, reference_frame: int = 0, segmap: SegmentMap | None = None) -> np.ndarray:
    """T x 7 array: GLS then RLS1..RLS6."""
    cl = np.asarray(centerline, dtype=float)
    segmap = SegmentMap.equal_spans(cl.shape[1]) if segmap is None else segmap
    curves = [gls_curve(cl, reference_frame)] + regional_strain(cl, segmap, reference_frame)
    return np.stack([c.values for c in curves], axis=1)
