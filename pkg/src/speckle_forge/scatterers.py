"""Scatterer sampling, backscatter assignment and coherence-driven modulation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .coherence import CoherenceMap
from .geometry import MeshCoords, locate_points
from .rng import RngStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SectorGeometry:
    """Imaging sector in image millimetres.

    Angles are measured from the depth axis, positive towards +x.
    """

    apex_mm: tuple[float, float] = (19.2, 0.0)
    depth_mm: float = 38.0
    angular_width_rad: float = float(np.deg2rad(90.0))
    wavelength_mm: float = 0.6
    pixel_spacing_mm: float = 0.3

    def __post_init__(self):
        if self.depth_mm <= 0:
            raise ValueError("depth_mm must be positive")
        if not 0 < self.angular_width_rad < np.pi:
            raise ValueError("angular_width_rad must lie in (0, pi)")
        if self.wavelength_mm <= 0 or self.pixel_spacing_mm <= 0:
            raise ValueError("wavelength_mm and pixel_spacing_mm must be positive")
        object.__setattr__(self, "apex_mm", tuple(float(a) for a in self.apex_mm))

    @property
    def area_mm2(self) -> float:
        return 0.5 * self.angular_width_rad * self.depth_mm**2

    def to_polar(self, points):
        pts = np.asarray(points, dtype=float)
        dx = pts[..., 0] - self.apex_mm[0]
        dz = pts[..., 1] - self.apex_mm[1]
        return np.hypot(dx, dz), np.arctan2(dx, dz)

    def from_polar(self, radius, angle):
        radius = np.asarray(radius, dtype=float)
        angle = np.asarray(angle, dtype=float)
        return np.stack(
            [self.apex_mm[0] + radius * np.sin(angle), self.apex_mm[1] + radius * np.cos(angle)], axis=-1
        )

    def contains(self, points) -> np.ndarray:
        rad, ang = self.to_polar(points)
        return (rad <= self.depth_mm) & (np.abs(ang) <= self.angular_width_rad / 2)

    def to_dict(self) -> dict:
        return {
            "apex_mm": list(self.apex_mm),
            "depth_mm": self.depth_mm,
            "angular_width_rad": self.angular_width_rad,
            "wavelength_mm": self.wavelength_mm,
            "pixel_spacing_mm": self.pixel_spacing_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SectorGeometry":
        return cls(
            apex_mm=tuple(d["apex_mm"]),
            depth_mm=float(d["depth_mm"]),
            angular_width_rad=float(d["angular_width_rad"]),
            wavelength_mm=float(d["wavelength_mm"]),
            pixel_spacing_mm=float(d["pixel_spacing_mm"]),
        )


@dataclass
class ScattererField:
    """Scatterers tagged myocardial or background.

    ``positions_mm`` are ES-frame positions (background scatterers never move).
    ``coords`` holds the mesh-local coordinates of the myocardial scatterers in
    the order of ``np.flatnonzero(myocardial)``.  ``bsc_es`` is the fixed
    myocardial amplitude and 0 for background scatterers.
    """

    positions_mm: np.ndarray
    myocardial: np.ndarray
    coords: MeshCoords
    bsc_es: np.ndarray

    def __post_init__(self):
        self.positions_mm = np.asarray(self.positions_mm, dtype=float).reshape(-1, 2)
        self.myocardial = np.asarray(self.myocardial, dtype=bool)
        self.bsc_es = np.asarray(self.bsc_es, dtype=float)
        n = len(self.positions_mm)
        if self.myocardial.shape != (n,) or self.bsc_es.shape != (n,):
            raise ValueError("field arrays have inconsistent lengths")
        if len(self.coords) != int(self.myocardial.sum()):
            raise ValueError("every myocardial scatterer needs mesh-local coordinates")

    def __len__(self) -> int:
        return len(self.positions_mm)

    @property
    def n_myocardial(self) -> int:
        return int(self.myocardial.sum())

    def positions_at(self, trajectories_myo: np.ndarray) -> np.ndarray:
        """Positions at one frame given that frame's myocardial positions."""
        out = self.positions_mm.copy()
        out[self.myocardial] = trajectories_myo
        return out

    @classmethod
    def concat(cls, *fields: "ScattererField") -> "ScattererField":
        return cls(
            np.concatenate([f.positions_mm for f in fields]),
            np.concatenate([f.myocardial for f in fields]),
            MeshCoords(
                np.concatenate([f.coords.cells for f in fields]),
                np.concatenate([f.coords.fracs for f in fields]),
            ),
            np.concatenate([f.bsc_es for f in fields]),
        )


def sample_scatterers(geom: SectorGeometry, rng: RngStream, density_per_lambda2: float = 5.0) -> np.ndarray:
    """Uniform scatterer positions over the sector (N x 2 mm).

    The count is Poisson with mean ``density * area / wavelength**2``.
    """
    if density_per_lambda2 < 0:
        raise ValueError("density must be non-negative")
    g = rng.generator()
    mean = density_per_lambda2 * geom.area_mm2 / geom.wavelength_mm**2
    n = int(g.poisson(mean)) if mean > 0 else 0
    radius = geom.depth_mm * np.sqrt(g.random(n))
    angle = (g.random(n) - 0.5) * geom.angular_width_rad
    return geom.from_polar(radius, angle).reshape(-1, 2)


def sample_image(frame: np.ndarray, points_mm: np.ndarray, pixel_spacing_mm: float):
    """Bilinear image values at millimetre positions; returns (values, inside)."""
    pts = np.asarray(points_mm, dtype=float).reshape(-1, 2)
    col = pts[:, 0] / pixel_spacing_mm
    row = pts[:, 1] / pixel_spacing_mm
    H, W = frame.shape
    inside = (row >= 0) & (row <= H - 1) & (col >= 0) & (col <= W - 1)
    vals = np.zeros(len(pts))
    if inside.any():
        vals[inside] = ndimage.map_coordinates(
            np.asarray(frame, dtype=float), [row[inside], col[inside]], order=1, mode="nearest"
        )
    return vals, inside


def assign_bsc(
    video_frame: np.ndarray,
    positions_mm: np.ndarray,
    gamma: float,
    rng: RngStream,
    pixel_spacing_mm: float,
) -> np.ndarray:
    """Backscatter amplitudes ``V(x, z) ** gamma * eps`` with standard normal eps.

    Positions outside the image get amplitude 0.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    vals, inside = sample_image(video_frame, positions_mm, pixel_spacing_mm)
    if not inside.all():
        logger.debug("%d scatterers outside the image get bsc 0", int((~inside).sum()))
    eps = rng.generator().standard_normal(len(vals))
    return np.clip(vals, 0.0, None) ** gamma * eps


def partition_populations(
    positions_mm: np.ndarray,
    coherence_es: np.ndarray,
    mesh_es: np.ndarray,
    rng: RngStream,
    pixel_spacing_mm: float,
) -> ScattererField:
    """Tag each scatterer myocardial with probability equal to the ES coherence.

    Myocardial scatterers are attached to the ES mesh by point-in-cell search;
    any that land outside every cell become background.
    """
    positions_mm = np.asarray(positions_mm, dtype=float).reshape(-1, 2)
    prob, _ = sample_image(coherence_es, positions_mm, pixel_spacing_mm)
    draw = rng.generator().random(len(positions_mm))
    myo = draw < prob
    idx = np.flatnonzero(myo)
    coords, found = locate_points(mesh_es, positions_mm[idx])
    if not found.all():
        logger.debug("%d myocardial-tagged scatterers outside the mesh reassigned to background", int((~found).sum()))
        myo[idx[~found]] = False
        coords = MeshCoords(coords.cells[found], coords.fracs[found])
    return ScattererField(positions_mm, myo, coords, np.zeros(len(positions_mm)))


def modulate_bsc(
    field: ScattererField,
    cmap: CoherenceMap,
    t: int,
    positions_t: np.ndarray,
    video_frame: np.ndarray,
    gamma: float,
    rng: RngStream,
    pixel_spacing_mm: float,
    myo_coherence: np.ndarray | None = None,
) -> np.ndarray:
    """Per-frame amplitudes with coherent/incoherent weighting.

    Myocardial scatterers keep ``bsc_es`` scaled by the dynamic coherence at
    their current position.  Background scatterers are redrawn from the frame
    and scaled by ``1 - coherence``, which is 1 away from the myocardium.

    Args:
        positions_t: positions of all scatterers at frame ``t``.
        myo_coherence: optional exact coherence values for the myocardial
            scatterers (evaluated in mesh-local coordinates); when omitted the
            map is sampled at their positions.
    """
    myo = field.myocardial
    bg = ~myo
    out = np.zeros(len(field))
    c_myo = myo_coherence if myo_coherence is not None else cmap.sample(t, positions_t[myo], pixel_spacing_mm)
    out[myo] = field.bsc_es[myo] * c_myo
    fresh = assign_bsc(video_frame, positions_t[bg], gamma, rng, pixel_spacing_mm)
    out[bg] = fresh * (1.0 - cmap.sample(t, positions_t[bg], pixel_spacing_mm))
    return out
