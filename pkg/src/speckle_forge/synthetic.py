"""Synthetic left-ventricle phantoms: contours, prescribed cardiac motion, and
template videos with known speckle decorrelation.

The templates stand in for real echocardiograms.  Myocardial scatterers follow
the mesh and their amplitudes lose correlation with the ES frame at a
prescribed rate ``exp(-|t - es| / tau)``, with ``tau`` varying along the wall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.draw import polygon2mask

from .coherence import mesh_masks
from .geometry import MeshCoords, TemporalMesh, build_mesh, centerline, locate_points, propagate_coords
from .imaging import PolarImage, PsfConfig, envelope, log_compress, polar_grid, render_polar, scan_convert
from .rng import RngStream
from .scatterers import SectorGeometry, sample_scatterers

CAVITY = 1
MYOCARDIUM = 2


@dataclass(frozen=True)
class PhantomConfig:
    T: int = 16
    es_index: int = 6
    l: int = 24
    r: int = 3
    shape: tuple[int, int] = (128, 128)
    center_x_mm: float = 19.2
    base_z_mm: float = 31.5
    endo_half_width_mm: float = 5.0
    endo_length_mm: float = 18.0
    wall_mm: float = 7.5
    shortening: float = 0.18  # peak longitudinal shortening fraction at ES
    thickening: float = 0.3  # peak transmural thickening fraction at ES
    tau_frames: float = 6.0  # decorrelation time constant (mean along the wall)
    tau_spread: float = 0.5  # relative variation of tau along the wall
    myo_amplitude: float = 1.0
    cavity_amplitude: float = 0.003  # near the noise floor, as a real blood pool
    tissue_amplitude: float = 0.1
    tissue_rho: float = 0.0  # frame-to-ES correlation of tissue outside the LV
    geom: SectorGeometry = field(default_factory=SectorGeometry)
    psf: PsfConfig = field(default_factory=PsfConfig)


def lv_contours(cfg: PhantomConfig, n: int = 181):
    """Endocardial and epicardial half-ellipse contours, base -> apex -> base."""
    phi = np.linspace(-np.pi / 2, np.pi / 2, n)

    def arc(a, b):
        return np.stack([cfg.center_x_mm + a * np.sin(phi), cfg.base_z_mm - b * np.cos(phi)], axis=1)

    endo = arc(cfg.endo_half_width_mm, cfg.endo_length_mm)
    epi = arc(cfg.endo_half_width_mm + cfg.wall_mm, cfg.endo_length_mm + cfg.wall_mm)
    return endo, epi


def contraction_profile(T: int, es_index: int) -> np.ndarray:
    """0 at the first and last frame, 1 at ES, smooth in between."""
    t = np.arange(T, dtype=float)
    out = np.zeros(T)
    if es_index > 0:
        up = t <= es_index
        out[up] = np.sin(0.5 * np.pi * t[up] / es_index) ** 2
    if es_index < T - 1:
        down = t > es_index
        out[down] = np.cos(0.5 * np.pi * (t[down] - es_index) / (T - 1 - es_index)) ** 2
    else:
        out[es_index] = 1.0
    return out


def cardiac_mesh(cfg: PhantomConfig, shortening: float | None = None) -> TemporalMesh:
    """Mesh contracting about the apical centerline point.

    Every frame is a uniform scaling of the frame-0 centerline, so the
    centerline strain at frame t is exactly ``-100 * shortening * c(t)``.
    Transmural thickening scales rows about the centerline and leaves it
    unchanged.
    """
    s = cfg.shortening if shortening is None else shortening
    endo, epi = lv_contours(cfg)
    ed = build_mesh(endo, epi, cfg.l, cfg.r)
    mid = centerline(ed)
    anchor = mid[cfg.l // 2] if cfg.l % 2 else 0.5 * (mid[cfg.l // 2 - 1] + mid[cfg.l // 2])
    prof = contraction_profile(cfg.T, cfg.es_index)
    frames = []
    for c in prof:
        scaled = anchor + (1.0 - s * c) * (ed - anchor)
        cl = centerline(scaled)
        frames.append(cl[:, None, :] + (1.0 + cfg.thickening * c) * (scaled - cl[:, None, :]))
    return TemporalMesh(np.stack(frames), cfg.es_index)


def label_masks(mesh: TemporalMesh, shape, pixel_spacing_mm: float) -> np.ndarray:
    """Label frames: 1 = cavity, 2 = myocardium, 0 elsewhere."""
    myo = mesh_masks(mesh, shape, pixel_spacing_mm)
    labels = np.zeros(myo.shape, dtype=np.uint8)
    for t in range(mesh.T):
        endo = mesh.points[t, :, 0] / pixel_spacing_mm
        cav = polygon2mask(shape, endo[:, ::-1])
        labels[t][cav] = CAVITY
        labels[t][myo[t]] = MYOCARDIUM
    return labels


def make_template(cfg: PhantomConfig, seed: int, mesh: TemporalMesh | None = None, sequence_id: str = "template"):
    """Render a phantom template.

    Returns:
        (video, mesh, labels): video T x H x W in [0, 1], the true motion, and
        label frames.
    """
    mesh = cardiac_mesh(cfg) if mesh is None else mesh
    geom, psf = cfg.geom, cfg.psf
    ps = geom.pixel_spacing_mm
    rng = RngStream(seed, sequence_id)
    pos = sample_scatterers(geom, rng.at(purpose="positions"), 5.0)
    coords, myo = locate_points(mesh.es_frame, pos)
    myo_pos = pos[myo]
    coords = MeshCoords(coords.cells[myo], coords.fracs[myo])
    traj = propagate_coords(mesh, coords)
    fixed = pos[~myo]
    along = (coords.cells[:, 0] + coords.fracs[:, 0]) / (mesh.l - 1)
    tau = cfg.tau_frames * (1.0 + cfg.tau_spread * np.cos(2 * np.pi * along))
    eps_es = rng.at(purpose="myo_es").generator().standard_normal(len(myo_pos))
    eps_tissue = rng.at(purpose="tissue").generator().standard_normal(len(fixed))
    labels = label_masks(mesh, cfg.shape, ps)
    H, W = cfg.shape

    envs = []
    for t in range(mesh.T):
        rho = np.exp(-abs(t - mesh.es_index) / tau)
        fresh = rng.at(frame=t, purpose="myo_fresh").generator().standard_normal(len(myo_pos))
        b_myo = cfg.myo_amplitude * (rho * eps_es + np.sqrt(1.0 - rho**2) * fresh)
        col = np.clip(np.rint(fixed[:, 0] / ps).astype(int), 0, W - 1)
        row = np.clip(np.rint(fixed[:, 1] / ps).astype(int), 0, H - 1)
        lab = labels[t][row, col]
        blood = rng.at(frame=t, purpose="blood").generator().standard_normal(len(fixed))
        tissue = cfg.tissue_rho * eps_tissue + np.sqrt(1.0 - cfg.tissue_rho**2) * blood
        b_fixed = np.where(lab == CAVITY, cfg.cavity_amplitude * blood, cfg.tissue_amplitude * tissue)
        b_fixed[lab == MYOCARDIUM] = 0.0
        all_pos = np.concatenate([traj[t], fixed])
        all_bsc = np.concatenate([b_myo, b_fixed])
        envs.append(envelope(render_polar(all_pos, all_bsc, geom, psf)))
    ref = max(float(e.max()) for e in envs)
    _, _, a0, da = polar_grid(geom, psf)
    video = np.stack(
        [
            scan_convert(PolarImage(log_compress(e, psf.dynamic_range_db, ref), psf.radial_step_mm, a0, da), geom, H, W)
            for e in envs
        ]
    )
    return video, mesh, labels


def write_phantom_set(out_dir, n: int, seed: int = 0, cfg: PhantomConfig | None = None, with_masks: bool = True):
    """Write ``n`` phantom templates plus a templates manifest.

    Each template gets a sequence container, label masks and the true mesh
    (``truth.json``).  The manifest points stage 0 at the masks when
    ``with_masks`` is set and at the true mesh otherwise.

    Returns:
        Path of ``templates.json``.
    """
    from pathlib import Path

    from . import io as sio

    cfg = PhantomConfig() if cfg is None else cfg
    out = Path(out_dir)
    entries = []
    for k in range(n):
        tid = f"phantom{k:03d}"
        video, mesh, labels = make_template(cfg, seed=seed + k, sequence_id=tid)
        d = out / tid
        prov = {"phantom": {"tau_frames": cfg.tau_frames, "shortening": cfg.shortening, "seed": seed + k}}
        sio.save_sequence(d / "video", video, mesh.es_index, cfg.geom, prov)
        sio.save_labels(d / "masks", labels)
        sio.save_mesh(d / "truth.json", mesh)
        e = {"id": tid, "sequence": f"{tid}/video", "truth": f"{tid}/truth.json"}
        e["masks" if with_masks else "mesh"] = f"{tid}/masks" if with_masks else f"{tid}/truth.json"
        entries.append(e)
    path = out / "templates.json"
    sio.write_json(path, {"templates": entries})
    return path
