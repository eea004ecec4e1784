"""Simulation strategies S1 (static coherence), S2 (dynamic coherence) and S3
(S2 with one corrective pass on the correlation targets)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coherence import (
    DEFAULT_SEARCH_RADIUS,
    DEFAULT_WINDOW,
    CorrelationArray,
    CoherenceMap,
    coherence_at_coords,
    correlation_curves,
    dynamic_coherence_map,
    mesh_masks,
    static_coherence_map,
)
from .geometry import MeshCoords, TemporalMesh, propagate_coords
from .imaging import PolarImage, PsfConfig, envelope, log_compress, polar_grid, render_polar, scan_convert
from .rng import RngStream
from .scatterers import (
    ScattererField,
    SectorGeometry,
    assign_bsc,
    modulate_bsc,
    partition_populations,
    sample_scatterers,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("S1", "S2", "S3")


@dataclass
class SimRun:
    strategy: str
    template: np.ndarray  # T x H x W in [0, 1]
    mesh: TemporalMesh
    geom: SectorGeometry = field(default_factory=SectorGeometry)
    psf: PsfConfig = field(default_factory=PsfConfig)
    gamma: float = 5.0
    p: float = 0.85
    falloff_mm: float = 2.0
    a: float = 2.0
    seed: int = 0
    sequence_id: str = "seq"
    density_per_lambda2: float = 5.0
    background_weight: float = 1.0
    corr_window: int = DEFAULT_WINDOW
    corr_search_radius: int = DEFAULT_SEARCH_RADIUS
    # precomputed template correlation; measured from the template when None
    corr_target: CorrelationArray | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        self.template = np.asarray(self.template, dtype=float)
        if self.template.ndim != 3 or self.template.shape[0] != self.mesh.T:
            raise ValueError(
                f"template shape {self.template.shape} does not match mesh with T={self.mesh.T}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.template.shape[1:]

    def rng(self, purpose: str, frame: int = -1) -> RngStream:
        return RngStream(self.seed, self.sequence_id, frame, purpose)

    def provenance(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "gamma": self.gamma,
            "p": self.p,
            "a": self.a,
            "falloff_mm": self.falloff_mm,
            "density_per_lambda2": self.density_per_lambda2,
            "background_weight": self.background_weight,
            "corr_window": self.corr_window,
            "corr_search_radius": self.corr_search_radius,
            "psf": self.psf.to_dict(),
            "image_formation": "convolution PSF model (polar splat + separable PSF + Hilbert envelope)",
        }


@dataclass
class SimOutput:
    video: np.ndarray
    motion: TemporalMesh
    corr_achieved: CorrelationArray
    corr_target: CorrelationArray | None = None
    provenance: dict = field(default_factory=dict)


def check_mesh_in_sector(mesh: TemporalMesh, geom: SectorGeometry) -> None:
    inside = geom.contains(mesh.points)
    if not inside.all():
        t, i, j = np.argwhere(~inside)[0]
        raise ValueError(
            f"mesh leaves the imaging sector at {int((~inside).sum())} positions "
            f"(first: frame {t}, point ({i}, {j}) at {mesh.points[t, i, j].tolist()} mm)"
        )


def measure(video: np.ndarray, run: SimRun) -> CorrelationArray:
    return correlation_curves(
        video, run.mesh, run.geom.pixel_spacing_mm, run.corr_window, run.corr_search_radius
    )


def _form_video(run: SimRun, positions_per_frame, bsc_per_frame) -> np.ndarray:
    envs = [
        envelope(render_polar(pos, bsc, run.geom, run.psf))
        for pos, bsc in zip(positions_per_frame, bsc_per_frame)
    ]
    # one reference for the whole sequence keeps brightness steady across frames
    ref = max(float(e.max()) for e in envs)
    _, _, a0, da = polar_grid(run.geom, run.psf)
    return np.stack(
        [
            scan_convert(
                PolarImage(log_compress(e, run.psf.dynamic_range_db, ref), run.psf.radial_step_mm, a0, da),
                run.geom,
                *run.shape,
            )
            for e in envs
        ]
    )


def simulate_s1(run: SimRun) -> SimOutput:
    """Static-coherence simulation.

    Scatterers are tagged myocardial with probability given by the static
    coherence map at ES.  Myocardial scatterers follow the mesh with fixed
    amplitudes; background scatterers stay put and are redrawn every frame.
    """
    check_mesh_in_sector(run.mesh, run.geom)
    ps = run.geom.pixel_spacing_mm
    es = run.mesh.es_index
    mask_es = mesh_masks(_single(run.mesh, es), run.shape, ps)
    cs = static_coherence_map(mask_es, run.p, run.falloff_mm, ps)
    positions = sample_scatterers(run.geom, run.rng("positions"), run.density_per_lambda2)
    fld = partition_populations(positions, cs.values[0], run.mesh.es_frame, run.rng("partition"), ps)
    myo = fld.myocardial
    fld.bsc_es[myo] = assign_bsc(run.template[es], positions[myo], run.gamma, run.rng("bsc_es"), ps)
    traj = propagate_coords(run.mesh, fld.coords)

    pos_frames, bsc_frames = [], []
    for t in range(run.mesh.T):
        pos_t = fld.positions_at(traj[t])
        bsc = fld.bsc_es.copy()
        bsc[~myo] = run.background_weight * assign_bsc(
            run.template[t], pos_t[~myo], run.gamma, run.rng("background", t), ps
        )
        pos_frames.append(pos_t)
        bsc_frames.append(bsc)
    video = _form_video(run, pos_frames, bsc_frames)
    prov = run.provenance() | {"n_scatterers": len(fld), "n_myocardial": fld.n_myocardial}
    return SimOutput(video, _passthrough(run.mesh), measure(video, run), run.corr_target, prov)


def _single(mesh: TemporalMesh, t: int) -> TemporalMesh:
    return TemporalMesh(mesh.points[t : t + 1], 0)


def _passthrough(mesh: TemporalMesh) -> TemporalMesh:
    return TemporalMesh(mesh.points.copy(), mesh.es_index)


def _s2_field(run: SimRun) -> ScattererField:
    ps = run.geom.pixel_spacing_mm
    es = run.mesh.es_index
    mask_es = mesh_masks(_single(run.mesh, es), run.shape, ps)
    footprint = static_coherence_map(mask_es, 1.0, 0.0, ps).values[0]
    cand = sample_scatterers(run.geom, run.rng("positions_myocardial"), run.density_per_lambda2)
    tagged = partition_populations(cand, footprint, run.mesh.es_frame, run.rng("partition"), ps)
    keep = tagged.myocardial
    myo = ScattererField(cand[keep], np.ones(int(keep.sum()), bool), tagged.coords, np.zeros(int(keep.sum())))
    myo.bsc_es[:] = assign_bsc(run.template[es], myo.positions_mm, run.gamma, run.rng("bsc_es"), ps)
    bg_pos = sample_scatterers(run.geom, run.rng("positions_background"), run.density_per_lambda2)
    bg = ScattererField(bg_pos, np.zeros(len(bg_pos), bool), MeshCoords(np.zeros((0, 2)), np.zeros((0, 2))), np.zeros(len(bg_pos)))
    return ScattererField.concat(myo, bg)


def simulate_dynamic(run: SimRun, targets: CorrelationArray) -> SimOutput:
    """Render a sequence whose myocardial/background balance follows ``targets``."""
    check_mesh_in_sector(run.mesh, run.geom)
    ps = run.geom.pixel_spacing_mm
    fld = _s2_field(run)
    cmap = dynamic_coherence_map(targets, run.mesh, run.shape, ps)
    filled = targets.filled()
    traj = propagate_coords(run.mesh, fld.coords)
    pos_frames, bsc_frames = [], []
    for t in range(run.mesh.T):
        pos_t = fld.positions_at(traj[t])
        c_myo = np.clip(coherence_at_coords(filled[t], fld.coords), 0.0, 1.0)
        bsc = modulate_bsc(
            fld, cmap, t, pos_t, run.template[t], run.gamma, run.rng("background", t), ps, c_myo
        )
        bsc[~fld.myocardial] *= run.background_weight
        pos_frames.append(pos_t)
        bsc_frames.append(bsc)
    video = _form_video(run, pos_frames, bsc_frames)
    prov = run.provenance() | {"n_scatterers": len(fld), "n_myocardial": fld.n_myocardial}
    return SimOutput(video, _passthrough(run.mesh), measure(video, run), targets, prov)


def template_targets(run: SimRun) -> CorrelationArray:
    if run.corr_target is not None:
        return run.corr_target
    return measure(run.template, run)


def simulate_s2(run: SimRun) -> SimOutput:
    """Dynamic-coherence simulation driven by the template's correlation curves."""
    return simulate_dynamic(run, template_targets(run))


def refine_targets(C: CorrelationArray, C_sim: CorrelationArray, a: float = 2.0) -> CorrelationArray:
    """Corrected targets ``C + a (C - C_sim)`` clamped to [0, 1], 1 at ES."""
    if C.shape != C_sim.shape or C.es_index != C_sim.es_index:
        raise ValueError(f"correlation arrays disagree: {C.shape}/{C.es_index} vs {C_sim.shape}/{C_sim.es_index}")
    vals = np.clip(C.values + a * (C.values - C_sim.values), 0.0, 1.0)
    es = vals[C.es_index]
    es[np.isfinite(es)] = 1.0
    return CorrelationArray(vals, C.es_index)


def simulate_s3(run: SimRun) -> SimOutput:
    """Two-pass simulation: S2, then S2 again on targets corrected by the first pass.

    Both passes draw from the same random streams, so the second pass differs
    from the first only through the corrected targets.
    """
    target = template_targets(run)
    first = simulate_dynamic(run, target)
    refined = refine_targets(target, first.corr_achieved, run.a)
    second = simulate_dynamic(run, refined)
    second.corr_target = target
    second.provenance["refined_from_mae"] = _mae(target, first.corr_achieved)
    return second


def _mae(a: CorrelationArray, b: CorrelationArray) -> float:
    keep = np.ones(a.shape[0], bool)
    keep[a.es_index] = False
    d = np.abs(a.values[keep] - b.values[keep])
    return float(np.nanmean(d)) if np.isfinite(d).any() else float("nan")


def simulate(run: SimRun) -> SimOutput:
    return {"S1": simulate_s1, "S2": simulate_s2, "S3": simulate_s3}[run.strategy](run)
