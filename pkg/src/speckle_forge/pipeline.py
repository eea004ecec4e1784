"""Multi-stage dataset refinement: D0 from mask-derived meshes, then D1, D2...
from meshes tracked on the template videos.

Each stage simulates every template with a strategy from the schedule.  The
simulated motion is always the mesh handed to the simulator, so every stage
has exact ground truth no matter how the meshes were obtained.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as sio
from .geometry import TemporalMesh, centerline, detect_folds
from .imaging import PsfConfig
from .masks import mesh_from_masks
from .metrics import MetricsReport, compare
from .scatterers import SectorGeometry
from .strain import strain_table
from .strategies import STRATEGIES, SimRun, simulate, template_targets
from .tracker import TrackerConfig, track_bidirectional

logger = logging.getLogger(__name__)

ORACLE = "oracle"


@dataclass
class PipelineConfig:
    schedule: tuple[str, ...] = ("S1", "S2", "S3")
    n_stages: int = 2
    seed: int = 0
    gamma: float = 5.0
    p: float = 0.85
    a: float = 2.0
    falloff_mm: float = 2.0
    density_per_lambda2: float = 5.0
    l: int = 24
    r: int = 3
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    psf: PsfConfig = field(default_factory=PsfConfig)
    use_oracle_tracker: bool = False

    def __post_init__(self):
        self.schedule = tuple(self.schedule)
        bad = [s for s in self.schedule if s not in STRATEGIES]
        if bad or not self.schedule:
            raise ValueError(f"invalid strategy schedule {self.schedule}")
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")

    def strategy_for(self, stage: int) -> str:
        return self.schedule[min(stage, len(self.schedule) - 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = list(self.schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "tracker" in d:
            d["tracker"] = TrackerConfig(**d["tracker"])
        if "psf" in d:
            d["psf"] = PsfConfig.from_dict(d["psf"])
        return cls(**d)


@dataclass
class TemplateSpec:
    """A template video with either label masks or a mesh."""

    id: str
    sequence: Path
    masks: Path | None = None
    mesh: Path | None = None


def load_templates(path) -> list[TemplateSpec]:
    """Templates manifest: ``{"templates": [{"id", "sequence", "masks" | "mesh"}]}``
    with paths relative to the manifest."""
    path = Path(path)
    root = path.parent
    out = []
    for t in sio.read_json(path).get("templates", []):
        if not ("masks" in t or "mesh" in t):
            raise ValueError(f"template {t.get('id')!r} has neither masks nor mesh")
        out.append(
            TemplateSpec(
                str(t["id"]),
                root / t["sequence"],
                root / t["masks"] if t.get("masks") else None,
                root / t["mesh"] if t.get("mesh") else None,
            )
        )
    return out


def _rel(path: Path, root: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), Path(root).resolve())).as_posix()


def _run_items(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _sim_run(cfg: PipelineConfig, strategy, video, mesh, geom, sequence_id) -> SimRun:
    return SimRun(
        strategy,
        video,
        mesh,
        geom=geom,
        psf=cfg.psf,
        gamma=cfg.gamma,
        p=cfg.p,
        falloff_mm=cfg.falloff_mm,
        a=cfg.a,
        seed=cfg.seed,
        sequence_id=sequence_id,
        density_per_lambda2=cfg.density_per_lambda2,
    )


def _simulate(run: SimRun):
    out = simulate(run)
    if out.corr_target is None:  # S1 never looks at the template's correlation; measure it for realism reports
        out.corr_target = template_targets(run)
    return out


def write_sim_item(out_dir: Path, output, geom: SectorGeometry, lineage: dict) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = dict(output.provenance) | {"lineage": lineage}
    sio.save_sequence(out_dir / "video", output.video, output.motion.es_index, geom, prov)
    sio.save_mesh(out_dir / "motion.json", output.motion)
    sio.save_correlation(out_dir / "corr_achieved.csv", output.corr_achieved)
    if output.corr_target is not None:
        sio.save_correlation(out_dir / "corr_target.csv", output.corr_target)
    return prov


def _stage0_item(args):
    spec, strategy, cfg, out_root, stage = args
    try:
        video, meta = sio.load_sequence(spec.sequence)
        geom = meta.geom
        if spec.mesh is not None:
            mesh = sio.load_mesh(spec.mesh)
        else:
            mesh = mesh_from_masks(sio.load_labels(spec.masks), meta.es_index, meta.pixel_spacing_mm, cfg.l, cfg.r)
        run = _sim_run(cfg, strategy, video, mesh, geom, f"{stage}:{spec.id}")
        out = _simulate(run)
        item = out_root / stage / spec.id
        lineage = {"stage": stage, "source_video": spec.id, "mesh_source": "mesh" if spec.mesh else "masks"}
        write_sim_item(item, out, geom, lineage)
        sio.save_mesh(item / "input_mesh.json", mesh)
        return {
            "ok": True,
            "id": spec.id,
            "sequence": item / "video",
            "mesh": item / "motion.json",
            "extra": {"strategy": strategy, "lineage": lineage, "folds": bool(detect_folds(mesh).any_fold)},
        }
    except Exception as exc:  # per-item failures are reported, not fatal
        logger.warning("stage %s: template %s failed: %s", stage, spec.id, exc)
        return {"ok": False, "id": spec.id, "error": f"{type(exc).__name__}: {exc}"}


def _collect(results, stage: str, out_root: Path, info: dict) -> sio.Manifest:
    man = sio.Manifest(stage=stage, info=info, root=out_root / stage)
    for res in results:
        if res["ok"]:
            man.entries.append(
                sio.ManifestEntry(
                    _rel(res["sequence"], man.root), _rel(res["mesh"], man.root), stage, res["id"], res["extra"]
                )
            )
        else:
            man.failures.append({"template_id": res["id"], "error": res["error"]})
    man.save(out_root / stage / "manifest.json")
    return man


def stage0(templates: list[TemplateSpec], strategy: str, cfg: PipelineConfig, out_root, jobs: int = 1, review_list=None) -> sio.Manifest:
    """Simulate every template on its mask-derived (or given) mesh."""
    out_root = Path(out_root)
    if not templates:
        logger.warning("stage D0: no templates given; writing an empty manifest")
    items = [(t, strategy, cfg, out_root, "D0") for t in templates]
    results = _run_items(_stage0_item, items, jobs)
    man = _collect(results, "D0", out_root, {"strategy": strategy, "config": cfg.to_dict()})
    if review_list is not None:
        export_review_list(man, review_list)
    return man


def export_review_list(man: sio.Manifest, path) -> None:
    """CSV of stage-0 meshes for manual review before later stages."""
    rows = []
    for e in man.entries:
        mesh = sio.load_mesh(man.resolve(e.mesh))
        cl = centerline(mesh)
        length = float(np.linalg.norm(np.diff(cl[mesh.es_index], axis=0), axis=-1).sum())
        rows.append([e.template_id, e.mesh, str(int(e.extra.get("folds", False))), repr(round(length, 6)), ""])
    for f in man.failures:
        rows.append([f["template_id"], "", "", "", f["error"]])
    sio.atomic_write_text(path, sio._csv_text(["template_id", "mesh", "folded", "es_centerline_mm", "error"], rows))


def _next_item(args):
    spec, parent_mesh_path, parent_stage, strategy, cfg, out_root, stage = args
    try:
        video, meta = sio.load_sequence(spec.sequence)
        geom = meta.geom
        parent = sio.load_mesh(parent_mesh_path)
        item = out_root / stage / spec.id
        item.mkdir(parents=True, exist_ok=True)
        if cfg.use_oracle_tracker:
            tracked = TemporalMesh(parent.points.copy(), parent.es_index)
            conf = valid = np.ones(parent.points.shape[:3], bool)
            tracker = ORACLE
        else:
            res = track_bidirectional(video, parent.es_frame, parent.es_index, meta.pixel_spacing_mm, cfg.tracker)
            tracked, conf, valid = res.mesh, res.confident, res.valid
            tracker = cfg.tracker.to_dict()
        sio.save_mesh(item / "tracked.json", tracked)
        sio.save_confidence(item / "tracked_confidence.csv", conf, valid)
        run = _sim_run(cfg, strategy, video, tracked, geom, f"{stage}:{spec.id}")
        out = _simulate(run)
        lineage = {
            "stage": stage,
            "source_video": spec.id,
            "parent_stage": parent_stage,
            "parent_mesh": _rel(parent_mesh_path, out_root),
            "tracker": tracker,
        }
        write_sim_item(item, out, geom, lineage)
        return {
            "ok": True,
            "id": spec.id,
            "sequence": item / "video",
            "mesh": item / "motion.json",
            "extra": {"strategy": strategy, "lineage": lineage, "folds": bool(detect_folds(tracked).any_fold)},
        }
    except Exception as exc:
        logger.warning("stage %s: template %s excluded: %s", stage, spec.id, exc)
        return {"ok": False, "id": spec.id, "error": f"{type(exc).__name__}: {exc}"}


def stage_next(
    templates: list[TemplateSpec],
    previous: sio.Manifest,
    strategy: str,
    cfg: PipelineConfig,
    out_root,
    stage: str,
    jobs: int = 1,
) -> sio.Manifest:
    """Track each template video from its previous-stage ES mesh and simulate
    the tracked motion."""
    out_root = Path(out_root)
    parents = {e.template_id: previous.resolve(e.mesh) for e in previous.entries}
    items, skipped = [], []
    for t in templates:
        if t.id in parents:
            items.append((t, parents[t.id], previous.stage, strategy, cfg, out_root, stage))
        else:
            skipped.append({"ok": False, "id": t.id, "error": f"no {previous.stage} entry"})
    results = _run_items(_next_item, items, jobs) + skipped
    info = {"strategy": strategy, "parent_stage": previous.stage, "config": cfg.to_dict()}
    return _collect(results, stage, out_root, info)


def run_pipeline(templates: list[TemplateSpec], cfg: PipelineConfig, out_root, jobs: int = 1, review_list=None):
    """Run D0 .. D{n_stages-1}; returns the list of manifests."""
    out_root = Path(out_root)
    manifests = [stage0(templates, cfg.strategy_for(0), cfg, out_root, jobs, review_list)]
    for k in range(1, cfg.n_stages):
        manifests.append(stage_next(templates, manifests[-1], cfg.strategy_for(k), cfg, out_root, f"D{k}", jobs))
    summary = {
        "config": cfg.to_dict(),
        "stages": [
            {"stage": m.stage, "count": m.count, "failures": len(m.failures), "manifest": f"{m.stage}/manifest.json"}
            for m in manifests
        ],
    }
    sio.write_json(out_root / "pipeline.json", summary)
    return manifests


# evaluation


def _pairs(pred: sio.Manifest, ref: sio.Manifest):
    refs = {e.template_id: e for e in ref.entries}
    preds = {e.template_id: e for e in pred.entries}
    unmatched = sorted(set(refs) ^ set(preds))
    if unmatched:
        raise ValueError(f"unmatched prediction/reference items: {', '.join(unmatched)}")
    return [(preds[k], refs[k]) for k in sorted(preds)]


def evaluate(pred: sio.Manifest, ref: sio.Manifest, out_dir, plots: bool = True, mesh_key: str = "mesh") -> MetricsReport:
    """Compare predicted meshes with reference meshes item by item.

    Writes ``report.json``, ``per_video.csv``, ``summary.csv`` and, when
    ``plots`` is set, ``bland_altman.png`` and ``correlation_curves.png``.

    Args:
        mesh_key: ``"mesh"`` or the name of a file in the item directory
            (for example ``"tracked.json"``) to read predictions from.
    """
    out_dir = Path(out_dir)
    pairs = _pairs(pred, ref)
    pm, rm, valids, corr_pairs = [], [], [], []
    for pe, re_ in pairs:
        p_path = pred.resolve(pe.mesh)
        if mesh_key != "mesh":
            p_path = p_path.parent / mesh_key
        p = sio.load_mesh(p_path)
        r = sio.load_mesh(ref.resolve(re_.mesh))
        conf_path = p_path.parent / "tracked_confidence.csv"
        valid = None
        if mesh_key != "mesh" and conf_path.exists():
            valid = sio.load_confidence(conf_path, p.points.shape[:3])[1]
        pm.append(p)
        rm.append(r)
        valids.append(valid)
        item = pred.resolve(pe.mesh).parent
        if (item / "corr_target.csv").exists():
            corr_pairs.append((sio.load_correlation(item / "corr_target.csv"), sio.load_correlation(item / "corr_achieved.csv")))
    meta_ps = None
    if pairs:
        _, meta = sio.load_sequence(pred.resolve(pairs[0][0].sequence))
        meta_ps = meta.pixel_spacing_mm
    report = compare(pm, rm, valids, meta_ps, corr_pairs or None)
    for row, (pe, _) in zip(report.per_video, pairs):
        row["template_id"] = pe.template_id
    sio.atomic_write_text(out_dir / "report.json", report.to_json() + "\n")
    header = ["template_id", "mte_mm", "peak_gls_pred", "peak_gls_ref", "fold"]
    rows = [[r["template_id"], repr(r["mte_mm"]), repr(r["peak_gls_pred"]), repr(r["peak_gls_ref"]), str(int(r["fold"]))] for r in report.per_video]
    sio.atomic_write_text(out_dir / "per_video.csv", sio._csv_text(header, rows))
    ba = report.bland_altman
    summary = [
        pred.stage or "",
        "synthetic",
        str(report.n_videos),
        _num(report.mte_mm),
        _num(None if report.fold_fraction is None else 100 * report.fold_fraction),
        _num(report.gls_mae_pct),
        _num(ba.mu if ba else None),
        _num(ba.sigma if ba else None),
        _num(report.corr_realism_mae),
    ]
    sio.atomic_write_text(
        out_dir / "summary.csv",
        sio._csv_text(
            ["dataset", "view", "n", "mte_mm", "fold_pct", "gls_mae_pct", "ba_mu", "ba_sigma", "corr_realism_mae"],
            [summary],
        ),
    )
    if plots:
        from .plots import plot_bland_altman, plot_correlation_curves

        if report.per_video:
            plot_bland_altman(
                [(r["peak_gls_pred"], r["peak_gls_ref"]) for r in report.per_video], ba, out_dir / "bland_altman.png"
            )
        if corr_pairs:
            plot_correlation_curves(corr_pairs[0][0], corr_pairs[0][1], out_dir / "correlation_curves.png")
    return report


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def write_strain(mesh: TemporalMesh, path, reference_frame: int = 0) -> np.ndarray:
    table = strain_table(centerline(mesh), reference_frame)
    sio.save_strain(path, table)
    return table

