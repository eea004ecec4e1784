"""Command-line interface.

Verbs: phantom, simulate, track, refine-stage, strain, evaluate, pipeline.
Exit codes: 0 success, 2 partial failure, 1 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import io as sio
from .pipeline import (
    PipelineConfig,
    _simulate,
    evaluate,
    load_templates,
    run_pipeline,
    stage_next,
    write_sim_item,
    write_strain,
)
from .strategies import SimRun
from .tracker import track_bidirectional

logger = logging.getLogger("speckle_forge")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2
SEED_ENV = "SPECKLE_FORGE_SEED"


class ConfigError(Exception):
    pass


def load_config(args) -> PipelineConfig:
    d = {}
    if args.config:
        try:
            d = sio.read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    try:
        cfg = PipelineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if getattr(args, "schedule", None):
        try:
            cfg = dataclasses.replace(cfg, schedule=tuple(args.schedule.split(",")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if getattr(args, "stages", None):
        cfg.n_stages = args.stages
    if getattr(args, "oracle", False):
        cfg.use_oracle_tracker = True
    return cfg


def _out(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    return Path(args.out)


def _status(manifests) -> int:
    return EXIT_PARTIAL if any(m.failures for m in manifests) else EXIT_OK


def cmd_phantom(args, cfg):
    from .synthetic import PhantomConfig, write_phantom_set

    pc = PhantomConfig(tau_frames=args.tau) if args.tau else PhantomConfig()
    path = write_phantom_set(_out(args), args.n, cfg.seed, pc, with_masks=not args.mesh_only)
    print(path)
    return EXIT_OK


def cmd_simulate(args, cfg):
    video, meta = sio.load_sequence(args.template)
    if args.mesh:
        mesh = sio.load_mesh(args.mesh)
    elif args.masks:
        from .masks import mesh_from_masks

        mesh = mesh_from_masks(sio.load_labels(args.masks), meta.es_index, meta.pixel_spacing_mm, cfg.l, cfg.r)
    else:
        raise ConfigError("simulate needs --mesh or --masks")
    strategy = args.strategy or cfg.strategy_for(0)
    run = SimRun(
        strategy,
        video,
        mesh,
        geom=meta.geom,
        psf=cfg.psf,
        gamma=cfg.gamma,
        p=cfg.p,
        falloff_mm=cfg.falloff_mm,
        a=cfg.a,
        seed=cfg.seed,
        sequence_id=args.sequence_id or Path(args.template).name,
        density_per_lambda2=cfg.density_per_lambda2,
    )
    write_sim_item(_out(args), _simulate(run), meta.geom, {"source_video": str(args.template)})
    return EXIT_OK


def cmd_track(args, cfg):
    video, meta = sio.load_sequence(args.video)
    mesh = sio.load_mesh(args.mesh)
    res = track_bidirectional(video, mesh.es_frame, mesh.es_index, meta.pixel_spacing_mm, cfg.tracker)
    out = _out(args)
    sio.save_mesh(out / "tracked.json", res.mesh)
    sio.save_confidence(out / "tracked_confidence.csv", res.confident, res.valid)
    return EXIT_OK


def cmd_refine_stage(args, cfg):
    templates = load_templates(args.templates)
    prev = sio.Manifest.load(args.previous)
    out = _out(args)
    stage = args.stage or f"D{int((prev.stage or 'D0')[1:]) + 1}"
    k = int(stage[1:])
    man = stage_next(templates, prev, args.strategy or cfg.strategy_for(k), cfg, out, stage, args.jobs)
    return _status([man])


def cmd_strain(args, cfg):
    mesh = sio.load_mesh(args.mesh)
    write_strain(mesh, _out(args), args.reference_frame)
    return EXIT_OK


def cmd_evaluate(args, cfg):
    pred = sio.Manifest.load(args.pred)
    ref = sio.Manifest.load(args.ref)
    try:
        report = evaluate(pred, ref, _out(args), plots=not args.no_plots, mesh_key=args.mesh_key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(json.dumps({"mte_mm": report.mte_mm, "n_videos": report.n_videos}))
    return EXIT_OK


def cmd_pipeline(args, cfg):
    templates = load_templates(args.templates)
    out = _out(args)
    review = out / "review_list.csv" if args.review_list else None
    manifests = run_pipeline(templates, cfg, out, args.jobs, review)
    for m in manifests[1:]:
        if m.entries:
            evaluate(m, manifests[0], out / "eval" / m.stage, plots=not args.no_plots, mesh_key="tracked.json")
    return _status(manifests)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run-config JSON (PipelineConfig fields)")
    common.add_argument("--seed", type=int, help=f"master seed (overridden by ${SEED_ENV})")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="speckle-forge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("phantom", parents=[common], help="write synthetic templates and a templates manifest")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--tau", type=float, help="decorrelation time constant in frames")
    s.add_argument("--mesh-only", action="store_true", help="point the manifest at true meshes, not masks")

    s = sub.add_parser("simulate", parents=[common], help="simulate one template")
    s.add_argument("--template", required=True, help="sequence container directory")
    s.add_argument("--mesh")
    s.add_argument("--masks")
    s.add_argument("--strategy", choices=["S1", "S2", "S3"])
    s.add_argument("--sequence-id")

    s = sub.add_parser("track", parents=[common], help="track a video from the ES frame of a mesh")
    s.add_argument("--video", required=True)
    s.add_argument("--mesh", required=True)

    s = sub.add_parser("refine-stage", parents=[common], help="build the next dataset stage")
    s.add_argument("--templates", required=True)
    s.add_argument("--previous", required=True, help="previous stage manifest")
    s.add_argument("--strategy", choices=["S1", "S2", "S3"])
    s.add_argument("--stage", help="stage tag, default previous + 1")
    s.add_argument("--oracle", action="store_true", help="pass previous meshes through instead of tracking")

    s = sub.add_parser("strain", parents=[common], help="GLS and regional strain CSV of a mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--reference-frame", type=int, default=0)

    s = sub.add_parser("evaluate", parents=[common], help="compare prediction and reference manifests")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--mesh-key", default="mesh", help="'mesh' or an item file such as tracked.json")
    s.add_argument("--no-plots", action="store_true")

    s = sub.add_parser("pipeline", parents=[common], help="multi-stage driver")
    s.add_argument("--templates", required=True)
    s.add_argument("--stages", type=int)
    s.add_argument("--schedule", help="comma-separated strategies, e.g. S1,S2,S3")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--review-list", action="store_true", help="export D0 meshes for review")
    s.add_argument("--no-plots", action="store_true")
    return p


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "track": cmd_track,
    "refine-stage": cmd_refine_stage,
    "strain": cmd_strain,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args)
        return COMMANDS[args.verb](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

