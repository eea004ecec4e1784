import numpy as np
import pytest

from speckle_forge.coherence import CorrelationArray
from speckle_forge.geometry import TemporalMesh
from speckle_forge.metrics import corr_realism_mae
from speckle_forge.strategies import (
    SimRun,
    measure,
    refine_targets,
    simulate,
    simulate_dynamic,
)
from speckle_forge.synthetic import PhantomConfig, cardiac_mesh, make_template

OFF = np.arange(16) != 6


@pytest.fixture(scope="module")
def static_template():
    cfg = PhantomConfig(shortening=0.0, thickening=0.0)
    return make_template(cfg, seed=3, sequence_id="static")[:2]


def off_es_mean(corr: CorrelationArray) -> float:
    return float(np.nanmean(corr.values[OFF]))


def const_targets(mesh, value):
    v = np.full((mesh.T, mesh.l, mesh.r), float(value))
    v[mesh.es_index] = 1.0
    return CorrelationArray(v, mesh.es_index)


# refine_targets


def test_refine_examples():
    def one(c, cs):
        return refine_targets(CorrelationArray([[[1.0]], [[c]]], 0), CorrelationArray([[[1.0]], [[cs]]], 0), 2.0).values[1, 0, 0]

    assert one(0.8, 0.7) == pytest.approx(1.0)
    assert one(0.5, 0.9) == 0.0
    assert one(0.6, 0.6) == 0.6


def test_refine_forces_es_and_keeps_missing(rng):
    C = rng.uniform(0, 1, (4, 3, 2))
    C[1] = 1.0
    S = rng.uniform(0, 1, (4, 3, 2))
    S[1] = 1.0
    C[2, 0, 0] = np.nan
    out = refine_targets(CorrelationArray(C, 1), CorrelationArray(S, 1))
    assert np.all(out.values[1] == 1.0)
    assert np.isnan(out.values[2, 0, 0])


def test_refine_shape_mismatch():
    with pytest.raises(ValueError):
        refine_targets(CorrelationArray(np.ones((2, 1, 1)), 0), CorrelationArray(np.ones((2, 1, 1)), 1))


# SimRun


def test_simrun_validation(static_template):
    video, mesh = static_template
    with pytest.raises(ValueError, match="unknown strategy"):
        SimRun("S4", video, mesh)
    with pytest.raises(ValueError, match="does not match"):
        SimRun("S1", video[:-1], mesh)


def test_mesh_outside_sector_rejected(static_template):
    video, mesh = static_template
    moved = TemporalMesh(mesh.points + np.array([25.0, 0.0]), mesh.es_index)
    with pytest.raises(ValueError, match="leaves the imaging sector"):
        simulate(SimRun("S1", video, moved))


# S1


def test_s1_coherent_limit(static_template):
    video, mesh = static_template
    out = simulate(SimRun("S1", video, mesh, p=1.0, background_weight=0.0))
    assert off_es_mean(out.corr_achieved) > 0.95


def test_s1_incoherent_limit(static_template):
    # uniform brightness: a speckled template would pass its own pattern on through V ** gamma
    video, mesh = static_template
    out = simulate(SimRun("S1", np.full_like(video, 0.8), mesh, p=0.0))
    assert off_es_mean(out.corr_achieved) < 0.3


@pytest.mark.parametrize("strategy", ["S1", "S2", "S3"])
def test_motion_passthrough_and_es(phantom, strategy):
    video, mesh, _ = phantom
    out = simulate(SimRun(strategy, video, mesh, seed=1))
    np.testing.assert_array_equal(out.motion.points, mesh.points)
    assert out.motion.es_index == mesh.es_index
    es = out.corr_achieved.values[mesh.es_index]
    assert np.all(es[np.isfinite(es)] == 1.0)
    assert out.video.shape == video.shape
    assert out.provenance["strategy"] == strategy


def test_bitwise_reproducible(phantom):
    video, mesh, _ = phantom
    a = simulate(SimRun("S2", video, mesh, seed=5, sequence_id="x"))
    b = simulate(SimRun("S2", video, mesh, seed=5, sequence_id="x"))
    c = simulate(SimRun("S2", video, mesh, seed=6, sequence_id="x"))
    np.testing.assert_array_equal(a.video, b.video)
    assert not np.array_equal(a.video, c.video)


# S2 / S3


def test_s2_coherent_target(static_template):
    video, mesh = static_template
    run = SimRun("S2", video, mesh, corr_target=const_targets(mesh, 1.0))
    assert off_es_mean(simulate(run).corr_achieved) > 0.9


def test_s2_incoherent_target(static_template):
    video, mesh = static_template
    run = SimRun("S2", np.full_like(video, 0.8), mesh, corr_target=const_targets(mesh, 0.0))
    assert off_es_mean(simulate(run).corr_achieved) < 0.3


def test_same_targets_give_same_pass(phantom):
    video, mesh, _ = phantom
    run = SimRun("S2", video, mesh, seed=2)
    C = measure(video, run)
    a = simulate_dynamic(run, C)
    b = simulate_dynamic(run, refine_targets(C, C))
    np.testing.assert_array_equal(a.video, b.video)


def test_realism_improves_with_dynamic_coherence():
    cfg = PhantomConfig(tau_frames=3.0)
    video, mesh, _ = make_template(cfg, seed=11, sequence_id="ordering")
    run = SimRun("S1", video, mesh, seed=1, sequence_id="ordering")
    run.corr_target = measure(video, run)
    mae = {}
    for s in ("S1", "S2", "S3"):
        run.strategy = s
        mae[s] = corr_realism_mae(run.corr_target, simulate(run).corr_achieved)
    assert mae["S2"] < mae["S1"]
    assert mae["S3"] <= mae["S2"]


def test_cardiac_mesh_is_contracting():
    mesh = cardiac_mesh(PhantomConfig())
    assert mesh.T == 16 and mesh.es_index == 6
    assert not np.allclose(mesh.points[0], mesh.points[6])
