import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, strategies as st

from speckle_forge.coherence import CorrelationArray
from speckle_forge.geometry import TemporalMesh, detect_folds
from speckle_forge.metrics import (
    MetricsReport,
    bland_altman,
    compare,
    corr_realism_mae,
    fold_rate,
    mean_mte,
    mte,
    validate_report,
)
from speckle_forge.synthetic import PhantomConfig, cardiac_mesh

from conftest import rect_mesh_frame


def test_mte_examples(rng):
    ref = rng.normal(size=(5, 8, 2))
    assert mte(ref, ref) == 0.0
    assert mte(ref + [1.0, 0.0], ref) == pytest.approx(1.0)
    pred = rng.normal(size=(5, 8, 2))
    total = 0.0
    for t in range(5):
        for k in range(8):
            total += np.sqrt((pred[t, k, 0] - ref[t, k, 0]) ** 2 + (pred[t, k, 1] - ref[t, k, 1]) ** 2)
    assert mte(pred, ref) == pytest.approx(total / 40, abs=1e-12)


def test_mte_valid_mask(rng):
    ref = np.zeros((2, 3, 2))
    pred = ref.copy()
    pred[0, 0] = [100.0, 0.0]
    valid = np.ones((2, 3), bool)
    valid[0, 0] = False
    assert mte(pred, ref, valid) == 0.0
    with pytest.raises(ValueError):
        mte(pred, ref, np.zeros((2, 3), bool))
    with pytest.raises(ValueError):
        mte(pred[:1], ref)


@given(seed=st.integers(0, 2**16), shift=st.floats(-50, 50))
def test_mte_symmetric_and_translation_invariant(seed, shift):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(2, 4, 6, 2))
    assert mte(a, b) == pytest.approx(mte(b, a), abs=1e-12)
    assert mte(a + shift, b + shift) == pytest.approx(mte(a, b), abs=1e-9)


def test_mean_mte_per_video_then_average():
    a = np.zeros((1, 1, 2))
    b = np.zeros((1, 4, 2))
    assert mean_mte([(a + [1.0, 0], a), (b + [3.0, 0], b)]) == pytest.approx(2.0)


def test_fold_rate_examples():
    f = rect_mesh_frame(4, 3)
    rigid = TemporalMesh(np.stack([f, f + 1.0]), 0)
    g = f.copy()
    g[1, 1] = [2.5, 0.2]
    folded = TemporalMesh(np.stack([f, g]), 0)
    assert fold_rate([rigid] * 3) == 0.0
    assert fold_rate([rigid, rigid, rigid, folded]) == 0.25
    meshes = [rigid, folded, folded]
    oracle = np.mean([any(detect_folds(m).counts[t] > 0 for t in range(m.T)) for m in meshes])
    assert fold_rate(meshes) == oracle
    with pytest.raises(ValueError):
        fold_rate([])


def test_bland_altman_examples():
    ba = bland_altman([(1.0, 1.0), (2.0, 2.0), (5.0, 5.0)])
    assert (ba.mu, ba.sigma, ba.loa) == (0.0, 0.0, (0.0, 0.0))
    ba = bland_altman([(x + 0.78, x) for x in (-20.0, -17.0, -15.5)])
    assert ba.mu == pytest.approx(0.78) and ba.sigma == pytest.approx(0.0, abs=1e-12)
    ba = bland_altman([(0.0, 1.0), (1.0, 0.0)])
    assert ba.mu == 0.0 and ba.sigma == pytest.approx(np.sqrt(2))
    assert ba.loa_high == pytest.approx(1.96 * np.sqrt(2))
    with pytest.raises(ValueError):
        bland_altman([(1.0, 2.0)])


@given(pairs=st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=2, max_size=20))
def test_bland_altman_swap_and_permutation(pairs):
    ba = bland_altman(pairs)
    sw = bland_altman([(b, a) for a, b in pairs])
    assert sw.mu == pytest.approx(-ba.mu, abs=1e-9)
    assert sw.sigma == pytest.approx(ba.sigma, abs=1e-9)
    rev = bland_altman(pairs[::-1])
    assert rev.mu == pytest.approx(ba.mu, abs=1e-9)
    assert ba.loa_low == pytest.approx(ba.mu - 1.96 * ba.sigma)


def test_corr_realism_mae():
    t = np.full((3, 2, 2), 0.5)
    t[1] = 1.0
    a = CorrelationArray(t, 1)
    assert corr_realism_mae(a, a) == 0.0
    b = t - 0.1
    b[1] = 1.0
    assert corr_realism_mae(a, CorrelationArray(b, 1)) == pytest.approx(0.1)
    b[0, 0, 0] = np.nan
    assert corr_realism_mae(a, CorrelationArray(b, 1)) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        corr_realism_mae(a, CorrelationArray(np.ones((3, 2, 1)), 1))


def test_compare_identity_and_offset():
    mesh = cardiac_mesh(PhantomConfig())
    other = cardiac_mesh(PhantomConfig(shortening=0.15))
    rep = compare([mesh, other], [mesh, other], pixel_spacing_mm=0.3)
    assert rep.mte_mm == 0.0 and rep.gls_mae_pct == 0.0 and rep.fold_fraction == 0.0
    assert rep.bland_altman.mu == 0.0
    shifted = [TemporalMesh(m.points + [1.0, 0.0], m.es_index) for m in (mesh, other)]
    rep = compare(shifted, [mesh, other], pixel_spacing_mm=0.3)
    assert rep.mte_mm == pytest.approx(1.0)
    assert rep.mte_px == pytest.approx(1.0 / 0.3)
    assert rep.gls_mae_pct == pytest.approx(0.0, abs=1e-9)


def test_report_schema_round_trip():
    mesh = cardiac_mesh(PhantomConfig())
    rep = compare([mesh, mesh], [mesh, mesh])
    d = json.loads(rep.to_json())
    validate_report(d)
    bad = dict(d, fold_fraction=1.5)
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)
    empty = MetricsReport(None, None, None, None, None, 0)
    validate_report(json.loads(empty.to_json()))
