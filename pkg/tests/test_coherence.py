import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from speckle_forge.coherence import (
    CorrelationArray,
    CoherenceMap,
    correlation_curves,
    dynamic_coherence_map,
    mesh_masks,
    normalized_xcorr,
    static_coherence_map,
)
from speckle_forge.geometry import TemporalMesh

from conftest import rect_mesh_frame


def pearson(a, b):
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


# normalized_xcorr


def test_ncc_self_and_negation(rng):
    p = rng.random((25, 25))
    assert normalized_xcorr(p, p) == pytest.approx(1.0, abs=1e-12)
    assert normalized_xcorr(p, -p) == pytest.approx(-1.0, abs=1e-12)


def test_ncc_constant_patch_is_zero(rng):
    assert normalized_xcorr(np.ones((5, 5)), rng.random((5, 5))) == 0.0


def test_ncc_size_mismatch():
    with pytest.raises(ValueError):
        normalized_xcorr(np.ones((5, 5)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        normalized_xcorr(np.ones((1, 1)), np.ones((1, 1)))


def test_ncc_independent_noise_is_small(rng):
    vals = np.array([normalized_xcorr(rng.random((25, 25)), rng.random((25, 25))) for _ in range(1000)])
    assert np.mean(np.abs(vals) < 0.3) >= 0.99


@given(a=st.floats(0.01, 100), b=st.floats(-10, 10), seed=st.integers(0, 2**16))
def test_ncc_matches_pearson_and_is_affine_invariant(a, b, seed):
    g = np.random.default_rng(seed)
    p, q = g.random((7, 7)), g.random((7, 7))
    want = pearson(p, q)
    assert normalized_xcorr(p, q) == pytest.approx(want, abs=1e-9)
    assert normalized_xcorr(a * p + b, q) == pytest.approx(want, abs=1e-6)


# correlation_curves


def static_mesh(T=4, es=1):
    f = rect_mesh_frame(4, 3, x0=9.0, z0=9.0, dx=2.0, dz=2.0)
    return TemporalMesh(np.stack([f] * T), es)


def test_static_video_correlates_fully(rng):
    frame = ndimage.gaussian_filter(rng.random((64, 64)), 1.0)
    video = np.stack([frame] * 4)
    c = correlation_curves(video, static_mesh(), 0.3)
    np.testing.assert_allclose(c.values, 1.0, atol=1e-9)
    assert np.all(c.values[1] == 1.0)


def test_noise_frame_decorrelates(rng):
    frame = rng.random((64, 64))
    video = np.stack([frame, frame, rng.random((64, 64)), frame])
    c = correlation_curves(video, static_mesh(), 0.3, window=11, search_radius=2)
    assert np.nanmean(c.values[2]) < 0.3
    assert np.all(c.values[1] == 1.0)


def test_correlation_affine_intensity_invariant(rng):
    video = rng.random((3, 64, 64))
    mesh = static_mesh(3, 0)
    a = correlation_curves(video, mesh, 0.3, 11, 2)
    b = correlation_curves(3.0 * video + 0.5, mesh, 0.3, 11, 2)
    np.testing.assert_allclose(a.values, b.values, atol=1e-9)


def test_points_near_edge_are_missing(rng):
    f = rect_mesh_frame(2, 2, x0=0.3, z0=9.0, dx=5.0, dz=2.0)
    mesh = TemporalMesh(np.stack([f, f]), 0)
    c = correlation_curves(rng.random((2, 64, 64)), mesh, 0.3, 25, 2)
    assert np.isnan(c.values[:, 0]).all()
    assert np.isfinite(c.values[:, 1]).all()


def test_correlation_array_invariants():
    v = np.full((3, 2, 2), 0.5)
    with pytest.raises(ValueError, match="exactly 1"):
        CorrelationArray(v, 0)
    v[0] = 1.0
    v[1, 0, 0] = 1.2
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        CorrelationArray(v, 0)
    v[1, 0, 0] = np.nan
    filled = CorrelationArray(v, 0).filled()
    assert filled[1, 0, 0] == pytest.approx(0.5)


# static_coherence_map


def test_static_ramp_values():
    m = np.zeros((1, 41, 41), bool)
    m[0, :, :20] = True
    c = static_coherence_map(m, 1.0, 2.0, 0.1)
    assert c.values[0, 20, 19] == 1.0
    assert c.values[0, 20, 29] == pytest.approx(0.5)  # 1 mm from the last mask pixel
    assert c.values[0, 20, 40] == 0.0


def test_static_p_zero_and_range():
    m = np.zeros((1, 20, 20), bool)
    m[0, 5:10, 5:10] = True
    assert not static_coherence_map(m, 0.0, 2.0, 0.3).values.any()
    with pytest.raises(ValueError):
        static_coherence_map(m, 1.5, 2.0, 0.3)


def test_static_disk_matches_distance_oracle():
    n, ps, R, fall = 101, 0.1, 2.0, 2.0
    yy, xx = np.mgrid[0:n, 0:n] * ps
    r = np.hypot(xx - 5.0, yy - 5.0)
    c = static_coherence_map(r <= R, 0.8, fall, ps).values[0]
    want = 0.8 * np.clip(1 - (r - R) / fall, 0, 1)
    assert np.abs(c - want).max() <= 0.8 * ps / fall + 1e-12


def test_static_lipschitz():
    m = np.zeros((1, 60, 60), bool)
    m[0, 20:40, 20:40] = True
    ps, p, fall = 0.3, 0.7, 2.0
    c = static_coherence_map(m, p, fall, ps).values[0]
    assert np.abs(np.diff(c, axis=1)).max() <= p / fall * ps + 1e-12


# dynamic_coherence_map


def rect_mesh(T=2, l=6, r=3):
    f = rect_mesh_frame(l, r, x0=3.0, z0=3.0, dx=1.5, dz=1.5)
    return TemporalMesh(np.stack([f] * T), 0)


def test_dynamic_constant_and_footprint():
    mesh = rect_mesh()
    vals = np.ones((2, 6, 3))
    vals[1] = 0.4
    cmap = dynamic_coherence_map(CorrelationArray(vals, 0), mesh, (40, 40), 0.3)
    foot = mesh_masks(mesh, (40, 40), 0.3)
    np.testing.assert_array_equal(cmap.values[0], foot[0].astype(float))
    np.testing.assert_allclose(cmap.values[1][foot[1]], 0.4)
    assert not cmap.values[1][~foot[1]].any()


def test_dynamic_linear_field():
    mesh = rect_mesh(l=6)
    lin = np.linspace(0.2, 0.9, 6)
    vals = np.ones((2, 6, 3))
    vals[1] = lin[:, None]
    cmap = dynamic_coherence_map(CorrelationArray(vals, 0), mesh, (40, 40), 0.3)
    rows, cols = np.nonzero(mesh_masks(mesh, (40, 40), 0.3)[1])
    x = cols * 0.3
    want = 0.2 + (x - 3.0) / 7.5 * 0.7
    np.testing.assert_allclose(cmap.values[1, rows, cols], want, atol=1e-6)


def test_dynamic_bounded_by_node_values(rng):
    mesh = rect_mesh(T=3)
    vals = rng.uniform(0.3, 0.6, (3, 6, 3))
    vals[0] = 1.0
    cmap = dynamic_coherence_map(CorrelationArray(vals, 0), mesh, (40, 40), 0.3)
    foot = mesh_masks(mesh, (40, 40), 0.3)
    for t in (1, 2):
        v = cmap.values[t][foot[t]]
        assert v.min() >= vals[t].min() - 1e-12 and v.max() <= vals[t].max() + 1e-12


def test_dynamic_logs_folds(caplog):
    mesh = rect_mesh()
    pts = mesh.points.copy()
    pts[1, 2, 1] = pts[1, 4, 1]  # crosses a neighbour
    folded = TemporalMesh(pts, 0)
    with caplog.at_level(logging.INFO):
        cmap = dynamic_coherence_map(CorrelationArray(np.ones((2, 6, 3)), 0), folded, (40, 40), 0.3)
    assert "folded mesh at frames [1]" in caplog.text
    assert cmap.values.max() <= 1.0


def test_dynamic_shape_mismatch():
    with pytest.raises(ValueError):
        dynamic_coherence_map(CorrelationArray(np.ones((2, 5, 3)), 0), rect_mesh(), (40, 40), 0.3)


def test_coherence_map_range():
    with pytest.raises(ValueError):
        CoherenceMap(np.full((1, 2, 2), 1.1))
    c = CoherenceMap(np.array([[[0.0, 0.5], [1.0, 0.25]]]))
    np.testing.assert_array_equal(c.sample(0, np.array([[0.3, 0.0], [0.0, 0.3], [9.0, 9.0]]), 0.3), [0.5, 1.0, 0.0])
