import numpy as np
import pytest

from speckle_forge.geometry import centerline, detect_folds
from speckle_forge.masks import frame_contours, mesh_from_masks
from speckle_forge.strain import gls_curve, peak_gls


def test_mesh_from_phantom_masks_matches_truth(phantom):
    _, truth, labels = phantom
    mesh = mesh_from_masks(labels, truth.es_index, 0.3, truth.l, truth.r)
    assert mesh.points.shape == truth.points.shape
    err = np.linalg.norm(mesh.points - truth.points, axis=-1)
    assert err.mean() < 0.5  # mm, pixel-quantised masks
    assert not detect_folds(mesh).any_fold
    g_true = peak_gls(gls_curve(centerline(truth)))
    g_mask = peak_gls(gls_curve(centerline(mesh)))
    assert abs(g_mask - g_true) < 2.0


def test_contours_are_ordered_consistently(phantom):
    _, truth, labels = phantom
    endo, epi = frame_contours(labels[truth.es_index], 0.3)
    # both start on the same side of the ventricle
    assert np.sign(endo[0, 0] - endo[-1, 0]) == np.sign(epi[0, 0] - epi[-1, 0])
    assert np.linalg.norm(endo[0] - epi[0]) < np.linalg.norm(endo[0] - epi[-1])


def test_rejections():
    with pytest.raises(ValueError, match="cavity and myocardium"):
        frame_contours(np.zeros((10, 10), np.uint8), 0.3)
    with pytest.raises(ValueError, match="T x H x W"):
        mesh_from_masks(np.zeros((10, 10)), 0, 0.3)
    lab = np.zeros((1, 30, 30), np.uint8)
    lab[0, 5:10, 5:10] = 1
    lab[0, 20:25, 20:25] = 2
    with pytest.raises(ValueError, match="frame 0"):
        mesh_from_masks(lab, 0, 0.3)
