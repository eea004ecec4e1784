import json
import os

import numpy as np
import pytest

from speckle_forge import io as sio
from speckle_forge.coherence import CorrelationArray
from speckle_forge.geometry import MeshCoords, TemporalMesh
from speckle_forge.scatterers import ScattererField, SectorGeometry

from conftest import rect_mesh_frame


def test_atomic_write_leaves_no_temp(tmp_path):
    sio.atomic_write_text(tmp_path / "a" / "x.txt", "hi")
    assert (tmp_path / "a" / "x.txt").read_text() == "hi"
    assert os.listdir(tmp_path / "a") == ["x.txt"]


def test_write_json_is_canonical(tmp_path):
    sio.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5]})
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'


def test_mesh_round_trip_bit_exact(tmp_path, rng):
    pts = rect_mesh_frame(5, 3)[None] + rng.normal(0, 0.01, (3, 5, 3, 2))
    m = TemporalMesh(pts, 1)
    sio.save_mesh(tmp_path / "m.json", m)
    back = sio.load_mesh(tmp_path / "m.json")
    np.testing.assert_array_equal(back.points, m.points)
    assert back.es_index == 1


def test_sequence_round_trip(tmp_path, rng):
    video = rng.random((4, 16, 20))
    q = sio.to_uint8(video) / 255.0
    geom = SectorGeometry()
    meta = sio.save_sequence(tmp_path / "seq", video, 2, geom, {"strategy": "S1"})
    back, meta2 = sio.load_sequence(tmp_path / "seq")
    np.testing.assert_array_equal(back, q)
    assert meta2 == meta and meta2.geom == geom
    assert sorted(p.name for p in (tmp_path / "seq").iterdir())[:2] == ["frame_0000.pgm", "frame_0001.pgm"]
    assert (tmp_path / "seq" / "frame_0000.pgm").read_bytes().startswith(b"P5")
    # resaving a shorter video drops stale frames
    sio.save_sequence(tmp_path / "seq", video[:2], 0, geom)
    assert sio.load_sequence(tmp_path / "seq")[1].T == 2


def test_sequence_frame_count_checked(tmp_path, rng):
    sio.save_sequence(tmp_path / "s", rng.random((3, 8, 8)), 0, SectorGeometry())
    (tmp_path / "s" / "frame_0002.pgm").unlink()
    with pytest.raises(ValueError, match="T=3"):
        sio.load_sequence(tmp_path / "s")


def test_correlation_round_trip_with_missing(tmp_path, rng):
    v = rng.random((3, 4, 2))
    v[1] = 1.0
    v[0, 2, 1] = np.nan
    c = CorrelationArray(v, 1)
    sio.save_correlation(tmp_path / "c.csv", c)
    back = sio.load_correlation(tmp_path / "c.csv")
    np.testing.assert_array_equal(np.isnan(back.values), np.isnan(v))
    np.testing.assert_array_equal(back.values[np.isfinite(v)], v[np.isfinite(v)])
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header.startswith("p0_0,p0_1,p1_0")
    assert json.loads((tmp_path / "c.json").read_text())["es_index"] == 1


def test_scatterer_snapshot(tmp_path):
    fld = ScattererField(
        np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
        np.array([True, False, True]),
        MeshCoords(np.array([[0, 1], [2, 0]]), np.array([[0.25, 0.5], [0.75, 0.125]])),
        np.array([0.5, 0.0, -1.5]),
    )
    sio.save_scatterers(tmp_path / "s.csv", fld)
    pos, myo, bsc, cells, fracs = sio.load_scatterers(tmp_path / "s.csv")
    np.testing.assert_array_equal(pos, fld.positions_mm)
    np.testing.assert_array_equal(myo, fld.myocardial)
    np.testing.assert_array_equal(bsc, fld.bsc_es)
    np.testing.assert_array_equal(cells, [[0, 1], [-1, -1], [2, 0]])
    assert np.isnan(fracs[1]).all() and fracs[2].tolist() == [0.75, 0.125]
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x_mm,z_mm,population,bsc,cell_i,cell_j,u,v"


def test_strain_and_confidence_round_trip(tmp_path, rng):
    tab = rng.normal(size=(4, 7))
    sio.save_strain(tmp_path / "s.csv", tab)
    np.testing.assert_array_equal(sio.load_strain(tmp_path / "s.csv"), tab)
    assert (tmp_path / "s.csv").read_text().startswith("frame,GLS,RLS1,RLS2,RLS3,RLS4,RLS5,RLS6\n0,")
    conf = rng.random((3, 2, 2)) > 0.5
    valid = rng.random((3, 2, 2)) > 0.5
    sio.save_confidence(tmp_path / "c.csv", conf, valid)
    c2, v2 = sio.load_confidence(tmp_path / "c.csv", (3, 2, 2))
    np.testing.assert_array_equal(c2, conf)
    np.testing.assert_array_equal(v2, valid)


def test_labels_round_trip(tmp_path, rng):
    lab = rng.integers(0, 3, (3, 10, 12)).astype(np.uint8)
    sio.save_labels(tmp_path / "m", lab)
    np.testing.assert_array_equal(sio.load_labels(tmp_path / "m"), lab)
    with pytest.raises(FileNotFoundError):
        sio.load_labels(tmp_path / "missing")


def test_manifest_round_trip_and_missing_files(tmp_path):
    (tmp_path / "D0" / "a").mkdir(parents=True)
    (tmp_path / "D0" / "a" / "m.json").write_text("{}")
    (tmp_path / "D0" / "a" / "video").mkdir()
    man = sio.Manifest([sio.ManifestEntry("a/video", "a/m.json", "D0", "a", {"k": 1})], "D0")
    man.save(tmp_path / "D0" / "manifest.json")
    back = sio.Manifest.load(tmp_path / "D0" / "manifest.json")
    assert back.count == 1 and back.entries[0].extra == {"k": 1}
    assert back.resolve("a/m.json") == tmp_path / "D0" / "a" / "m.json"
    (tmp_path / "D0" / "a" / "m.json").unlink()
    with pytest.raises(FileNotFoundError, match="a/m.json"):
        sio.Manifest.load(tmp_path / "D0" / "manifest.json")
    with pytest.raises(ValueError):
        sio.ManifestEntry("v", "m", "X1", "a")
