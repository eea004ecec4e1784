"""On-disk formats: sequence containers, meshes, correlation arrays, scatterer
snapshots, strain tables and dataset manifests.

Every write goes to a temporary file in the target directory and is renamed
into place, so a crashed worker never leaves a half-written artifact.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .coherence import CorrelationArray
from .geometry import TemporalMesh
from .scatterers import ScattererField, SectorGeometry

STAGES = ("D0", "D1", "D2")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


# meshes


def save_mesh(path, mesh: TemporalMesh) -> None:
    write_json(path, mesh.to_dict())


def load_mesh(path) -> TemporalMesh:
    return TemporalMesh.from_dict(read_json(path))


# sequence containers


def to_uint8(video: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(np.asarray(video, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class SequenceMeta:
    T: int
    H: int
    W: int
    es_index: int
    pixel_spacing_mm: float
    geometry: dict
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "H": self.H,
            "W": self.W,
            "es_index": self.es_index,
            "pixel_spacing_mm": self.pixel_spacing_mm,
            "geometry": self.geometry,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceMeta":
        return cls(
            int(d["T"]),
            int(d["H"]),
            int(d["W"]),
            int(d["es_index"]),
            float(d["pixel_spacing_mm"]),
            dict(d["geometry"]),
            dict(d.get("provenance", {})),
        )

    @property
    def geom(self) -> SectorGeometry:
        return SectorGeometry.from_dict(self.geometry)


def _pgm_bytes(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame, mode="L").save(buf, format="PPM")
    return buf.getvalue()


def save_sequence(directory, video: np.ndarray, es_index: int, geom: SectorGeometry, provenance=None) -> SequenceMeta:
    """Write ``frame_%04d.pgm`` frames and ``meta.json`` into ``directory``."""
    d = Path(directory)
    frames = to_uint8(video)
    T, H, W = frames.shape
    meta = SequenceMeta(T, H, W, int(es_index), geom.pixel_spacing_mm, geom.to_dict(), dict(provenance or {}))
    d.mkdir(parents=True, exist_ok=True)
    for stale in d.glob("frame_*.pgm"):
        stale.unlink()
    for t in range(T):
        atomic_write_bytes(d / f"frame_{t:04d}.pgm", _pgm_bytes(frames[t]))
    write_json(d / "meta.json", meta.to_dict())
    return meta


def load_sequence(directory):
    """Returns (video T x H x W in [0, 1], SequenceMeta)."""
    d = Path(directory)
    meta = SequenceMeta.from_dict(read_json(d / "meta.json"))
    paths = sorted(d.glob("frame_*.pgm"))
    if len(paths) != meta.T:
        raise ValueError(f"{d}: meta says T={meta.T} but found {len(paths)} frames")
    frames = []
    for p in paths:
        with Image.open(p) as im:
            a = np.asarray(im.convert("L"))
        if a.shape != (meta.H, meta.W):
            raise ValueError(f"{p}: frame size {a.shape} differs from meta {(meta.H, meta.W)}")
        frames.append(a)
    return np.stack(frames).astype(float) / 255.0, meta


# correlation arrays


def save_correlation(path, corr: CorrelationArray) -> None:
    """CSV with one row per frame and one column per flattened (i, j) point,
    plus a JSON sidecar with ``es_index`` and the grid size."""
    path = Path(path)
    T, l, r = corr.shape
    header = [f"p{i}_{j}" for i in range(l) for j in range(r)]
    rows = [[_fmt(x) for x in corr.values[t].ravel()] for t in range(T)]
    atomic_write_text(path, _csv_text(header, rows))
    write_json(path.with_suffix(".json"), {"es_index": corr.es_index, "T": T, "l": l, "r": r})


def load_correlation(path) -> CorrelationArray:
    path = Path(path)
    side = read_json(path.with_suffix(".json"))
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))[1:]
    vals = np.array([[float(x) if x else np.nan for x in row] for row in rows])
    return CorrelationArray(vals.reshape(side["T"], side["l"], side["r"]), side["es_index"])


# scatterers


def save_scatterers(path, fld: ScattererField, bsc=None, positions_mm=None) -> None:
    """Snapshot of one frame (ES positions and ``bsc_es`` unless given)."""
    pos = fld.positions_mm if positions_mm is None else np.asarray(positions_mm)
    amp = fld.bsc_es if bsc is None else np.asarray(bsc)
    n = len(fld)
    cells = np.full((n, 2), -1, dtype=np.int64)
    fracs = np.full((n, 2), np.nan)
    cells[fld.myocardial] = fld.coords.cells
    fracs[fld.myocardial] = fld.coords.fracs
    rows = []
    for k in range(n):
        myo = bool(fld.myocardial[k])
        rows.append(
            [
                repr(float(pos[k, 0])),
                repr(float(pos[k, 1])),
                "myocardial" if myo else "background",
                repr(float(amp[k])),
                str(cells[k, 0]) if myo else "",
                str(cells[k, 1]) if myo else "",
                _fmt(fracs[k, 0]),
                _fmt(fracs[k, 1]),
            ]
        )
    header = ["x_mm", "z_mm", "population", "bsc", "cell_i", "cell_j", "u", "v"]
    atomic_write_text(path, _csv_text(header, rows))


def load_scatterers(path):
    """Returns (positions N x 2, myocardial mask, bsc, cells, fracs) with -1/NaN for background."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    pos = np.array([[float(r["x_mm"]), float(r["z_mm"])] for r in rows]).reshape(-1, 2)
    myo = np.array([r["population"] == "myocardial" for r in rows], dtype=bool)
    bsc = np.array([float(r["bsc"]) for r in rows])
    cells = np.array([[int(r["cell_i"] or -1), int(r["cell_j"] or -1)] for r in rows]).reshape(-1, 2)
    fracs = np.array([[float(r["u"] or "nan"), float(r["v"] or "nan")] for r in rows]).reshape(-1, 2)
    return pos, myo, bsc, cells, fracs


# strain


def save_strain(path, table: np.ndarray) -> None:
    """``table`` is T x 7 (GLS, RLS1..RLS6) in percent."""
    header = ["frame", "GLS"] + [f"RLS{k}" for k in range(1, 7)]
    rows = [[str(t)] + [repr(float(x)) for x in row] for t, row in enumerate(np.asarray(table))]
    atomic_write_text(path, _csv_text(header, rows))


def load_strain(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))[1:]
    return np.array([[float(x) for x in row[1:]] for row in rows])


# tracker confidence sidecar


def save_confidence(path, confident: np.ndarray, valid: np.ndarray) -> None:
    T, l, r = confident.shape
    rows = [
        [str(t), str(i), str(j), str(int(confident[t, i, j])), str(int(valid[t, i, j]))]
        for t in range(T)
        for i in range(l)
        for j in range(r)
    ]
    atomic_write_text(path, _csv_text(["frame", "i", "j", "confident", "valid"], rows))


def load_confidence(path, shape):
    conf = np.zeros(shape, bool)
    valid = np.zeros(shape, bool)
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            idx = int(row["frame"]), int(row["i"]), int(row["j"])
            conf[idx] = row["confident"] == "1"
            valid[idx] = row["valid"] == "1"
    return conf, valid


# manifests


@dataclass
class ManifestEntry:
    sequence: str  # path relative to the manifest directory
    mesh: str
    stage: str
    template_id: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES and not self.stage.startswith("D"):
            raise ValueError(f"unknown stage tag {self.stage!r}")

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "mesh": self.mesh,
            "stage": self.stage,
            "template_id": self.template_id,
            **({"extra": self.extra} if self.extra else {}),
        }


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    stage: str | None = None
    failures: list[dict] = field(default_factory=list)
    info: dict = field(default_factory=dict)
    root: Path | None = None

    @property
    def count(self) -> int:
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def check_files(self) -> list[str]:
        missing = []
        for e in self.entries:
            for rel in (e.sequence, e.mesh):
                if rel and not self.resolve(rel).exists():
                    missing.append(rel)
        return missing

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "count": self.count,
            "entries": [e.to_dict() for e in self.entries],
            "failures": self.failures,
            "info": self.info,
        }

    def save(self, path) -> None:
        path = Path(path)
        self.root = path.parent
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        d = read_json(path)
        entries = [
            ManifestEntry(e["sequence"], e.get("mesh", ""), e["stage"], e["template_id"], e.get("extra", {}))
            for e in d.get("entries", [])
        ]
        m = cls(entries, d.get("stage"), d.get("failures", []), d.get("info", {}), path.parent)
        missing = m.check_files()
        if missing:
            raise FileNotFoundError(f"{path}: missing referenced files: {', '.join(missing[:5])}")
        return m


# label masks (raw 8-bit label values, not scaled)


def save_labels(directory, labels: np.ndarray) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for stale in d.glob("label_*.pgm"):
        stale.unlink()
    for t, lab in enumerate(np.asarray(labels, dtype=np.uint8)):
        atomic_write_bytes(d / f"label_{t:04d}.pgm", _pgm_bytes(lab))


def load_labels(directory) -> np.ndarray:
    paths = sorted(Path(directory).glob("label_*.pgm"))
    if not paths:
        raise FileNotFoundError(f"{directory}: no label_*.pgm frames")
    out = []
    for p in paths:
        with Image.open(p) as im:
            out.append(np.asarray(im.convert("L")))
    return np.stack(out)
