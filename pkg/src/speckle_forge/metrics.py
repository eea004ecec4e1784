"""Agreement metrics between predicted and reference motion, strain and
correlation curves."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np

from .coherence import CorrelationArray
from .geometry import TemporalMesh, centerline, detect_folds
from .strain import gls_curve, peak_gls

LOA_MULTIPLIER = 1.96


def mte(pred, ref, valid=None) -> float:
    """Mean Euclidean distance over valid (t, k) entries.

    Args:
        pred, ref: T x K x 2 (or T x l x r x 2) positions.
        valid: boolean mask over the leading axes; all True when omitted.
    """
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    d = np.linalg.norm(pred - ref, axis=-1)
    mask = np.ones(d.shape, bool) if valid is None else np.asarray(valid, dtype=bool)
    if mask.shape != d.shape:
        raise ValueError(f"valid mask shape {mask.shape} does not match {d.shape}")
    if not mask.any():
        raise ValueError("no valid points to average")
    return float(d[mask].mean())


def mean_mte(pairs, valids=None) -> float:
    """Per-video MTE, then averaged over videos."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no videos")
    valids = [None] * len(pairs) if valids is None else list(valids)
    return float(np.mean([mte(p, r, v) for (p, r), v in zip(pairs, valids)]))


def fold_rate(meshes) -> float:
    """Share of meshes with at least one folded cell in any frame."""
    meshes = list(meshes)
    if not meshes:
        raise ValueError("fold_rate needs at least one mesh")
    return sum(detect_folds(m).any_fold for m in meshes) / len(meshes)


@dataclass
class BlandAltman:
    mu: float
    sigma: float
    loa_low: float
    loa_high: float
    n: int

    @property
    def loa(self) -> tuple[float, float]:
        return self.loa_low, self.loa_high


def bland_altman(pairs) -> BlandAltman:
    """Bias and 95% limits of agreement of ``a - b`` (sample std, n - 1)."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    if len(arr) < 2:
        raise ValueError("Bland-Altman needs at least 2 pairs")
    d = arr[:, 0] - arr[:, 1]
    mu = float(d.mean())
    sigma = float(d.std(ddof=1))
    return BlandAltman(mu, sigma, mu - LOA_MULTIPLIER * sigma, mu + LOA_MULTIPLIER * sigma, len(d))


def corr_realism_mae(target: CorrelationArray, achieved: CorrelationArray) -> float:
    """Mean |target - achieved| over all frames but ES; missing entries skipped."""
    if target.shape != achieved.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {achieved.shape}")
    keep = np.arange(target.shape[0]) != target.es_index
    d = np.abs(target.values[keep] - achieved.values[keep])
    if not np.isfinite(d).any():
        raise ValueError("no valid correlation entries outside ES")
    return float(np.nanmean(d))


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "MetricsReport",
    "type": "object",
    "required": [
        "mte_mm",
        "fold_fraction",
        "gls_mae_pct",
        "bland_altman",
        "corr_realism_mae",
        "n_videos",
        "notes",
    ],
    "properties": {
        "mte_mm": {"type": ["number", "null"], "minimum": 0},
        "mte_px": {"type": ["number", "null"], "minimum": 0},
        "fold_fraction": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "gls_mae_pct": {"type": ["number", "null"], "minimum": 0},
        "bland_altman": {
            "type": ["object", "null"],
            "required": ["mu", "sigma", "loa_low", "loa_high", "n"],
            "properties": {
                "mu": {"type": "number"},
                "sigma": {"type": "number", "minimum": 0},
                "loa_low": {"type": "number"},
                "loa_high": {"type": "number"},
                "n": {"type": "integer", "minimum": 2},
            },
        },
        "corr_realism_mae": {"type": ["number", "null"], "minimum": 0},
        "n_videos": {"type": "integer", "minimum": 0},
        "per_video": {"type": "array"},
        "notes": {"type": "object"},
    },
}


@dataclass
class MetricsReport:
    mte_mm: float | None
    fold_fraction: float | None
    gls_mae_pct: float | None
    bland_altman: BlandAltman | None
    corr_realism_mae: float | None
    n_videos: int
    mte_px: float | None = None
    per_video: list = field(default_factory=list)
    notes: dict = field(
        default_factory=lambda: {
            "mte": "per-video mean over points valid in both prediction and reference, then averaged over videos",
            "bland_altman": "d = prediction - reference peak GLS; sigma uses n - 1; LoA = mu +/- 1.96 sigma",
            "corr_realism_mae": "mean absolute difference excluding the ES frame and missing points",
        }
    )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bland_altman"] = asdict(self.bland_altman) if self.bland_altman is not None else None
        return d

    def to_json(self) -> str:
        d = self.to_dict()
        validate_report(d)
        return json.dumps(d, indent=2, sort_keys=True)


def validate_report(d: dict) -> None:
    jsonschema.validate(d, REPORT_SCHEMA)


def compare(
    pred: list[TemporalMesh],
    ref: list[TemporalMesh],
    valids=None,
    pixel_spacing_mm: float | None = None,
    corr_pairs=None,
) -> MetricsReport:
    """Build a report from aligned prediction/reference meshes.

    Args:
        valids: optional per-video T x l x r masks of points to keep.
        corr_pairs: optional list of (target, achieved) CorrelationArrays.
    """
    if len(pred) != len(ref):
        raise ValueError(f"{len(pred)} predictions vs {len(ref)} references")
    n = len(pred)
    valids = [None] * n if valids is None else list(valids)
    per_video = []
    mtes, peaks = [], []
    for k, (p, r, v) in enumerate(zip(pred, ref, valids)):
        if p.points.shape != r.points.shape:
            raise ValueError(f"video {k}: mesh shapes differ {p.points.shape} vs {r.points.shape}")
        e = mte(p.points, r.points, v)
        gp = peak_gls(gls_curve(centerline(p)))
        gr = peak_gls(gls_curve(centerline(r)))
        mtes.append(e)
        peaks.append((gp, gr))
        per_video.append({"mte_mm": e, "peak_gls_pred": gp, "peak_gls_ref": gr, "fold": bool(detect_folds(p).any_fold)})
    mte_mm = float(np.mean(mtes)) if n else None
    realism = None
    if corr_pairs:
        realism = float(np.mean([corr_realism_mae(t, a) for t, a in corr_pairs]))
    return MetricsReport(
        mte_mm=mte_mm,
        fold_fraction=fold_rate(pred) if n else None,
        gls_mae_pct=float(np.mean([abs(a - b) for a, b in peaks])) if n else None,
        bland_altman=bland_altman(peaks) if n >= 2 else None,
        corr_realism_mae=realism,
        n_videos=n,
        mte_px=mte_mm / pixel_spacing_mm if (mte_mm is not None and pixel_spacing_mm) else None,
        per_video=per_video,
    )
