"""Left/right paralysis side from VFDyn variances, and per-highlight feature
export for an external classifier.

The fold with less vibratory activity gives smoother angle channels, so the
side with the lower mean per-level variance is reported as paralysed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioClip, KwsConfig, Spectrogram, mel_spectrogram, write_mel_binary
from .core import HighlightSegment, TimeSegment, dump_json, frame_range, write_series_csv
from .errors import AlignmentMismatch, BadParams, InsufficientFrames, WriteFailure
from .geometry import GeometryConfig, VFDynSeries, vfdyn
from .masks import MaskSequence, gaw

SIDES = ("Left", "Right", "Indeterminate")
LABELS = ("normal", "left_vfp", "right_vfp")
DELTA = 0.05
_EPS = 1e-12

EXPORT_MELS = 64
EXPORT_WIN_S = 0.032
EXPORT_HOP_S = 0.010


@dataclass(frozen=True)
class SideVerdict:
    side: str
    var_left: float
    var_right: float
    margin: float
    n_frames: int = 0

    def to_dict(self) -> dict:
        return {"side": self.side, "var_left": self.var_left, "var_right": self.var_right,
                "margin": self.margin, "n_frames": self.n_frames}


def _decide(var_left, var_right, delta, n_frames) -> SideVerdict:
    margin = abs(var_left - var_right) / max(var_left, var_right, _EPS)
    if margin < delta:
        side = "Indeterminate"
    else:
        side = "Left" if var_left < var_right else "Right"
    return SideVerdict(side, float(var_left), float(var_right), float(margin), int(n_frames))


def _mean_level_variance(matrix: np.ndarray, valid: np.ndarray) -> float:
    """Population variance per channel over valid frames, averaged over the
    channels that were measured at least once."""
    v = np.var(matrix[:, valid], axis=1)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else 0.0


def side_verdict(series: VFDynSeries, delta: float = DELTA) -> SideVerdict:
    valid = np.asarray(series.frame_validity, dtype=bool)
    n = int(valid.sum())
    if n < 2:
        raise InsufficientFrames(f"{n} valid frames; need at least 2")
    vl = _mean_level_variance(series.left_matrix(), valid)
    vr = _mean_level_variance(series.right_matrix(), valid)
    return _decide(vl, vr, delta, n)


def aggregate_verdicts(verdicts: Sequence[SideVerdict], delta: float = DELTA) -> SideVerdict:
    """Valid-frame-weighted mean of the per-highlight variances, then the
    side rule again. Verdicts without a frame count weigh 1."""
    if not verdicts:
        raise BadParams("no verdicts to aggregate")
    w = np.array([max(v.n_frames, 1) for v in verdicts], dtype=float)
    vl = float(np.dot(w, [v.var_left for v in verdicts]) / w.sum())
    vr = float(np.dot(w, [v.var_right for v in verdicts]) / w.sum())
    return _decide(vl, vr, delta, sum(v.n_frames for v in verdicts))


# -- feature export --------------------------------------------------------------

def export_mel(clip: AudioClip, n_mels: int = EXPORT_MELS) -> Spectrogram:
    """64-band log-mel with a 32 ms window and 10 ms hop, centred frames
    (``1 + len // hop`` of them)."""
    win = int(round(EXPORT_WIN_S * clip.sample_rate))
    hop = int(round(EXPORT_HOP_S * clip.sample_rate))
    cfg = KwsConfig(n_fft=win, hop=hop, n_mels=n_mels)
    return mel_spectrogram(clip, cfg, log=True, center=True)


@dataclass
class FeatureBundle:
    """Per-highlight features; ``ids``, ``mel`` and ``vfdyn`` are parallel."""

    ids: list
    mel: list
    vfdyn: list
    labels: list | None = None
    gaw: list | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.ids)
        if len(self.mel) != n or len(self.vfdyn) != n:
            raise AlignmentMismatch(f"{n} ids, {len(self.mel)} mel, {len(self.vfdyn)} series")
        if len(set(self.ids)) != n:
            raise AlignmentMismatch("highlight ids must be unique")
        if self.labels is not None:
            if len(self.labels) != n:
                raise AlignmentMismatch(f"{len(self.labels)} labels for {n} highlights")
            bad = [l for l in self.labels if l is not None and l not in LABELS]
            if bad:
                raise BadParams(f"unknown labels {bad}; expected one of {LABELS}")


def build_bundle(clip: AudioClip, masks: MaskSequence, highlights: Sequence[TimeSegment | HighlightSegment],
                 cfg: GeometryConfig = GeometryConfig(), labels=None) -> FeatureBundle:
    """Cut audio and masks to each highlight and compute both modalities.

    A highlight that runs past the end of either recording, or covers fewer
    than two frames, breaks the audio/video pairing and is rejected.
    """
    ids, mels, series, areas = [], [], [], []
    for i, h in enumerate(highlights):
        seg = TimeSegment(h.start_s, h.end_s)
        if seg.end_s > clip.duration_s + 1e-9:
            raise AlignmentMismatch(f"highlight {i} ends at {seg.end_s} s past audio end {clip.duration_s} s")
        a, b = frame_range(seg, masks.fps)
        if b > len(masks):
            raise AlignmentMismatch(f"highlight {i} needs frames up to {b}, video has {len(masks)}")
        if b - a < 2:
            raise AlignmentMismatch(f"highlight {i} covers {b - a} frames")
        part = masks[a:b]
        ids.append(f"h{i:03d}")
        mels.append(export_mel(clip.slice(seg.start_s, seg.end_s)))
        series.append(vfdyn(part, cfg))
        areas.append(gaw(part))
    return FeatureBundle(ids, mels, series, list(labels) if labels is not None else None, areas)


def export_features(bundle: FeatureBundle, out_dir) -> dict:
    """Write ``<id>.mel`` and ``<id>_vfdyn.csv`` per highlight plus
    ``manifest.json`` (written last); returns the manifest."""
    out = Path(out_dir)
    entries = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i, hid in enumerate(bundle.ids):
            mel, series = bundle.mel[i], bundle.vfdyn[i]
            mel_file, vf_file = f"{hid}.mel", f"{hid}_vfdyn.csv"
            write_mel_binary(out / mel_file, mel.data)
            extra = {}
            if bundle.gaw is not None:
                extra["GAW"] = bundle.gaw[i].values
            extra["valid"] = series.frame_validity
            write_series_csv(out / vf_file, series.channels(), extra)
            entries.append({
                "id": hid, "mel_file": mel_file, "vfdyn_file": vf_file,
                "frames": {"mel": int(mel.frames), "vfdyn": int(series.frames)},
                "mel_bins": int(mel.data.shape[1]), "n_levels": int(series.n_levels),
                "label": bundle.labels[i] if bundle.labels is not None else None,
            })
        manifest = {"highlights": entries}
        dump_json(manifest, out / "manifest.json")
    except OSError as exc:
        raise WriteFailure(f"{out}: {exc}") from exc
    return manifest
