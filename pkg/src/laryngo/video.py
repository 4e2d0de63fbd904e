"""Per-frame HSV analysis, strobe-segment selection, fold presence and
highlight assembly."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import (FrameMask, GlottisMask, HighlightSegment, TimeSegment,
                   frame_range, frames_to_segments, intersect_segments)
from .errors import (BadParams, MissingFrameEntry, MissingMetadata,
                     NoEligibleSegment, SequenceTooShort, UnreadableFile,
                     UnsupportedFormat, WriteFailure)

FRAME_PATTERN = "frame_{:06d}.png"
EPS_EMPTY = 0.02


@dataclass(frozen=True, eq=False)
class FrameSeries:
    """``frames`` is a uint8 array shaped ``(T, H, W, 3)``."""

    fps: float
    frames: np.ndarray

    def __post_init__(self):
        if not self.fps > 0:
            raise BadParams("fps must be positive")
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3:
            raise BadParams(f"frames must be (T, H, W, 3), got {f.shape}")
        object.__setattr__(self, "frames", f.astype(np.uint8, copy=False))

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class HsvTrack:
    fps: float
    h: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def channel(self, name) -> np.ndarray:
        if name not in ("h", "s", "v"):
            raise BadParams(f"unknown HSV channel {name!r}")
        return getattr(self, name)

    def __len__(self):
        return len(self.v)


@dataclass(frozen=True)
class StrobeReport:
    nonempty_segments: list
    f_t_values: list
    reversal_counts: list
    selected: TimeSegment
    selected_index: int
    channel: str = "v"

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "nonempty_segments": [s.to_dict("nonempty") for s in self.nonempty_segments],
            "f_t_values": list(self.f_t_values),
            "reversal_counts": list(self.reversal_counts),
            "selected": self.selected.to_dict("strobe"),
            "selected_index": self.selected_index,
        }


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB -> HSV; input and output channels in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    s = np.divide(delta, mx, out=np.zeros_like(mx), where=mx > 0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_track(video: FrameSeries) -> HsvTrack:
    if len(video) == 0:
        raise BadParams("video has no frames")
    hsv = rgb_to_hsv(video.frames.astype(np.float64) / 255.0)
    means = hsv.mean(axis=(1, 2))
    return HsvTrack(video.fps, means[:, 0], means[:, 1], means[:, 2])


def empty_frame_mask(track: HsvTrack, eps_empty: float = EPS_EMPTY) -> FrameMask:
    """Unit-step marking of empty (dark) frames: ``v_t < eps_empty``."""
    return FrameMask(track.fps, np.asarray(track.v) < eps_empty)


def split_nonempty(empty: FrameMask) -> list[TimeSegment]:
    return frames_to_segments(~empty)


def fluctuation_f(values) -> tuple[int, int]:
    """Sum of signs of consecutive first-difference products, and the number
    of strictly negative products (direction reversals).

    For ``v_0 .. v_n`` there are ``n - 1`` terms; ``sign(0)`` counts as 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) < 3:
        raise SequenceTooShort(f"need at least 3 samples, got {len(v)}")
    d = np.diff(v)
    prod = d[:-1] * d[1:]
    return int(np.sign(prod).sum()), int(np.count_nonzero(prod < 0))


def fluctuation_terms(values) -> tuple[int, int, int]:
    """``(f_t, reversals, zero_terms)``."""
    f_t, rev = fluctuation_f(values)
    d = np.diff(np.asarray(values, dtype=np.float64))
    return f_t, rev, int(np.count_nonzero(d[:-1] * d[1:] == 0))


def select_strobe(track: HsvTrack, segments: Sequence[TimeSegment], channel: str = "v") -> StrobeReport:
    """Pick the segment with the most direction reversals on ``channel``.

    Ties go to the longer, then the earlier segment. Segments shorter than
    three frames are reported with ``f_t = 0`` and never selected.
    """
    values = track.channel(channel)
    f_ts, revs, lengths = [], [], []
    for seg in segments:
        a, b = frame_range(seg, track.fps)
        b = min(b, len(values))
        lengths.append(b - a)
        if b - a >= 3:
            f, r = fluctuation_f(values[a:b])
        else:
            f, r = 0, -1
        f_ts.append(f)
        revs.append(r)
    eligible = [i for i, n in enumerate(lengths) if n >= 3]
    if not eligible:
        raise NoEligibleSegment("no non-empty segment with at least 3 frames")
    best = max(eligible, key=lambda i: (revs[i], lengths[i], -i))
    return StrobeReport(list(segments), f_ts, [max(r, 0) for r in revs],
                        segments[best], best, channel)


def presence_from_confidences(confidences, fps, threshold=0.5) -> FrameMask:
    return FrameMask(fps, np.asarray(confidences, dtype=float) >= threshold)


def presence_from_masks(masks: Sequence[GlottisMask], fps, min_area=20) -> FrameMask:
    return FrameMask(fps, np.array([m.area() >= min_area for m in masks], dtype=bool))


def presence_mask(source, fps, n_frames=None, threshold=0.5, min_area=20) -> FrameMask:
    """Fold-presence track from a detection sidecar CSV path, a mask
    directory path, a confidence sequence, or a list of masks."""
    if isinstance(source, (str, Path)):
        p = Path(source)
        if p.is_dir():
            from .masks import load_mask_dir
            masks = load_mask_dir(p, n_frames=n_frames)
            return presence_from_masks(masks, fps, min_area)
        conf = read_detections(p, n_frames)
        return presence_from_confidences(conf, fps, threshold)
    items = list(source)
    if items and isinstance(items[0], GlottisMask):
        return presence_from_masks(items, fps, min_area)
    return presence_from_confidences(items, fps, threshold)


def read_detections(path, n_frames=None) -> np.ndarray:
    """Parse a ``frame,confidence`` sidecar into a dense confidence array.

    Every frame in ``range(n_frames)`` must have an entry (if several, the
    highest confidence wins).
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    table: dict[int, float] = {}
    try:
        for r in rows:
            i, c = int(r["frame"]), float(r["confidence"])
            table[i] = max(c, table.get(i, c))
    except (KeyError, ValueError, TypeError) as exc:
        raise UnsupportedFormat(f"{path}: expected columns frame,confidence") from exc
    n = (max(table) + 1 if table else 0) if n_frames is None else n_frames
    missing = [i for i in range(n) if i not in table]
    if missing:
        raise MissingFrameEntry(f"{path}: no detection for frames {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return np.array([table[i] for i in range(n)], dtype=float)


def write_detections(path, confidences) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "confidence"])
        for i, c in enumerate(confidences):
            w.writerow([i, repr(float(c))])


def assemble_highlights(vocal: Sequence[TimeSegment], presence: FrameMask, min_len_s: float = 0.5,
                        strobe: TimeSegment | None = None) -> list[HighlightSegment]:
    """Vocalization segments restricted to runs with visible folds."""
    kept = []
    for seg in intersect_segments(list(vocal), frames_to_segments(presence)):
        if seg.duration + 1e-9 < min_len_s:
            continue
        overlaps = strobe is not None and min(seg.end_s, strobe.end_s) > max(seg.start_s, strobe.start_s)
        kept.append(HighlightSegment(seg.start_s, seg.end_s, strobe=overlaps))
    return kept


# -- frame directory I/O ------------------------------------------------------

def read_video_meta(directory) -> dict:
    path = Path(directory) / "video.json"
    if not path.exists():
        raise MissingMetadata(f"{path} not found")
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if not isinstance(meta, dict) or not isinstance(meta.get("fps"), (int, float)) or meta["fps"] <= 0:
        raise MissingMetadata(f"{path}: missing positive 'fps'")
    return meta


def _numbered_files(directory, suffixes=(".png", ".ppm", ".pgm")) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UnreadableFile(f"{d} is not a directory")
    files = sorted(p for p in d.iterdir() if p.name.startswith("frame_") and p.suffix.lower() in suffixes)
    return files


def load_frames(directory, fps=None) -> FrameSeries:
    """Load ``frame_%06d.png`` (or .ppm) files plus ``video.json``.

    An explicit ``fps`` overrides the metadata file.
    """
    if fps is None:
        fps = read_video_meta(directory)["fps"]
    files = _numbered_files(directory)
    if not files:
        raise UnreadableFile(f"{directory}: no frame files")
    frames = []
    for p in files:
        try:
            with Image.open(p) as im:
                frames.append(np.asarray(im.convert("RGB")))
        except OSError as exc:
            raise UnreadableFile(f"{p}: {exc}") from exc
    return FrameSeries(float(fps), np.stack(frames))


def write_frames(directory, video: FrameSeries) -> None:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(video.frames):
            Image.fromarray(frame, "RGB").save(d / FRAME_PATTERN.format(i))
        (d / "video.json").write_text(json.dumps({"fps": video.fps}) + "\n", encoding="utf-8")
    except OSError as exc:
        raise WriteFailure(f"{d}: {exc}") from exc
