"""Shared value types, timeline conversions and the JSON/CSV formats.

Conventions used throughout the package:

* time intervals are half-open ``[start_s, end_s)``;
* image coordinates put the origin at the top-left pixel centre, ``x`` grows
  to the right (column index) and ``y`` grows downward (row index).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BadParams, UnreadableFile, UnsupportedFormat

SEGMENT_KINDS = ("vocalization", "strobe", "highlight", "nonempty")


@dataclass(frozen=True, order=True)
class TimeSegment:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (self.start_s >= 0 and self.end_s > self.start_s):
            raise BadParams(f"invalid segment [{self.start_s}, {self.end_s})")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self, kind=None) -> dict:
        d = {"start_s": self.start_s, "end_s": self.end_s}
        if kind is not None:
            d["kind"] = kind
        return d


@dataclass(frozen=True)
class HighlightSegment:
    """A video interval with phonation and visible folds."""

    start_s: float
    end_s: float
    strobe: bool = False
    vocalization: bool = True

    @property
    def segment(self) -> TimeSegment:
        return TimeSegment(self.start_s, self.end_s)

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> dict:
        return {"start_s": self.start_s, "end_s": self.end_s, "kind": "highlight",
                "strobe": self.strobe, "vocalization": self.vocalization}


@dataclass(frozen=True, eq=False)
class FrameMask:
    """Boolean flag per frame on a fixed frame-rate timeline."""

    fps: float
    flags: np.ndarray

    def __post_init__(self):
        if not self.fps > 0:
            raise BadParams("fps must be positive")
        flags = np.asarray(self.flags, dtype=bool).copy()
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    def __len__(self):
        return len(self.flags)

    def __eq__(self, other):
        return (isinstance(other, FrameMask) and self.fps == other.fps
                and np.array_equal(self.flags, other.flags))

    def __invert__(self):
        return FrameMask(self.fps, ~self.flags)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise BadParams(f"non-finite point ({self.x}, {self.y})")

    @classmethod
    def of(cls, xy) -> "Point2":
        return cls(float(xy[0]), float(xy[1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def to_list(self) -> list:
        return [self.x, self.y]


@dataclass(frozen=True, eq=False)
class GlottisMask:
    """Binary raster of the glottal region, row-major with ``pixels[y, x]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=bool)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise BadParams(f"mask must be a non-empty 2-D grid, got shape {px.shape}")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def empty(cls, width, height) -> "GlottisMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def area(self) -> int:
        return int(np.count_nonzero(self.pixels))

    def mirror(self) -> "GlottisMask":
        """Horizontal mirror, ``x -> width - 1 - x``."""
        return GlottisMask(self.pixels[:, ::-1])

    def __eq__(self, other):
        return isinstance(other, GlottisMask) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class AngleSet:
    """Left/right fold angles in degrees, one entry per level ``k = 1..N-1``.

    Levels that could not be measured hold NaN.
    """

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.shape != right.shape or left.ndim != 1:
            raise BadParams("left and right angle arrays must be 1-D and equal length")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __len__(self):
        return len(self.left)


@dataclass(frozen=True, eq=False)
class SeriesChannel:
    label: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return len(self.values)


# -- timeline conversions ---------------------------------------------------

def _runs(flags) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open ``(start, stop)`` index pairs."""
    f = np.asarray(flags, dtype=bool).astype(np.int8)
    if f.size == 0:
        return []
    d = np.diff(np.concatenate(([0], f, [0])))
    starts = np.flatnonzero(d == 1)
    stops = np.flatnonzero(d == -1)
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


def frames_to_segments(mask: FrameMask) -> list[TimeSegment]:
    return [TimeSegment(a / mask.fps, b / mask.fps) for a, b in _runs(mask.flags)]


def frame_range(seg: TimeSegment, fps: float) -> tuple[int, int]:
    """Frames whose centre ``(i + 0.5) / fps`` lies in ``seg``."""
    lo = math.ceil(seg.start_s * fps - 0.5 - 1e-9)
    hi = math.ceil(seg.end_s * fps - 0.5 - 1e-9)
    return max(lo, 0), max(hi, 0)


def segments_to_frames(segments: Iterable[TimeSegment], fps: float, n_frames: int) -> FrameMask:
    flags = np.zeros(n_frames, dtype=bool)
    for seg in segments:
        lo, hi = frame_range(seg, fps)
        flags[lo:min(hi, n_frames)] = True
    return FrameMask(fps, flags)


def intersect_segments(a: Sequence[TimeSegment], b: Sequence[TimeSegment]) -> list[TimeSegment]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i].start_s, b[j].start_s)
        hi = min(a[i].end_s, b[j].end_s)
        if hi > lo:
            out.append(TimeSegment(lo, hi))
        if a[i].end_s < b[j].end_s:
            i += 1
        else:
            j += 1
    return out


def total_duration(segments: Iterable[TimeSegment]) -> float:
    return sum(s.end_s - s.start_s for s in segments)


def segment_iou(a: TimeSegment, b: TimeSegment) -> float:
    inter = max(0.0, min(a.end_s, b.end_s) - max(a.start_s, b.start_s))
    union = (a.end_s - a.start_s) + (b.end_s - b.start_s) - inter
    return inter / union if union > 0 else 0.0


def set_iou(a: Sequence[TimeSegment], b: Sequence[TimeSegment]) -> float:
    """IoU of two segment lists viewed as time sets (each sorted, disjoint)."""
    inter = total_duration(intersect_segments(a, b))
    union = total_duration(a) + total_duration(b) - inter
    return inter / union if union > 0 else 1.0


# -- JSON / CSV formats -----------------------------------------------------

def dump_json(obj, path=None) -> str:
    """Deterministic JSON text (UTF-8, two-space indent, trailing newline)."""
    text = json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def segments_document(groups: dict[str, Sequence]) -> dict:
    """Build ``{"segments": [...]}`` from ``{kind: segments}``."""
    items = []
    for kind, segs in groups.items():
        if kind not in SEGMENT_KINDS:
            raise BadParams(f"unknown segment kind {kind!r}")
        for s in segs:
            if isinstance(s, HighlightSegment):
                items.append(s.to_dict())
            else:
                items.append(TimeSegment(s.start_s, s.end_s).to_dict(kind))
    return {"segments": items}


def write_segments_json(path, groups: dict[str, Sequence]) -> None:
    dump_json(segments_document(groups), path)


def read_segments_json(path) -> dict[str, list[TimeSegment]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "segments" not in doc:
        raise UnsupportedFormat(f"{path}: missing 'segments' array")
    out: dict[str, list] = {}
    for item in doc["segments"]:
        kind = item.get("kind", "vocalization")
        if kind == "highlight":
            seg = HighlightSegment(float(item["start_s"]), float(item["end_s"]),
                                   bool(item.get("strobe", False)),
                                   bool(item.get("vocalization", True)))
        else:
            seg = TimeSegment(float(item["start_s"]), float(item["end_s"]))
        out.setdefault(kind, []).append(seg)
    return out


def series_to_csv(channels: Sequence[SeriesChannel], extra: dict | None = None) -> str:
    """One column per channel, one row per frame; floats written with repr so
    re-parsing is bit exact."""
    cols = [(c.label, c.values) for c in channels]
    if extra:
        cols += list(extra.items())
    n = len(cols[0][1]) if cols else 0
    if any(len(v) != n for _, v in cols):
        raise BadParams("series columns must have equal length")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([label for label, _ in cols])
    for i in range(n):
        w.writerow([_fmt(v[i]) for _, v in cols])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_series_csv(path, channels, extra=None) -> None:
    Path(path).write_text(series_to_csv(channels, extra), encoding="utf-8")


def read_series_csv(path) -> dict[str, np.ndarray]:
    """Parse a series CSV into ``{label: float array}`` preserving column order."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise UnsupportedFormat(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    return {label: data[:, i] for i, label in enumerate(header)}
