"""Vocalization detection: spectrograms, sliding-window chunk scoring and
conversion of chunk decisions into time segments.

The chunk scorer is pluggable. Two implementations ship here: a DSP vowel
detector that needs no training data, and a replay scorer reading posteriors
produced by an external model from a ``frame_index,posterior`` CSV.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import medfilt

from .core import TimeSegment, _runs
from .errors import (BadParams, ClipTooShort, ScorerFailure, TooFewFrames,
                     UnreadableFile, UnsupportedFormat, WriteFailure)

LOG_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise BadParams("sample_rate must be positive")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise BadParams("audio clip must be a non-empty mono signal")
        object.__setattr__(self, "samples", x)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice(self, start_s, end_s) -> "AudioClip":
        a = max(int(round(start_s * self.sample_rate)), 0)
        b = min(int(round(end_s * self.sample_rate)), len(self.samples))
        return AudioClip(self.samples[a:b], self.sample_rate)


@dataclass(frozen=True)
class KwsConfig:
    """Framing, chunking and decision parameters for vocalization detection.

    ``threshold`` is the operating point for an externally trained model;
    ``dsp_threshold`` is used instead when the built-in DSP scorer runs.
    """

    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 80
    chunk_frames: int = 40
    threshold: float = 0.38
    dsp_threshold: float = 0.5
    median_len: int = 5
    max_gap_s: float = 0.2
    min_segment_s: float = 0.3
    fmin: float = 0.0
    fmax: float | None = None
    feature: str = "mel"

    def __post_init__(self):
        if self.chunk_frames < 1:
            raise BadParams("chunk_frames must be >= 1")
        if not 0.0 <= self.threshold <= 1.0 or not 0.0 <= self.dsp_threshold <= 1.0:
            raise BadParams("thresholds must lie in [0, 1]")
        if self.n_fft < 2 or self.hop < 1:
            raise BadParams("n_fft must be >= 2 and hop >= 1")
        if self.median_len < 1 or self.median_len % 2 == 0:
            raise BadParams("median_len must be a positive odd integer")
        if self.feature not in ("mel", "magnitude"):
            raise BadParams(f"unknown feature {self.feature!r}")

    @classmethod
    def short_frames(cls, **kw) -> "KwsConfig":
        """The alternative 400-sample window / 64-sample hop framing."""
        return cls(n_fft=400, hop=64, **kw)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """``data`` is ``frames x bins``.

    ``kind`` is one of ``magnitude``, ``mel`` (power) or ``logmel``; mel
    variants keep their filterbank so scorers can map back to linear bins.
    """

    data: np.ndarray
    frame_hop_s: float
    sample_rate: int
    n_fft: int
    kind: str = "magnitude"
    filterbank: np.ndarray | None = field(default=None, repr=False)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    def linear_power(self, rows=slice(None)) -> np.ndarray:
        """Power on the linear FFT-bin axis for the selected frames."""
        d = self.data[rows]
        if self.kind == "magnitude":
            return d ** 2
        if self.kind == "logmel":
            d = np.exp(d)
        return d @ self.filterbank


@dataclass(frozen=True)
class Chunk:
    """A window of ``length`` consecutive frames starting at ``start``."""

    spec: Spectrogram
    start: int
    length: int

    @property
    def data(self) -> np.ndarray:
        return self.spec.data[self.start:self.start + self.length]


@dataclass(frozen=True)
class ChunkDecision:
    frame_index: int
    posterior: float


class ChunkScorer(Protocol):
    def __call__(self, chunk: Chunk) -> float: ...


# -- spectral front end -------------------------------------------------------

def _frame_signal(x, n_fft, hop, center):
    if center:
        x = np.pad(x, n_fft // 2, mode="reflect" if len(x) > n_fft // 2 else "constant")
    if len(x) < n_fft:
        raise ClipTooShort(f"clip has {len(x)} samples, need at least {n_fft}")
    return np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]


def hann(n) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_magnitude(clip: AudioClip, cfg: KwsConfig = KwsConfig(), center=False) -> Spectrogram:
    """Magnitude STFT with ``1 + (len - n_fft) // hop`` frames (uncentred)."""
    frames = _frame_signal(clip.samples, cfg.n_fft, cfg.hop, center)
    mag = np.abs(np.fft.rfft(frames * hann(cfg.n_fft), axis=1))
    return Spectrogram(mag, cfg.hop / clip.sample_rate, clip.sample_rate, cfg.n_fft, "magnitude")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft, n_mels, fmin=0.0, fmax=None) -> np.ndarray:
    """Triangular filters with unit peak on the HTK mel scale, ``n_mels x bins``.

    Adjacent triangles overlap so that, between the first and last centre,
    the filter weights at any FFT bin sum to exactly one.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_spectrogram(clip: AudioClip, cfg: KwsConfig = KwsConfig(), log=True, center=False) -> Spectrogram:
    mag = stft_magnitude(clip, cfg, center=center)
    fb = mel_filterbank(clip.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    mel = (mag.data ** 2) @ fb.T
    if log:
        mel = np.log(np.maximum(mel, LOG_FLOOR))
    return Spectrogram(mel, mag.frame_hop_s, clip.sample_rate, cfg.n_fft,
                       "logmel" if log else "mel", fb)


def features(clip: AudioClip, cfg: KwsConfig) -> Spectrogram:
    if cfg.feature == "mel":
        return mel_spectrogram(clip, cfg)
    return stft_magnitude(clip, cfg)


# -- chunking and scoring -----------------------------------------------------

def slide_chunks(spec: Spectrogram, cfg: KwsConfig = KwsConfig()) -> list[Chunk]:
    n = spec.frames - cfg.chunk_frames + 1
    if n < 1:
        raise TooFewFrames(f"{spec.frames} frames < chunk size {cfg.chunk_frames}")
    return [Chunk(spec, i, cfg.chunk_frames) for i in range(n)]


def score_chunks(chunks: Sequence[Chunk], scorer: ChunkScorer) -> list[ChunkDecision]:
    out = []
    for i, chunk in enumerate(chunks):
        try:
            p = float(scorer(chunk))
        except ScorerFailure:
            raise
        except Exception as exc:
            raise ScorerFailure(i, exc) from exc
        if not 0.0 <= p <= 1.0:
            raise ScorerFailure(i, ValueError(f"posterior {p} outside [0, 1]"))
        out.append(ChunkDecision(chunk.start, p))
    return out


def frame_vowel_scores(power: np.ndarray, sample_rate: int, n_fft: int,
                       f0_range=(80.0, 400.0), low_band_hz=1000.0) -> np.ndarray:
    """Per-frame periodicity x low-band energy ratio from linear power spectra.

    The autocorrelation of each windowed frame is recovered from its power
    spectrum; its normalised peak over the pitch-lag range measures
    voicing, the fraction of power at or below ``low_band_hz`` rejects
    broadband noise.
    """
    power = np.atleast_2d(power)
    ac = np.fft.irfft(power, n=n_fft, axis=1)
    r0 = ac[:, 0]
    lo = max(int(math.ceil(sample_rate / f0_range[1])), 1)
    hi = min(int(math.floor(sample_rate / f0_range[0])), n_fft // 2)
    total = power.sum(axis=1)
    freqs = np.arange(power.shape[1]) * sample_rate / n_fft
    low = power[:, freqs <= low_band_hz].sum(axis=1)
    live = r0 > 1e-12
    peak = np.zeros(len(power))
    ratio = np.zeros(len(power))
    peak[live] = ac[live, lo:hi + 1].max(axis=1) / r0[live]
    ratio[live] = low[live] / total[live]
    return np.clip(peak, 0.0, 1.0) * ratio


# voiced frames of a clean harmonic score about 0.77 (window taper), noise near 0
VOWEL_FRAME_GATE = 0.3


def default_vowel_scorer(chunk: Chunk) -> float:
    """Fraction of the chunk's frames whose vowel score exceeds
    ``VOWEL_FRAME_GATE``.

    A fraction rather than a mean keeps the 0.5 crossing at the point where
    the chunk centre meets a burst edge, whatever the voiced-frame level.
    """
    spec = chunk.spec
    power = spec.linear_power(slice(chunk.start, chunk.start + chunk.length))
    scores = frame_vowel_scores(power, spec.sample_rate, spec.n_fft)
    return float(np.mean(scores > VOWEL_FRAME_GATE))


class ConstantScorer:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, chunk):
        return self.value


class ReplayScorer:
    """Replays posteriors keyed by chunk start frame."""

    def __init__(self, decisions: Sequence[ChunkDecision]):
        self.table = {d.frame_index: d.posterior for d in decisions}

    @classmethod
    def from_csv(cls, path) -> "ReplayScorer":
        return cls(read_sidecar_scores(path))

    def __call__(self, chunk):
        return self.table[chunk.start]


def read_sidecar_scores(path) -> list[ChunkDecision]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    try:
        out = [ChunkDecision(int(r["frame_index"]), float(r["posterior"])) for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise UnsupportedFormat(f"{path}: expected columns frame_index,posterior") from exc
    return sorted(out, key=lambda d: d.frame_index)


def write_sidecar_scores(path, decisions: Sequence[ChunkDecision]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "posterior"])
        for d in decisions:
            w.writerow([d.frame_index, repr(float(d.posterior))])


# -- decisions -> segments ----------------------------------------------------

def _close_gaps(track: np.ndarray, max_gap: int) -> np.ndarray:
    track = track.copy()
    runs = _runs(track)
    for (_, stop), (start, _) in zip(runs, runs[1:]):
        if start - stop <= max_gap:
            track[stop:start] = True
    return track


def decisions_to_vocal_segments(decisions: Sequence[ChunkDecision], cfg: KwsConfig,
                                frame_hop_s: float, threshold: float | None = None,
                                anchor_s: float = 0.0) -> list[TimeSegment]:
    """Threshold, median-smooth, bridge short gaps, drop short runs.

    Decision ``i`` is placed at time ``i * frame_hop_s + anchor_s``; a run of
    decisions ``[a, b)`` becomes the segment from decision ``a`` to ``b``.
    """
    if not decisions:
        return []
    thr = cfg.threshold if threshold is None else threshold
    n = max(d.frame_index for d in decisions) + 1
    post = np.zeros(n)
    for d in decisions:
        post[d.frame_index] = d.posterior
    track = post > thr
    if cfg.median_len > 1:
        # zero padding matches medfilt's edge handling without its short-input warning
        h = cfg.median_len // 2
        padded = np.pad(track.astype(float), h)
        track = medfilt(padded, cfg.median_len)[h:h + n] > 0.5
    track = _close_gaps(track, int(math.floor(cfg.max_gap_s / frame_hop_s + 1e-9)))
    min_len = cfg.min_segment_s / frame_hop_s - 1e-9
    out = []
    for a, b in _runs(track):
        if b - a >= min_len:
            start = max(a * frame_hop_s + anchor_s, 0.0)
            out.append(TimeSegment(start, b * frame_hop_s + anchor_s))
    return out


def chunk_anchor_s(cfg: KwsConfig, sample_rate: int) -> float:
    """Offset placing a chunk decision at the centre of the audio it covers."""
    return (cfg.chunk_frames / 2 - 1) * cfg.hop / sample_rate + cfg.n_fft / (2 * sample_rate)


@dataclass
class VocalDetection:
    segments: list[TimeSegment]
    decisions: list[ChunkDecision]
    threshold: float
    anchor_s: float
    frame_hop_s: float

    def metadata(self, cfg: KwsConfig) -> dict:
        return {"threshold": self.threshold, "anchor_s": self.anchor_s,
                "frame_hop_s": self.frame_hop_s, "median_len": cfg.median_len,
                "max_gap_s": cfg.max_gap_s, "min_segment_s": cfg.min_segment_s,
                "chunk_frames": cfg.chunk_frames, "n_fft": cfg.n_fft, "hop": cfg.hop,
                "n_mels": cfg.n_mels, "feature": cfg.feature}


def detect_vocal_segments(clip: AudioClip, cfg: KwsConfig = KwsConfig(),
                          scorer: ChunkScorer | None = None) -> VocalDetection:
    """Full inference path: features, sliding chunks, scoring, segmentation.

    With no scorer the DSP vowel scorer runs at ``cfg.dsp_threshold`` and its
    decisions are centred on their chunks. Replay scorers are taken to be
    already aligned to frame indices (anchor 0) and use ``cfg.threshold``.
    Clips too short for a single chunk yield no segments.
    """
    hop_s = cfg.hop / clip.sample_rate
    if scorer is None:
        scorer, thr, anchor = default_vowel_scorer, cfg.dsp_threshold, chunk_anchor_s(cfg, clip.sample_rate)
    else:
        thr = cfg.threshold
        anchor = 0.0 if isinstance(scorer, ReplayScorer) else chunk_anchor_s(cfg, clip.sample_rate)
    try:
        chunks = slide_chunks(features(clip, cfg), cfg)
    except (ClipTooShort, TooFewFrames):
        return VocalDetection([], [], thr, anchor, hop_s)
    decisions = score_chunks(chunks, scorer)
    segs = decisions_to_vocal_segments(decisions, cfg, hop_s, thr, anchor)
    return VocalDetection(segs, decisions, thr, anchor, hop_s)


def detect_from_sidecar(decisions: Sequence[ChunkDecision], cfg: KwsConfig,
                        frame_hop_s: float) -> VocalDetection:
    segs = decisions_to_vocal_segments(decisions, cfg, frame_hop_s)
    return VocalDetection(segs, list(decisions), cfg.threshold, 0.0, frame_hop_s)


# -- file formats -------------------------------------------------------------

def load_wav(path) -> AudioClip | None:
    """Read PCM16/PCM32/float WAV as mono float in [-1, 1]; stereo is averaged.

    Returns None for a file with no samples.
    """
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        return None
    return AudioClip(x, int(sr))


def write_wav(path, clip: AudioClip, float32=True) -> None:
    x = clip.samples
    data = x.astype("<f4") if float32 else np.round(np.clip(x, -1, 1 - 1 / 32768) * 32768).astype("<i2")
    try:
        wavfile.write(path, clip.sample_rate, data)
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc}") from exc


MEL_HEADER = struct.Struct("<II")


def write_mel_binary(path, data: np.ndarray) -> None:
    """float32 little-endian body after an 8-byte ``(frames, bins)`` uint32 header."""
    data = np.asarray(data)
    try:
        with open(path, "wb") as fh:
            fh.write(MEL_HEADER.pack(*data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc}") from exc


def read_mel_binary(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if len(raw) < MEL_HEADER.size:
        raise UnsupportedFormat(f"{path}: truncated header")
    f, b = MEL_HEADER.unpack_from(raw)
    body = raw[MEL_HEADER.size:]
    if len(body) != 4 * f * b:
        raise UnsupportedFormat(f"{path}: body size does not match header {f}x{b}")
    return np.frombuffer(body, dtype="<f4").reshape(f, b).copy()
