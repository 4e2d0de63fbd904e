"""Deterministic synthetic data with analytic ground truth.

Randomness comes from numpy's Philox4x64 counter-based generator seeded with
the integer ``seed`` of a :class:`SynthSpec`, so the same spec gives the same
bytes on every run and platform. Shapes are rasterised by testing whether
each pixel centre lies inside the analytic shape, without anti-aliasing.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, write_wav
from .core import GlottisMask, TimeSegment, dump_json, intersect_segments, frames_to_segments, FrameMask
from .errors import BadParams
from .masks import MaskSequence, write_mask, write_mask_sequence
from .video import FrameSeries, write_detections, write_frames

KINDS = ("ellipse_mask", "teardrop_mask", "osc_sequence", "strobe_video", "vowel_audio", "exam")

@dataclass(frozen=True)
class SynthSpec:
    kind: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadParams(f"unknown synth kind {self.kind!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise BadParams("seed must be a non-negative integer")

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        try:
            return cls(d["kind"], int(d.get("seed", 0)), dict(d.get("params", {})))
        except (KeyError, TypeError) as exc:
            raise BadParams(f"bad synth spec: {exc}") from exc

    def to_dict(self):
        return {"kind": self.kind, "seed": self.seed, "params": self.params}


@dataclass(frozen=True)
class GroundTruth:
    kind: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self):
        return {"kind": self.kind, **self.values}


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _p(params, key, default):
    return params.get(key, default)


def _grid(width, height):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(float), ys.astype(float)


def _axis(theta_deg):
    """Down-pointing unit axis tilted by ``theta`` toward +x, and its left normal."""
    t = math.radians(theta_deg)
    u = np.array([math.sin(t), math.cos(t)])
    return u, np.array([-u[1], u[0]])


# -- masks -------------------------------------------------------------------------

def ellipse_mask(width=101, height=101, center=(50.0, 50.0), semi_minor=20.0, semi_major=40.0,
                 rotation_deg=0.0) -> GlottisMask:
    xs, ys = _grid(width, height)
    u, ell = _axis(rotation_deg)
    dx, dy = xs - center[0], ys - center[1]
    along = dx * u[0] + dy * u[1]
    lat = dx * ell[0] + dy * ell[1]
    return GlottisMask((lat / semi_minor) ** 2 + (along / semi_major) ** 2 <= 1.0)


def teardrop_mask(width=121, height=121, apex=(60.0, 105.0), radius=18.0, apex_angle_deg=40.0,
                  rotation_deg=0.0) -> GlottisMask:
    """Disk capped by the two tangents that meet at ``apex`` below it."""
    alpha = math.radians(apex_angle_deg / 2)
    u, ell = _axis(rotation_deg)
    dist = radius / math.sin(alpha)
    P = np.asarray(apex, float)
    O = P - u * dist
    xs, ys = _grid(width, height)
    in_disk = (xs - O[0]) ** 2 + (ys - O[1]) ** 2 <= radius ** 2
    d = -((xs - P[0]) * u[0] + (ys - P[1]) * u[1])
    lat = np.abs((xs - P[0]) * ell[0] + (ys - P[1]) * ell[1])
    in_cone = (d >= 0) & (d <= dist * math.cos(alpha) ** 2) & (lat <= d * math.tan(alpha))
    return GlottisMask(in_disk | in_cone)


def gen_mask(spec: SynthSpec) -> tuple[GlottisMask, GroundTruth]:
    p = spec.params
    theta = float(_p(p, "rotation_deg", 0.0))
    u, _ = _axis(theta)
    if spec.kind == "ellipse_mask":
        a, b = float(_p(p, "semi_minor", 20.0)), float(_p(p, "semi_major", 40.0))
        if a <= 0 or b <= 0:
            raise BadParams("ellipse semi-axes must be positive")
        w, h = int(_p(p, "width", 101)), int(_p(p, "height", 101))
        c = tuple(_p(p, "center", ((w - 1) / 2, (h - 1) / 2)))
        mask = ellipse_mask(w, h, c, a, b, theta)
        gt = {"midline_direction": u.tolist(), "center": list(c), "semi_minor": a, "semi_major": b,
              "rotation_deg": theta, "area": math.pi * a * b}
    elif spec.kind == "teardrop_mask":
        r, ang = float(_p(p, "radius", 18.0)), float(_p(p, "apex_angle_deg", 40.0))
        if r <= 0 or not 0 < ang < 180:
            raise BadParams("teardrop needs radius > 0 and 0 < apex angle < 180")
        w, h = int(_p(p, "width", 121)), int(_p(p, "height", 121))
        apex = tuple(_p(p, "apex", ((w - 1) / 2, h - 16.0)))
        mask = teardrop_mask(w, h, apex, r, ang, theta)
        alpha = math.radians(ang / 2)
        dist = r / math.sin(alpha)
        area = r * dist * math.cos(alpha) + math.pi * r * r * (math.pi + 2 * alpha) / (2 * math.pi)
        gt = {"midline_direction": u.tolist(), "apex": list(apex), "radius": r,
              "apex_angle_deg": ang, "half_angle_deg": ang / 2, "rotation_deg": theta, "area": area}
    else:
        raise BadParams(f"{spec.kind} is not a mask kind")
    return mask, GroundTruth(spec.kind, gt)


# -- oscillating fold sequence -------------------------------------------------------

def glottis_profile(s, knee=0.9):
    """Static opening over ``s`` in [0, 1] from the anterior apex (0) to the
    posterior end (1): linear up to ``knee``, elliptic closure after it."""
    s = np.clip(s, 0.0, 1.0)
    cap = np.sqrt(np.clip(1.0 - ((s - knee) / (1.0 - knee)) ** 2, 0.0, 1.0))
    return np.where(s <= knee, s / knee, cap)


def membranous_bump(s, fraction=0.5):
    """Vibration shape of the fold edge: one sine lobe over the anterior
    ``fraction`` of the glottis, zero over the (static) posterior part."""
    s = np.clip(s, 0.0, 1.0)
    return np.where(s < fraction, np.sin(np.pi * np.clip(s / fraction, 0.0, 1.0)), 0.0)


def _tip_offset(s, length, tip_radius):
    """Outward offset that rounds the apex with a circle of ``tip_radius``."""
    t = np.minimum(np.clip(s, 0.0, 1.0) * length, tip_radius)
    return np.sqrt(np.clip(tip_radius ** 2 - (tip_radius - t) ** 2, 0.0, None))


@dataclass(frozen=True)
class GlottisShape:
    """Parametric glottis: half-width on either side at position ``s`` is
    ``base_width * profile(s) + tip(s) + d * bump(s)``, clipped at 0 (fold
    contact), where ``d`` is that fold's current displacement."""

    length: float = 80.0
    base_width: float = 20.0
    tip_radius: float = 2.0
    knee: float = 0.9
    membranous: float = 0.5

    def __post_init__(self):
        if not (self.length > 0 and self.base_width > 0 and self.tip_radius >= 0
                and 0 < self.knee < 1 and 0 < self.membranous <= 1):
            raise BadParams("invalid glottis shape parameters")

    def half_width(self, s, displacement):
        static = self.base_width * glottis_profile(s, self.knee) + _tip_offset(s, self.length, self.tip_radius)
        return np.maximum(static + displacement * membranous_bump(s, self.membranous), 0.0)

    def area(self, d_left, d_right, n=20001):
        """Area by trapezoidal quadrature of the two half-widths."""
        s = np.linspace(0.0, 1.0, n)
        return float(np.trapezoid(self.half_width(s, d_left) + self.half_width(s, d_right), s) * self.length)


def glottis_mask(width, height, apex, shape: GlottisShape, d_left=0.0, d_right=0.0,
                 rotation_deg=0.0) -> GlottisMask:
    u, ell = _axis(rotation_deg)
    xs, ys = _grid(width, height)
    dx, dy = xs - apex[0], ys - apex[1]
    s = -(dx * u[0] + dy * u[1]) / shape.length
    lat = dx * ell[0] + dy * ell[1]  # positive on the left side
    hl = shape.half_width(s, d_left)
    hr = shape.half_width(s, d_right)
    inside = (s >= 0) & (s <= 1) & (((lat >= 0) & (lat <= hl)) | ((lat < 0) & (-lat <= hr)))
    return GlottisMask(inside)


def gen_osc_sequence(spec: SynthSpec) -> tuple[MaskSequence, GroundTruth]:
    """Each fold edge vibrates sinusoidally with its own amplitude and phase;
    the fold with the smaller amplitude is the paralysed one."""
    p = spec.params
    rng = rng_for(spec.seed)
    n = int(_p(p, "n_frames", 50))
    fps = float(_p(p, "fps", 25.0))
    w, h = int(_p(p, "width", 96)), int(_p(p, "height", 112))
    shape = GlottisShape(float(_p(p, "length", 80.0)), float(_p(p, "base_width", 20.0)),
                         float(_p(p, "tip_radius", 2.0)), float(_p(p, "knee", 0.9)),
                         float(_p(p, "membranous", 0.5)))
    amp_l, amp_r = float(_p(p, "amp_left", 0.0)), float(_p(p, "amp_right", 8.0))
    freq = float(_p(p, "freq_hz", 3.0))
    noise = float(_p(p, "noise_px", 0.0))
    theta = float(_p(p, "rotation_deg", 0.0))
    apex = tuple(_p(p, "apex", ((w - 1) / 2, h - 14.0)))
    if n < 1 or fps <= 0 or min(amp_l, amp_r) < 0 or noise < 0:
        raise BadParams("osc_sequence needs n_frames >= 1, fps > 0 and non-negative amplitudes")
    if "phase_left" in p:
        ph_l, ph_r = float(p["phase_left"]), float(_p(p, "phase_right", 0.0))
    else:
        ph_l, ph_r = rng.uniform(0, 2 * math.pi, 2)
    t = np.arange(n) / fps
    jitter = rng.normal(0.0, noise, (2, n)) if noise > 0 else np.zeros((2, n))
    dl = amp_l * np.sin(2 * math.pi * freq * t + ph_l) + jitter[0]
    dr = amp_r * np.sin(2 * math.pi * freq * t + ph_r) + jitter[1]
    masks = [glottis_mask(w, h, apex, shape, dl[i], dr[i], theta) for i in range(n)]
    if math.isclose(amp_l, amp_r):
        side = "Indeterminate"
    else:
        side = "Left" if amp_l < amp_r else "Right"
    area = [shape.area(dl[i], dr[i]) for i in range(n)]
    gt = {"paralyzed_side": side, "area": area, "displacement_left": dl.tolist(),
          "displacement_right": dr.tolist(), "fps": fps, "amp_left": amp_l, "amp_right": amp_r,
          "phase_left": float(ph_l), "phase_right": float(ph_r), "apex": list(apex)}
    return MaskSequence(fps, masks), GroundTruth(spec.kind, gt)


# -- strobe video --------------------------------------------------------------------

def _color_frames(values, hue, sat, pattern):
    rgb = np.array(colorsys.hsv_to_rgb(hue, sat, 1.0))
    frames = values[:, None, None, None] * pattern[None, :, :, None] * rgb[None, None, None, :]
    return np.round(frames * 255.0).astype(np.uint8)


def gen_strobe_video(spec: SynthSpec) -> tuple[FrameSeries, GroundTruth]:
    """Steady light, black gap, strobing, black gap, steady light.

    Steady parts drift monotonically in brightness; the strobe part
    alternates strictly above/below its base brightness every frame.
    """
    p = spec.params
    rng = rng_for(spec.seed)
    fps = float(_p(p, "fps", 25.0))
    h, w = int(_p(p, "height", 24)), int(_p(p, "width", 32))

    def length(key, lo, hi):
        v = p.get(key)
        return int(v) if v is not None else int(rng.integers(lo, hi + 1))

    n1, g1, ns, g2, n2 = (length("steady1", 20, 60), length("gap1", 3, 10), length("strobe", 30, 80),
                          length("gap2", 3, 10), length("steady2", 20, 60))
    if min(n1, ns, n2) < 3 or min(g1, g2) < 3:
        raise BadParams("segments need >= 3 frames and gaps >= 3 frames")
    hue = float(_p(p, "hue", rng.uniform(0.0, 0.1)))
    sat = float(_p(p, "saturation", rng.uniform(0.3, 0.7)))
    delta = float(_p(p, "delta_v", rng.uniform(0.12, 0.25)))
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((xx - (w - 1) / 2) / w) ** 2 + ((yy - (h - 1) / 2) / h) ** 2
    pattern = 1.0 - 0.6 * r2 / r2.max()

    def steady(n):
        v0 = rng.uniform(0.45, 0.7)
        return v0 + rng.choice([-1.0, 1.0]) * rng.uniform(0.0, 0.15) * np.arange(n) / max(n - 1, 1)

    base = rng.uniform(0.45, 0.6)
    signs = np.where(np.arange(ns) % 2 == 0, 1.0, -1.0)
    strobe_v = base + signs * delta * (1.0 + 0.3 * rng.uniform(0.0, 1.0, ns))
    values = np.concatenate([steady(n1), np.zeros(g1), strobe_v, np.zeros(g2), steady(n2)])
    frames = _color_frames(np.clip(values, 0.0, 1.0), hue, sat, pattern)
    bounds = []
    start = 0
    for n, gap in ((n1, g1), (ns, g2), (n2, 0)):
        bounds.append([start, start + n])
        start += n + gap
    gt = {"fps": fps, "segments_frames": bounds, "strobe_index": 1,
          "empty_frames": [i for i in range(len(values)) if values[i] == 0.0],
          "segments_s": [[a / fps, b / fps] for a, b in bounds]}
    return FrameSeries(fps, frames), GroundTruth(spec.kind, gt)


# -- vowel audio -----------------------------------------------------------------------

def harmonic_tone(n, sample_rate, f0=200.0, n_harmonics=5, rms=0.1, phases=None):
    t = np.arange(n) / sample_rate
    phases = np.zeros(n_harmonics) if phases is None else phases
    amps = 1.0 / np.arange(1, n_harmonics + 1)
    x = sum(a * np.sin(2 * math.pi * f0 * (k + 1) * t + phases[k]) for k, a in enumerate(amps))
    # RMS of a sum of harmonics over whole periods
    return x * rms / math.sqrt(np.sum(amps ** 2) / 2)


def gen_vowel_audio(spec: SynthSpec) -> tuple[AudioClip, GroundTruth]:
    """Harmonic complex gated on the ground-truth segments, white noise at
    ``snr_db`` below the tone level everywhere else."""
    p = spec.params
    rng = rng_for(spec.seed)
    sr = int(_p(p, "sample_rate", 16000))
    dur = float(_p(p, "duration_s", 7.0))
    segs = [tuple(map(float, s)) for s in _p(p, "segments", [[1.0, 3.0], [4.0, 6.0]])]
    f0 = float(_p(p, "f0", 200.0))
    nh = int(_p(p, "n_harmonics", 5))
    rms = float(_p(p, "tone_rms", 0.1))
    snr = _p(p, "snr_db", 10.0)
    if sr <= 0 or dur <= 0 or f0 <= 0 or nh < 1 or rms < 0 or f0 * nh >= sr / 2:
        raise BadParams("invalid vowel_audio parameters")
    n = int(round(dur * sr))
    gate = np.zeros(n, dtype=bool)
    for a, b in segs:
        if not 0 <= a < b <= dur:
            raise BadParams(f"segment ({a}, {b}) outside clip")
        gate[int(round(a * sr)):int(round(b * sr))] = True
    phases = rng.uniform(0, 2 * math.pi, nh)
    x = np.where(gate, harmonic_tone(n, sr, f0, nh, rms, phases), 0.0)
    if snr is not None and rms > 0:
        noise_rms = rms * 10 ** (-float(snr) / 20)
        x = x + np.where(gate, 0.0, rng.normal(0.0, noise_rms, n))
    gt = {"segments": [list(s) for s in segs], "sample_rate": sr, "tone_rms": rms,
          "snr_db": snr, "f0": f0}
    return AudioClip(x, sr), GroundTruth(spec.kind, gt)


# -- full exam bundle ----------------------------------------------------------------------

def gen_exam(spec: SynthSpec) -> dict:
    """Audio, frames, detection sidecar and masks for one synthetic exam.

    The video has a steady part, a dark gap, a strobing part, a dark gap and
    a steady part; folds are visible over ``presence_s``; the patient
    phonates over ``vocal_s``. Ground truth highlights are the intersection
    of the two.
    """
    p = spec.params
    rng = rng_for(spec.seed)
    fps = float(_p(p, "fps", 25.0))
    dur = float(_p(p, "duration_s", 12.0))
    sr = int(_p(p, "sample_rate", 16000))
    vocal = [tuple(map(float, s)) for s in _p(p, "vocal_s", [[1.0, 4.5], [6.0, 10.0]])]
    presence = tuple(map(float, _p(p, "presence_s", [2.0, 11.0])))
    strobe = tuple(map(float, _p(p, "strobe_s", [5.2, 9.6])))
    side = _p(p, "paralyzed_side", "Left")
    amp = float(_p(p, "amplitude", 8.0))
    ratio = float(_p(p, "amplitude_ratio", 5.0))
    if side not in ("Left", "Right"):
        raise BadParams("paralyzed_side must be Left or Right")
    n_frames = int(round(dur * fps))
    f = lambda s: int(round(s * fps))

    audio, _ = gen_vowel_audio(SynthSpec("vowel_audio", spec.seed, {
        "sample_rate": sr, "duration_s": dur, "segments": [list(v) for v in vocal],
        "snr_db": _p(p, "snr_db", 10.0)}))

    gap = 4
    lens = dict(steady1=f(strobe[0]) - gap, gap1=gap, strobe=f(strobe[1]) - f(strobe[0]),
                gap2=gap, steady2=n_frames - f(strobe[1]) - gap)
    video, vgt = gen_strobe_video(SynthSpec("strobe_video", spec.seed, {"fps": fps, **lens}))

    amp_l, amp_r = (amp / ratio, amp) if side == "Left" else (amp, amp / ratio)
    seq, sgt = gen_osc_sequence(SynthSpec("osc_sequence", spec.seed, {
        "n_frames": n_frames, "fps": fps, "amp_left": amp_l, "amp_right": amp_r,
        "noise_px": _p(p, "noise_px", 0.3)}))
    present = np.zeros(n_frames, dtype=bool)
    present[f(presence[0]):f(presence[1])] = True
    blank = GlottisMask.empty(seq.masks[0].width, seq.masks[0].height)
    masks = MaskSequence(fps, [m if present[i] else blank for i, m in enumerate(seq.masks)])
    conf = np.where(present, rng.uniform(0.7, 0.99, n_frames), rng.uniform(0.0, 0.3, n_frames))

    pres_segs = frames_to_segments(FrameMask(fps, present))
    highlights = [s for s in intersect_segments([TimeSegment(*v) for v in vocal], pres_segs)
                  if s.duration >= 0.5]
    gt = {"fps": fps, "sample_rate": sr, "vocal_s": [list(v) for v in vocal],
          "presence_frames": [f(presence[0]), f(presence[1])],
          "strobe_frames": vgt["segments_frames"][1], "strobe_s": vgt["segments_s"][1],
          "highlights_s": [[s.start_s, s.end_s] for s in highlights],
          "paralyzed_side": side, "amp_left": amp_l, "amp_right": amp_r}
    return {"audio": audio, "video": video, "masks": masks, "detections": conf,
            "ground_truth": GroundTruth("exam", gt)}


def generate(spec: SynthSpec):
    """Dispatch on ``spec.kind``; returns ``(artifact, GroundTruth)`` (for
    ``exam`` the artifact is a dict of parts)."""
    if spec.kind in ("ellipse_mask", "teardrop_mask"):
        return gen_mask(spec)
    if spec.kind == "osc_sequence":
        return gen_osc_sequence(spec)
    if spec.kind == "strobe_video":
        return gen_strobe_video(spec)
    if spec.kind == "vowel_audio":
        return gen_vowel_audio(spec)
    parts = gen_exam(spec)
    return parts, parts["ground_truth"]


def write_bundle(spec: SynthSpec, out_dir) -> dict:
    """Write the artifact in the ingestion formats plus ``ground_truth.json``
    and ``spec.json``; returns a listing of written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifact, gt = generate(spec)
    files = {}
    if spec.kind in ("ellipse_mask", "teardrop_mask"):
        write_mask(out / "mask.png", artifact)
        files["mask"] = "mask.png"
    elif spec.kind == "osc_sequence":
        write_mask_sequence(out / "masks", artifact)
        files["masks"] = "masks"
    elif spec.kind == "strobe_video":
        write_frames(out / "frames", artifact)
        files["frames"] = "frames"
    elif spec.kind == "vowel_audio":
        write_wav(out / "audio.wav", artifact)
        files["audio"] = "audio.wav"
    else:
        write_wav(out / "audio.wav", artifact["audio"])
        write_frames(out / "frames", artifact["video"])
        write_mask_sequence(out / "masks", artifact["masks"])
        write_detections(out / "detections.csv", artifact["detections"])
        files.update(audio="audio.wav", frames="frames", masks="masks", detections="detections.csv")
    dump_json(gt.to_dict(), out / "ground_truth.json")
    dump_json(spec.to_dict(), out / "spec.json")
    files["ground_truth"] = "ground_truth.json"
    return files
