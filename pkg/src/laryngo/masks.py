"""Glottis-mask ingestion, glottal area waveform and the diffusion prior mean."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import GlottisMask, SeriesChannel
from .errors import (AlphaOutOfRange, BadParams, MissingFrameEntry,
                     UnreadableFile, UnsupportedFormat, WriteFailure)

MASK_PATTERN = "frame_{:06d}.png"
ALPHA_MAX = 0.3
PRIOR_SCALE = 1e-3


@dataclass(frozen=True)
class MaskSequence:
    fps: float
    masks: tuple

    def __post_init__(self):
        masks = tuple(self.masks)
        if not self.fps > 0:
            raise BadParams("fps must be positive")
        if masks and len({(m.width, m.height) for m in masks}) != 1:
            raise BadParams("all masks in a sequence must share dimensions")
        object.__setattr__(self, "masks", masks)

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return MaskSequence(self.fps, self.masks[item])
        return self.masks[item]


@dataclass(frozen=True, eq=False)
class DiffusionPrior:
    alpha: float
    mu: np.ndarray


def load_mask(path) -> GlottisMask:
    """8-bit grayscale PNG/PGM; a pixel belongs to the glottis iff value > 127."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except FileNotFoundError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(f"{path}: not an image") from exc
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if mode == "1":
        return GlottisMask(arr.astype(bool))
    if mode != "L":
        raise UnsupportedFormat(f"{path}: expected 8-bit grayscale, got mode {mode}")
    return GlottisMask(arr > 127)


def write_mask(path, mask: GlottisMask) -> None:
    try:
        Image.fromarray(mask.pixels.astype(np.uint8) * 255, "L").save(path)
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc}") from exc


def load_mask_dir(directory, fps=None, n_frames=None) -> list[GlottisMask]:
    """Masks named like frames (``frame_%06d.png`` / ``.pgm``), in order."""
    d = Path(directory)
    if not d.is_dir():
        raise UnreadableFile(f"{d} is not a directory")
    files = sorted(p for p in d.iterdir()
                   if p.name.startswith("frame_") and p.suffix.lower() in (".png", ".pgm"))
    if n_frames is not None:
        if len(files) < n_frames:
            raise MissingFrameEntry(f"{d}: {len(files)} masks for {n_frames} frames")
        files = files[:n_frames]
    return [load_mask(p) for p in files]


def load_mask_sequence(directory, fps=None) -> MaskSequence:
    if fps is None:
        from .video import read_video_meta
        fps = read_video_meta(directory)["fps"]
    masks = load_mask_dir(directory)
    if not masks:
        raise UnreadableFile(f"{directory}: no mask files")
    return MaskSequence(float(fps), masks)


def write_mask_sequence(directory, seq: MaskSequence) -> None:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(seq.masks):
            write_mask(d / MASK_PATTERN.format(i), m)
        (d / "video.json").write_text(json.dumps({"fps": seq.fps}) + "\n", encoding="utf-8")
    except OSError as exc:
        raise WriteFailure(f"{d}: {exc}") from exc


def gaw(seq: MaskSequence | Sequence[GlottisMask]) -> SeriesChannel:
    """Glottal area waveform: glottis pixel count per frame."""
    masks = seq.masks if isinstance(seq, MaskSequence) else seq
    return SeriesChannel("GAW", np.array([m.area() for m in masks], dtype=float))


def diffusion_init_mean(mask: GlottisMask, alpha: float) -> DiffusionPrior:
    """Per-pixel mean of the customised initial noise,
    ``(1 - (alpha * (1 - m) + (1 - alpha) * m)) * 1e-3``.

    Background pixels get ``(1 - alpha) * 1e-3`` and glottis pixels
    ``alpha * 1e-3``, so for ``alpha < 0.5`` the larger mean sits outside the
    glottis.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= ALPHA_MAX:
        raise AlphaOutOfRange(f"alpha={alpha} outside [0, {ALPHA_MAX}]")
    m = mask.pixels.astype(np.float64)
    # same polynomial, arranged so alpha * 1e-3 and 1e-3 come out exact
    mu = (alpha * m + (1.0 - alpha) * (1.0 - m)) * PRIOR_SCALE
    return DiffusionPrior(alpha, mu)


PRIOR_HEADER = struct.Struct("<II")


def write_prior(path, prior: DiffusionPrior) -> None:
    """float32 little-endian raster after a ``(width, height)`` uint32 header."""
    h, w = prior.mu.shape
    try:
        with open(path, "wb") as fh:
            fh.write(PRIOR_HEADER.pack(w, h))
            fh.write(np.ascontiguousarray(prior.mu, dtype="<f4").tobytes())
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc}") from exc


def read_prior(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if len(raw) < PRIOR_HEADER.size:
        raise UnsupportedFormat(f"{path}: truncated header")
    w, h = PRIOR_HEADER.unpack_from(raw)
    body = raw[PRIOR_HEADER.size:]
    if len(body) != 4 * w * h:
        raise UnsupportedFormat(f"{path}: body does not match {w}x{h} header")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).copy()
