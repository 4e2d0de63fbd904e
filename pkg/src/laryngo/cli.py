"""Batch command-line frontend.

Each command reads files, writes its outputs into ``--out`` together with
``config.json`` (the effective configuration) and ``run.log`` (the only
file carrying timestamps), and exits 0 on success, 2 on an input or
configuration error and 3 when the data is too degenerate to analyse.
Failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .audio import (KwsConfig, detect_from_sidecar, detect_vocal_segments, load_wav,
                    read_sidecar_scores)
from .classify import (DELTA, aggregate_verdicts, build_bundle, export_features,
                       side_verdict)
from .core import (FrameMask, dump_json, frame_range, read_segments_json, read_series_csv,
                   segments_document)
from .errors import (BadParams, DegeneracyError, LaryngoError, UnreadableFile,
                     UnsupportedFormat, WriteFailure)
from .geometry import GeometryConfig, VFDynSeries, analyze_frame, vfdyn
from .masks import gaw, load_mask_sequence
from .synth import SynthSpec, write_bundle
from .video import (EPS_EMPTY, assemble_highlights, empty_frame_mask, hsv_track, load_frames,
                    presence_mask, read_video_meta, select_strobe, split_nonempty)

log = logging.getLogger("laryngo")


# -- configuration -----------------------------------------------------------------

@dataclasses.dataclass
class VideoConfig:
    eps_empty: float = EPS_EMPTY
    strobe_channel: str = "v"
    presence_threshold: float = 0.5
    presence_min_area: int = 20
    min_highlight_s: float = 0.5


@dataclasses.dataclass
class RunConfig:
    command: str
    inputs: dict
    kws: KwsConfig = dataclasses.field(default_factory=KwsConfig)
    geometry: GeometryConfig = dataclasses.field(default_factory=GeometryConfig)
    video: VideoConfig = dataclasses.field(default_factory=VideoConfig)
    delta: float = DELTA
    fps: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "command": self.command,
            "inputs": self.inputs,
            "kws": dataclasses.asdict(self.kws),
            "geometry": dataclasses.asdict(self.geometry),
            "video": dataclasses.asdict(self.video),
            "classify": {"delta": self.delta},
            "fps_override": self.fps,
            "seed": self.seed,
        }


def _section(cls, base, overrides: dict):
    if not overrides:
        return base
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise BadParams(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dataclasses.replace(base, **overrides)


def build_config(args, inputs: dict) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UnreadableFile(f"{args.config}: {exc}") from exc
        except ValueError as exc:
            raise UnsupportedFormat(f"{args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UnsupportedFormat(f"{args.config}: expected a JSON object")
    try:
        kws = _section(KwsConfig, KwsConfig(), raw.get("kws", {}))
        geo = _section(GeometryConfig, GeometryConfig(), raw.get("geometry", {}))
        vid = _section(VideoConfig, VideoConfig(), raw.get("video", {}))
    except TypeError as exc:
        raise BadParams(str(exc)) from exc
    delta = float(raw.get("classify", {}).get("delta", DELTA))
    if args.threshold is not None:
        kws = dataclasses.replace(kws, threshold=args.threshold, dsp_threshold=args.threshold)
    if args.n_levels is not None:
        geo = dataclasses.replace(geo, n_levels=args.n_levels)
    if args.fps is not None and not args.fps > 0:
        raise BadParams("--fps must be positive")
    return RunConfig(args.command, inputs, kws, geo, vid, delta, args.fps, args.seed)


# -- output handling -----------------------------------------------------------------

class Run:
    """Output directory plus a timestamped log file for one command."""

    def __init__(self, out_dir, cfg: RunConfig):
        self.out = Path(out_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise WriteFailure(f"{self.out}: {exc}") from exc
        self.cfg = cfg
        self._handler = logging.FileHandler(self.out / "run.log", mode="w", encoding="utf-8")
        self._handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(self._handler)
        dump_json(cfg.to_dict(), self.out / "config.json")
        log.info("command %s", cfg.command)

    def json(self, name, obj):
        dump_json(obj, self.out / name)
        log.info("wrote %s", name)

    def close(self):
        log.removeHandler(self._handler)
        self._handler.close()


def _setup_logging():
    level = os.environ.get("LARYNGO_LOG", "WARNING").upper()
    log.setLevel(logging.DEBUG)
    if not any(getattr(h, "_laryngo_stderr", False) for h in log.handlers):
        h = logging.StreamHandler(sys.stderr)
        h._laryngo_stderr = True
        h.setLevel(getattr(logging, level, logging.WARNING))
        h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(h)
    log.propagate = False


# -- pipeline pieces -------------------------------------------------------------------

def _mask_sequence(path, fps):
    seq = load_mask_sequence(path, fps)
    log.info("loaded %d masks at %g fps", len(seq), seq.fps)
    return seq


def run_highlights(cfg: RunConfig, audio, frames, detections=None, masks=None, scores=None) -> dict:
    clip = load_wav(audio)
    if clip is None:
        log.warning("audio has no samples; no vocalization")
        vocal, kws_meta = [], {"empty_audio": True}
    else:
        if scores:
            hop_s = cfg.kws.hop / clip.sample_rate
            det = detect_from_sidecar(read_sidecar_scores(scores), cfg.kws, hop_s)
        else:
            det = detect_vocal_segments(clip, cfg.kws)
        vocal = det.segments
        kws_meta = det.metadata(cfg.kws)
    log.info("%d vocalization segments", len(vocal))

    fps = cfg.fps if cfg.fps is not None else read_video_meta(frames)["fps"]
    video = load_frames(frames, fps)
    track = hsv_track(video)
    nonempty = split_nonempty(empty_frame_mask(track, cfg.video.eps_empty))
    try:
        report = select_strobe(track, nonempty, cfg.video.strobe_channel)
        strobe, strobe_doc = report.selected, report.to_dict()
    except DegeneracyError as exc:
        log.warning("no strobe segment: %s", exc)
        strobe, strobe_doc = None, {"selected": None, "reason": type(exc).__name__}

    n = len(video)
    if detections:
        presence = presence_mask(detections, fps, n, threshold=cfg.video.presence_threshold)
    elif masks:
        presence = presence_mask(masks, fps, n, min_area=cfg.video.presence_min_area)
    else:
        presence = FrameMask(fps, ~empty_frame_mask(track, cfg.video.eps_empty).flags)
    highlights = assemble_highlights(vocal, presence, cfg.video.min_highlight_s, strobe)
    log.info("%d highlights", len(highlights))
    doc = segments_document({
        "vocalization": vocal,
        "nonempty": nonempty,
        "strobe": [strobe] if strobe is not None else [],
        "highlight": highlights,
    })
    doc["fps"] = fps
    doc["kws"] = kws_meta
    return {"segments": doc, "strobe": strobe_doc, "highlights": highlights, "fps": fps}


def run_geometry(cfg: RunConfig, seq):
    geoms = [analyze_frame(m, cfg.geometry) for m in seq.masks]
    series = vfdyn(seq, cfg.geometry, geometries=geoms)
    doc = {"fps": seq.fps, "n_levels": cfg.geometry.n_levels,
           "frames": [dict(index=i, **g.to_dict()) for i, g in enumerate(geoms)]}
    return series, doc


# -- commands ----------------------------------------------------------------------------

def cmd_highlights(args):
    cfg = build_config(args, {"audio": args.audio, "frames": args.frames, "detections": args.detections,
                              "masks": args.masks, "scores": args.scores})
    run = Run(args.out, cfg)
    try:
        res = run_highlights(cfg, args.audio, args.frames, args.detections, args.masks, args.scores)
        run.json("highlights.json", res["segments"])
        run.json("strobe_report.json", res["strobe"])
    finally:
        run.close()
    return 0


def cmd_geometry(args):
    cfg = build_config(args, {"masks": args.masks})
    seq = _mask_sequence(args.masks, cfg.fps)
    run = Run(args.out, cfg)
    try:
        series, doc = run_geometry(cfg, seq)
        run.json("geometry.json", doc)
        (run.out / "vfdyn.csv").write_text(series.to_csv(gaw(seq)), encoding="utf-8")
        log.info("wrote vfdyn.csv (%d frames, %d valid)", series.frames, int(series.frame_validity.sum()))
    finally:
        run.close()
    return 0


def _load_series(path) -> VFDynSeries:
    return VFDynSeries.from_columns(read_series_csv(path))


def cmd_classify_side(args):
    cfg = build_config(args, {"series": list(args.series)})
    run = Run(args.out, cfg)
    try:
        verdicts = [side_verdict(_load_series(p), cfg.delta) for p in args.series]
        agg = aggregate_verdicts(verdicts, cfg.delta)
        doc = agg.to_dict()
        doc["per_series"] = [dict(file=str(p), **v.to_dict()) for p, v in zip(args.series, verdicts)]
        run.json("verdict.json", doc)
    finally:
        run.close()
    return 0


def cmd_synth(args):
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UnreadableFile(f"{args.spec}: {exc}") from exc
    except ValueError as exc:
        raise UnsupportedFormat(f"{args.spec}: {exc}") from exc
    spec = SynthSpec.from_dict(raw)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    cfg = build_config(args, {"spec": spec.to_dict()})
    run = Run(args.out, cfg)
    try:
        files = write_bundle(spec, run.out)
        log.info("synth %s seed %d: %s", spec.kind, spec.seed, sorted(files))
    finally:
        run.close()
    return 0


def _read_labels(path, ids):
    if not path:
        return None
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if isinstance(raw, dict) and "labels" in raw:
        raw = raw["labels"]
    if isinstance(raw, dict):
        return [raw.get(i) for i in ids]
    if isinstance(raw, list):
        return list(raw)
    if isinstance(raw, str):
        return [raw] * len(ids)
    raise UnsupportedFormat(f"{path}: labels must be a list, an id map or a single label")


def cmd_export_features(args):
    cfg = build_config(args, {"highlights": args.highlights, "audio": args.audio, "masks": args.masks,
                              "labels": args.labels})
    groups = read_segments_json(args.highlights)
    highlights = groups.get("highlight", [])
    clip = load_wav(args.audio)
    if clip is None:
        raise UnsupportedFormat(f"{args.audio}: no samples")
    seq = _mask_sequence(args.masks, cfg.fps)
    run = Run(args.out, cfg)
    try:
        ids = [f"h{i:03d}" for i in range(len(highlights))]
        labels = _read_labels(args.labels, ids)
        bundle = build_bundle(clip, seq, highlights, cfg.geometry, labels)
        export_features(bundle, run.out)
        log.info("exported %d highlights", len(bundle.ids))
    finally:
        run.close()
    return 0


def cmd_analyze(args):
    cfg = build_config(args, {"audio": args.audio, "frames": args.frames, "detections": args.detections,
                              "masks": args.masks, "scores": args.scores})
    seq = _mask_sequence(args.masks, cfg.fps)
    run = Run(args.out, cfg)
    try:
        res = run_highlights(cfg, args.audio, args.frames, args.detections, args.masks, args.scores)
        run.json("highlights.json", res["segments"])
        run.json("strobe_report.json", res["strobe"])
        per, verdicts = [], []
        for i, h in enumerate(res["highlights"]):
            hid = f"h{i:03d}"
            a, b = frame_range(h.segment, seq.fps)
            b = min(b, len(seq))
            entry = {"id": hid, "start_s": h.start_s, "end_s": h.end_s, "frames": [a, b], "strobe": h.strobe}
            try:
                part = seq[a:b]
                series = vfdyn(part, cfg.geometry)
                v = side_verdict(series, cfg.delta)
            except DegeneracyError as exc:
                entry.update(verdict=None, error=type(exc).__name__)
                log.warning("highlight %s skipped: %s", hid, exc)
            else:
                (run.out / f"{hid}_vfdyn.csv").write_text(series.to_csv(gaw(part)), encoding="utf-8")
                entry.update(verdict=v.to_dict(), vfdyn_file=f"{hid}_vfdyn.csv")
                verdicts.append(v)
            per.append(entry)
        verdict = aggregate_verdicts(verdicts, cfg.delta).to_dict() if verdicts else None
        report = {
            "fps": res["fps"],
            "highlights": [h.to_dict() for h in res["highlights"]],
            "strobe": res["strobe"].get("selected"),
            "per_highlight": per,
            "verdict": verdict,
            "side": verdict["side"] if verdict else None,
        }
        run.json("report.json", report)
    finally:
        run.close()
    return 0


# -- argument parsing ---------------------------------------------------------------------

def _common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON file with kws/geometry/video/classify sections")
    p.add_argument("--fps", type=float, help="override the frame rate from video.json")
    p.add_argument("--n-levels", type=int, dest="n_levels", help="levels per mask (N)")
    p.add_argument("--threshold", type=float, help="vocalization decision threshold")
    p.add_argument("--seed", type=int, help="seed override for synth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laryngo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"laryngo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def video_inputs(p):
        p.add_argument("--audio", required=True, help="WAV recording")
        p.add_argument("--frames", required=True, help="frame directory with video.json")
        p.add_argument("--detections", help="frame,confidence fold-detection CSV")
        p.add_argument("--scores", help="frame_index,posterior KWS score sidecar")

    p = sub.add_parser("highlights", help="vocalization, strobe and highlight segments")
    video_inputs(p)
    p.add_argument("--masks", help="mask directory (fold presence when no detections)")
    _common(p)
    p.set_defaults(func=cmd_highlights)

    p = sub.add_parser("geometry", help="per-frame fold geometry and VFDyn CSV")
    p.add_argument("--masks", required=True)
    _common(p)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("classify-side", help="paralysis side from VFDyn CSVs")
    p.add_argument("series", nargs="+", help="VFDyn CSV files, one per highlight")
    _common(p)
    p.set_defaults(func=cmd_classify_side)

    p = sub.add_parser("synth", help="write a synthetic bundle from a spec JSON")
    p.add_argument("spec")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-features", help="per-highlight log-mel and VFDyn export")
    p.add_argument("--highlights", required=True, help="highlights.json")
    p.add_argument("--audio", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--labels", help="JSON list, id map or single label")
    _common(p)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("analyze", help="highlights, geometry and side in one report")
    video_inputs(p)
    p.add_argument("--masks", required=True)
    _common(p)
    p.set_defaults(func=cmd_analyze)
    return parser


def _fail(exc: LaryngoError) -> int:
    sys.stderr.write(json.dumps({"error": exc.name, "message": str(exc), "exit_code": exc.exit_code}) + "\n")
    return exc.exit_code


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LaryngoError as exc:
        return _fail(exc)
    except ValueError as exc:
        return _fail(BadParams(str(exc)))


if __name__ == "__main__":
    sys.exit(main())
