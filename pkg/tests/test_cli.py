"""Command line frontend: outputs, exit codes and reproducibility."""

import json
import wave

import numpy as np
import pytest

from laryngo.cli import main
from laryngo.core import GlottisMask, SeriesChannel, read_series_csv, write_segments_json, TimeSegment
from laryngo.geometry import VFDynSeries
from laryngo.masks import MaskSequence, load_mask_sequence, write_mask_sequence


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(line)


def files_under(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "run.log"}


@pytest.fixture(scope="module")
def exam(tmp_path_factory):
    root = tmp_path_factory.mktemp("exam")
    (root / "spec.json").write_text(json.dumps({"kind": "exam", "seed": 21, "params": {}}))
    assert run("synth", root / "spec.json", "--out", root / "bundle") == 0
    return root / "bundle"


@pytest.fixture(scope="module")
def osc(tmp_path_factory):
    root = tmp_path_factory.mktemp("osc")
    spec = {"kind": "osc_sequence", "seed": 5,
            "params": {"n_frames": 30, "amp_left": 1.6, "amp_right": 8.0, "noise_px": 0.3}}
    (root / "spec.json").write_text(json.dumps(spec))
    assert run("synth", root / "spec.json", "--out", root / "bundle") == 0
    return root / "bundle" / "masks"


class TestSynth:
    def test_bundle_layout(self, exam):
        for name in ("audio.wav", "frames/video.json", "masks/video.json", "detections.csv",
                     "ground_truth.json", "spec.json", "config.json", "run.log"):
            assert (exam / name).exists(), name

    def test_bad_params(self, tmp_path, capsys):
        (tmp_path / "s.json").write_text(json.dumps({"kind": "ellipse_mask", "seed": 0,
                                                     "params": {"semi_minor": 0}}))
        assert run("synth", tmp_path / "s.json", "--out", tmp_path / "o") == 2
        assert error_of(capsys)["error"] == "BadParams"

    def test_seed_override(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"kind": "vowel_audio", "seed": 0}))
        run("synth", tmp_path / "s.json", "--out", tmp_path / "a", "--seed", 4)
        assert json.loads((tmp_path / "a" / "spec.json").read_text())["seed"] == 4


class TestGeometry:
    def test_outputs(self, osc, tmp_path):
        assert run("geometry", "--masks", osc, "--out", tmp_path) == 0
        doc = json.loads((tmp_path / "geometry.json").read_text())
        assert len(doc["frames"]) == 30
        cols = read_series_csv(tmp_path / "vfdyn.csv")
        assert {"L1", "R9", "GAW", "valid"} <= set(cols)

    def test_ellipse_direction(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"kind": "ellipse_mask", "seed": 0,
                                                     "params": {"rotation_deg": 30}}))
        run("synth", tmp_path / "s.json", "--out", tmp_path / "e")
        from laryngo.masks import load_mask
        mask = load_mask(tmp_path / "e" / "mask.png")
        write_mask_sequence(tmp_path / "seq", MaskSequence(25.0, [mask]))
        assert run("geometry", "--masks", tmp_path / "seq", "--out", tmp_path / "g") == 0
        frame = json.loads((tmp_path / "g" / "geometry.json").read_text())["frames"][0]
        gt = json.loads((tmp_path / "e" / "ground_truth.json").read_text())
        u = np.subtract(frame["D"], frame["U"])
        cos = abs(u @ np.asarray(gt["midline_direction"])) / np.linalg.norm(u)
        assert np.degrees(np.arccos(min(cos, 1.0))) < 2.0

    def test_empty_mask_dir(self, tmp_path, capsys):
        (tmp_path / "m").mkdir()
        (tmp_path / "m" / "video.json").write_text('{"fps": 25}')
        assert run("geometry", "--masks", tmp_path / "m", "--out", tmp_path / "o") == 2
        assert error_of(capsys)["exit_code"] == 2

    def test_all_empty_masks(self, tmp_path, capsys):
        write_mask_sequence(tmp_path / "m", MaskSequence(25.0, [GlottisMask.empty(20, 20)] * 4))
        assert run("geometry", "--masks", tmp_path / "m", "--out", tmp_path / "o") == 3
        assert error_of(capsys)["error"] == "AllFramesDegenerate"


class TestClassifySide:
    def test_left(self, osc, tmp_path):
        run("geometry", "--masks", osc, "--out", tmp_path / "g")
        assert run("classify-side", tmp_path / "g" / "vfdyn.csv", "--out", tmp_path / "c") == 0
        doc = json.loads((tmp_path / "c" / "verdict.json").read_text())
        assert doc["side"] == "Left" and len(doc["per_series"]) == 1

    def test_mirrored_input_flips(self, osc, tmp_path):
        seq = load_mask_sequence(osc)
        write_mask_sequence(tmp_path / "m", MaskSequence(seq.fps, [m.mirror() for m in seq.masks]))
        run("geometry", "--masks", tmp_path / "m", "--out", tmp_path / "g")
        run("classify-side", tmp_path / "g" / "vfdyn.csv", "--out", tmp_path / "c")
        assert json.loads((tmp_path / "c" / "verdict.json").read_text())["side"] == "Right"

    def test_identical_sides(self, tmp_path):
        v = np.sin(np.linspace(0, 6, 40))
        s = VFDynSeries([SeriesChannel("L1", v)], [SeriesChannel("R1", v)], np.ones(40, bool), 2)
        (tmp_path / "s.csv").write_text(s.to_csv())
        run("classify-side", tmp_path / "s.csv", "--out", tmp_path / "c")
        assert json.loads((tmp_path / "c" / "verdict.json").read_text())["side"] == "Indeterminate"

    def test_insufficient_frames(self, tmp_path, capsys):
        s = VFDynSeries([SeriesChannel("L1", np.zeros(5))], [SeriesChannel("R1", np.zeros(5))],
                        np.array([True, False, False, False, False]), 2)
        (tmp_path / "s.csv").write_text(s.to_csv())
        assert run("classify-side", tmp_path / "s.csv", "--out", tmp_path / "c") == 3
        assert error_of(capsys)["error"] == "InsufficientFrames"


class TestHighlights:
    def test_missing_fps(self, exam, tmp_path, capsys):
        frames = tmp_path / "frames"
        frames.mkdir()
        for p in (exam / "frames").glob("*.png"):
            (frames / p.name).write_bytes(p.read_bytes())
        code = run("highlights", "--audio", exam / "audio.wav", "--frames", frames, "--out", tmp_path / "o")
        assert code == 2 and error_of(capsys)["error"] == "MissingMetadata"

    def test_empty_audio(self, exam, tmp_path):
        with wave.open(str(tmp_path / "empty.wav"), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(16000)
        code = run("highlights", "--audio", tmp_path / "empty.wav", "--frames", exam / "frames",
                   "--detections", exam / "detections.csv", "--out", tmp_path / "o")
        assert code == 0
        doc = json.loads((tmp_path / "o" / "highlights.json").read_text())
        kinds = {s["kind"] for s in doc["segments"]}
        assert "highlight" not in kinds and "vocalization" not in kinds

    def test_outputs(self, exam, tmp_path):
        code = run("highlights", "--audio", exam / "audio.wav", "--frames", exam / "frames",
                   "--detections", exam / "detections.csv", "--out", tmp_path)
        assert code == 0
        rep = json.loads((tmp_path / "strobe_report.json").read_text())
        gt = json.loads((exam / "ground_truth.json").read_text())
        assert rep["selected"]["start_s"] == pytest.approx(gt["strobe_s"][0])


class TestExportFeatures:
    def test_alignment_mismatch(self, exam, tmp_path, capsys):
        write_segments_json(tmp_path / "h.json", {"highlight": [TimeSegment(10.0, 13.0)]})
        code = run("export-features", "--highlights", tmp_path / "h.json", "--audio", exam / "audio.wav",
                   "--masks", exam / "masks", "--out", tmp_path / "o")
        assert code == 3 and error_of(capsys)["error"] == "AlignmentMismatch"

    def test_relabel_only_touches_manifest(self, exam, tmp_path):
        write_segments_json(tmp_path / "h.json", {"highlight": [TimeSegment(2.0, 4.5), TimeSegment(6.0, 10.0)]})
        (tmp_path / "labels.json").write_text(json.dumps({"h001": "right_vfp"}))
        base = ["export-features", "--highlights", tmp_path / "h.json", "--audio", exam / "audio.wav",
                "--masks", exam / "masks"]
        assert run(*base, "--out", tmp_path / "a") == 0
        assert run(*base, "--labels", tmp_path / "labels.json", "--out", tmp_path / "b") == 0
        a, b = files_under(tmp_path / "a"), files_under(tmp_path / "b")
        changed = {k for k in a if a[k] != b[k]}
        assert changed == {p for p in a if p.name in ("manifest.json", "config.json")}
        labels = [h["label"] for h in json.loads(b[next(k for k in b if k.name == "manifest.json")])["highlights"]]
        assert labels == [None, "right_vfp"]


class TestAnalyze:
    def test_report_and_reruns(self, exam, tmp_path):
        argv = ["analyze", "--audio", exam / "audio.wav", "--frames", exam / "frames",
                "--detections", exam / "detections.csv", "--masks", exam / "masks"]
        assert run(*argv, "--out", tmp_path / "a") == 0
        assert run(*argv, "--out", tmp_path / "b") == 0
        a, b = files_under(tmp_path / "a"), files_under(tmp_path / "b")
        assert a == b
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["side"] == "Left"
        cfg = json.loads((tmp_path / "a" / "config.json").read_text())
        assert cfg["command"] == "analyze" and "geometry" in cfg

    def test_bad_config_key(self, exam, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"geometry": {"bogus": 1}}))
        code = run("geometry", "--masks", exam / "masks", "--config", tmp_path / "c.json", "--out", tmp_path / "o")
        assert code == 2 and error_of(capsys)["error"] == "BadParams"
