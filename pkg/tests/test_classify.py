"""Paralysis side from angle-series variance, and feature export."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laryngo.audio import AudioClip, read_mel_binary
from laryngo.classify import (FeatureBundle, SideVerdict, aggregate_verdicts, build_bundle,
                              export_features, export_mel, side_verdict)
from laryngo.core import HighlightSegment, SeriesChannel, TimeSegment, read_series_csv
from laryngo.errors import AlignmentMismatch, BadParams, InsufficientFrames
from laryngo.geometry import VFDynSeries, vfdyn
from laryngo.masks import MaskSequence
from laryngo.synth import SynthSpec, gen_osc_sequence, gen_vowel_audio, rng_for


def series(left, right, valid=None):
    left, right = np.atleast_2d(left), np.atleast_2d(right)
    n = left.shape[1]
    valid = np.ones(n, bool) if valid is None else np.asarray(valid, bool)
    return VFDynSeries([SeriesChannel(f"L{k + 1}", v) for k, v in enumerate(left)],
                       [SeriesChannel(f"R{k + 1}", v) for k, v in enumerate(right)],
                       valid, len(left) + 1)


def pooled(verdict_inputs):
    """Side rule on per-level population variances of all frames pooled."""
    L = np.concatenate([s.left_matrix()[:, s.frame_validity] for s in verdict_inputs], axis=1)
    R = np.concatenate([s.right_matrix()[:, s.frame_validity] for s in verdict_inputs], axis=1)
    return side_verdict(series(L, R))


t = np.linspace(0, 2 * np.pi, 50)


class TestSideVerdict:
    def test_constant_left(self):
        v = side_verdict(series(np.full((3, 50), 20.0), 20 + 3 * np.sin(t) * np.ones((3, 1))))
        assert v.side == "Left" and v.var_left == 0 and v.margin == 1.0

    def test_constant_right(self):
        assert side_verdict(series(np.sin(t), np.zeros(50))).side == "Right"

    def test_identical(self):
        v = side_verdict(series(np.sin(t), np.sin(t)))
        assert v.side == "Indeterminate" and v.margin == 0

    def test_all_constant(self):
        assert side_verdict(series(np.ones(5), np.ones(5))).side == "Indeterminate"

    def test_margin_threshold(self):
        s = series(np.sin(t), 1.02 * np.sin(t))
        assert side_verdict(s).side == "Indeterminate"
        assert side_verdict(s, delta=0.01).side == "Left"

    def test_insufficient(self):
        with pytest.raises(InsufficientFrames):
            side_verdict(series(np.sin(t[:3]), np.cos(t[:3]), [True, False, False]))

    def test_invalid_frames_excluded(self):
        left = np.sin(t)
        left[::2] = 100.0
        valid = np.arange(50) % 2 == 1
        v = side_verdict(series(left, 2 * np.sin(t), valid))
        assert v.var_left == pytest.approx(np.var(np.sin(t)[valid]))
        assert v.n_frames == 25

    def test_population_variance_per_level_then_mean(self):
        L = rng_for(1).normal(size=(4, 30)) * np.array([[1], [2], [3], [4]])
        v = side_verdict(series(L, np.zeros((4, 30))))
        assert v.var_left == pytest.approx(np.mean([np.var(row) for row in L]))

    @settings(max_examples=50)
    @given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 1000))
    def test_affine_invariance(self, a, b, seed):
        rng = rng_for(seed)
        L, R = rng.normal(size=(3, 20)), 2 * rng.normal(size=(3, 20))
        base = side_verdict(series(L, R))
        moved = side_verdict(series(a * L + b, a * R + b))
        assert moved.side == base.side
        assert moved.margin == pytest.approx(base.margin, rel=1e-6)

    def test_mirror_flips(self):
        s = series(np.sin(t), 3 * np.sin(t))
        assert side_verdict(s).side == "Left"
        assert side_verdict(s.mirrored()).side == "Right"


class TestAggregate:
    def test_single(self):
        v = SideVerdict("Left", 1.0, 4.0, 0.75, 10)
        assert aggregate_verdicts([v]) == v

    def test_mirrored_conflict(self):
        agg = aggregate_verdicts([SideVerdict("Left", 1.0, 4.0, 0.75, 10),
                                  SideVerdict("Right", 4.0, 1.0, 0.75, 10)])
        assert agg.side == "Indeterminate"

    def test_empty(self):
        with pytest.raises(BadParams):
            aggregate_verdicts([])

    @settings(max_examples=40)
    @given(st.integers(0, 10_000))
    def test_agreeing_pairs(self, seed):
        rng = rng_for(seed)
        parts = []
        for _ in range(2):
            n = int(rng.integers(5, 40))
            parts.append(series(rng.normal(0, rng.uniform(0.1, 1), (3, n)),
                                rng.normal(0, rng.uniform(1.5, 3), (3, n))))
        vs = [side_verdict(p) for p in parts]
        agg = aggregate_verdicts(vs)
        assert agg.side == vs[0].side == vs[1].side == "Left"
        assert agg.margin >= min(v.margin for v in vs) - 1e-12
        w = np.array([v.n_frames for v in vs], float)
        assert agg.var_left == pytest.approx(np.dot(w, [v.var_left for v in vs]) / w.sum())

    @settings(max_examples=40)
    @given(st.integers(0, 10_000))
    def test_pooled_equivalence_for_equal_means(self, seed):
        rng = rng_for(seed)
        parts = []
        for _ in range(int(rng.integers(2, 5))):
            n = int(rng.integers(4, 30))
            L, R = rng.normal(size=(3, n)), 1.5 * rng.normal(size=(3, n))
            L -= L.mean(axis=1, keepdims=True)
            R -= R.mean(axis=1, keepdims=True)
            parts.append(series(L, R))
        agg = aggregate_verdicts([side_verdict(p) for p in parts])
        ref = pooled(parts)
        assert agg.side == ref.side
        assert agg.var_left == pytest.approx(ref.var_left, rel=1e-9, abs=1e-12)
        assert agg.var_right == pytest.approx(ref.var_right, rel=1e-9, abs=1e-12)


class TestSynthetic:
    @pytest.mark.parametrize("seed", range(6))
    def test_five_to_one_asymmetry(self, seed):
        side = "Left" if seed % 2 == 0 else "Right"
        amps = (1.6, 8.0) if side == "Left" else (8.0, 1.6)
        seq, gt = gen_osc_sequence(SynthSpec("osc_sequence", 500 + seed, {
            "n_frames": 40, "amp_left": amps[0], "amp_right": amps[1], "noise_px": 0.3}))
        assert side_verdict(vfdyn(seq)).side == gt["paralyzed_side"] == side

    def test_mirroring_masks_flips_verdict(self):
        seq, _ = gen_osc_sequence(SynthSpec("osc_sequence", 9, {"n_frames": 30, "amp_left": 1.6,
                                                               "amp_right": 8.0}))
        mirrored = MaskSequence(seq.fps, [m.mirror() for m in seq.masks])
        assert side_verdict(vfdyn(seq)).side == "Left"
        assert side_verdict(vfdyn(mirrored)).side == "Right"

    def test_equal_amplitude(self):
        seq, gt = gen_osc_sequence(SynthSpec("osc_sequence", 4, {"n_frames": 40, "amp_left": 8.0,
                                                                "amp_right": 8.0, "phase_left": 0.0,
                                                                "phase_right": 0.0}))
        assert gt["paralyzed_side"] == "Indeterminate"
        assert side_verdict(vfdyn(seq)).side == "Indeterminate"


@pytest.fixture(scope="module")
def exam_parts():
    clip, _ = gen_vowel_audio(SynthSpec("vowel_audio", 3, {"duration_s": 4.0, "segments": [[0.5, 3.5]]}))
    seq, _ = gen_osc_sequence(SynthSpec("osc_sequence", 3, {"n_frames": 100, "fps": 25.0}))
    return clip, seq


class TestExport:
    def test_ten_second_clip(self):
        clip = AudioClip(np.zeros(160_000), 16000)
        mel = export_mel(clip)
        assert mel.bins == 64
        assert abs(mel.frames - 1000) <= 1

    def test_bundle_and_manifest(self, exam_parts, tmp_path):
        clip, seq = exam_parts
        hs = [HighlightSegment(0.5, 1.5), HighlightSegment(2.0, 3.6, strobe=True)]
        bundle = build_bundle(clip, seq, hs)
        manifest = export_features(bundle, tmp_path)
        assert json.loads((tmp_path / "manifest.json").read_text()) == manifest
        first = manifest["highlights"][0]
        assert first["label"] is None
        assert first["frames"] == {"mel": 101, "vfdyn": 25}
        assert first["mel_bins"] == 64 and first["n_levels"] == 10
        mel = read_mel_binary(tmp_path / first["mel_file"])
        assert np.array_equal(mel, bundle.mel[0].data.astype(np.float32))
        cols = read_series_csv(tmp_path / first["vfdyn_file"])
        back = VFDynSeries.from_columns(cols)
        assert np.array_equal(back.left_matrix(), bundle.vfdyn[0].left_matrix())
        assert np.array_equal(back.right_matrix(), bundle.vfdyn[0].right_matrix())
        assert np.array_equal(cols["GAW"], bundle.gaw[0].values)

    def test_relabel_changes_only_manifest(self, exam_parts, tmp_path):
        clip, seq = exam_parts
        hs = [TimeSegment(0.5, 1.5)]
        export_features(build_bundle(clip, seq, hs), tmp_path / "a")
        export_features(build_bundle(clip, seq, hs, labels=["left_vfp"]), tmp_path / "b")
        for name in ("h000.mel", "h000_vfdyn.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert json.loads((tmp_path / "b" / "manifest.json").read_text())["highlights"][0]["label"] == "left_vfp"

    def test_past_audio_end(self, exam_parts):
        clip, seq = exam_parts
        with pytest.raises(AlignmentMismatch):
            build_bundle(clip, seq, [TimeSegment(3.0, 4.5)])

    def test_past_video_end(self, exam_parts):
        clip, seq = exam_parts
        with pytest.raises(AlignmentMismatch):
            build_bundle(clip, seq[:50], [TimeSegment(1.0, 3.0)])

    def test_unknown_label(self, exam_parts):
        clip, seq = exam_parts
        with pytest.raises(BadParams):
            build_bundle(clip, seq, [TimeSegment(0.5, 1.5)], labels=["maybe"])

    def test_misaligned_lists(self):
        with pytest.raises(AlignmentMismatch):
            FeatureBundle(["h000", "h001"], [None], [None])

    def test_write_failure(self, exam_parts, tmp_path):
        from laryngo.errors import WriteFailure
        clip, seq = exam_parts
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(WriteFailure):
            export_features(build_bundle(clip, seq, [TimeSegment(0.5, 1.5)]), blocker / "out")
