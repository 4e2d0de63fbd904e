"""HSV tracking, empty-frame segmentation, strobe selection and highlights."""

import colorsys

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from laryngo.core import FrameMask, GlottisMask, TimeSegment, frame_range
from laryngo.errors import MissingFrameEntry, MissingMetadata, NoEligibleSegment, SequenceTooShort
from laryngo.synth import SynthSpec, gen_strobe_video, rng_for
from laryngo.video import (FrameSeries, HsvTrack, assemble_highlights, empty_frame_mask,
                           fluctuation_f, fluctuation_terms, hsv_track, load_frames,
                           presence_mask, read_video_meta, rgb_to_hsv, select_strobe,
                           split_nonempty, write_detections, write_frames)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def solid(rgb, n=1, h=4, w=5):
    return FrameSeries(25.0, np.tile(np.array(rgb, np.uint8), (n, h, w, 1)))


def track(v, fps=10.0):
    v = np.asarray(v, float)
    return HsvTrack(fps, np.zeros_like(v), np.zeros_like(v), v)


class TestHsv:
    def test_black(self):
        t = hsv_track(solid((0, 0, 0)))
        assert (t.h[0], t.s[0], t.v[0]) == (0, 0, 0)

    def test_white(self):
        t = hsv_track(solid((255, 255, 255)))
        assert t.v[0] == 1 and t.s[0] == 0

    def test_red(self):
        t = hsv_track(solid((255, 0, 0)))
        assert (t.h[0], t.s[0], t.v[0]) == (0, 1, 1)

    def test_matches_colorsys(self):
        rgb = rng_for(11).integers(0, 256, (500, 3))
        got = rgb_to_hsv(rgb / 255.0)
        want = np.array([colorsys.rgb_to_hsv(*(c / 255.0)) for c in rgb])
        assert np.allclose(got, want, atol=1e-12)

    def test_frame_means(self):
        frames = np.zeros((1, 2, 2, 3), np.uint8)
        frames[0, 0, 0] = (255, 255, 255)
        assert hsv_track(FrameSeries(25, frames)).v[0] == pytest.approx(0.25)


class TestEmptyFrames:
    def test_threshold(self):
        m = empty_frame_mask(track([0, 0, 0.5, 0.6, 0]))
        assert m.flags.tolist() == [True, True, False, False, True]

    def test_bright_video(self):
        assert not empty_frame_mask(hsv_track(solid((200, 180, 150), n=6))).flags.any()

    def test_all_dark_flags_everything(self):
        assert empty_frame_mask(hsv_track(solid((0, 0, 0), n=6))).flags.all()

    def test_split(self):
        segs = split_nonempty(FrameMask(10, [True, True, False, False, True]))
        assert segs == [TimeSegment(0.2, 0.4)]

    def test_split_no_empty(self):
        assert split_nonempty(FrameMask(10, [False] * 7)) == [TimeSegment(0.0, 0.7)]

    @pytest.mark.parametrize("seed", range(5))
    def test_synthetic_separators_recovered(self, seed):
        video, gt = gen_strobe_video(SynthSpec("strobe_video", seed, {"gap1": 10, "gap2": 10}))
        empty = empty_frame_mask(hsv_track(video))
        assert np.flatnonzero(empty.flags).tolist() == gt["empty_frames"]
        segs = split_nonempty(empty)
        assert len(segs) == 3
        assert [list(frame_range(s, video.fps)) for s in segs] == gt["segments_frames"]


class TestFluctuation:
    @given(st.integers(3, 200))
    def test_monotone(self, n):
        assert fluctuation_f(np.arange(n) ** 1.5) == (n - 2, 0)

    @given(st.integers(3, 200))
    def test_alternating(self, n):
        v = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        assert fluctuation_f(v) == (-(n - 2), n - 2)

    def test_constant(self):
        assert fluctuation_f([2.0] * 10) == (0, 0)

    def test_too_short(self):
        with pytest.raises(SequenceTooShort):
            fluctuation_f([1.0, 2.0])

    @given(st.lists(st.integers(-3, 3), min_size=3, max_size=60))
    def test_term_accounting(self, v):
        f_t, rev, zero = fluctuation_terms(v)
        assert f_t + 2 * rev + zero == len(v) - 2

    @given(st.lists(finite, min_size=3, max_size=40), st.floats(0.01, 100), finite)
    def test_affine_invariance(self, v, a, b):
        v = np.asarray(v)
        w = a * v + b
        # keep cases where the map preserves every difference sign in floating point
        assume(np.array_equal(np.sign(np.diff(w)), np.sign(np.diff(v))))
        assert fluctuation_f(w) == fluctuation_f(v)

    @given(st.lists(finite, min_size=3, max_size=40))
    def test_negation(self, v):
        f_t, rev, zero = fluctuation_terms(v)
        f_neg, rev_neg = fluctuation_f(-np.asarray(v))
        assert (f_neg, rev_neg) == (f_t, rev)


class TestSelectStrobe:
    def test_alternating_beats_ramp(self):
        v = np.concatenate([np.linspace(0.3, 0.6, 10), np.zeros(3), 0.5 + 0.1 * (-1.0) ** np.arange(10)])
        segs = [TimeSegment(0.0, 1.0), TimeSegment(1.3, 2.3)]
        rep = select_strobe(track(v), segs)
        assert rep.selected == segs[1]
        assert rep.reversal_counts == [0, 8]

    def test_single_segment(self):
        seg = [TimeSegment(0.0, 0.5)]
        assert select_strobe(track(np.linspace(0, 1, 5)), seg).selected == seg[0]

    def test_tie_prefers_longer_then_earlier(self):
        v = np.full(20, 0.5)
        segs = [TimeSegment(0.0, 0.4), TimeSegment(0.5, 1.2), TimeSegment(1.3, 2.0)]
        rep = select_strobe(track(v), segs)
        assert rep.selected_index == 1

    def test_no_eligible(self):
        with pytest.raises(NoEligibleSegment):
            select_strobe(track([0.5, 0.5]), [TimeSegment(0.0, 0.2)])

    @pytest.mark.parametrize("seed", range(10))
    def test_synthetic_exam_video(self, seed):
        video, gt = gen_strobe_video(SynthSpec("strobe_video", seed))
        t = hsv_track(video)
        rep = select_strobe(t, split_nonempty(empty_frame_mask(t)))
        a, b = gt["segments_frames"][gt["strobe_index"]]
        assert rep.selected_index == gt["strobe_index"]
        assert rep.reversal_counts[rep.selected_index] >= 0.8 * (b - a - 2)
        assert not empty_frame_mask(t).flags[a:b].any()


class TestPresence:
    def test_confidences(self):
        assert presence_mask([0.9, 0.1, 0.6], 25).flags.tolist() == [True, False, True]

    def test_empty_masks(self):
        assert not presence_mask([GlottisMask.empty(8, 8)] * 4, 25).flags.any()

    def test_synthetic_run(self):
        full = GlottisMask(np.ones((10, 10)))
        masks = [full if 30 <= i < 90 else GlottisMask.empty(10, 10) for i in range(120)]
        runs = np.flatnonzero(presence_mask(masks, 25).flags)
        assert (runs[0], runs[-1] + 1, len(runs)) == (30, 90, 60)

    def test_sidecar_missing_frame(self, tmp_path):
        p = tmp_path / "det.csv"
        p.write_text("frame,confidence\n0,0.9\n2,0.8\n")
        with pytest.raises(MissingFrameEntry):
            presence_mask(p, 25, n_frames=3)

    def test_sidecar_round_trip(self, tmp_path):
        p = tmp_path / "det.csv"
        write_detections(p, [0.2, 0.7, 0.5])
        assert presence_mask(p, 25).flags.tolist() == [False, True, True]


class TestHighlights:
    def test_intersection(self):
        pres = FrameMask(10, (np.arange(100) >= 20) & (np.arange(100) < 80))
        out = assemble_highlights([TimeSegment(1, 5)], pres)
        assert [(h.start_s, h.end_s) for h in out] == [(2.0, 5)]

    def test_no_presence(self):
        assert assemble_highlights([TimeSegment(1, 5)], FrameMask(10, np.zeros(100, bool))) == []

    def test_short_dropped_and_strobe_flag(self):
        pres = FrameMask(10, np.ones(100, bool))
        out = assemble_highlights([TimeSegment(1, 1.4), TimeSegment(2, 4), TimeSegment(6, 8)], pres,
                                  strobe=TimeSegment(3, 5))
        assert [(h.start_s, h.strobe) for h in out] == [(2, True), (6, False)]

    @given(st.lists(st.booleans(), max_size=80), st.lists(st.integers(0, 80), max_size=8))
    def test_subset_of_vocalization(self, flags, cuts):
        cuts = sorted(set(cuts))[: len(set(cuts)) // 2 * 2]
        vocal = [TimeSegment(a / 10, b / 10) for a, b in zip(cuts[::2], cuts[1::2])]
        for h in assemble_highlights(vocal, FrameMask(10, flags), 0.0):
            assert any(v.start_s <= h.start_s and h.end_s <= v.end_s for v in vocal)


class TestFrameDirectory:
    def test_round_trip(self, tmp_path):
        video, _ = gen_strobe_video(SynthSpec("strobe_video", 1))
        write_frames(tmp_path / "f", video)
        back = load_frames(tmp_path / "f")
        assert back.fps == video.fps
        assert np.array_equal(back.frames, video.frames)

    def test_missing_metadata(self, tmp_path):
        with pytest.raises(MissingMetadata):
            read_video_meta(tmp_path)

    def test_fps_override(self, tmp_path):
        write_frames(tmp_path, solid((10, 20, 30), n=2))
        (tmp_path / "video.json").unlink()
        assert load_frames(tmp_path, fps=30).fps == 30
