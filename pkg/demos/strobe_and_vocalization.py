"""
Finding the strobing segment and the vocalizations
===================================================

The two timing signals behind highlight extraction: brightness reversals
in the video, vowel-like frames in the audio.
"""

from laryngo.audio import KwsConfig, detect_vocal_segments
from laryngo.core import TimeSegment, set_iou
from laryngo.synth import SynthSpec, gen_strobe_video, gen_vowel_audio
from laryngo.video import empty_frame_mask, hsv_track, select_strobe, split_nonempty

# steady light, dark gap, strobing, dark gap, steady light
video, truth = gen_strobe_video(SynthSpec("strobe_video", 3))
track = hsv_track(video)

# dark frames split the video into segments
segments = split_nonempty(empty_frame_mask(track))
report = select_strobe(track, segments)
for i, (seg, count) in enumerate(zip(segments, report.reversal_counts)):
    mark = "<- strobe" if i == report.selected_index else ""
    print(f"segment {i}: {seg.start_s:5.2f}-{seg.end_s:5.2f} s, {count:3d} reversals {mark}")
print("ground truth strobe segment:", truth["strobe_index"])

# two harmonic bursts over white noise 10 dB down
clip, audio_truth = gen_vowel_audio(SynthSpec("vowel_audio", 3, {"snr_db": 10.0}))
detection = detect_vocal_segments(clip, KwsConfig())
for seg in detection.segments:
    print(f"vocalization {seg.start_s:.3f}-{seg.end_s:.3f} s")

bursts = [TimeSegment(*s) for s in audio_truth["segments"]]
print(f"IoU against the true bursts: {set_iou(detection.segments, bursts):.3f}")
