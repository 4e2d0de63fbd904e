"""
A synthetic exam from files to verdict
======================================

Write a full exam bundle, run the ``analyze`` command on it and compare
the report with the generator's ground truth.
"""

import json
import sys
import tempfile
from pathlib import Path

from laryngo.cli import main
from laryngo.core import TimeSegment, read_segments_json, set_iou

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="laryngo-demo-"))
work.mkdir(parents=True, exist_ok=True)

# a right-side paralysis this time
spec = {"kind": "exam", "seed": 12, "params": {"paralyzed_side": "Right"}}
(work / "spec.json").write_text(json.dumps(spec))
main(["synth", str(work / "spec.json"), "--out", str(work / "exam")])
exam = work / "exam"
print("bundle:", sorted(p.name for p in exam.iterdir()))

main(["analyze", "--audio", str(exam / "audio.wav"), "--frames", str(exam / "frames"),
      "--detections", str(exam / "detections.csv"), "--masks", str(exam / "masks"),
      "--out", str(work / "report")])

report = json.loads((work / "report" / "report.json").read_text())
truth = json.loads((exam / "ground_truth.json").read_text())
for h in report["per_highlight"]:
    v = h["verdict"]
    print(f"{h['id']}: {h['start_s']:.2f}-{h['end_s']:.2f} s strobe={h['strobe']} side={v and v['side']}")

found = [h.segment for h in read_segments_json(work / "report" / "highlights.json").get("highlight", [])]
iou = set_iou(found, [TimeSegment(*s) for s in truth["highlights_s"]])
print(f"highlight IoU {iou:.3f}; side {report['side']} (truth {truth['paralyzed_side']})")
print("outputs in", work)
