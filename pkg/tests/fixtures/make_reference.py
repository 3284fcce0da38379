"""Regenerate reference_stream.csv: 3 videos, 4 face tracks, crops and landmarks.

    python tests/fixtures/make_reference.py
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from affectstream.stream import BoundingBox, LandmarkSet, write_frame_stream
from affectstream.synth import ScenarioEvent, ScenarioSpec, generate_stream

HERE = Path(__file__).parent


def reference_observations():
    tracks = [
        ("clip_a", "face0", 1, 0.0),
        ("clip_a", "face1", 2, 180.0),
        ("clip_b", "face0", 3, 0.0),
        ("clip_c", "face0", 4, 0.0),
    ]
    out = []
    for video, face, seed, dx in tracks:
        spec = ScenarioSpec(
            seed=seed, duration_ms=20_000, fps=15, noise=4.0, video_id=video, face_id=face,
            crops=True, crop_size=16,
            events=(
                ScenarioEvent("blink", 2000 + 500 * seed, 200),
                ScenarioEvent("combo_fire", 5000, 3000, ("AU6", "AU12"), 85.0),
                ScenarioEvent("au_pulse", 10_000, 2500, ("AU4", "AU7"), 70.0),
                ScenarioEvent("yaw_sweep", 13_000, 4000, (), 0.0, -10.0, 45.0),
                ScenarioEvent("bias_offset", 0, 20_000, ("AU1",), 10.0 * seed),
            ),
        )
        frames, _ = generate_stream(spec)
        for o in frames:
            b = o.box
            lm = LandmarkSet.from_array(o.landmarks.as_array() + np.array([dx, 0.0]))
            out.append(replace(o, box=BoundingBox(b.x + dx, b.y, b.w, b.h), landmarks=lm))
    return out


if __name__ == "__main__":
    write_frame_stream(reference_observations(), HERE / "reference_stream.csv", "csv")
