import io
import json

import numpy as np
import pytest

from affectstream.config import EngineConfig
from affectstream.pipeline import (
    analyze_observations,
    analyze_track,
    output_columns,
    write_metric_records,
)
from affectstream.stream import StreamError
from affectstream.synth import ScenarioEvent, ScenarioSpec, generate_stream

from conftest import make_obs

CFG = EngineConfig()


def test_all_zero_stream_is_neutral():
    obs, _ = generate_stream(ScenarioSpec(duration_ms=3000, fps=10))
    (r,) = analyze_observations(obs, CFG)
    assert len(r.frames) == 30 and r.blinks == []
    for f in r.frames:
        assert f.emotions.neutral_active
        assert f.emotions.neutral > 99.9
        assert f.expressive["attention"] == 100.0
        assert f.pose.yaw == pytest.approx(0.0, abs=1e-9)


def test_planted_blink_in_output():
    spec = ScenarioSpec(duration_ms=10_000, fps=30, landmarks=False,
                        events=(ScenarioEvent("blink", 4000, 250, amplitude=95.0),))
    obs, gt = generate_stream(spec)
    (r,) = analyze_observations(obs, CFG)
    (b,) = r.blinks
    assert abs(b.onset_ms - 4000) <= 100 and abs(b.offset_ms - 4250) <= 100
    flagged = [f.timestamp_ms for f in r.frames if f.expressive["blink"] == 1.0]
    assert flagged and min(flagged) >= 3900 and max(flagged) < 4350
    assert r.frames[-1].expressive["blink_rate"] == pytest.approx(1.0)
    assert r.frames[-1].expressive["attention"] is None


def test_composite_fires_on_planted_pair():
    cfg = EngineConfig()
    spec = ScenarioSpec(duration_ms=8000, fps=15, events=(ScenarioEvent("combo_fire", 3000, 2000, ("AU6", "AU1"), 90),))
    (r,) = analyze_observations(generate_stream(spec)[0], cfg)
    active = [f.timestamp_ms for f in r.frames if f.composite_active["sentimentality"]]
    assert active and 2800 <= min(active) and max(active) < 5200
    assert not any(f.composite_active["confusion"] for f in r.frames)


def test_frames_without_aus_or_landmarks():
    obs = [make_obs(0, au={"AU12": 10}), make_obs(100), make_obs(200, au={"AU12": 10})]
    r = analyze_track(obs, CFG)
    assert r.frames[1].processed_au is None and r.frames[1].emotions is None
    assert r.frames[1].composites == {}
    assert all(f.pose is None for f in r.frames)
    assert r.frames[0].processed_au is not None


def test_non_monotone_track_rejected():
    with pytest.raises(StreamError, match="strictly increasing"):
        analyze_track([make_obs(0, au={}), make_obs(0, au={})], CFG)


def test_multiple_tracks_sorted_and_workers_identical():
    obs = []
    for k, v in enumerate(["b", "a", "c"]):
        o, _ = generate_stream(ScenarioSpec(seed=k, duration_ms=3000, noise=4.0, crops=True, crop_size=24,
                                            video_id=v, events=(ScenarioEvent("blink", 1000, 150),)))
        obs.extend(o)
    r1 = analyze_observations(obs, CFG, workers=1)
    r3 = analyze_observations(list(reversed(obs)), CFG, workers=3)
    assert [r.video_id for r in r1] == ["a", "b", "c"]
    b1, b3 = io.StringIO(), io.StringIO()
    write_metric_records(r1, CFG, b1)
    write_metric_records(r3, CFG, b3)
    assert b1.getvalue() == b3.getvalue()


def test_output_records_csv_and_jsonl():
    obs, _ = generate_stream(ScenarioSpec(duration_ms=1000, fps=10, crops=True, crop_size=16))
    res = analyze_observations(obs, CFG)
    buf = io.StringIO()
    assert write_metric_records(res, CFG, buf, "csv") == 10
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == output_columns(CFG) and len(lines) == 11
    buf = io.StringIO()
    write_metric_records(res, CFG, buf, "jsonl")
    rec = json.loads(buf.getvalue().splitlines()[0])
    assert set(rec) == set(output_columns(CFG))
    assert rec["au12"] is not None and rec["mean_face_luminance"] is not None
    with pytest.raises(ValueError):
        write_metric_records(res, CFG, io.StringIO(), "xml")
