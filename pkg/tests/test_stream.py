import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectstream.stream import (
    AU_COLUMNS,
    AU_NAMES,
    CSV_COLUMNS,
    AuRangeError,
    AuScores,
    BoundingBox,
    FrameObservation,
    LandmarkSet,
    StreamError,
    canonical_au,
    decode_luma,
    encode_luma,
    parse_frame_stream,
    validate_stream,
    write_frame_stream,
)

from conftest import make_obs


def csv_text(rows, extra_cols=()):
    cols = list(CSV_COLUMNS) + list(extra_cols)
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r.get(c, "")) for c in cols))
    return "\n".join(lines) + "\n"


def base_row(ts=0, **au):
    row = {"video_id": "v", "face_id": "f", "timestamp_ms": ts, "box_x": 0, "box_y": 0, "box_w": 10, "box_h": 10}
    row.update({c: 0 for c in AU_COLUMNS})
    row.update({k.lower(): v for k, v in au.items()})
    return row


def test_au_list_is_the_twenty_expressions():
    assert len(AU_NAMES) == 20
    assert AU_NAMES[0] == "AU1" and AU_NAMES[-1] == "Smirk"
    assert canonical_au("au12") == "AU12" and canonical_au("SMIRK") == "Smirk"
    with pytest.raises(KeyError):
        canonical_au("AU99")


def test_empty_file_gives_empty_sequence():
    assert list(parse_frame_stream(io.BytesIO(b""), "csv")) == []
    assert list(parse_frame_stream(io.BytesIO(b""), "jsonl")) == []


def test_zero_record_parses_to_zero_scores():
    obs = list(parse_frame_stream(io.StringIO(csv_text([base_row()])), "csv"))
    assert len(obs) == 1
    assert obs[0].raw_au == AuScores.zeros()
    assert obs[0].landmarks is None


def test_out_of_range_au_names_au_and_line():
    text = csv_text([base_row(0), base_row(33, AU12=142)])
    with pytest.raises(AuRangeError) as ei:
        list(parse_frame_stream(io.StringIO(text), "csv"))
    assert ei.value.au == "AU12"
    assert ei.value.line == 3
    assert "AU12" in str(ei.value) and "line 3" in str(ei.value)


def test_jsonl_range_error_line():
    recs = [base_row(0), base_row(10, AU12=142)]
    text = "\n".join(json.dumps(r) for r in recs) + "\n"
    with pytest.raises(AuRangeError) as ei:
        list(parse_frame_stream(io.StringIO(text), "jsonl"))
    assert ei.value.line == 2


@pytest.mark.parametrize("mutate, msg", [
    (lambda r: r.update(box_w=0), "positive size"),
    (lambda r: r.update(timestamp_ms=-5), "non-negative"),
    (lambda r: r.update(timestamp_ms="abc"), "non-numeric"),
    (lambda r: r.update(au4=""), "incomplete AU"),
    (lambda r: r.update(lm_lex=1.0), "all present or all empty"),
])
def test_malformed_records_carry_line(mutate, msg):
    row = base_row()
    mutate(row)
    with pytest.raises(StreamError) as ei:
        list(parse_frame_stream(io.StringIO(csv_text([row])), "csv"))
    assert ei.value.line == 2
    assert msg in str(ei.value)


def test_unknown_column_rejected():
    with pytest.raises(StreamError, match="unknown columns"):
        list(parse_frame_stream(io.StringIO(csv_text([base_row()], ["mood"])), "csv"))


def test_missing_column_rejected():
    text = "video_id,face_id\nv,f\n"
    with pytest.raises(StreamError, match="missing columns"):
        list(parse_frame_stream(io.StringIO(text), "csv"))


def test_parse_is_lazy():
    # the bad record is second; the first must come out before the error
    text = csv_text([base_row(0), base_row(10, AU1=500)])
    it = parse_frame_stream(io.StringIO(text), "csv")
    assert next(it).timestamp_ms == 0
    with pytest.raises(AuRangeError):
        next(it)


def test_box_and_landmark_invariants():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        LandmarkSet((1, 1), (1, 1), (0, 0), (0, 2))
    with pytest.raises(AuRangeError):
        AuScores([0.0] * 19 + [101.0])


def test_iou_example():
    assert BoundingBox(0, 0, 2, 2).iou(BoundingBox(1, 0, 2, 2)) == pytest.approx(1 / 3)
    assert BoundingBox(0, 0, 2, 2).iou(BoundingBox(5, 5, 1, 1)) == 0.0


def test_luma_codec_round_trip(rng):
    img = rng.integers(0, 256, (7, 5)).astype(np.uint8)
    assert np.array_equal(decode_luma(encode_luma(img)), img)
    with pytest.raises(ValueError):
        decode_luma("2x2:" + encode_luma(img).split(":")[1])


def _obs_strategy():
    score = st.floats(0, 100, allow_nan=False)
    coord = st.floats(-1000, 1000, allow_nan=False)

    @st.composite
    def build(draw):
        n = draw(st.integers(0, 6))
        out = []
        t = 0
        for i in range(n):
            t += draw(st.integers(1, 500))
            lm = None
            if draw(st.booleans()):
                pts = [(draw(coord), draw(coord)) for _ in range(4)]
                if pts[0] == pts[1]:
                    pts[1] = (pts[1][0] + 1.0, pts[1][1])
                lm = LandmarkSet(*pts)
            au = AuScores([draw(score) for _ in range(20)]) if draw(st.booleans()) else None
            luma = None
            if draw(st.booleans()):
                luma = np.array(draw(st.lists(st.integers(0, 255), min_size=6, max_size=6)), dtype=np.uint8).reshape(2, 3)
            box = BoundingBox(draw(coord), draw(coord), draw(st.floats(0.5, 300)), draw(st.floats(0.5, 300)))
            out.append(FrameObservation("vid,\"x\"", f"f{i % 2}", t, box, lm, au, luma))
        return out

    return build()


@settings(max_examples=60, deadline=None)
@given(_obs_strategy(), st.sampled_from(["csv", "jsonl"]))
def test_serialize_parse_round_trip(frames, fmt):
    buf = io.StringIO()
    write_frame_stream(frames, buf, fmt)
    back = list(parse_frame_stream(io.StringIO(buf.getvalue()), fmt))
    assert back == frames


def test_round_trip_through_files(tmp_path):
    frames = [make_obs(t, au={"AU12": t / 10}) for t in range(0, 500, 33)]
    for fmt in ("csv", "jsonl"):
        p = tmp_path / f"s.{fmt}"
        write_frame_stream(frames, p, fmt)
        assert list(parse_frame_stream(p, fmt)) == frames
        with open(p, "rb") as fh:
            assert list(parse_frame_stream(fh, fmt)) == frames


def test_validate_monotone_stream():
    rep = validate_stream([make_obs(t) for t in (0, 33, 66)])
    assert rep.monotone
    assert rep.max_gap_ms == 33


def test_validate_equal_timestamps_flag_index_two():
    rep = validate_stream([make_obs(t) for t in (0, 33, 33)])
    assert not rep.monotone
    assert [(v.index, v.timestamp_ms) for v in rep.violations] == [(2, 33)]


def test_validate_interleaved_faces_against_brute_force(rng):
    frames = []
    for t in range(0, 2000, 40):
        frames.append(make_obs(t, face="a"))
        frames.append(make_obs(t + 7, face="b"))
    rep = validate_stream(frames)
    # brute force: each track's own sequence is already sorted and unique
    for face in ("a", "b"):
        ts = [f.timestamp_ms for f in frames if f.face_id == face]
        assert ts == sorted(set(ts))
    assert rep.monotone and rep.n_tracks == 2 and rep.n_frames == len(frames)
    assert rep.max_gap_ms == 40
