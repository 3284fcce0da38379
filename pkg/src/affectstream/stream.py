"""Core record types and CSV / JSON-Lines frame stream I/O."""

from __future__ import annotations

import base64
import csv
import io
import json
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Union

import numpy as np

AU_NAMES: tuple[str, ...] = (
    "AU1", "AU2", "AU4", "AU5", "AU6", "AU7", "AU9", "AU10", "AU12", "AU14",
    "AU15", "AU17", "AU18", "AU20", "AU24", "AU25", "AU26", "AU28", "AU43", "Smirk",
)
AU_INDEX: dict[str, int] = {name: i for i, name in enumerate(AU_NAMES)}
N_AU = len(AU_NAMES)

AU_COLUMNS: tuple[str, ...] = tuple(name.lower() for name in AU_NAMES)
LANDMARK_COLUMNS = ("lm_lex", "lm_ley", "lm_rex", "lm_rey", "lm_nx", "lm_ny", "lm_cx", "lm_cy")
BASE_COLUMNS = ("video_id", "face_id", "timestamp_ms", "box_x", "box_y", "box_w", "box_h")
CSV_COLUMNS: tuple[str, ...] = BASE_COLUMNS + LANDMARK_COLUMNS + AU_COLUMNS
OPTIONAL_COLUMNS = ("luma",)

EMOTION_NAMES: tuple[str, ...] = (
    "anger", "disgust", "fear", "joy", "sadness", "surprise", "contempt",
)


class StreamError(ValueError):
    """Malformed stream record. ``line`` is 1-based within the source."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AuRangeError(StreamError):
    def __init__(self, au: str, value: float, line: Optional[int] = None):
        self.au = au
        self.value = value
        super().__init__(f"{au} score {value!r} outside [0, 100]", line)


def canonical_au(name: str) -> str:
    """Map ``au12`` / ``AU12`` / ``smirk`` to the canonical AU name."""
    key = name.strip()
    for canon in AU_NAMES:
        if canon.lower() == key.lower():
            return canon
    raise KeyError(f"unknown action unit {name!r}")


@dataclass(frozen=True, slots=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def iou(self, other: BoundingBox) -> float:
        ix = min(self.x + self.w, other.x + other.w) - max(self.x, other.x)
        iy = min(self.y + self.h, other.y + other.h) - max(self.y, other.y)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)


Point = tuple[float, float]


@dataclass(frozen=True, slots=True)
class LandmarkSet:
    outer_left_eye: Point
    outer_right_eye: Point
    nose_tip: Point
    chin: Point

    def __post_init__(self):
        if tuple(self.outer_left_eye) == tuple(self.outer_right_eye):
            raise ValueError("outer eye landmarks coincide")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.outer_left_eye, self.outer_right_eye, self.nose_tip, self.chin],
            dtype=float,
        )

    @classmethod
    def from_array(cls, pts) -> LandmarkSet:
        p = [(float(a), float(b)) for a, b in np.asarray(pts, dtype=float)]
        return cls(p[0], p[1], p[2], p[3])


class AuScores(Mapping):
    """Immutable mapping of the 20 AU names to scores in [0, 100]."""

    __slots__ = ("_values",)

    def __init__(self, values: Iterable[float]):
        vals = tuple(float(v) for v in values)
        if len(vals) != N_AU:
            raise ValueError(f"expected {N_AU} AU scores, got {len(vals)}")
        for name, v in zip(AU_NAMES, vals):
            if not (0.0 <= v <= 100.0):
                raise AuRangeError(name, v)
        self._values = vals

    @classmethod
    def from_mapping(cls, scores: Mapping[str, float]) -> AuScores:
        canon = {canonical_au(k): float(v) for k, v in scores.items()}
        missing = [n for n in AU_NAMES if n not in canon]
        if missing:
            raise KeyError(f"missing AU scores: {', '.join(missing)}")
        return cls(canon[n] for n in AU_NAMES)

    @classmethod
    def zeros(cls) -> AuScores:
        return cls([0.0] * N_AU)

    @classmethod
    def _trusted(cls, values: tuple[float, ...]) -> AuScores:
        obj = object.__new__(cls)
        obj._values = values
        return obj

    def array(self) -> np.ndarray:
        return np.array(self._values, dtype=float)

    def replace(self, **scores: float) -> AuScores:
        vals = list(self._values)
        for k, v in scores.items():
            vals[AU_INDEX[canonical_au(k)]] = float(v)
        return AuScores(vals)

    def __getitem__(self, key: str) -> float:
        try:
            return self._values[AU_INDEX[key]]
        except KeyError:
            return self._values[AU_INDEX[canonical_au(key)]]

    def __iter__(self) -> Iterator[str]:
        return iter(AU_NAMES)

    def __len__(self) -> int:
        return N_AU

    def __eq__(self, other) -> bool:
        if isinstance(other, AuScores):
            return self._values == other._values
        return super().__eq__(other)

    def __hash__(self) -> int:
        return hash(self._values)

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={v:g}" for n, v in zip(AU_NAMES, self._values))
        return f"AuScores({inner})"


@dataclass(frozen=True, slots=True)
class HeadPose:
    pitch: float
    yaw: float
    roll: float


@dataclass(frozen=True, slots=True, eq=False)
class FrameObservation:
    video_id: str
    face_id: str
    timestamp_ms: int
    box: BoundingBox
    landmarks: Optional[LandmarkSet] = None
    raw_au: Optional[AuScores] = None
    luma: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.timestamp_ms < 0:
            raise ValueError("timestamp_ms must be non-negative")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameObservation):
            return NotImplemented
        if (self.video_id, self.face_id, self.timestamp_ms, self.box, self.landmarks, self.raw_au) != (
            other.video_id, other.face_id, other.timestamp_ms, other.box, other.landmarks, other.raw_au
        ):
            return False
        if self.luma is None or other.luma is None:
            return self.luma is None and other.luma is None
        return self.luma.shape == other.luma.shape and bool(np.array_equal(self.luma, other.luma))


@dataclass(frozen=True, slots=True)
class EmotionScores:
    anger: float
    disgust: float
    fear: float
    joy: float
    sadness: float
    surprise: float
    contempt: float
    neutral: float
    neutral_active: bool

    def basic(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in EMOTION_NAMES}


@dataclass(frozen=True, slots=True)
class QualityReport:
    mean_luminance: Optional[float] = None
    luminance_diff_lr: Optional[float] = None
    variance_luminance: Optional[float] = None
    high_freq_power: Optional[float] = None
    inter_ocular_distance: Optional[float] = None


@dataclass(frozen=True, slots=True)
class MetricFrame:
    video_id: str
    face_id: str
    timestamp_ms: int
    processed_au: Optional[AuScores]
    emotions: Optional[EmotionScores]
    composites: dict[str, float] = field(default_factory=dict)
    composite_active: dict[str, bool] = field(default_factory=dict)
    expressive: dict[str, Optional[float]] = field(default_factory=dict)
    quality: Optional[QualityReport] = None
    pose: Optional[HeadPose] = None


# --------------------------------------------------------------------------- luma codec

def encode_luma(crop: np.ndarray) -> str:
    arr = np.asarray(crop)
    if arr.ndim != 2:
        raise ValueError("luma crop must be 2-D")
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return f"{data.shape[0]}x{data.shape[1]}:" + base64.b64encode(data.tobytes()).decode("ascii")


def decode_luma(text: str) -> np.ndarray:
    shape, _, payload = text.partition(":")
    h, _, w = shape.partition("x")
    rows, cols = int(h), int(w)
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    if len(raw) != rows * cols:
        raise ValueError(f"luma payload has {len(raw)} bytes, expected {rows * cols}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(rows, cols).copy()


# --------------------------------------------------------------------------- parsing

def _num(rec: Mapping, key: str, line: int) -> float:
    raw = rec.get(key)
    if raw is None or raw == "":
        raise StreamError(f"missing value for {key!r}", line)
    try:
        val = float(raw)
    except (TypeError, ValueError):
        raise StreamError(f"non-numeric value {raw!r} for {key!r}", line) from None
    if not math.isfinite(val):
        raise StreamError(f"non-finite value for {key!r}", line)
    return val


def _present(rec: Mapping, key: str) -> bool:
    v = rec.get(key)
    return v is not None and v != ""


def record_to_observation(rec: Mapping, line: int) -> FrameObservation:
    for key in ("video_id", "face_id"):
        if not _present(rec, key):
            raise StreamError(f"missing value for {key!r}", line)
    ts = _num(rec, "timestamp_ms", line)
    if ts != int(ts) or ts < 0:
        raise StreamError(f"timestamp_ms must be a non-negative integer, got {rec.get('timestamp_ms')!r}", line)
    try:
        box = BoundingBox(*(_num(rec, k, line) for k in ("box_x", "box_y", "box_w", "box_h")))
    except ValueError as exc:
        if isinstance(exc, StreamError):
            raise
        raise StreamError(str(exc), line) from None

    lm_given = [_present(rec, k) for k in LANDMARK_COLUMNS]
    landmarks = None
    if all(lm_given):
        v = [_num(rec, k, line) for k in LANDMARK_COLUMNS]
        try:
            landmarks = LandmarkSet((v[0], v[1]), (v[2], v[3]), (v[4], v[5]), (v[6], v[7]))
        except ValueError as exc:
            raise StreamError(str(exc), line) from None
    elif any(lm_given):
        raise StreamError("landmark columns must be all present or all empty", line)

    au_given = [_present(rec, k) for k in AU_COLUMNS]
    raw_au = None
    if all(au_given):
        vals = []
        for name, col in zip(AU_NAMES, AU_COLUMNS):
            v = _num(rec, col, line)
            if not 0.0 <= v <= 100.0:
                raise AuRangeError(name, v, line)
            vals.append(v)
        raw_au = AuScores._trusted(tuple(vals))
    elif any(au_given):
        missing = [n for n, g in zip(AU_NAMES, au_given) if not g]
        raise StreamError(f"incomplete AU scores, missing {', '.join(missing)}", line)

    luma = None
    if _present(rec, "luma"):
        try:
            luma = decode_luma(str(rec["luma"]))
        except (ValueError, TypeError) as exc:
            raise StreamError(f"bad luma crop: {exc}", line) from None

    return FrameObservation(
        video_id=str(rec["video_id"]),
        face_id=str(rec["face_id"]),
        timestamp_ms=int(ts),
        box=box,
        landmarks=landmarks,
        raw_au=raw_au,
        luma=luma,
    )


def _as_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _parse_csv(text: IO[str]) -> Iterator[FrameObservation]:
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        return
    header = [h.strip() for h in header]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise StreamError(f"header missing columns: {', '.join(missing)}", 1)
    unknown = [c for c in header if c not in CSV_COLUMNS and c not in OPTIONAL_COLUMNS]
    if unknown:
        raise StreamError(f"header has unknown columns: {', '.join(unknown)}", 1)
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise StreamError(f"expected {len(header)} fields, got {len(row)}", line)
        yield record_to_observation(dict(zip(header, row)), line)


def _parse_jsonl(text: IO[str]) -> Iterator[FrameObservation]:
    allowed = set(CSV_COLUMNS) | set(OPTIONAL_COLUMNS)
    for line, raw in enumerate(text, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise StreamError(f"invalid JSON: {exc.msg}", line) from None
        if not isinstance(rec, dict):
            raise StreamError("record is not a JSON object", line)
        unknown = sorted(set(rec) - allowed)
        if unknown:
            raise StreamError(f"unknown fields: {', '.join(unknown)}", line)
        yield record_to_observation(rec, line)


def parse_frame_stream(source, format: str = "csv") -> Iterator[FrameObservation]:
    """Lazily parse a frame stream in file order.

    ``source`` may be a path, a binary stream or a text stream. Records are
    validated one at a time; the first bad record raises :class:`StreamError`
    carrying its line number.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown stream format {format!r}")
    text, owned = _as_text(source)
    try:
        if format == "csv":
            yield from _parse_csv(text)
        else:
            yield from _parse_jsonl(text)
    finally:
        if owned:
            text.close()
        elif isinstance(text, io.TextIOWrapper) and not isinstance(source, io.TextIOBase):
            text.detach()


def format_for_path(path: Union[str, Path]) -> str:
    suffix = Path(path).suffix.lower()
    return "jsonl" if suffix in (".jsonl", ".ndjson", ".json") else "csv"


# --------------------------------------------------------------------------- serialization

def observation_to_record(obs: FrameObservation) -> dict:
    rec: dict = {
        "video_id": obs.video_id,
        "face_id": obs.face_id,
        "timestamp_ms": obs.timestamp_ms,
        "box_x": obs.box.x,
        "box_y": obs.box.y,
        "box_w": obs.box.w,
        "box_h": obs.box.h,
    }
    if obs.landmarks is not None:
        flat = obs.landmarks.as_array().ravel().tolist()
        rec.update(zip(LANDMARK_COLUMNS, flat))
    else:
        rec.update((k, None) for k in LANDMARK_COLUMNS)
    if obs.raw_au is not None:
        rec.update(zip(AU_COLUMNS, obs.raw_au.values()))
    else:
        rec.update((k, None) for k in AU_COLUMNS)
    if obs.luma is not None:
        rec["luma"] = encode_luma(obs.luma)
    return rec


def write_frame_stream(frames: Iterable[FrameObservation], sink, format: str = "csv") -> int:
    """Write observations to ``sink`` (path or text stream). Returns the record count."""
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown stream format {format!r}")
    owned = isinstance(sink, (str, Path))
    out = open(sink, "w", encoding="utf-8", newline="") if owned else sink
    n = 0
    try:
        if format == "csv":
            frames = list(frames)
            with_luma = any(f.luma is not None for f in frames)
            cols = CSV_COLUMNS + (("luma",) if with_luma else ())
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(cols)
            for obs in frames:
                rec = observation_to_record(obs)
                writer.writerow(["" if rec.get(c) is None else _fmt(rec[c]) for c in cols])
                n += 1
        else:
            for obs in frames:
                rec = {k: v for k, v in observation_to_record(obs).items() if v is not None}
                out.write(json.dumps(rec, separators=(",", ":")) + "\n")
                n += 1
    finally:
        if owned:
            out.close()
    return n


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --------------------------------------------------------------------------- validation

@dataclass(frozen=True)
class OrderViolation:
    video_id: str
    face_id: str
    index: int
    previous_ms: int
    timestamp_ms: int


@dataclass
class ValidationReport:
    n_frames: int = 0
    n_tracks: int = 0
    violations: list[OrderViolation] = field(default_factory=list)
    max_gap_ms: Optional[int] = None
    track_max_gap_ms: dict[tuple[str, str], int] = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return not self.violations


def validate_stream(frames: Iterable[FrameObservation]) -> ValidationReport:
    """Check per-track timestamp order and collect inter-frame gap statistics.

    ``index`` in a violation is the position within that track's own frames.
    """
    report = ValidationReport()
    last: dict[tuple[str, str], int] = {}
    count: dict[tuple[str, str], int] = {}
    for obs in frames:
        key = (obs.video_id, obs.face_id)
        report.n_frames += 1
        idx = count.get(key, 0)
        count[key] = idx + 1
        if key in last:
            prev = last[key]
            if obs.timestamp_ms <= prev:
                report.violations.append(OrderViolation(key[0], key[1], idx, prev, obs.timestamp_ms))
            else:
                gap = obs.timestamp_ms - prev
                if gap > report.track_max_gap_ms.get(key, -1):
                    report.track_max_gap_ms[key] = gap
        last[key] = obs.timestamp_ms
    report.n_tracks = len(count)
    if report.track_max_gap_ms:
        report.max_gap_ms = max(report.track_max_gap_ms.values())
    return report
