"""Blink, blink rate, attention, expressiveness and valence."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .emotions import ConfigError
from .stream import AU_INDEX, N_AU, canonical_au


@dataclass(frozen=True, slots=True)
class BlinkEvent:
    onset_ms: int
    offset_ms: int
    peak_score: float

    @property
    def duration_ms(self) -> int:
        return self.offset_ms - self.onset_ms


def _weights(d: Mapping[str, float], what: str) -> dict[str, float]:
    out = {}
    for au, w in d.items():
        try:
            name = canonical_au(au)
        except KeyError:
            raise ConfigError(f"{what} references unknown AU {au!r}") from None
        w = float(w)
        if not math.isfinite(w) or w < 0:
            raise ConfigError(f"{what} weight for {name} must be finite and non-negative")
        out[name] = w
    if sum(out.values()) <= 0:
        raise ConfigError(f"{what} weights sum to zero")
    return out


@dataclass(frozen=True)
class ExpressiveConfig:
    blink_on: float = 60.0
    blink_off: float = 40.0
    blink_min_ms: int = 70
    blink_max_ms: int = 500
    blink_rate_window_ms: int = 60_000
    yaw_limit_deg: float = 30.0
    attention_window_ms: int = 10_000
    upper_face: Mapping[str, float] = field(
        default_factory=lambda: {"AU1": 1.0, "AU2": 1.0, "AU4": 1.0, "AU5": 1.0})
    lower_face: Mapping[str, float] = field(
        default_factory=lambda: {"AU12": 1.0, "AU15": 1.0, "AU25": 1.0, "AU26": 1.0})
    valence_positive: Mapping[str, float] = field(default_factory=lambda: {"AU6": 1.0, "AU12": 1.0})
    valence_negative: Mapping[str, float] = field(
        default_factory=lambda: {"AU4": 1.0, "AU15": 1.0, "AU9": 1.0})

    def __post_init__(self):
        if self.blink_off > self.blink_on:
            raise ConfigError("blink_off must not exceed blink_on")
        if not 0 < self.blink_min_ms <= self.blink_max_ms:
            raise ConfigError("blink duration gate must satisfy 0 < min <= max")
        if not 0.0 < self.yaw_limit_deg < 90.0:
            raise ConfigError("yaw_limit_deg must lie in (0, 90)")
        if self.attention_window_ms <= 0 or self.blink_rate_window_ms <= 0:
            raise ConfigError("windows must be positive")
        for name in ("upper_face", "lower_face"):
            object.__setattr__(self, name, {canonical_au(k): float(v) for k, v in getattr(self, name).items()})
        combined = dict(self.upper_face)
        for k, v in self.lower_face.items():
            combined[k] = combined.get(k, 0.0) + v
        _weights(combined, "expressiveness")
        object.__setattr__(self, "valence_positive", _weights(self.valence_positive, "valence positive"))
        object.__setattr__(self, "valence_negative", _weights(self.valence_negative, "valence negative"))

    def expressiveness_vector(self) -> np.ndarray:
        v = np.zeros(N_AU)
        for group in (self.upper_face, self.lower_face):
            for au, w in group.items():
                v[AU_INDEX[au]] += w
        return v / v.sum()

    def valence_vector(self) -> np.ndarray:
        pos = np.zeros(N_AU)
        neg = np.zeros(N_AU)
        for au, w in self.valence_positive.items():
            pos[AU_INDEX[au]] = w
        for au, w in self.valence_negative.items():
            neg[AU_INDEX[au]] = w
        return pos / pos.sum() - neg / neg.sum()


# --------------------------------------------------------------------------- blinks

class BlinkDetector:
    """Hysteresis state machine over AU43, one sample at a time."""

    def __init__(self, cfg: ExpressiveConfig = ExpressiveConfig()):
        self.cfg = cfg
        self._onset: Optional[int] = None
        self._peak = 0.0

    @property
    def closed(self) -> bool:
        return self._onset is not None

    def push(self, timestamp_ms: int, au43: float) -> Optional[BlinkEvent]:
        cfg = self.cfg
        if self._onset is None:
            if au43 >= cfg.blink_on:
                self._onset = timestamp_ms
                self._peak = au43
            return None
        self._peak = max(self._peak, au43)
        if au43 < cfg.blink_off:
            onset, self._onset = self._onset, None
            dur = timestamp_ms - onset
            if cfg.blink_min_ms <= dur <= cfg.blink_max_ms:
                return BlinkEvent(onset, timestamp_ms, self._peak)
        return None


def detect_blinks(au43: Sequence[float], timestamps_ms: Sequence[int],
                  cfg: ExpressiveConfig = ExpressiveConfig()) -> list[BlinkEvent]:
    """Blinks whose duration passes the gate; an eye still closed at stream end is dropped."""
    det = BlinkDetector(cfg)
    out = []
    for t, v in zip(np.asarray(timestamps_ms).tolist(), np.asarray(au43, dtype=float).tolist()):
        ev = det.push(t, v)
        if ev is not None:
            out.append(ev)
    return out


def blink_rate(events: Sequence[BlinkEvent], query_ms, window_ms: int = 60_000):
    """Blinks per minute with offset in ``(t - window_ms, t]``; scalar or array ``query_ms``."""
    offsets = np.array([e.offset_ms for e in events], dtype=np.int64)
    q = np.asarray(query_ms, dtype=np.int64)
    hi = np.searchsorted(offsets, q, side="right")
    lo = np.searchsorted(offsets, q - window_ms, side="right")
    rate = (hi - lo) * 60_000.0 / window_ms
    return float(rate) if rate.ndim == 0 else rate


def blink_mask(events: Sequence[BlinkEvent], timestamps_ms) -> np.ndarray:
    ts = np.asarray(timestamps_ms)
    mask = np.zeros(ts.shape, dtype=bool)
    for e in events:
        mask |= (ts >= e.onset_ms) & (ts < e.offset_ms)
    return mask


def write_blink_events(events: Sequence[tuple[str, str, BlinkEvent]], sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["video_id", "face_id", "onset_ms", "offset_ms", "duration_ms", "peak_score"])
    for vid, fid, e in events:
        w.writerow([vid, fid, e.onset_ms, e.offset_ms, e.duration_ms, repr(float(e.peak_score))])


def blink_events_csv(events) -> str:
    buf = io.StringIO()
    write_blink_events(events, buf)
    return buf.getvalue()


# --------------------------------------------------------------------------- attention

def frame_durations(timestamps_ms) -> np.ndarray:
    """Each frame's share of time: the gap back to the previous frame (first frame: next gap)."""
    ts = np.asarray(timestamps_ms, dtype=float)
    if ts.size == 0:
        return ts
    if ts.size == 1:
        return np.ones(1)
    d = np.diff(ts)
    return np.concatenate([d[:1], d])


def attention(yaw, timestamps_ms, cfg: ExpressiveConfig = ExpressiveConfig()) -> np.ndarray:
    """Percentage of trailing-window time with ``|yaw| <= yaw_limit``.

    ``yaw`` may hold NaN for frames without a pose; those frames drop out of
    both numerator and denominator. A window with no posed frame yields NaN.
    """
    y = np.asarray(yaw, dtype=float)
    ts = np.asarray(timestamps_ms, dtype=np.int64)
    dur = frame_durations(ts)
    posed = ~np.isnan(y)
    w_all = np.where(posed, dur, 0.0)
    w_on = np.where(posed & (np.abs(np.nan_to_num(y)) <= cfg.yaw_limit_deg), dur, 0.0)
    c_all = np.concatenate([[0.0], np.cumsum(w_all)])
    c_on = np.concatenate([[0.0], np.cumsum(w_on)])
    hi = np.arange(1, ts.size + 1)
    lo = np.searchsorted(ts, ts - cfg.attention_window_ms, side="right")
    den = c_all[hi] - c_all[lo]
    num = c_on[hi] - c_on[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, 100.0 * num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(out, 0.0, 100.0)


# --------------------------------------------------------------------------- per-frame scores

def expressiveness(au: Mapping[str, float], cfg: ExpressiveConfig = ExpressiveConfig()) -> float:
    vec = np.array([au[n] for n in AU_INDEX], dtype=float)
    return float(np.clip(vec @ cfg.expressiveness_vector(), 0.0, 100.0))


def valence(au: Mapping[str, float], cfg: ExpressiveConfig = ExpressiveConfig()) -> float:
    vec = np.array([au[n] for n in AU_INDEX], dtype=float)
    return float(np.clip(vec @ cfg.valence_vector(), -100.0, 100.0))


def expressiveness_matrix(au: np.ndarray, cfg: ExpressiveConfig) -> np.ndarray:
    return np.clip(np.asarray(au, dtype=float) @ cfg.expressiveness_vector(), 0.0, 100.0)


def valence_matrix(au: np.ndarray, cfg: ExpressiveConfig) -> np.ndarray:
    return np.clip(np.asarray(au, dtype=float) @ cfg.valence_vector(), -100.0, 100.0)
