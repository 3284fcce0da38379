"""Deterministic synthetic streams, corpora and crops with planted ground truth.

All randomness goes through :func:`keyed_rng`, a Philox generator keyed by
integer tuples such as (seed, ad, session, channel). Any piece can thus be
regenerated on its own, in any order or process, with identical output.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .composites import RuleSet
from .evaluation import Ad, LabeledCorpus, Session
from .postprocess import ValidationSession
from .stream import AU_INDEX, AU_NAMES, N_AU, AuScores, BoundingBox, FrameObservation, HeadPose, canonical_au
from .tracking import DEFAULT_TEMPLATE, project_template

EVENT_KINDS = ("au_pulse", "blink", "yaw_sweep", "bias_offset", "combo_fire")
# kinds that set a channel's level; two of them on one channel may not overlap
_SETTERS = ("au_pulse", "blink", "combo_fire")

AGE_BANDS = ("0-17", "18-24", "25-34", "35-44", "45-54", "55-64", "65+")
ETHNICITIES = ("African", "Caucasian", "East Asian", "Latin", "South Asian")
GENDERS = ("Female", "Male")
GLASSES = ("False", "True")

# tags that keep stream-level and corpus-level key spaces apart
_NOISE, _CROP, _CORPUS = 1, 2, 3


class ScenarioError(ValueError):
    pass


def keyed_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class ScenarioEvent:
    kind: str
    onset_ms: int
    duration_ms: int
    aus: tuple[str, ...] = ()
    amplitude: float = 80.0
    yaw_start: float = 0.0
    yaw_end: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}")
        if self.duration_ms <= 0 or self.onset_ms < 0:
            raise ScenarioError("event needs onset >= 0 and positive duration")
        aus = tuple(canonical_au(a) for a in self.aus)
        if self.kind == "blink":
            aus = aus or ("AU43",)
            if aus != ("AU43",):
                raise ScenarioError("blink events act on AU43 only")
        if self.kind in ("au_pulse", "bias_offset", "combo_fire") and not aus:
            raise ScenarioError(f"{self.kind} event needs at least one AU")
        object.__setattr__(self, "aus", aus)

    @property
    def end_ms(self) -> int:
        return self.onset_ms + self.duration_ms

    @classmethod
    def from_dict(cls, d: Mapping) -> ScenarioEvent:
        d = dict(d)
        params = d.pop("params", {})
        d.update(params)
        if "aus" in d:
            d["aus"] = tuple(d["aus"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    duration_ms: int = 10_000
    fps: float = 30.0
    events: tuple[ScenarioEvent, ...] = ()
    noise: Union[float, Mapping[str, float]] = 0.0
    video_id: str = "video0"
    face_id: str = "face0"
    landmarks: bool = True
    crops: bool = False
    crop_size: int = 48
    stream_key: tuple[int, ...] = ()

    def __post_init__(self):
        if self.fps <= 0:
            raise ScenarioError("fps must be positive")
        if self.duration_ms <= 0:
            raise ScenarioError("duration_ms must be positive")
        object.__setattr__(self, "events", tuple(
            e if isinstance(e, ScenarioEvent) else ScenarioEvent.from_dict(e) for e in self.events))
        for e in self.events:
            if e.end_ms > self.duration_ms:
                raise ScenarioError(f"{e.kind} event [{e.onset_ms}, {e.end_ms}) runs past the scenario end")
        self._check_overlaps()

    def _check_overlaps(self):
        def overlap(a, b):
            return a.onset_ms < b.end_ms and b.onset_ms < a.end_ms

        evs = self.events
        for i, a in enumerate(evs):
            for b in evs[i + 1:]:
                if not overlap(a, b):
                    continue
                if a.kind == "yaw_sweep" and b.kind == "yaw_sweep":
                    raise ScenarioError("overlapping yaw sweeps")
                shared = set(a.aus) & set(b.aus)
                if not shared:
                    continue
                if a.kind in _SETTERS and b.kind in _SETTERS:
                    raise ScenarioError(f"overlapping {a.kind}/{b.kind} events on {sorted(shared)}")
                if a.kind == "bias_offset" and b.kind == "bias_offset":
                    raise ScenarioError(f"overlapping bias offsets on {sorted(shared)}")

    def noise_vector(self) -> np.ndarray:
        if isinstance(self.noise, Mapping):
            v = np.zeros(N_AU)
            for au, s in self.noise.items():
                v[AU_INDEX[canonical_au(au)]] = float(s)
            return v
        return np.full(N_AU, float(self.noise))

    def timestamps(self) -> np.ndarray:
        n = int(np.ceil(self.duration_ms * self.fps / 1000.0))
        ts = np.floor(np.arange(n) * 1000.0 / self.fps + 1e-9).astype(np.int64)
        return ts[ts < self.duration_ms]

    @classmethod
    def from_dict(cls, d: Mapping) -> ScenarioSpec:
        d = dict(d)
        d.pop("kind", None)
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        if "events" in d:
            d["events"] = tuple(ScenarioEvent.from_dict(e) for e in d["events"])
        if "stream_key" in d:
            d["stream_key"] = tuple(d["stream_key"])
        try:
            return cls(**d)
        except (TypeError, KeyError) as exc:
            raise ScenarioError(str(exc)) from None


@dataclass
class GroundTruth:
    events: list[dict] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    @property
    def blinks(self) -> list[tuple[int, int]]:
        return [(e["onset_ms"], e["end_ms"]) for e in self.of_kind("blink")]

    def to_json(self) -> str:
        return json.dumps({"events": self.events}, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------- crops

def checkerboard(n: int = 64, lo: float = 0.0, hi: float = 255.0) -> np.ndarray:
    i = np.arange(n)
    return np.where((i[:, None] + i[None, :]) % 2 == 0, hi, lo).astype(float)


def horizontal_ramp(n: int = 64, lo: float = 0.0, hi: float = 255.0) -> np.ndarray:
    return np.tile(np.linspace(lo, hi, n), (n, 1))


def face_like_crop(size: int, rng: np.random.Generator, brightness: float = 128.0) -> np.ndarray:
    """Radial blob plus mild noise; integer intensities in [0, 255]."""
    y, x = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    blob = brightness + 60.0 * np.exp(-(x * x + y * y) * 8.0) - 30.0
    img = blob + rng.normal(0.0, 4.0, (size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------- streams

def _au_channels(spec: ScenarioSpec, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    base = np.zeros((ts.size, N_AU))
    level = np.zeros((ts.size, N_AU))
    yaw = np.zeros(ts.size)
    for e in spec.events:
        m = (ts >= e.onset_ms) & (ts < e.end_ms)
        if e.kind == "bias_offset":
            for au in e.aus:
                base[m, AU_INDEX[au]] += e.amplitude
        elif e.kind in _SETTERS:
            for au in e.aus:
                level[m, AU_INDEX[au]] = e.amplitude
        elif e.kind == "yaw_sweep":
            frac = (ts[m] - e.onset_ms) / e.duration_ms
            yaw[m] = e.yaw_start + (e.yaw_end - e.yaw_start) * frac
    return base + level, yaw


def generate_stream(spec: ScenarioSpec) -> tuple[list[FrameObservation], GroundTruth]:
    """AU channels are baseline + planted pulses + Gaussian noise, clamped to [0, 100]."""
    ts = spec.timestamps()
    clean, yaw = _au_channels(spec, ts)
    sigma = spec.noise_vector()
    au = clean.copy()
    for j in range(N_AU):
        if sigma[j] > 0:
            au[:, j] += keyed_rng(spec.seed, *spec.stream_key, _NOISE, j).normal(0.0, sigma[j], ts.size)
    au = np.clip(au, 0.0, 100.0)

    box = BoundingBox(240.0, 140.0, 160.0, 160.0)
    centre = (box.x + box.w / 2, box.y + box.h / 2)
    crop_rng = keyed_rng(spec.seed, *spec.stream_key, _CROP) if spec.crops else None
    rows = au.tolist()
    frames = []
    for i, t in enumerate(ts.tolist()):
        lm = None
        if spec.landmarks:
            lm = project_template(HeadPose(0.0, float(yaw[i]), 0.0), DEFAULT_TEMPLATE, scale=box.w * 0.6,
                                  center=centre)
        luma = face_like_crop(spec.crop_size, crop_rng) if crop_rng is not None else None
        frames.append(FrameObservation(spec.video_id, spec.face_id, t, box, lm,
                                       AuScores._trusted(tuple(rows[i])), luma))
    gt = GroundTruth([
        {**asdict(e), "aus": list(e.aus), "end_ms": e.end_ms}
        for e in sorted(spec.events, key=lambda e: (e.onset_ms, e.kind, e.aus))
    ])
    return frames, gt


# --------------------------------------------------------------------------- corpora

def _place(rng: np.random.Generator, busy: list[tuple[int, int]], length: int, lo: int, hi: int,
           margin: int = 500, tries: int = 100) -> Optional[tuple[int, int]]:
    """Random interval of ``length`` inside [lo, hi) clear of ``busy`` by ``margin``."""
    if hi - lo < length:
        return None
    for _ in range(tries):
        s = int(rng.integers(lo, hi - length + 1))
        e = s + length
        if all(e + margin <= bs or s >= be + margin for bs, be in busy):
            return s, e
    return None


def demographics_for(index: int) -> dict[str, str]:
    return {
        "age_band": AGE_BANDS[index % len(AGE_BANDS)],
        "ethnicity": ETHNICITIES[index % len(ETHNICITIES)],
        "gender": GENDERS[index % len(GENDERS)],
        "glasses": GLASSES[(index // 2) % len(GLASSES)],
    }


def generate_ad_corpus(n_pos: int, n_neg: int, sessions_per_ad: int, planted: RuleSet, seed: int,
                       duration_ms: int = 30_000, fps: float = 10.0, amplitude: float = 80.0,
                       noise_sigma: float = 3.0, fire_prob: float = 0.8, n_moments: int = 2,
                       moment_ms: tuple[int, int] = (3000, 5000), distractors: int = 3) -> LabeledCorpus:
    """Ads with planted composite-state activity.

    Positive ads get whole-second labelled moments; in each moment a session
    fires one planted rule (all its conjunct AUs at ``amplitude``) with
    probability ``fire_prob``, and the first session always fires. Negative
    sessions fire the same rules' AUs one at a time, at separate times, for
    the same total duration. Every session also carries single-AU distractor
    pulses on the planted AUs. Single AUs are therefore equally frequent in
    both classes and only their conjunction separates them.
    Sessions hold raw observations; run the pipeline to fill their frames.
    """
    if n_pos < 1 or n_neg < 1:
        raise ScenarioError("need at least one ad per class")
    if sessions_per_ad < 1:
        raise ScenarioError("sessions_per_ad must be >= 1")
    planted_aus = sorted({a for r in planted.rules for a, _ in r.conjuncts}, key=AU_INDEX.get)
    ads = []
    session_index = 0
    for ad_i in range(n_pos + n_neg):
        label = 1 if ad_i < n_pos else 0
        ad_rng = keyed_rng(seed, _CORPUS, ad_i)
        # negative ads draw the same windows but only use their lengths, for decoys
        windows: list[tuple[int, int]] = []
        lo_s, hi_s = 1, duration_ms // 1000 - 1
        for _ in range(n_moments):
            length = int(ad_rng.integers(moment_ms[0] // 1000, moment_ms[1] // 1000 + 1))
            iv = _place(ad_rng, [(s // 1000, e // 1000) for s, e in windows], length, lo_s, hi_s, margin=2)
            if iv is not None:
                windows.append((iv[0] * 1000, iv[1] * 1000))
        windows.sort()
        moments = windows if label else []
        sessions = []
        for s_i in range(sessions_per_ad):
            rng = keyed_rng(seed, _CORPUS, ad_i, s_i)
            events = []
            busy = list(windows)
            for k, (ms, me) in enumerate(windows):
                if not (s_i == 0 or rng.random() < fire_prob):
                    continue
                rule = planted.rules[(k + s_i) % len(planted.rules)]
                j1, j2 = (int(x) for x in rng.integers(0, 301, 2))
                aus = tuple(a for a, _ in rule.conjuncts)
                length = (me - j2) - (ms + j1)
                if label:
                    events.append(ScenarioEvent("combo_fire", ms + j1, length, aus, amplitude))
                    continue
                # decoy: each conjunct alone for as long as the combo would have lasted;
                # the first one takes the window slot itself
                events.append(ScenarioEvent("au_pulse", ms + j1, length, aus[:1], amplitude))
                for au in aus[1:]:
                    iv = _place(rng, busy, length, 0, duration_ms, margin=300, tries=500)
                    if iv is not None:
                        busy.append(iv)
                        events.append(ScenarioEvent("au_pulse", iv[0], length, (au,), amplitude))
            for _ in range(distractors):
                length = int(rng.integers(1000, 3001))
                iv = _place(rng, busy, length, 0, duration_ms)
                if iv is None:
                    continue
                busy.append(iv)
                au = planted_aus[int(rng.integers(len(planted_aus)))]
                events.append(ScenarioEvent("au_pulse", iv[0], iv[1] - iv[0], (au,), amplitude))
            spec = ScenarioSpec(seed=seed, duration_ms=duration_ms, fps=fps, events=tuple(events),
                                noise=noise_sigma, video_id=f"ad{ad_i:03d}_s{s_i:03d}", face_id="face0",
                                landmarks=False, stream_key=(_CORPUS, ad_i, s_i))
            obs, gt = generate_stream(spec)
            sessions.append(Session(f"ad{ad_i:03d}_s{s_i:03d}", demographics=demographics_for(session_index),
                                    observations=obs, ground_truth=gt))
            session_index += 1
        ads.append(Ad(f"ad{ad_i:03d}", label, sessions, moments))
    return LabeledCorpus(ads)


# --------------------------------------------------------------------------- AU validation benchmark

def noisy_au_benchmark(seed: int, n_sessions: int = 6, duration_ms: int = 60_000, fps: float = 15.0,
                       noise_sigma: float = 12.0, max_bias: float = 40.0, pulses_per_au: int = 4,
                       amplitude: tuple[float, float] = (25.0, 45.0)) -> list[ValidationSession]:
    """Raw AU classifier output with per-session occlusion-style bias and frame noise.

    Labels mark the planted pulses; bias offsets are not expressions.
    """
    out = []
    for s in range(n_sessions):
        rng = keyed_rng(seed, 4, s)
        events = []
        for au in AU_NAMES:
            bias = float(rng.uniform(0.0, max_bias))
            events.append(ScenarioEvent("bias_offset", 0, duration_ms, (au,), bias))
            busy: list[tuple[int, int]] = []
            for _ in range(pulses_per_au):
                length = int(rng.integers(1000, 3001))
                iv = _place(rng, busy, length, 0, duration_ms, margin=3000)
                if iv is None:
                    continue
                busy.append(iv)
                amp = float(rng.uniform(*amplitude))
                events.append(ScenarioEvent("au_pulse", iv[0], iv[1] - iv[0], (au,), amp))
        spec = ScenarioSpec(seed=seed, duration_ms=duration_ms, fps=fps, events=tuple(events),
                            noise=noise_sigma, landmarks=False, stream_key=(4, s))
        obs, gt = generate_stream(spec)
        ts = np.array([o.timestamp_ms for o in obs])
        scores = np.array([o.raw_au._values for o in obs])
        labels = np.zeros((ts.size, N_AU), dtype=int)
        for e in gt.of_kind("au_pulse"):
            m = (ts >= e["onset_ms"]) & (ts < e["end_ms"])
            for au in e["aus"]:
                labels[m, AU_INDEX[au]] = 1
        out.append(ValidationSession(ts, scores, labels))
    return out


def blink_scenario(seed: int, n_blinks: int, durations_ms: Sequence[int], duration_ms: int = 60_000,
                   fps: float = 30.0, amplitude: float = 90.0, noise: float = 0.0) -> ScenarioSpec:
    """``n_blinks`` AU43 square pulses placed at random, clear of each other."""
    rng = keyed_rng(seed, 5)
    busy: list[tuple[int, int]] = []
    events = []
    for k in range(n_blinks):
        length = int(durations_ms[k % len(durations_ms)])
        iv = _place(rng, busy, length, 200, duration_ms - 200, margin=400, tries=1000)
        if iv is None:
            raise ScenarioError("could not place all blinks; lengthen the scenario")
        busy.append(iv)
        events.append(ScenarioEvent("blink", iv[0], length, ("AU43",), amplitude))
    return ScenarioSpec(seed=seed, duration_ms=duration_ms, fps=fps, events=tuple(events),
                        noise={"AU43": noise} if noise else 0.0, landmarks=False)
