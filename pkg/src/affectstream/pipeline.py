"""Per-track analytics: observations in, :class:`MetricFrame` records out.

Each (video_id, face_id) track is processed as one batch, so every stage
is vectorised over the track's frames. Tracks are independent and may be
farmed out to worker processes; results are merged in sorted key order so
the worker count never changes the output.
"""

from __future__ import annotations

import contextlib
import gc
import json
import logging
import time
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .composites import CompiledRuleSet
from .config import EngineConfig
from .emotions import emotion_matrix
from .expressive import (
    BlinkEvent,
    attention,
    blink_mask,
    blink_rate,
    detect_blinks,
    expressiveness_matrix,
    valence_matrix,
)
from .postprocess import postprocess_matrix
from .quality import crop_metrics_batch
from .stream import (
    AU_INDEX,
    AU_NAMES,
    EMOTION_NAMES,
    N_AU,
    AuScores,
    EmotionScores,
    FrameObservation,
    HeadPose,
    MetricFrame,
    QualityReport,
    StreamError,
)
from .tracking import estimate_head_poses, retrack

log = logging.getLogger(__name__)

STAGES = ("pose", "postprocess", "emotions", "composites", "expressive", "quality", "assemble")
QUALITY_FIELDS = {
    "mean_luminance": "mean_face_luminance",
    "luminance_diff_lr": "mean_face_luminance_diff_lr",
    "variance_luminance": "variance_face_luminance",
    "high_freq_power": "high_frequency_power",
    "inter_ocular_distance": "inter_ocular_distance",
}
EXPRESSIVE_FIELDS = ("blink", "blink_rate", "attention", "expressiveness", "valence")


@dataclass
class TrackResult:
    video_id: str
    face_id: str
    frames: list[MetricFrame]
    blinks: list[BlinkEvent]
    timings: dict[str, float] = field(default_factory=dict)


class _Timer:
    def __init__(self):
        self.t = {s: 0.0 for s in STAGES}
        self._last = time.perf_counter()

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.t[stage] += now - self._last
        self._last = now


def _quality(obs: Sequence[FrameObservation], cfg: EngineConfig) -> list[Optional[QualityReport]]:
    qc = cfg.quality
    n = len(obs)
    vals = {k: np.full(n, np.nan) for k in QUALITY_FIELDS}
    by_shape: dict[tuple, list[int]] = defaultdict(list)
    for i, o in enumerate(obs):
        if o.luma is not None and o.luma.size:
            by_shape[o.luma.shape].append(i)
        if o.landmarks is not None:
            (x1, y1), (x2, y2) = o.landmarks.outer_left_eye, o.landmarks.outer_right_eye
            vals["inter_ocular_distance"][i] = float(np.hypot(x2 - x1, y2 - y1)) / qc.frame_width_px
    for shape, idx in sorted(by_shape.items()):
        metrics = crop_metrics_batch(np.stack([obs[i].luma for i in idx]), qc)
        for k, v in metrics.items():
            vals[k][idx] = v
    out: list[Optional[QualityReport]] = []
    cols = {k: v.tolist() for k, v in vals.items()}
    for i in range(n):
        kw = {k: (None if c[i] != c[i] else c[i]) for k, c in cols.items()}
        out.append(QualityReport(**kw) if any(v is not None for v in kw.values()) else None)
    return out


def analyze_track(observations: Sequence[FrameObservation], config: EngineConfig) -> TrackResult:
    """Run every metric over one face track; observations must share (video_id, face_id)."""
    timer = _Timer()
    obs = sorted(observations, key=lambda o: o.timestamp_ms)
    if not obs:
        raise ValueError("empty track")
    vid, fid = obs[0].video_id, obs[0].face_id
    ts = np.array([o.timestamp_ms for o in obs], dtype=np.int64)
    if np.any(np.diff(ts) <= 0):
        dup = int(ts[1:][np.diff(ts) <= 0][0])
        raise StreamError(f"track {vid}/{fid}: timestamps not strictly increasing at {dup} ms")
    n = len(obs)
    timer.lap("assemble")

    # pose
    lm_idx = [i for i, o in enumerate(obs) if o.landmarks is not None]
    poses = np.full((n, 3), np.nan)
    if lm_idx:
        pts = np.stack([obs[i].landmarks.as_array() for i in lm_idx])
        poses[lm_idx] = estimate_head_poses(pts, config.pose_template)
    timer.lap("pose")

    # AU chain
    au_idx = np.array([i for i, o in enumerate(obs) if o.raw_au is not None], dtype=np.intp)
    m = au_idx.size
    processed = np.zeros((0, N_AU))
    if m:
        raw = np.array([obs[i].raw_au._values for i in au_idx], dtype=float)
        processed = np.clip(postprocess_matrix(raw, ts[au_idx], config.postprocess), 0.0, 100.0)
    timer.lap("postprocess")

    emo = emotion_matrix(processed, config.emotions) if m else np.zeros((0, len(EMOTION_NAMES)))
    top = emo.max(axis=1) if m else np.zeros(0)
    neutral = 100.0 - top
    neutral_active = top < config.neutral_threshold
    timer.lap("emotions")

    comps = {}
    for rs in config.rule_sets:
        comps[rs.state] = CompiledRuleSet(rs).score(processed) if m else (np.zeros(0), np.zeros(0, bool))
    timer.lap("composites")

    ec = config.expressive
    blinks: list[BlinkEvent] = []
    expr = {k: np.full(n, np.nan) for k in EXPRESSIVE_FIELDS}
    if m:
        au_ts = ts[au_idx]
        blinks = detect_blinks(processed[:, AU_INDEX["AU43"]], au_ts, ec)
        expr["blink"][au_idx] = blink_mask(blinks, au_ts).astype(float)
        expr["blink_rate"][au_idx] = blink_rate(blinks, au_ts, ec.blink_rate_window_ms)
        expr["expressiveness"][au_idx] = expressiveness_matrix(processed, ec)
        expr["valence"][au_idx] = valence_matrix(processed, ec)
    expr["attention"] = attention(poses[:, 1], ts, ec)
    timer.lap("expressive")

    quality = _quality(obs, config)
    timer.lap("quality")

    # assemble
    pos_in_au = np.full(n, -1, dtype=np.intp)
    pos_in_au[au_idx] = np.arange(m)
    proc_rows = processed.tolist()
    emo_rows = emo.tolist()
    neu = neutral.tolist()
    neu_a = neutral_active.tolist()
    comp_rows = {k: (v[0].tolist(), v[1].tolist()) for k, v in comps.items()}
    expr_cols = {k: v.tolist() for k, v in expr.items()}
    pose_rows = poses.tolist()
    frames = []
    for i, o in enumerate(obs):
        j = pos_in_au[i]
        if j >= 0:
            au = AuScores._trusted(tuple(proc_rows[j]))
            e = emo_rows[j]
            emotions = EmotionScores(e[0], e[1], e[2], e[3], e[4], e[5], e[6], neu[j], neu_a[j])
            composites = {k: v[0][j] for k, v in comp_rows.items()}
            active = {k: v[1][j] for k, v in comp_rows.items()}
        else:
            au, emotions, composites, active = None, None, {}, {}
        expressive = {k: (None if c[i] != c[i] else c[i]) for k, c in expr_cols.items()}
        p = pose_rows[i]
        pose = None if p[0] != p[0] else HeadPose(p[0], p[1], p[2])
        frames.append(MetricFrame(vid, fid, o.timestamp_ms, au, emotions, composites, active, expressive,
                                  quality[i], pose))
    timer.lap("assemble")
    return TrackResult(vid, fid, frames, blinks, timer.t)


def group_tracks(observations: Iterable[FrameObservation]) -> dict[tuple[str, str], list[FrameObservation]]:
    groups: dict[tuple[str, str], list[FrameObservation]] = defaultdict(list)
    for o in observations:
        groups[(o.video_id, o.face_id)].append(o)
    return dict(sorted(groups.items()))


@contextlib.contextmanager
def gc_paused():
    """Suspend the cycle collector; the pipeline allocates many small acyclic records and
    repeated full-heap traversals would make cost grow faster than the frame count."""
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


@gc_paused()
def retrack_all(observations: Iterable[FrameObservation], config: EngineConfig) -> list[FrameObservation]:
    by_video: dict[str, list[FrameObservation]] = defaultdict(list)
    for o in observations:
        by_video[o.video_id].append(o)
    sc = config.scheduler
    out = []
    for vid in sorted(by_video):
        out.extend(retrack(by_video[vid], sc.interval_ms, sc.iou_min, sc.miss_limit))
    return out


def _analyze_one(args):
    obs, config = args
    return analyze_track(obs, config)


@gc_paused()
def analyze_observations(observations: Iterable[FrameObservation], config: EngineConfig, workers: int = 1,
                         retrack_faces: bool = False) -> list[TrackResult]:
    """Analyze every track; results come back sorted by (video_id, face_id)."""
    obs = list(observations)
    if retrack_faces:
        obs = retrack_all(obs, config)
    groups = group_tracks(obs)
    jobs = [(g, config) for g in groups.values()]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_analyze_one, jobs))
    else:
        results = [_analyze_one(j) for j in jobs]
    results.sort(key=lambda r: (r.video_id, r.face_id))
    return results


# --------------------------------------------------------------------------- output records

def output_columns(config: EngineConfig) -> list[str]:
    cols = ["video_id", "face_id", "timestamp_ms"]
    cols += [a.lower() for a in AU_NAMES]
    cols += list(EMOTION_NAMES) + ["neutral", "neutral_active"]
    for rs in config.rule_sets:
        cols += [rs.state, f"{rs.state}_active"]
    cols += list(EXPRESSIVE_FIELDS)
    cols += list(QUALITY_FIELDS.values())
    cols += ["pitch", "yaw", "roll"]
    return cols


def _r(v):
    return None if v is None else round(float(v), 6)


def metric_record(f: MetricFrame, config: EngineConfig) -> dict:
    rec: dict = {"video_id": f.video_id, "face_id": f.face_id, "timestamp_ms": f.timestamp_ms}
    for name in AU_NAMES:
        rec[name.lower()] = None if f.processed_au is None else _r(f.processed_au[name])
    for name in EMOTION_NAMES:
        rec[name] = None if f.emotions is None else _r(getattr(f.emotions, name))
    rec["neutral"] = None if f.emotions is None else _r(f.emotions.neutral)
    rec["neutral_active"] = None if f.emotions is None else int(f.emotions.neutral_active)
    for rs in config.rule_sets:
        rec[rs.state] = _r(f.composites.get(rs.state))
        a = f.composite_active.get(rs.state)
        rec[f"{rs.state}_active"] = None if a is None else int(a)
    for k in EXPRESSIVE_FIELDS:
        rec[k] = _r(f.expressive.get(k))
    for attr, col in QUALITY_FIELDS.items():
        rec[col] = None if f.quality is None else _r(getattr(f.quality, attr))
    for k in ("pitch", "yaw", "roll"):
        rec[k] = None if f.pose is None else _r(getattr(f.pose, k))
    return rec


def write_metric_records(results: Sequence[TrackResult], config: EngineConfig, sink, format: str = "csv") -> int:
    import csv

    n = 0
    if format == "csv":
        cols = output_columns(config)
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(cols)
        for r in results:
            for f in r.frames:
                rec = metric_record(f, config)
                w.writerow(["" if rec[c] is None else (repr(rec[c]) if isinstance(rec[c], float) else rec[c])
                            for c in cols])
                n += 1
    elif format == "jsonl":
        for r in results:
            for f in r.frames:
                sink.write(json.dumps(metric_record(f, config), separators=(",", ":")) + "\n")
                n += 1
    else:
        raise ValueError(f"unknown output format {format!r}")
    return n


def analyze_corpus(corpus, config: EngineConfig, workers: int = 1):
    """Fill every session's ``frames`` from its raw observations, in place; returns the corpus."""
    sessions = list(corpus.sessions())
    obs = [o for s in sessions for o in s.observations]
    by_video = {r.video_id: r for r in analyze_observations(obs, config, workers)}
    for s in sessions:
        vids = {o.video_id for o in s.observations}
        s.frames = [f for v in sorted(vids) for f in by_video[v].frames]
    return corpus
