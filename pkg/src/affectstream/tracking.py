"""Face track scheduling, association, alignment and head pose.

Neural detectors are out of scope. Anything satisfying :class:`Detector`
can drive :class:`TrackOrchestrator`; :class:`ReplayDetector` replays boxes
and landmarks that were computed upstream and stored in the frame stream.
"""

from __future__ import annotations

import functools
import math
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

import numpy as np

from .stream import BoundingBox, FrameObservation, HeadPose, LandmarkSet


class DegenerateLandmarksError(ValueError):
    pass


class SingularConfigurationError(ValueError):
    pass


# --------------------------------------------------------------------------- scheduling

def schedule_detection(timestamps_ms: Sequence[int], interval_ms: int = 500) -> set[int]:
    """Timestamps at which the full face detector runs.

    The first frame always runs; afterwards a frame runs once at least
    ``interval_ms`` has elapsed since the previous detector frame.
    """
    selected: set[int] = set()
    prev = last_sel = None
    for ts in timestamps_ms:
        if prev is not None and ts <= prev:
            raise ValueError("timestamps must be strictly increasing")
        if last_sel is None or ts - last_sel >= interval_ms:
            selected.add(ts)
            last_sel = ts
        prev = ts
    return selected


# --------------------------------------------------------------------------- association

@dataclass
class FaceTrackState:
    face_id: str
    last_box: BoundingBox
    last_seen_ms: int
    status: str = "active"
    misses: int = 0


@dataclass
class MatchResult:
    assignment: dict[int, int]  # track index -> detection index
    ious: dict[int, float]
    new_detections: list[int]
    unmatched_tracks: list[int]


def match_tracks(
    active: Sequence[FaceTrackState], detections: Sequence[BoundingBox], iou_min: float
) -> MatchResult:
    """Greedy one-to-one matching, highest IoU first.

    Ties go to the lower track index, then the lower detection index.
    """
    if not 0.0 < iou_min < 1.0:
        raise ValueError("iou_min must lie in (0, 1)")
    pairs = []
    for ti, track in enumerate(active):
        for di, det in enumerate(detections):
            v = track.last_box.iou(det)
            if v >= iou_min:
                pairs.append((-v, ti, di))
    pairs.sort()
    used_t: set[int] = set()
    used_d: set[int] = set()
    assignment: dict[int, int] = {}
    ious: dict[int, float] = {}
    for neg_v, ti, di in pairs:
        if ti in used_t or di in used_d:
            continue
        assignment[ti] = di
        ious[ti] = -neg_v
        used_t.add(ti)
        used_d.add(di)
    return MatchResult(
        assignment=assignment,
        ious=ious,
        new_detections=[d for d in range(len(detections)) if d not in used_d],
        unmatched_tracks=[t for t in range(len(active)) if t not in used_t],
    )


# --------------------------------------------------------------------------- detectors

class Detector(Protocol):
    def detect_faces(self, frame) -> list[BoundingBox]: ...

    def detect_landmarks(self, frame, box: BoundingBox) -> Optional[LandmarkSet]: ...


class ReplayDetector:
    """Serves pre-computed boxes/landmarks for one video; the frame handle is the timestamp."""

    def __init__(self, observations: Iterable[FrameObservation]):
        self._by_ts: dict[int, list[FrameObservation]] = defaultdict(list)
        self._exact: dict[int, dict[BoundingBox, FrameObservation]] = defaultdict(dict)
        for obs in observations:
            self._by_ts[obs.timestamp_ms].append(obs)
            # first observation wins, as in the IoU scan
            self._exact[obs.timestamp_ms].setdefault(obs.box, obs)
        self._memo_frame: Optional[int] = None
        self._memo: dict = {}

    @property
    def timestamps(self) -> list[int]:
        return sorted(self._by_ts)

    def detect_faces(self, frame: int) -> list[BoundingBox]:
        return [o.box for o in self._by_ts.get(frame, ())]

    def observation_for(self, frame: int, box: BoundingBox, iou_min: float = 0.0) -> Optional[FrameObservation]:
        """Highest-IoU observation at ``frame`` above ``iou_min``; earliest wins ties."""
        exact = self._exact.get(frame, {}).get(box)
        if exact is not None and iou_min < 1.0:
            return exact
        if frame != self._memo_frame:
            self._memo_frame, self._memo = frame, {}
        key = (box, iou_min)
        if key in self._memo:
            return self._memo[key]
        best, best_iou = None, iou_min
        for obs in self._by_ts.get(frame, ()):
            v = obs.box.iou(box)
            if v > best_iou:
                best, best_iou = obs, v
        self._memo[key] = best
        return best

    def detect_landmarks(self, frame: int, box: BoundingBox) -> Optional[LandmarkSet]:
        obs = self.observation_for(frame, box)
        return None if obs is None else obs.landmarks


class SyntheticDetector:
    """Faces moving on straight lines; ``faces`` maps face id to (start_ms, end_ms, box0, velocity px/s)."""

    def __init__(self, faces: dict[str, tuple[int, int, BoundingBox, tuple[float, float]]]):
        self.faces = faces

    def _box(self, fid: str, t: int) -> Optional[BoundingBox]:
        start, end, b, (vx, vy) = self.faces[fid]
        if not start <= t <= end:
            return None
        dt = (t - start) / 1000.0
        return BoundingBox(b.x + vx * dt, b.y + vy * dt, b.w, b.h)

    def detect_faces(self, frame: int) -> list[BoundingBox]:
        return [b for fid in sorted(self.faces) if (b := self._box(fid, frame)) is not None]

    def detect_landmarks(self, frame: int, box: BoundingBox) -> Optional[LandmarkSet]:
        best = max(self.detect_faces(frame), key=box.iou, default=None)
        if best is None or best.iou(box) <= 0:
            return None
        cx, cy = best.x + best.w / 2, best.y + best.h / 2
        return LandmarkSet(
            (cx - 0.3 * best.w, cy - 0.15 * best.h),
            (cx + 0.3 * best.w, cy - 0.15 * best.h),
            (cx, cy + 0.05 * best.h),
            (cx, cy + 0.4 * best.h),
        )


@dataclass
class TrackedFrame:
    timestamp_ms: int
    face_id: str
    box: BoundingBox
    landmarks: Optional[LandmarkSet]
    detector_pass: bool


@dataclass
class TrackOrchestrator:
    """Per-video track bookkeeping between face-detector passes.

    On detector frames, detections are matched to active tracks; unmatched
    detections open new tracks and a track missing ``miss_limit`` consecutive
    passes is marked lost. On every frame, each active track's landmarks are
    requested on the box from the most recent detector pass.
    """

    detector: Detector
    interval_ms: int = 500
    iou_min: float = 0.3
    miss_limit: int = 2
    id_prefix: str = "face"
    tracks: list[FaceTrackState] = field(default_factory=list)
    _next_id: int = 0
    _last_pass: Optional[int] = None
    _last_frame: Optional[int] = None

    @property
    def active(self) -> list[FaceTrackState]:
        return [t for t in self.tracks if t.status == "active"]

    def _new_id(self) -> str:
        fid = f"{self.id_prefix}{self._next_id}"
        self._next_id += 1
        return fid

    def step(self, frame: int) -> list[TrackedFrame]:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError("frames must be strictly increasing")
        self._last_frame = frame
        detector_pass = self._last_pass is None or frame - self._last_pass >= self.interval_ms
        if detector_pass:
            self._last_pass = frame
            active = self.active
            dets = self.detector.detect_faces(frame)
            res = match_tracks(active, dets, self.iou_min)
            for ti, di in res.assignment.items():
                active[ti].last_box = dets[di]
                active[ti].misses = 0
            for ti in res.unmatched_tracks:
                active[ti].misses += 1
                if active[ti].misses >= self.miss_limit:
                    active[ti].status = "lost"
            for di in res.new_detections:
                self.tracks.append(FaceTrackState(self._new_id(), dets[di], frame))
        out = []
        for track in self.active:
            lm = self.detector.detect_landmarks(frame, track.last_box)
            if lm is not None:
                track.last_seen_ms = frame
            out.append(TrackedFrame(frame, track.face_id, track.last_box, lm, detector_pass))
        return out

    def run(self, frames: Iterable[int]) -> list[TrackedFrame]:
        out = []
        for f in frames:
            out.extend(self.step(f))
        return out


def retrack(observations: Sequence[FrameObservation], interval_ms: int = 500, iou_min: float = 0.3,
            miss_limit: int = 2) -> list[FrameObservation]:
    """Reassign face ids of one video's observations through the orchestrator.

    Frames between detector passes keep only observations that overlap the
    track's last detector box.
    """
    detector = ReplayDetector(observations)
    orch = TrackOrchestrator(detector, interval_ms=interval_ms, iou_min=iou_min, miss_limit=miss_limit)
    out = []
    for ts in detector.timestamps:
        for tf in orch.step(ts):
            obs = detector.observation_for(ts, tf.box)
            if obs is not None:
                out.append(replace(obs, face_id=tf.face_id))
    return out


# --------------------------------------------------------------------------- alignment

def alignment_angle(landmarks: LandmarkSet) -> float:
    """Rotation in degrees that makes the outer-eye segment horizontal (image y down)."""
    (x1, y1), (x2, y2) = landmarks.outer_left_eye, landmarks.outer_right_eye
    if x1 == x2 and y1 == y2:
        raise DegenerateLandmarksError("outer eye landmarks coincide")
    return -math.degrees(math.atan2(y2 - y1, x2 - x1))


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional coordinates, clamping to the border."""
    h, w = img.shape[-2:]
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = r - r0
    fc = c - c0
    src = img.astype(float, copy=False)
    top = src[..., r0, c0] * (1 - fc) + src[..., r0, c1] * fc
    bot = src[..., r1, c0] * (1 - fc) + src[..., r1, c1] * fc
    return top * (1 - fr) + bot * fr


@functools.lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) weights of a half-pixel-centre 1-D linear resample with border clamping."""
    pos = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = pos - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - f)
    np.add.at(m, (rows, i1), f)
    m.setflags(write=False)
    return m


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize; works on a trailing (H, W) pair so batches resize together."""
    h, w = img.shape[-2:]
    src = np.asarray(img, dtype=float)
    if (h, w) == (out_h, out_w):
        return src.copy()
    # separable: rows then columns, each a small dense matmul
    return bilinear_matrix(h, out_h) @ src @ bilinear_matrix(w, out_w).T


def align_face(crop: np.ndarray, landmarks: LandmarkSet, out_size: int = 96) -> np.ndarray:
    """Rotate ``crop`` about the eye midpoint so the eyes are level, then resize.

    Landmarks are in crop pixel coordinates.
    """
    crop = np.asarray(crop, dtype=float)
    angle = math.radians(alignment_angle(landmarks))
    h, w = crop.shape
    rows = (np.arange(out_size) + 0.5) * (h / out_size) - 0.5
    cols = (np.arange(out_size) + 0.5) * (w / out_size) - 0.5
    yy, xx = np.meshgrid(rows, cols, indexing="ij")
    if angle == 0.0:
        return bilinear_sample(crop, yy, xx)
    (x1, y1), (x2, y2) = landmarks.outer_left_eye, landmarks.outer_right_eye
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    # inverse map: output pixel -> source pixel, i.e. rotate by -angle
    ca, sa = math.cos(angle), math.sin(angle)
    dx, dy = xx - cx, yy - cy
    src_x = cx + ca * dx + sa * dy
    src_y = cy - sa * dx + ca * dy
    return bilinear_sample(crop, src_y, src_x)


# --------------------------------------------------------------------------- head pose

@dataclass(frozen=True)
class PoseTemplate:
    """Canonical head points (x right, y up, z toward the camera)."""

    outer_left_eye: tuple[float, float, float] = (-0.45, 0.35, 0.0)
    outer_right_eye: tuple[float, float, float] = (0.45, 0.35, 0.0)
    nose_tip: tuple[float, float, float] = (0.0, 0.0, 0.25)
    chin: tuple[float, float, float] = (0.0, -0.65, 0.05)

    def __post_init__(self):
        pts = self.points()
        centred = pts - pts.mean(axis=0)
        s = np.linalg.svd(centred, compute_uv=False)
        if s[1] <= 1e-9 * max(s[0], 1.0):
            raise ValueError("pose template points are collinear")
        if s[2] <= 1e-9 * s[0]:
            raise ValueError("pose template points are coplanar; depth is unrecoverable")

    def points(self) -> np.ndarray:
        return np.array([self.outer_left_eye, self.outer_right_eye, self.nose_tip, self.chin], dtype=float)

    @classmethod
    def from_dict(cls, d: dict) -> PoseTemplate:
        return cls(**{k: tuple(float(x) for x in v) for k, v in d.items()})


DEFAULT_TEMPLATE = PoseTemplate()


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def rotation_from_pose(pose: HeadPose) -> np.ndarray:
    """R = Ry(yaw) @ Rx(pitch) @ Rz(roll)."""
    return _ry(math.radians(pose.yaw)) @ _rx(math.radians(pose.pitch)) @ _rz(math.radians(pose.roll))


def pose_from_rotation(R: np.ndarray) -> HeadPose:
    pitch = math.asin(max(-1.0, min(1.0, -R[1, 2])))
    yaw = math.atan2(R[0, 2], R[2, 2])
    roll = math.atan2(R[1, 0], R[1, 1])
    return HeadPose(math.degrees(pitch), math.degrees(yaw), math.degrees(roll))


def project_template(pose: HeadPose, template: PoseTemplate = DEFAULT_TEMPLATE, scale: float = 100.0,
                     center: tuple[float, float] = (320.0, 240.0)) -> LandmarkSet:
    """Weak-perspective projection of the rotated template into image pixels (y down)."""
    pts = template.points() @ rotation_from_pose(pose).T
    u = center[0] + scale * pts[:, 0]
    v = center[1] - scale * pts[:, 1]
    return LandmarkSet.from_array(np.stack([u, v], axis=1))


class _PoseSolver:
    """Precomputes the template pseudo-inverse so a batch of frames solves in one pass."""

    def __init__(self, template: PoseTemplate):
        X = template.points()
        self.Xc = X - X.mean(axis=0)
        self.pinv = np.linalg.pinv(self.Xc.T)  # (4, 3): M = xc.T @ pinv

    def solve(self, image_pts: np.ndarray) -> np.ndarray:
        """``image_pts`` (N, 4, 2) in pixels -> (N, 3) pitch/yaw/roll degrees.

        Frames whose landmarks are collinear come back as NaN rows.
        """
        p = np.asarray(image_pts, dtype=float)
        y_up = np.stack([p[..., 0], -p[..., 1]], axis=-1)
        xc = y_up - y_up.mean(axis=1, keepdims=True)
        sv = np.linalg.svd(xc, compute_uv=False)
        bad = sv[:, 1] <= 1e-9 * np.maximum(sv[:, 0], 1e-300)
        M = np.einsum("nki,kj->nij", xc, self.pinv)  # (N, 2, 3) = s * R[:2]
        U, _, Vt = np.linalg.svd(M, full_matrices=False)
        R2 = U @ Vt  # nearest pair of orthonormal rows
        r3 = np.cross(R2[:, 0], R2[:, 1])
        pitch = np.degrees(np.arcsin(np.clip(-R2[:, 1, 2], -1.0, 1.0)))
        yaw = np.degrees(np.arctan2(R2[:, 0, 2], r3[:, 2]))
        roll = np.degrees(np.arctan2(R2[:, 1, 0], R2[:, 1, 1]))
        out = np.stack([pitch, yaw, roll], axis=1)
        out[bad] = np.nan
        return out


_SOLVERS: dict[PoseTemplate, _PoseSolver] = {}


def _solver(template: PoseTemplate) -> _PoseSolver:
    s = _SOLVERS.get(template)
    if s is None:
        s = _SOLVERS[template] = _PoseSolver(template)
    return s


def estimate_head_pose(landmarks: LandmarkSet, template: PoseTemplate = DEFAULT_TEMPLATE) -> HeadPose:
    """Least-squares weak-perspective fit of ``template`` to the four landmarks."""
    angles = _solver(template).solve(landmarks.as_array()[None])[0]
    if np.isnan(angles).any():
        raise SingularConfigurationError("landmarks are collinear; head pose is undetermined")
    return HeadPose(float(angles[0]), float(angles[1]), float(angles[2]))


def estimate_head_poses(points: np.ndarray, template: PoseTemplate = DEFAULT_TEMPLATE) -> np.ndarray:
    """Vectorised :func:`estimate_head_pose` over an (N, 4, 2) array; singular frames are NaN."""
    if len(points) == 0:
        return np.zeros((0, 3))
    return _solver(template).solve(points)
