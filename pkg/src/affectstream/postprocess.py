"""AU score postprocessing: moving mean, rolling baseline subtraction, sigmoid.

Channels are independent, so everything here works on one 1-D series at a
time or on an (N, 20) frame matrix column by column.
"""

from __future__ import annotations

import bisect
import csv
import itertools
import math
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.ndimage import rank_filter
from scipy.special import expit

from .stream import AU_NAMES, N_AU, canonical_au

DEFAULT_K = 0.2
DEFAULT_T = 50.0


@dataclass(frozen=True)
class SigmoidParams:
    k: float = DEFAULT_K
    t: float = DEFAULT_T

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"sigmoid slope must be positive, got {self.k}")
        if not 0.0 <= self.t <= 100.0:
            raise ValueError(f"sigmoid centre must lie in [0, 100], got {self.t}")


@dataclass(frozen=True)
class PostprocessConfig:
    smooth_window_frames: int = 5
    baseline_window_ms: int = 30_000
    baseline_quantile: float = 0.1
    k: float = DEFAULT_K
    t: float = DEFAULT_T
    per_au: Mapping[str, SigmoidParams] = field(default_factory=dict)
    causal: bool = False

    def __post_init__(self):
        w = self.smooth_window_frames
        if not (isinstance(w, int) and w >= 1 and w % 2 == 1):
            raise ValueError(f"smooth_window_frames must be an odd positive integer, got {w!r}")
        if not (isinstance(self.baseline_window_ms, int) and self.baseline_window_ms > 0):
            raise ValueError("baseline_window_ms must be a positive integer")
        if not 0.0 <= self.baseline_quantile <= 1.0:
            raise ValueError("baseline_quantile must lie in [0, 1]")
        SigmoidParams(self.k, self.t)
        fixed = {canonical_au(name): p if isinstance(p, SigmoidParams) else SigmoidParams(**p)
                 for name, p in self.per_au.items()}
        object.__setattr__(self, "per_au", fixed)

    def sigmoid_for(self, au: str) -> SigmoidParams:
        return self.per_au.get(au) or SigmoidParams(self.k, self.t)

    def sigmoid_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ks = np.empty(N_AU)
        ts = np.empty(N_AU)
        for i, name in enumerate(AU_NAMES):
            p = self.sigmoid_for(name)
            ks[i], ts[i] = p.k, p.t
        return ks, ts


# --------------------------------------------------------------------------- stages

def moving_mean(series, window: int, causal: bool = False) -> np.ndarray:
    """Boundary-truncated moving mean.

    Centred mode averages ``[i - w//2, i + w//2]``; causal mode averages the
    trailing ``[i - w + 1, i]``. Both use only the indices that exist.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n == 0 or window == 1:
        return x.copy()
    # offset by the first sample so constant runs come out exact
    ref = x[:1]
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x - ref, axis=0)])
    idx = np.arange(n)
    if causal:
        lo = np.maximum(idx - window + 1, 0)
        hi = idx + 1
    else:
        half = window // 2
        lo = np.maximum(idx - half, 0)
        hi = np.minimum(idx + half + 1, n)
    counts = (hi - lo).reshape((n,) + (1,) * (x.ndim - 1))
    return ref + (csum[hi] - csum[lo]) / counts


def _sorted_quantile(vals: list, q: float) -> float:
    pos = q * (len(vals) - 1)
    lo = math.floor(pos)
    frac = pos - lo
    if frac == 0.0:
        return vals[lo]
    return vals[lo] + (vals[lo + 1] - vals[lo]) * frac


def _window_rank(x: np.ndarray, size: int, rank: int) -> np.ndarray:
    """``rank``-th smallest of each trailing window ``x[i - size + 1 : i + 1]``."""
    return rank_filter(x, rank, size=size, origin=(size - 1) // 2, mode="nearest")


def rolling_quantile(series, timestamps_ms, window_ms: int, quantile: float) -> np.ndarray:
    """Quantile (linear interpolation) of each trailing window ``(t_i - window_ms, t_i]``.

    The growing prefix is handled incrementally. After that, windows of a
    recurring length (the usual case at a steady frame rate) go through an
    order-statistic filter, and any stragglers are computed directly. All
    paths pick the same order statistics, so results are bit-identical.
    """
    x = np.asarray(series, dtype=float)
    ts = np.asarray(timestamps_ms)
    n = x.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    start = np.searchsorted(ts, ts - window_ms, side="right")
    length = np.arange(n) - start + 1

    prefix = int(np.searchsorted(start, 1, side="left"))
    window: list[float] = []
    xs = x[:prefix].tolist()
    for i in range(prefix):
        bisect.insort(window, xs[i])
        out[i] = _sorted_quantile(window, quantile)
    if prefix == n:
        return out

    rest = np.arange(prefix, n)
    sizes, counts = np.unique(length[rest], return_counts=True)
    for size, count in zip(sizes.tolist(), counts.tolist()):
        idx = rest[length[rest] == size]
        pos = quantile * (size - 1)
        lo = math.floor(pos)
        frac = pos - lo
        if count >= 32:
            a = _window_rank(x, size, lo)[idx]
            b = _window_rank(x, size, lo + 1)[idx] if frac else a
        else:
            a = np.empty(idx.size)
            b = np.empty(idx.size)
            for k, i in enumerate(idx.tolist()):
                w = np.partition(x[i - size + 1:i + 1], (lo, min(lo + 1, size - 1)))
                a[k], b[k] = w[lo], w[min(lo + 1, size - 1)]
        out[idx] = a if not frac else a + (b - a) * frac
    return out


def baseline_normalize(series, timestamps_ms, window_ms: int, quantile: float) -> np.ndarray:
    """Subtract the trailing-window quantile and clamp at zero."""
    if not 0.0 <= quantile <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    x = np.asarray(series, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    base = rolling_quantile(x, timestamps_ms, window_ms, quantile)
    return np.maximum(x - base, 0.0)


def soft_threshold(x, k: float = DEFAULT_K, t: float = DEFAULT_T):
    """``100 / (1 + exp(-k (x - t)))``; scalar in, scalar out."""
    if not k > 0:
        raise ValueError("k must be positive")
    z = np.asarray(x, dtype=float)
    if math.isinf(k):
        out = np.where(z > t, 100.0, np.where(z < t, 0.0, 50.0))
    else:
        out = 100.0 * expit(k * (z - t))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- full chain

def postprocess_matrix(raw: np.ndarray, timestamps_ms, config: PostprocessConfig,
                       with_sigmoid: bool = True) -> np.ndarray:
    """Run smooth -> baseline -> sigmoid over an (N, 20) matrix of raw scores."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != N_AU:
        raise ValueError(f"expected an (N, {N_AU}) matrix")
    if raw.shape[0] == 0:
        return raw.copy()
    smoothed = moving_mean(raw, config.smooth_window_frames, causal=config.causal)
    based = np.empty_like(smoothed)
    for j in range(N_AU):
        based[:, j] = baseline_normalize(smoothed[:, j], timestamps_ms, config.baseline_window_ms,
                                         config.baseline_quantile)
    if not with_sigmoid:
        return based
    ks, ts = config.sigmoid_arrays()
    return 100.0 * expit(ks * (based - ts))


def postprocess_stream(frames: Sequence[tuple[int, Mapping[str, float]]],
                       config: Optional[PostprocessConfig] = None) -> list:
    """Process ``(timestamp_ms, AuScores)`` pairs; returns processed :class:`AuScores` in order."""
    from .stream import AuScores

    config = config or PostprocessConfig()
    if not frames:
        return []
    ts = np.array([f[0] for f in frames])
    raw = np.array([[f[1][n] for n in AU_NAMES] for f in frames], dtype=float)
    out = postprocess_matrix(raw, ts, config)
    return [AuScores._trusted(tuple(row)) for row in np.clip(out, 0.0, 100.0).tolist()]


class OnlinePostprocessor:
    """Frame-at-a-time causal postprocessing for live streams.

    Agrees with :func:`postprocess_matrix` under ``causal=True`` up to
    floating-point summation order.
    """

    def __init__(self, config: PostprocessConfig):
        self.config = replace(config, causal=True)
        self._smooth: deque = deque(maxlen=config.smooth_window_frames)
        self._hist: deque = deque()
        self._sorted: list[list[float]] = [[] for _ in range(N_AU)]
        self._ks, self._ts = self.config.sigmoid_arrays()

    def push(self, timestamp_ms: int, raw) -> np.ndarray:
        row = np.asarray(raw, dtype=float)
        self._smooth.append(row)
        sm = np.sum(np.array(self._smooth), axis=0) / len(self._smooth)
        cutoff = timestamp_ms - self.config.baseline_window_ms
        self._hist.append((timestamp_ms, sm.tolist()))
        for j in range(N_AU):
            bisect.insort(self._sorted[j], self._hist[-1][1][j])
        while self._hist[0][0] <= cutoff:
            _, old = self._hist.popleft()
            for j in range(N_AU):
                lst = self._sorted[j]
                del lst[bisect.bisect_left(lst, old[j])]
        q = self.config.baseline_quantile
        base = np.array([_sorted_quantile(self._sorted[j], q) for j in range(N_AU)])
        return 100.0 * expit(self._ks * (np.maximum(sm - base, 0.0) - self._ts))


# --------------------------------------------------------------------------- grid search

@dataclass
class ValidationSession:
    timestamps_ms: np.ndarray
    scores: np.ndarray  # (N, 20) raw classifier scores
    labels: np.ndarray  # (N, 20) binary, or -1 where unlabelled


@dataclass
class GridSearchResult:
    config: PostprocessConfig
    score: float
    table: list[dict]
    excluded_aus: list[str]


DEFAULT_GRID = {
    "smooth_window_frames": [1, 3, 5, 7, 9],
    "baseline_window_ms": [10_000, 30_000, 60_000],
    "baseline_quantile": [0.0, 0.05, 0.1, 0.2],
    "k": [DEFAULT_K],
    "t": [DEFAULT_T],
}
GRID_KEYS = ("smooth_window_frames", "baseline_window_ms", "baseline_quantile", "k", "t")


def _pooled_au_auc(sessions: Sequence[ValidationSession], cfg: PostprocessConfig,
                   aus: Sequence[int]) -> dict[int, float]:
    from .evaluation import roc_auc

    processed = [postprocess_matrix(s.scores, s.timestamps_ms, cfg) for s in sessions]
    out = {}
    for j in aus:
        sc = np.concatenate([p[:, j] for p in processed])
        lab = np.concatenate([s.labels[:, j] for s in sessions])
        keep = lab >= 0
        out[j] = roc_auc(sc[keep], lab[keep])
    return out


def grid_search(validation: Sequence[ValidationSession], grid: Optional[Mapping[str, Sequence]] = None,
                base: Optional[PostprocessConfig] = None, workers: int = 1) -> GridSearchResult:
    """Exhaustive search maximising mean per-AU ROC-AUC over pooled validation frames.

    Ties keep the lexicographically smallest parameter tuple. AUs whose
    labels are single-class are excluded from the mean and reported.
    """
    grid = dict(DEFAULT_GRID if grid is None else grid)
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid parameters: {sorted(unknown)}")
    base = base or PostprocessConfig()
    axes = [sorted(grid.get(k, [getattr(base, k)])) for k in GRID_KEYS]

    labels = np.concatenate([s.labels for s in validation])
    aus, excluded = [], []
    for j, name in enumerate(AU_NAMES):
        col = labels[:, j]
        col = col[col >= 0]
        if (col == 1).any() and (col == 0).any():
            aus.append(j)
        else:
            excluded.append(name)
    if not aus:
        raise ValueError("no AU has both positive and negative labels")

    points = list(itertools.product(*axes))
    cfgs = [replace(base, **dict(zip(GRID_KEYS, p))) for p in points]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_pooled_au_auc, [validation] * len(cfgs), cfgs, [aus] * len(cfgs)))
    else:
        results = [_pooled_au_auc(validation, c, aus) for c in cfgs]

    table = []
    best_i, best_score = 0, -math.inf
    for i, (p, res) in enumerate(zip(points, results)):
        mean = float(np.mean(list(res.values())))
        row = dict(zip(GRID_KEYS, p))
        row["mean_auc"] = mean
        row.update({AU_NAMES[j]: v for j, v in res.items()})
        table.append(row)
        if mean > best_score:
            best_i, best_score = i, mean
    return GridSearchResult(cfgs[best_i], best_score, table, excluded)


def write_score_table(result: GridSearchResult, sink) -> None:
    rows = result.table
    if not rows:
        return
    cols = list(rows[0].keys())
    writer = csv.DictWriter(sink, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
