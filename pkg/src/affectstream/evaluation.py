"""KPI harness: ROC-AUC, F1, ad-level ROC-Ad, moment-level ROC-Sent, demographic slices."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .stream import N_AU, FrameObservation, MetricFrame

DEMOGRAPHIC_KEYS = ("age_band", "ethnicity", "gender", "glasses")
AGGREGATORS = ("max", "mean", "active_fraction")


class SingleClassError(ValueError):
    pass


# --------------------------------------------------------------------------- scalar metrics

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC-AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_score(scores, labels, threshold: float) -> float:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    if tp == 0:
        return 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 2 * p * r / (p + r)


# --------------------------------------------------------------------------- corpus

@dataclass
class Session:
    session_id: str
    frames: list[MetricFrame] = field(default_factory=list)
    demographics: dict[str, str] = field(default_factory=dict)
    observations: list[FrameObservation] = field(default_factory=list)
    ground_truth: Optional[object] = None

    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp_ms for f in self.frames], dtype=np.int64)

    def state_scores(self, state: str) -> np.ndarray:
        return np.array([f.composites.get(state, np.nan) for f in self.frames], dtype=float)

    def state_active(self, state: str) -> np.ndarray:
        return np.array([f.composite_active.get(state, False) for f in self.frames], dtype=bool)

    def au_matrix(self) -> np.ndarray:
        """(N, 20) processed AU scores; rows without AUs are NaN."""
        cached = getattr(self, "_au_cache", None)
        if cached is not None and cached[0] == len(self.frames):
            return cached[1]
        out = np.full((len(self.frames), N_AU), np.nan)
        for i, f in enumerate(self.frames):
            if f.processed_au is not None:
                out[i] = f.processed_au.array()
        self._au_cache = (len(self.frames), out)
        return out


@dataclass
class Ad:
    ad_id: str
    label: int
    sessions: list[Session] = field(default_factory=list)
    moments: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class LabeledCorpus:
    ads: list[Ad]

    @property
    def labels(self) -> np.ndarray:
        return np.array([a.label for a in self.ads], dtype=int)

    @property
    def n_sessions(self) -> int:
        return sum(len(a.sessions) for a in self.ads)

    def sessions(self) -> Iterable[Session]:
        for ad in self.ads:
            yield from ad.sessions

    def with_labels(self, labels: Sequence[int]) -> LabeledCorpus:
        return LabeledCorpus([replace(a, label=int(l)) for a, l in zip(self.ads, labels)])

    def filter_sessions(self, keep: Callable[[Session], bool]) -> LabeledCorpus:
        ads = []
        for a in self.ads:
            kept = [s for s in a.sessions if keep(s)]
            if kept:
                ads.append(replace(a, sessions=kept))
        return LabeledCorpus(ads)


ScoreFn = Callable[[Session], tuple[np.ndarray, np.ndarray]]


def state_score_fn(state: str) -> ScoreFn:
    def fn(session: Session):
        return session.state_scores(state), session.state_active(state)
    return fn


def aggregate_session(scores: np.ndarray, active: np.ndarray, how: str) -> float:
    ok = ~np.isnan(scores)
    if not ok.any():
        return math.nan
    if how == "max":
        return float(np.max(scores[ok]))
    if how == "mean":
        return float(np.mean(scores[ok]))
    if how == "active_fraction":
        return float(np.mean(active[ok])) * 100.0
    raise ValueError(f"unknown session aggregator {how!r}")


def ad_values(corpus: LabeledCorpus, score_fn: ScoreFn, session_aggregator: str = "max") -> np.ndarray:
    """Mean over sessions of each session's aggregated score; NaN when an ad has no usable frames."""
    out = np.full(len(corpus.ads), np.nan)
    for i, ad in enumerate(corpus.ads):
        vals = [aggregate_session(*score_fn(s), session_aggregator) for s in ad.sessions]
        vals = [v for v in vals if not math.isnan(v)]
        if vals:
            out[i] = float(np.mean(vals))
    return out


def roc_ad(corpus: LabeledCorpus, state_name: Optional[str] = None, session_aggregator: str = "max",
           score_fn: Optional[ScoreFn] = None) -> float:
    """Separability (x100) of per-ad aggregated state scores against ad labels."""
    if session_aggregator not in AGGREGATORS:
        raise ValueError(f"unknown session aggregator {session_aggregator!r}")
    fn = score_fn or state_score_fn(state_name)
    vals = ad_values(corpus, fn, session_aggregator)
    keep = ~np.isnan(vals)
    return 100.0 * roc_auc(vals[keep], corpus.labels[keep])


def moment_bins(ad: Ad, score_fn: ScoreFn, bin_ms: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Cross-session mean score and moment label for every populated time bin of one ad."""
    per_session = []
    n_bins = 0
    for s in ad.sessions:
        scores, _ = score_fn(s)
        ts = s.timestamps()
        ok = ~np.isnan(scores)
        if not ok.any():
            continue
        b = ts[ok] // bin_ms
        per_session.append((b, scores[ok]))
        n_bins = max(n_bins, int(b.max()) + 1)
    if not per_session:
        return np.zeros(0), np.zeros(0, dtype=bool)
    total = np.zeros(n_bins)
    count = np.zeros(n_bins)
    for b, sc in per_session:
        sums = np.bincount(b, weights=sc, minlength=n_bins)
        cnt = np.bincount(b, minlength=n_bins)
        has = cnt > 0
        total[has] += sums[has] / cnt[has]
        count[has] += 1
    populated = count > 0
    means = total[populated] / count[populated]
    mids = (np.nonzero(populated)[0] + 0.5) * bin_ms
    labels = np.zeros(mids.shape, dtype=bool)
    for start, end in ad.moments:
        labels |= (mids >= start) & (mids < end)
    return means, labels


def roc_sent(corpus: LabeledCorpus, state_name: Optional[str] = None, bin_ms: int = 1000,
             score_fn: Optional[ScoreFn] = None) -> float:
    """Whether the state fires (x100) inside labelled moments of the positive ads."""
    fn = score_fn or state_score_fn(state_name)
    pos = [a for a in corpus.ads if a.label == 1 and a.moments]
    if not pos:
        raise ValueError("ROC-Sent needs positive ads with moment annotations")
    all_scores, all_labels = [], []
    for ad in pos:
        sc, lab = moment_bins(ad, fn, bin_ms)
        all_scores.append(sc)
        all_labels.append(lab)
    return 100.0 * roc_auc(np.concatenate(all_scores), np.concatenate(all_labels))


# --------------------------------------------------------------------------- slices

@dataclass(frozen=True)
class SliceRow:
    key: str
    value: str
    metric: float
    n_sessions: int
    low_support: bool


def slice_report(corpus: LabeledCorpus, metric: Callable[[LabeledCorpus], float],
                 keys: Sequence[str] = DEMOGRAPHIC_KEYS, min_support: int = 5) -> list[SliceRow]:
    """Evaluate ``metric`` on each demographic slice; sessions missing a key land in ``unknown``.

    A slice on which the metric is undefined (e.g. one label class) gets NaN.
    """
    rows = []
    for key in keys:
        values = sorted({s.demographics.get(key, "unknown") for s in corpus.sessions()})
        for val in values:
            sub = corpus.filter_sessions(lambda s, k=key, v=val: s.demographics.get(k, "unknown") == v)
            try:
                m = float(metric(sub))
            except ValueError:
                m = math.nan
            n = sub.n_sessions
            rows.append(SliceRow(key, val, m, n, n < min_support))
    return rows


# --------------------------------------------------------------------------- reports

@dataclass
class KpiReport:
    state: str
    roc_ad: Optional[float] = None
    roc_sent: Optional[float] = None
    auc: Optional[float] = None
    f1: Optional[float] = None
    slices: list[SliceRow] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "state": self.state,
            "roc_ad": self.roc_ad,
            "roc_sent": self.roc_sent,
            "auc": self.auc,
            "f1": self.f1,
            "slices": [
                {"key": r.key, "value": r.value, "metric": None if math.isnan(r.metric) else r.metric,
                 "n_sessions": r.n_sessions, "low_support": r.low_support}
                for r in self.slices
            ],
            "diagnostics": list(self.diagnostics),
        }

    def kpi_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "kpi", "value"])
        for name in ("roc_ad", "roc_sent", "auc", "f1"):
            v = getattr(self, name)
            if v is not None:
                w.writerow([self.state, name, repr(v)])
        return buf.getvalue()

    def slices_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value", "metric", "n_sessions", "low_support"])
        for r in self.slices:
            w.writerow([r.key, r.value, "" if math.isnan(r.metric) else repr(r.metric), r.n_sessions,
                        int(r.low_support)])
        return buf.getvalue()

    def text(self) -> str:
        def cell(v):
            return "-" if v is None else f"{v:.1f}"

        lines = [f"KPIs for {self.state}", "", f"{'':12}| ROC-Ad | ROC-Sent", "-" * 32,
                 f"{'Random':12}| {50.0:6.1f} | {50.0:8.1f}",
                 f"{'Model':12}| {cell(self.roc_ad):>6} | {cell(self.roc_sent):>8}"]
        if self.auc is not None or self.f1 is not None:
            lines += ["", f"AUC {cell(None if self.auc is None else self.auc * 100)}  "
                          f"F1 {cell(None if self.f1 is None else self.f1 * 100)}"]
        if self.slices:
            lines += ["", "Per-slice ROC-Ad", f"{'group':28}| {'value':>6} | sessions"]
            for r in self.slices:
                v = "n/a" if math.isnan(r.metric) else f"{r.metric:.1f}"
                flag = " (low support)" if r.low_support else ""
                lines.append(f"{r.key + '=' + r.value:28}| {v:>6} | {r.n_sessions}{flag}")
        for d in self.diagnostics:
            lines.append(f"note: {d}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- manifest

@dataclass
class ManifestSession:
    session_id: str
    path: Path
    demographics: dict[str, str]


@dataclass
class ManifestAd:
    ad_id: str
    label: int
    moments: list[tuple[int, int]]
    sessions: list[ManifestSession]


def load_manifest(path) -> list[ManifestAd]:
    """Read a corpus manifest. Session paths are resolved relative to the manifest."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    ads = []
    for a in doc["ads"]:
        label = int(a["label"])
        if label not in (0, 1):
            raise ValueError(f"ad {a['ad_id']!r}: label must be 0 or 1")
        moments = [(int(s), int(e)) for s, e in a.get("moments", [])]
        for s, e in moments:
            if not 0 <= s < e:
                raise ValueError(f"ad {a['ad_id']!r}: bad moment interval [{s}, {e})")
        sessions = [
            ManifestSession(str(s["session_id"]), (path.parent / s["path"]),
                            {k: str(v) for k, v in s.get("demographics", {}).items()})
            for s in a.get("sessions", [])
        ]
        ads.append(ManifestAd(str(a["ad_id"]), label, moments, sessions))
    return ads


def write_manifest(ads: Sequence[ManifestAd], path) -> None:
    path = Path(path)
    doc = {"ads": [
        {"ad_id": a.ad_id, "label": a.label, "moments": [list(m) for m in a.moments],
         "sessions": [{"session_id": s.session_id,
                       "path": Path(s.path).relative_to(path.parent).as_posix()
                       if Path(s.path).is_absolute() else Path(s.path).as_posix(),
                       "demographics": s.demographics} for s in a.sessions]}
        for a in ads
    ]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
