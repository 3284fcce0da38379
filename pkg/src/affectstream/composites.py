"""Composite affective states as OR-of-AND rules over AU scores.

Fuzzy AND is ``min`` over the conjunct AUs, fuzzy OR is ``max`` over rules.
The binary ``active`` flag follows the crisp reading: every conjunct at or
above its threshold, no suppressor above its ceiling, any rule active.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .emotions import ConfigError
from .stream import AU_INDEX, AU_NAMES, canonical_au

DEFAULT_CONJUNCT_THRESHOLD = 20.0


def _au(name: str, rule: Optional[str]) -> str:
    try:
        return canonical_au(name)
    except KeyError:
        raise ConfigError(f"rule {rule or '?'!r} references unknown AU {name!r}") from None


@dataclass(frozen=True)
class CombinationRule:
    name: str
    conjuncts: tuple[tuple[str, float], ...]
    suppressors: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not self.conjuncts:
            raise ConfigError(f"rule {self.name!r} has no conjuncts")
        fixed = []
        for group in (self.conjuncts, self.suppressors):
            out = []
            for au, thr in group:
                try:
                    name = canonical_au(au)
                except KeyError:
                    raise ConfigError(f"rule {self.name!r} references unknown AU {au!r}") from None
                thr = float(thr)
                if not 0.0 <= thr <= 100.0:
                    raise ConfigError(f"rule {self.name!r}: threshold {thr} for {name} outside [0, 100]")
                out.append((name, thr))
            fixed.append(tuple(out))
        object.__setattr__(self, "conjuncts", fixed[0])
        object.__setattr__(self, "suppressors", fixed[1])

    @classmethod
    def of(cls, *aus: str, threshold: float = DEFAULT_CONJUNCT_THRESHOLD,
           suppressors: Mapping[str, float] = None, name: Optional[str] = None) -> CombinationRule:
        canon = [_au(a, name) for a in aus]
        return cls(name or "&".join(canon), tuple((a, threshold) for a in canon),
                   tuple((suppressors or {}).items()))

    def to_dict(self) -> dict:
        d = {"name": self.name, "conjuncts": {a: t for a, t in self.conjuncts}}
        if self.suppressors:
            d["suppressors"] = {a: t for a, t in self.suppressors}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> CombinationRule:
        extra = set(d) - {"name", "conjuncts", "suppressors"}
        if extra:
            raise ConfigError(f"unknown rule keys: {sorted(extra)}")
        conj = d["conjuncts"]
        if isinstance(conj, Mapping):
            conj = list(conj.items())
        elif conj and isinstance(conj[0], str):
            conj = [(a, DEFAULT_CONJUNCT_THRESHOLD) for a in conj]
        sup = d.get("suppressors", {})
        if isinstance(sup, Mapping):
            sup = list(sup.items())
        name = d.get("name") or "&".join(_au(a, None) for a, _ in conj)
        return cls(name, tuple((a, t) for a, t in conj), tuple((a, t) for a, t in sup))


@dataclass(frozen=True)
class RuleSet:
    state: str
    rules: tuple[CombinationRule, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise ConfigError(f"rule set {self.state!r} is empty")

    def to_list(self) -> list[dict]:
        return [r.to_dict() for r in self.rules]


def eval_combination(au: Mapping[str, float], rule: CombinationRule) -> tuple[float, bool]:
    for s_au, ceiling in rule.suppressors:
        if au[s_au] > ceiling:
            return 0.0, False
    vals = [au[a] for a, _ in rule.conjuncts]
    active = all(v >= thr for v, (_, thr) in zip(vals, rule.conjuncts))
    return float(min(vals)), active


def composite_score(au: Mapping[str, float], rules: RuleSet) -> tuple[float, bool]:
    best, any_active = 0.0, False
    for rule in rules.rules:
        s, a = eval_combination(au, rule)
        best = max(best, s)
        any_active = any_active or a
    return best, any_active


class CompiledRuleSet:
    """Column-index form of a :class:`RuleSet` for scoring (N, 20) matrices."""

    def __init__(self, rules: RuleSet):
        self.state = rules.state
        self._rules = []
        for r in rules.rules:
            ci = np.array([AU_INDEX[a] for a, _ in r.conjuncts])
            ct = np.array([t for _, t in r.conjuncts])
            si = np.array([AU_INDEX[a] for a, _ in r.suppressors], dtype=int)
            st = np.array([t for _, t in r.suppressors])
            self._rules.append((ci, ct, si, st))

    def score(self, au: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        au = np.asarray(au, dtype=float)
        n = au.shape[0]
        best = np.zeros(n)
        active = np.zeros(n, dtype=bool)
        for ci, ct, si, st in self._rules:
            cols = au[:, ci]
            s = cols.min(axis=1)
            a = (cols >= ct).all(axis=1)
            if si.size:
                gate = (au[:, si] > st).any(axis=1)
                s = np.where(gate, 0.0, s)
                a &= ~gate
            best = np.maximum(best, s)
            active |= a
        return best, active


# --------------------------------------------------------------------------- defaults

def _rules(state: str, pairs: Sequence[tuple[str, str]]) -> RuleSet:
    return RuleSet(state, tuple(CombinationRule.of(a, b) for a, b in pairs))


# Illustrative: positive (joy) AUs paired with negative (sad) ones.
DEFAULT_SENTIMENTALITY = _rules("sentimentality", [
    ("AU6", "AU1"), ("AU6", "AU15"), ("AU6", "AU17"), ("AU6", "AU4"),
    ("AU12", "AU1"), ("AU12", "AU15"), ("AU12", "AU17"), ("AU12", "AU4"),
    ("AU12", "AU24"), ("AU6", "AU24"), ("AU14", "AU1"), ("AU14", "AU15"),
])

# Illustrative: two of the six involve brow furrow.
DEFAULT_CONFUSION = _rules("confusion", [
    ("AU4", "AU7"), ("AU4", "AU14"), ("AU7", "AU14"),
    ("AU14", "AU24"), ("AU18", "AU7"), ("AU28", "AU14"),
])

DEFAULT_RULE_SETS = (DEFAULT_SENTIMENTALITY, DEFAULT_CONFUSION)


# --------------------------------------------------------------------------- mining

@dataclass(frozen=True)
class MinedCombination:
    name: str
    aus: tuple[str, ...]
    kpi: float
    support_pos: int
    support_neg: int


def candidate_combinations(max_size: int = 2, aus: Sequence[str] = AU_NAMES) -> list[tuple[str, ...]]:
    out = []
    for size in range(1, max_size + 1):
        out.extend(itertools.combinations(aus, size))
    return out


def mine_significant_combinations(corpus, candidates: Optional[Sequence[Sequence[str]]] = None,
                                  kpi: str = "roc_ad", session_aggregator: str = "active_fraction",
                                  threshold: float = DEFAULT_CONJUNCT_THRESHOLD) -> list[MinedCombination]:
    """Rank AU combinations by how well their fuzzy-AND activation separates the corpus.

    ``kpi`` is ``roc_ad`` or ``roc_sent`` (both on the 0-100 scale). The
    default aggregator compares activation frequency; with it, ROC-Sent bins
    also average crisp activation (x100) rather than the fuzzy score. Support
    counts the sessions, per ad class, in which the combination was ever
    crisply active.
    """
    from .evaluation import SingleClassError, moment_bins, roc_auc

    labels = corpus.labels
    if not ((labels == 1).any() and (labels == 0).any()):
        raise SingleClassError("mining needs both ad classes")
    if kpi not in ("roc_ad", "roc_sent"):
        raise ValueError(f"unknown kpi {kpi!r}")
    if candidates is None:
        candidates = candidate_combinations(2)
    combos = [tuple(canonical_au(a) for a in c) for c in candidates]
    if not combos:
        return []

    if session_aggregator not in ("max", "mean", "active_fraction"):
        raise ValueError(f"unknown session aggregator {session_aggregator!r}")

    idx = [np.array([AU_INDEX[a] for a in c]) for c in combos]
    n_c = len(combos)
    # per-session (N, C) fuzzy scores and crisp activation, computed once
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for s in corpus.sessions():
        m = s.au_matrix()
        score = np.stack([m[:, ix].min(axis=1) for ix in idx], axis=1) if len(m) else np.zeros((0, n_c))
        act = score >= threshold
        if session_aggregator == "active_fraction":
            score = np.where(np.isnan(score), np.nan, act * 100.0)
        cache[id(s)] = (score, act)

    sup = {0: np.zeros(n_c, dtype=int), 1: np.zeros(n_c, dtype=int)}
    for ad in corpus.ads:
        for s in ad.sessions:
            sup[ad.label] += cache[id(s)][1].any(axis=0)

    if kpi == "roc_ad":
        # (ads, C) matrix of per-ad aggregated values, NaN where an ad has no usable frames
        ad_vals = np.full((len(corpus.ads), n_c), np.nan)
        for i, ad in enumerate(corpus.ads):
            rows = [_aggregate_columns(*cache[id(s)], session_aggregator) for s in ad.sessions]
            if rows:
                r = np.array(rows)
                cnt = (~np.isnan(r)).sum(axis=0)
                with np.errstate(invalid="ignore"):
                    ad_vals[i] = np.where(cnt > 0, np.nansum(r, axis=0) / np.maximum(cnt, 1), np.nan)
        values = []
        for c in range(n_c):
            keep = ~np.isnan(ad_vals[:, c])
            values.append(100.0 * roc_auc(ad_vals[keep, c], labels[keep]))
    else:
        pos = [ad for ad in corpus.ads if ad.label == 1 and ad.moments]
        if not pos:
            raise ValueError("ROC-Sent mining needs positive ads with moments")
        values = []
        for c in range(n_c):
            def fn(session, c=c):
                score, act = cache[id(session)]
                return score[:, c], act[:, c]

            sc, lab = zip(*(moment_bins(ad, fn) for ad in pos))
            values.append(100.0 * roc_auc(np.concatenate(sc), np.concatenate(lab)))

    results = [MinedCombination("&".join(combo), combo, float(v), int(sup[1][c]), int(sup[0][c]))
               for c, (combo, v) in enumerate(zip(combos, values))]
    results.sort(key=lambda r: (-r.kpi, r.name))
    return results


def _aggregate_columns(score: np.ndarray, active: np.ndarray, how: str) -> np.ndarray:
    """Column-wise :func:`~affectstream.evaluation.aggregate_session` over an (N, C) session."""
    ok = ~np.isnan(score)
    n_ok = ok.sum(axis=0)
    if how == "max":
        out = np.where(ok, score, -np.inf).max(axis=0) if len(score) else np.full(score.shape[1], -np.inf)
    elif how == "mean":
        out = np.where(ok, score, 0.0).sum(axis=0) / np.maximum(n_ok, 1)
    else:
        out = (active & ok).sum(axis=0) / np.maximum(n_ok, 1) * 100.0
    return np.where(n_ok > 0, out, np.nan)


def mining_csv(results: Sequence[MinedCombination]) -> str:
    lines = ["combination,kpi,support_pos,support_neg"]
    lines += [f"{r.name},{r.kpi!r},{r.support_pos},{r.support_neg}" for r in results]
    return "\n".join(lines) + "\n"
