"""Basic emotions as normalised weighted sums of AU scores."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .stream import AU_INDEX, AU_NAMES, EMOTION_NAMES, N_AU, EmotionScores, canonical_au


class ConfigError(ValueError):
    pass


# Illustrative defaults built from EMFACS prototypes. Only the anger row
# (AU4, AU15, AU24 against AU1, AU2, AU12) has a published qualitative basis.
DEFAULT_EMOTION_WEIGHTS: dict[str, dict[str, float]] = {
    "anger": {"AU4": 1, "AU15": 1, "AU24": 1, "AU1": -1, "AU2": -1, "AU12": -1},
    "disgust": {"AU9": 1, "AU10": 1, "AU12": -1},
    "fear": {"AU1": 1, "AU2": 1, "AU4": 1, "AU5": 1, "AU20": 1},
    "joy": {"AU6": 1, "AU12": 1, "AU15": -1},
    "sadness": {"AU1": 1, "AU15": 1, "AU12": -1},
    "surprise": {"AU1": 1, "AU2": 1, "AU5": 1, "AU26": 1, "AU4": -1},
    "contempt": {"Smirk": 1},
}
DEFAULT_NEUTRAL_THRESHOLD = 20.0


@dataclass(frozen=True)
class EmotionWeightTable:
    weights: Mapping[str, Mapping[str, float]]

    def __post_init__(self):
        rows = {}
        for emo in EMOTION_NAMES:
            if emo not in self.weights:
                raise ConfigError(f"emotion table is missing a row for {emo!r}")
        extra = set(self.weights) - set(EMOTION_NAMES)
        if extra:
            raise ConfigError(f"emotion table has unknown emotions: {sorted(extra)}")
        for emo in EMOTION_NAMES:
            row = {}
            for au, w in self.weights[emo].items():
                try:
                    name = canonical_au(au)
                except KeyError:
                    raise ConfigError(f"emotion {emo!r} references unknown AU {au!r}") from None
                w = float(w)
                if not np.isfinite(w):
                    raise ConfigError(f"emotion {emo!r} has a non-finite weight for {name}")
                row[name] = w
            if sum(w for w in row.values() if w > 0) <= 0:
                raise ConfigError(f"emotion {emo!r} needs at least one positive weight")
            rows[emo] = row
        object.__setattr__(self, "weights", rows)
        mat = np.zeros((N_AU, len(EMOTION_NAMES)))
        denom = np.zeros(len(EMOTION_NAMES))
        for k, emo in enumerate(EMOTION_NAMES):
            row = rows[emo]
            denom[k] = sum(w for w in row.values() if w > 0)
            for au, w in row.items():
                mat[AU_INDEX[au], k] = w
        object.__setattr__(self, "_matrix", mat)
        object.__setattr__(self, "_denom", denom)

    @property
    def matrix(self) -> np.ndarray:
        """(20, 7) signed weights as configured."""
        return self._matrix

    @property
    def denominators(self) -> np.ndarray:
        """Per-emotion positive-weight sums."""
        return self._denom

    def to_dict(self) -> dict:
        return {emo: dict(row) for emo, row in self.weights.items()}


DEFAULT_EMOTION_TABLE = EmotionWeightTable(DEFAULT_EMOTION_WEIGHTS)


def emotion_matrix(au: np.ndarray, table: EmotionWeightTable = DEFAULT_EMOTION_TABLE) -> np.ndarray:
    """(N, 20) AU scores -> (N, 7) emotion scores clamped to [0, 100]."""
    # divide after the dot product: a prototype at 100 then sums to exactly 100 * denom
    return np.clip((np.asarray(au, dtype=float) @ table.matrix) / table.denominators, 0.0, 100.0)


def neutral_score(emotions: Mapping[str, float], theta_e: float = DEFAULT_NEUTRAL_THRESHOLD) -> tuple[float, bool]:
    if not 0.0 < theta_e < 100.0:
        raise ValueError("theta_e must lie in (0, 100)")
    top = max(emotions[e] for e in EMOTION_NAMES)
    return 100.0 - top, top < theta_e


def emotion_scores(au: Mapping[str, float], table: EmotionWeightTable = DEFAULT_EMOTION_TABLE,
                   theta_e: float = DEFAULT_NEUTRAL_THRESHOLD) -> EmotionScores:
    vec = np.array([au[n] for n in AU_NAMES], dtype=float)
    basic = dict(zip(EMOTION_NAMES, emotion_matrix(vec[None], table)[0].tolist()))
    neutral, active = neutral_score(basic, theta_e)
    return EmotionScores(**basic, neutral=neutral, neutral_active=active)
