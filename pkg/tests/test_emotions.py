import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectstream.emotions import (
    DEFAULT_EMOTION_TABLE,
    DEFAULT_EMOTION_WEIGHTS,
    ConfigError,
    EmotionWeightTable,
    emotion_matrix,
    emotion_scores,
    neutral_score,
)
from affectstream.stream import AU_NAMES, EMOTION_NAMES, AuScores

ZERO = AuScores.zeros()


def prototype(emotion):
    pos = {au: 100.0 for au, w in DEFAULT_EMOTION_WEIGHTS[emotion].items() if w > 0}
    return ZERO.replace(**pos)


def test_all_zero_gives_zero_emotions_and_neutral():
    e = emotion_scores(ZERO)
    assert all(v == 0.0 for v in e.basic().values())
    assert e.neutral == 100.0 and e.neutral_active


def test_anger_prototype_and_suppression():
    a = ZERO.replace(AU4=100, AU15=100, AU24=100)
    assert emotion_scores(a).anger == 100.0
    suppressed = emotion_scores(a.replace(AU1=100)).anger
    assert suppressed == pytest.approx(200 / 3)
    assert suppressed < 100.0


@pytest.mark.parametrize("emotion", EMOTION_NAMES)
def test_each_prototype_scores_exactly_100(emotion):
    assert getattr(emotion_scores(prototype(emotion)), emotion) == 100.0


def test_default_rows_follow_emfacs_prototypes():
    w = DEFAULT_EMOTION_WEIGHTS
    assert {a for a, v in w["anger"].items() if v > 0} == {"AU4", "AU15", "AU24"}
    assert {a for a, v in w["anger"].items() if v < 0} >= {"AU1", "AU2"}
    assert w["contempt"] == {"Smirk": 1}


def test_neutral_examples():
    emo = dict.fromkeys(EMOTION_NAMES, 0.0)
    assert neutral_score(emo) == (100.0, True)
    assert neutral_score({**emo, "joy": 100.0}) == (0.0, False)
    score, active = neutral_score({**emo, "fear": 19.9}, 20.0)
    assert active and score == pytest.approx(80.1)
    with pytest.raises(ValueError):
        neutral_score(emo, 0.0)


@pytest.mark.parametrize("table, match", [
    ({**DEFAULT_EMOTION_WEIGHTS, "joy": {"AU99": 1}}, "unknown AU"),
    ({**DEFAULT_EMOTION_WEIGHTS, "joy": {"AU12": -1}}, "positive weight"),
    ({k: v for k, v in DEFAULT_EMOTION_WEIGHTS.items() if k != "fear"}, "missing a row"),
    ({**DEFAULT_EMOTION_WEIGHTS, "awe": {"AU1": 1}}, "unknown emotions"),
    ({**DEFAULT_EMOTION_WEIGHTS, "joy": {"AU12": float("nan")}}, "non-finite"),
])
def test_table_validation_at_load(table, match):
    with pytest.raises(ConfigError, match=match):
        EmotionWeightTable(table)


au_vec = st.lists(st.floats(0, 100), min_size=20, max_size=20)


@settings(max_examples=150, deadline=None)
@given(au_vec, st.sampled_from(AU_NAMES), st.floats(0, 100))
def test_monotone_in_weights(vals, au, bump):
    base = AuScores(vals)
    up = base.replace(**{au: min(100.0, base[au] + bump)})
    e0, e1 = emotion_scores(base), emotion_scores(up)
    for emo in EMOTION_NAMES:
        w = DEFAULT_EMOTION_WEIGHTS[emo].get(au, 0)
        if w > 0:
            assert getattr(e1, emo) >= getattr(e0, emo) - 1e-9
        elif w < 0:
            assert getattr(e1, emo) <= getattr(e0, emo) + 1e-9


@settings(max_examples=150, deadline=None)
@given(au_vec, st.floats(1, 99))
def test_neutral_xor_some_emotion(vals, theta):
    e = emotion_scores(AuScores(vals), theta_e=theta)
    top = max(e.basic().values())
    assert e.neutral_active != (top >= theta)
    assert 0 <= e.neutral <= 100 and all(0 <= v <= 100 for v in e.basic().values())


def test_matrix_form_matches_scalar(rng):
    m = rng.uniform(0, 100, (50, 20))
    batch = emotion_matrix(m)
    for i in range(0, 50, 7):
        e = emotion_scores(AuScores(m[i])).basic()
        assert np.allclose(batch[i], [e[n] for n in EMOTION_NAMES])
    assert DEFAULT_EMOTION_TABLE.to_dict()["joy"] == {"AU6": 1.0, "AU12": 1.0, "AU15": -1.0}
