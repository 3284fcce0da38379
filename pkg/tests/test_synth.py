import numpy as np
import pytest

from affectstream.composites import CombinationRule, RuleSet
from affectstream.stream import AU_INDEX
from affectstream.synth import (
    ScenarioError,
    ScenarioEvent,
    ScenarioSpec,
    blink_scenario,
    demographics_for,
    generate_ad_corpus,
    generate_stream,
    keyed_rng,
    noisy_au_benchmark,
)

PLANTED = RuleSet("planted", (CombinationRule.of("AU12", "AU15"),))


def au_matrix(obs):
    return np.array([o.raw_au.array() for o in obs])


def test_no_events_no_noise_is_all_zero():
    obs, gt = generate_stream(ScenarioSpec(duration_ms=2000, fps=30))
    assert len(obs) == 60 and gt.events == []
    assert not au_matrix(obs).any()
    assert [o.timestamp_ms for o in obs[:4]] == [0, 33, 66, 100]


def test_pulse_values_and_ground_truth():
    spec = ScenarioSpec(duration_ms=3000, fps=10, events=(ScenarioEvent("au_pulse", 1000, 500, ("AU12",), 70.0),))
    obs, gt = generate_stream(spec)
    col = au_matrix(obs)[:, AU_INDEX["AU12"]]
    ts = np.array([o.timestamp_ms for o in obs])
    assert np.array_equal(col, np.where((ts >= 1000) & (ts < 1500), 70.0, 0.0))
    (e,) = gt.events
    assert (e["kind"], e["onset_ms"], e["end_ms"], e["aus"]) == ("au_pulse", 1000, 1500, ["AU12"])


def test_bias_adds_and_clamps():
    spec = ScenarioSpec(duration_ms=1000, fps=10, events=(
        ScenarioEvent("bias_offset", 0, 1000, ("AU4",), 30.0),
        ScenarioEvent("au_pulse", 0, 500, ("AU4",), 90.0),
    ))
    col = au_matrix(generate_stream(spec)[0])[:, AU_INDEX["AU4"]]
    assert list(col) == [100.0] * 5 + [30.0] * 5


def test_yaw_sweep_drives_landmark_pose():
    from affectstream.tracking import estimate_head_pose

    spec = ScenarioSpec(duration_ms=1000, fps=10, events=(ScenarioEvent("yaw_sweep", 0, 1000, (), 0, -20.0, 20.0),))
    obs, _ = generate_stream(spec)
    yaws = [estimate_head_pose(o.landmarks).yaw for o in obs]
    assert yaws == pytest.approx([-20 + 4 * i for i in range(10)], abs=1e-6)


def test_seven_blinks_seven_intervals():
    spec = blink_scenario(3, 7, [150])
    _, gt = generate_stream(spec)
    assert len(gt.blinks) == 7
    assert all(b - a == 150 for a, b in gt.blinks)
    assert all(a1 <= b0 for (_, a1), (b0, _) in zip(gt.blinks, gt.blinks[1:]))


def test_same_seed_same_stream_different_seed_differs():
    spec = ScenarioSpec(seed=11, duration_ms=2000, noise=5.0, crops=True, crop_size=16,
                        events=(ScenarioEvent("blink", 500, 150),))
    a, ga = generate_stream(spec)
    b, gb = generate_stream(spec)
    assert a == b and ga.to_json() == gb.to_json()
    c, _ = generate_stream(ScenarioSpec(seed=12, duration_ms=2000, noise=5.0))
    assert not np.array_equal(au_matrix(a), au_matrix(c))


def test_keyed_rng_is_order_independent():
    x = keyed_rng(1, 2, 3).random(5)
    keyed_rng(9).random(100)
    assert np.array_equal(keyed_rng(1, 2, 3).random(5), x)
    assert not np.array_equal(keyed_rng(1, 2, 4).random(5), x)


@pytest.mark.parametrize("events", [
    [ScenarioEvent("au_pulse", 0, 1000, ("AU12",)), ScenarioEvent("combo_fire", 500, 1000, ("AU12", "AU15"))],
    [ScenarioEvent("yaw_sweep", 0, 1000, (), 0, 0, 10), ScenarioEvent("yaw_sweep", 999, 10, (), 0, 0, 10)],
    [ScenarioEvent("bias_offset", 0, 1000, ("AU1",)), ScenarioEvent("bias_offset", 10, 10, ("AU1",))],
])
def test_overlapping_events_rejected(events):
    with pytest.raises(ScenarioError):
        ScenarioSpec(duration_ms=5000, events=tuple(events))


def test_adjacent_and_disjoint_events_allowed():
    ScenarioSpec(duration_ms=5000, events=(ScenarioEvent("au_pulse", 0, 1000, ("AU12",)),
                                           ScenarioEvent("au_pulse", 1000, 1000, ("AU12",)),
                                           ScenarioEvent("au_pulse", 500, 1000, ("AU15",))))


@pytest.mark.parametrize("bad", [
    {"kind": "wink", "onset_ms": 0, "duration_ms": 10},
    {"kind": "au_pulse", "onset_ms": 0, "duration_ms": 0, "aus": ["AU1"]},
    {"kind": "au_pulse", "onset_ms": 0, "duration_ms": 10},
    {"kind": "blink", "onset_ms": 0, "duration_ms": 10, "aus": ["AU12"]},
    {"kind": "au_pulse", "onset_ms": 0, "duration_ms": 10, "aus": ["AU1"], "colour": 1},
])
def test_bad_events_rejected(bad):
    with pytest.raises(ScenarioError):
        ScenarioEvent.from_dict(bad)


def test_spec_from_dict_and_bounds():
    spec = ScenarioSpec.from_dict({"seed": 1, "duration_ms": 1000,
                                   "events": [{"kind": "au_pulse", "onset_ms": 0, "duration_ms": 100,
                                               "params": {"aus": ["AU1"], "amplitude": 50}}]})
    assert spec.events[0].amplitude == 50
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict({"seed": 1, "frames": 3})
    with pytest.raises(ScenarioError):
        ScenarioSpec(duration_ms=1000, events=(ScenarioEvent("blink", 950, 100),))


def test_corpus_shape_and_labels():
    c = generate_ad_corpus(15, 15, 10, PLANTED, seed=0, duration_ms=10_000, fps=5, n_moments=1,
                           moment_ms=(2000, 3000), distractors=1)
    assert len(c.ads) == 30 and c.n_sessions == 300
    assert c.labels.sum() == 15
    ids = [s.session_id for s in c.sessions()]
    assert len(set(ids)) == 300
    for ad in c.ads:
        assert bool(ad.moments) == (ad.label == 1)
        for a, b in ad.moments:
            assert a % 1000 == 0 and b % 1000 == 0


def test_planted_aus_co_fire_only_in_positive_ads():
    c = generate_ad_corpus(3, 3, 4, PLANTED, seed=5)
    i12, i15 = AU_INDEX["AU12"], AU_INDEX["AU15"]
    for ad in c.ads:
        for s in ad.sessions:
            m = au_matrix(s.observations)
            both = (m[:, i12] >= 60) & (m[:, i15] >= 60)
            if ad.label == 1 and s.session_id.endswith("s000"):
                assert both.any()
                ts = np.array([o.timestamp_ms for o in s.observations])
                assert all(any(a <= t < b for a, b in ad.moments) for t in ts[both])
            if ad.label == 0:
                assert not both.any()


def test_corpus_deterministic_and_validated():
    a = generate_ad_corpus(1, 1, 2, PLANTED, seed=9, duration_ms=10_000)
    b = generate_ad_corpus(1, 1, 2, PLANTED, seed=9, duration_ms=10_000)
    assert [s.observations for s in a.sessions()] == [s.observations for s in b.sessions()]
    with pytest.raises(ScenarioError):
        generate_ad_corpus(1, 1, 0, PLANTED, seed=0)
    with pytest.raises(ScenarioError):
        generate_ad_corpus(0, 1, 1, PLANTED, seed=0)


def test_demographics_cover_all_values():
    seen = {k: {demographics_for(i)[k] for i in range(70)} for k in ("age_band", "ethnicity", "gender", "glasses")}
    assert [len(seen[k]) for k in ("age_band", "ethnicity", "gender", "glasses")] == [7, 5, 2, 2]


def test_noisy_benchmark_labels_match_pulses():
    (vs,) = noisy_au_benchmark(2, n_sessions=1, duration_ms=20_000, pulses_per_au=2)
    assert vs.scores.shape == (vs.labels.shape[0], 20)
    assert vs.labels.any(axis=0).all()
    assert (vs.scores >= 0).all() and (vs.scores <= 100).all()
