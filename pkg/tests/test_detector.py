import json

import pytest
from hypothesis import assume, given, strategies as st

from r5guard.detector import (FLOOR_PCT, MARGIN, HpcSignature, InsufficientRuns, MissingEvent,
                              evaluate_event_utility, match, train)
from r5guard.hpc import EVENT_NAMES

# Deviation rows (%) for a fixed-flow cipher and an input-sensitive decoder,
# in event order INT JAL CB MIO PFE BDM.
REFERENCE_ROWS = {
    "decoder-inp2": (42.5, 24.4, 31.0, 45.6, 111.8, 31.0),
    "decoder-inp3": (32.2, 35.3, 18.0, 33.7, 120.2, 12.4),
    "decoder-mod1": (12.4, 33.0, 15.6, 3.3, 18.9, 4.0),
    "decoder-mod2": (14.9, 148.3, 2.2, 24.6, 2040.5, 5.9),
    "cipher-inp2": (0.1, 0.0, 0.2, 0.1, 0.2, 0.4),
    "cipher-inp3": (0.2, 0.2, 0.0, 0.1, 0.1, 0.3),
    "cipher-mod1": (1.8, 21.4, 10.8, 0.4, 0.1, 4.3),
    "cipher-mod2": (0.4, 95.2, 3.0, 0.1, 0.7, 4.5),
}
BASE = 1_000_000


def _observe(devs, sign=1):
    return {n: round(BASE * (1 + sign * d / 100)) for n, d in zip(EVENT_NAMES, devs)}


def _flat_signature():
    runs = [{n: BASE for n in EVENT_NAMES}, {n: BASE for n in EVENT_NAMES}]
    return train(runs, 1)


def test_threshold_example():
    sig = train([{"JAL": 1000}, {"JAL": 1002}, {"JAL": 998}], 1)
    env = sig.events["JAL"]
    assert env.mean == 1000
    assert env.max_train_dev_pct == pytest.approx(0.2)
    assert env.threshold_pct == pytest.approx(max(MARGIN * 0.2, FLOOR_PCT)) == pytest.approx(1.0)


def test_identical_runs_threshold_is_floor():
    sig = train([{"JAL": 500}] * 5)
    assert sig.events["JAL"].max_train_dev_pct == 0 and sig.events["JAL"].threshold_pct == FLOOR_PCT


def test_single_run_rejected():
    with pytest.raises(InsufficientRuns):
        train([{"JAL": 1}])


def test_mean_zero_event_is_excluded():
    sig = train([{"JAL": 3, "MIO": 0}, {"JAL": 3, "MIO": 0}])
    assert "MIO" not in sig.events and sig.degenerate == ["MIO"]
    assert not match(sig, {"JAL": 3, "MIO": 50}).overall_alarm


def test_missing_event_in_observation():
    with pytest.raises(MissingEvent):
        match(train([{"JAL": 3}, {"JAL": 4}]), {})


def test_observed_equal_to_mean_is_quiet():
    sig = train([{"JAL": 10, "CB": 20}, {"JAL": 12, "CB": 22}])
    assert not match(sig, {"JAL": 11, "CB": 21}).overall_alarm


def test_call_injection_regime_alarms_on_jal():
    sig = _flat_signature()
    v = match(sig, {**{n: BASE for n in EVENT_NAMES}, "JAL": round(1.95 * BASE)})
    assert v.alarm_events == ["JAL"] and v.max_event() == "JAL"


@pytest.mark.parametrize("row", sorted(REFERENCE_ROWS))
def test_threshold_rule_on_reference_rows(row):
    """The rule flags every modified row and the input-sensitive rows, but not the fixed-flow inputs."""
    # train on the fixed-flow benign spread: its worst deviation is 0.4%
    cipher_sig = train([_observe(REFERENCE_ROWS["cipher-inp2"], s) for s in (1, -1)], 1)
    assert max(e.threshold_pct for e in cipher_sig.events.values()) == pytest.approx(FLOOR_PCT)
    v = match(_flat_signature(), _observe(REFERENCE_ROWS[row]))
    expected = not row.startswith("cipher-inp")
    assert v.overall_alarm is expected


def test_event_utility():
    sig = _flat_signature()
    labeled = [("benign", _observe(REFERENCE_ROWS["cipher-inp2"])),
               ("benign", _observe(REFERENCE_ROWS["cipher-inp3"])),
               ("attack", _observe(REFERENCE_ROWS["cipher-mod2"]))]
    util = evaluate_event_utility(sig, labeled)
    assert util["JAL"].separable and util["CB"].separable
    assert not util["MIO"].separable  # 0.1% attack deviation sits under the floor
    dec = [("benign", _observe(REFERENCE_ROWS["decoder-inp3"])), ("attack", _observe(REFERENCE_ROWS["decoder-mod1"]))]
    assert not evaluate_event_utility(sig, dec)["PFE"].separable
    flat = evaluate_event_utility(sig, [("benign", {n: BASE for n in EVENT_NAMES}),
                                        ("attack", {n: BASE for n in EVENT_NAMES})])
    assert not any(u.separable for u in flat.values())


def test_signature_json_round_trip():
    sig = train([{"JAL": 1000, "CB": 7}, {"JAL": 1002, "CB": 9}, {"JAL": 998, "CB": 8}], 4)
    back = HpcSignature.from_json(json.loads(sig.dumps()))
    assert back == sig
    assert set(json.loads(sig.dumps())) >= {"zone_id", "runs", "events"}


COUNTS = st.integers(1, 10**6)
RUNS = st.lists(st.fixed_dictionaries({"JAL": COUNTS, "CB": COUNTS}), min_size=2, max_size=12)


@given(RUNS)
def test_training_runs_never_alarm_against_own_signature(runs):
    sig = train(runs)
    assert not any(match(sig, r).overall_alarm for r in runs)


@given(RUNS, st.integers(0, 10**6), st.integers(1, 10**6))
def test_larger_deviation_never_clears_an_alarm(runs, obs, extra):
    sig = train(runs)
    mean = sig.events["JAL"].mean
    further = obs + extra if obs >= mean else max(0, obs - extra)
    assume(abs(further - mean) >= abs(obs - mean))
    a = match(sig, {"JAL": obs, "CB": 1}).events["JAL"].alarm
    b = match(sig, {"JAL": further, "CB": 1}).events["JAL"].alarm
    assert b or not a


@given(RUNS, st.fixed_dictionaries({"JAL": COUNTS, "CB": COUNTS}), st.integers(2, 50))
def test_verdicts_scale_invariant(runs, obs, k):
    v1 = match(train(runs), obs)
    v2 = match(train([{n: k * c for n, c in r.items()} for r in runs]), {n: k * c for n, c in obs.items()})
    assert v1.alarm_events == v2.alarm_events
