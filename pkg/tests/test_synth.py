import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcast.clustering import cluster_table, summarize_owners
from evcast.errors import DataError
from evcast.series import build_daily_series
from evcast.synth import (DEFAULT_CLUSTERS, SynthConfig, _truncated_mean, arrival_days, calibrate_location,
                          generate_trial, peak_share, true_assignments)


@pytest.fixture(scope="module")
def trial():
    return generate_trial(SynthConfig(seed=11))


def test_zero_owners_is_empty():
    assert generate_trial(SynthConfig(owners_final={1: 0, 2: 0, 3: 0})) == []


def test_calibrated_location_hits_target():
    for s in DEFAULT_CLUSTERS.values():
        loc = calibrate_location(s, 0.3)
        sd = 0.3 * s.mean_kwh_per_charge
        got = sum(w * _truncated_mean(loc, sd, c) for c, w in zip(s.capacities, s.weights))
        assert got == pytest.approx(s.mean_kwh_per_charge, abs=1e-9)


def test_realized_cluster_stats(trial):
    table = {r["cluster"]: r for r in cluster_table(summarize_owners(trial), true_assignments(trial))}
    for c, s in DEFAULT_CLUSTERS.items():
        assert table[c]["mean_kwh_per_charge"] == pytest.approx(s.mean_kwh_per_charge, abs=0.5)
        assert table[c]["charges_per_day"] == pytest.approx(s.charges_per_day, abs=0.05)
        assert s.capacities[0] <= table[c]["min_capacity"] <= table[c]["max_capacity"] <= s.capacities[-1]


def test_peak_share(trial):
    assert peak_share(trial) == pytest.approx(0.28, abs=0.03)


def test_deterministic_and_seed_sensitive():
    cfg = SynthConfig(horizon_days=60, owners_final={1: 5, 2: 5, 3: 5}, seed=3)
    a, b = generate_trial(cfg), generate_trial(cfg)
    assert a == b
    c = generate_trial(SynthConfig(horizon_days=60, owners_final={1: 5, 2: 5, 3: 5}, seed=4))
    assert a != c


def test_owner_counts_reach_final(trial):
    for s in build_daily_series(trial, true_assignments(trial)):
        assert s.frame.owners.iloc[-1] == SynthConfig().owners_final[s.cluster]


def test_arrival_schedules():
    assert arrival_days(4, 100).tolist() == [0, 12, 25, 37]
    assert arrival_days(4, 100, "step").tolist() == [0, 0, 50, 50]
    assert arrival_days(0, 100).size == 0


def test_multi_plugin_adds_sessions_per_charging_day():
    base = SynthConfig(horizon_days=120, owners_final={1: 20}, seed=2)
    one = generate_trial(base)
    multi = generate_trial(SynthConfig(**{**base.__dict__, "multi_plugin": True}))
    series = build_daily_series(multi, true_assignments(multi))[0].frame
    assert (series.trans >= series.users).all() and (series.trans > series.users).any()
    single = build_daily_series(one, true_assignments(one))[0].frame
    assert (single.trans == single.users).all()


@pytest.mark.parametrize("kw", [dict(horizon_days=0), dict(arrival="poisson"), dict(peak_plug_share=1.5),
                                dict(weekday_mult=(1.0,) * 6), dict(owners_final={1: -1})])
def test_invalid_config(kw):
    with pytest.raises(DataError):
        SynthConfig(**kw).validate()


def test_config_roundtrip():
    cfg = SynthConfig(seed=5, owners_final={1: 3, 2: 4, 3: 0})
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(5, 60))
def test_session_invariants(seed, horizon):
    txns = generate_trial(SynthConfig(horizon_days=horizon, owners_final={1: 3, 2: 3, 3: 3}, seed=seed))
    for t in txns:
        assert 0 < t.consumed_kwh <= t.car_kwh
        assert t.plug_in <= t.active_start <= t.plug_out
    keys = [(t.plug_in, t.participant_id) for t in txns]
    assert keys == sorted(keys)
    for s in build_daily_series(txns, true_assignments(txns)):
        assert (s.frame.demand >= s.frame.consumed).all()
