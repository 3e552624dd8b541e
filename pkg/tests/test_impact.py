import time

import numpy as np
import pandas as pd
import pytest

from evcast.errors import DataError
from evcast.impact import (LEVELS, PENETRATIONS, ControlPolicy, ForecastProvider, NetworkConfig, PolicyKind,
                           aggregate_load, min_control_for_capacity, plot_data, results_frame, sweep)
from evcast.series import SEASONS

USER, CONS = PolicyKind.USER, PolicyKind.CONSUMPTION


def _agg(feeder, pen, kind=USER, level=0.0, **kw):
    return aggregate_load(feeder, "Winter", pen, ControlPolicy(kind, level), **kw)


def test_feeder2_full_penetration_oracle():
    r = _agg(2, 1.0)
    # 96 EVs * 0.44 charging * 0.35 at peak * 7 kW / 0.98
    ev = 96 * 0.44 * 0.35 * 7 / 0.98
    assert r.ev_load_kva == pytest.approx(ev, abs=1e-9) and ev == pytest.approx(105.6, abs=1e-9)
    assert r.agg_load_kva == pytest.approx(201.6, abs=1e-9)
    assert r.overloaded


def test_user_control_levels():
    assert _agg(2, 1.0, USER, 0.6).agg_load_kva == pytest.approx(96 + 105.6 * 0.4, abs=1e-9)
    assert _agg(2, 1.0, USER, 0.6).agg_load_kva == pytest.approx(138.24, abs=1e-9)
    assert _agg(2, 1.0, USER, 0.8).agg_load_kva == pytest.approx(117.12, abs=1e-9)
    assert min_control_for_capacity(2, "Winter", 1.0) == 0.8


def test_consumption_control_durations_and_invariance():
    loads = {c: _agg(2, 1.0, CONS, c).agg_load_kva for c in LEVELS}
    assert len(set(loads.values())) == 1
    assert _agg(2, 1.0, CONS, 0.0).duration_h[2] == pytest.approx(14.30 / 7, abs=1e-9)
    assert _agg(2, 1.0, CONS, 0.4).duration_h[2] == pytest.approx(14.30 * 0.6 / 7, abs=1e-9)
    assert _agg(2, 1.0, CONS, 0.4).duration_h[2] < 2.0


def test_user_control_leaves_duration():
    assert _agg(1, 1.0, USER, 0.8).duration_h == _agg(1, 1.0, USER, 0.0).duration_h


def test_sweep_size_order_and_speed():
    t0 = time.perf_counter()
    res = sweep()
    assert time.perf_counter() - t0 < 1.0
    assert len(res) == 4 * 4 * 5 * 2 * 5 == 800
    df = results_frame(res)
    assert df.feeder.is_monotonic_increasing
    keys = list(zip(df.feeder, df.season.map(SEASONS.index), df.penetration, df.policy, df.level))
    assert keys == sorted(keys)


def test_mixed_feeders_lighter_than_pure():
    for p in PENETRATIONS:
        assert _agg(3, p).agg_load_kva < _agg(1, p).agg_load_kva
        assert _agg(4, p).agg_load_kva < _agg(2, p).agg_load_kva


def test_monotone_in_penetration_and_level():
    for f in (1, 2, 3, 4):
        loads = [_agg(f, p).agg_load_kva for p in PENETRATIONS]
        assert np.all(np.diff(loads) > 0)
        ctl = [_agg(f, 1.0, USER, c).agg_load_kva for c in LEVELS]
        assert np.all(np.diff(ctl) < 0)


def test_zero_penetration_is_base_load():
    r = _agg(1, 0.0)
    assert r.ev_load_kva == 0 and r.agg_load_kva == 96


def test_none_when_base_exceeds_capacity():
    cfg = NetworkConfig(base_load_kva_per_household=2.0)
    assert min_control_for_capacity(1, "Winter", 0.2, config=cfg) is None


@pytest.mark.parametrize("level", [0.1, -0.2, 1.0])
def test_off_grid_level(level):
    with pytest.raises(DataError):
        ControlPolicy(USER, level)


def test_invalid_network():
    with pytest.raises(DataError):
        NetworkConfig(feeder_mix={1: {1: 0.5}}).validate()
    with pytest.raises(DataError):
        _agg(9, 1.0)
    with pytest.raises(DataError):
        _agg(1, 1.5)


def test_network_roundtrip():
    cfg = NetworkConfig(transformer_kva=400)
    back = NetworkConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.feeder_capacity_kva == 100


class _Const:
    def __init__(self, v):
        self.v = v

    def predict(self, frame):
        return np.full(len(frame), self.v)


def test_forecast_provider_matches_deterministic_when_constant():
    # users model returning 0.44 * n for n = 96 reproduces the deterministic oracle
    prov = ForecastProvider({2: _Const(0.44 * 96)}, {2: _Const(0.44 * 96 * 14.30)})
    r = _agg(2, 1.0, provider=prov)
    assert r.ev_load_kva == pytest.approx(105.6, abs=1e-9)
    assert r.duration_h[2] == pytest.approx(14.30 / 7, abs=1e-9)


def test_plot_data_tables():
    tables = plot_data(sweep())
    assert set(tables) == {"load_vs_penetration", "duration_vs_penetration"}
    assert (tables["load_vs_penetration"].capacity_kva == 125).all()
    assert len(tables["duration_vs_penetration"]) == 800 + 2 * 200  # mixed feeders carry two clusters
