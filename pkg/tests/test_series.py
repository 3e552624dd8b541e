from datetime import date, datetime, timedelta

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from evcast.errors import DataError
from evcast.series import DailyClusterSeries, build_daily_series, reindex_contiguous, season_of

from conftest import make_txn

D0 = datetime(2017, 3, 1, 9)


def test_single_session_day():
    (s,) = build_daily_series([make_txn(kwh=40, consumed=12)], {"P1": 1})
    row = s.frame.iloc[0]
    assert (row.users, row.trans, row.demand, row.consumed) == (1, 1, 40, 12)


def test_ltr_demand_two_plus_one():
    txns = [make_txn("A", D0, 40, 10), make_txn("A", D0 + timedelta(hours=5), 40, 8),
            make_txn("B", D0, 22, 5)]
    (s,) = build_daily_series(txns, {"A": 1, "B": 1})
    row = s.frame.iloc[0]
    assert row.demand == 2 * 40 + 1 * 22 == 102
    assert row.users == 2 and row.trans == 3


def test_owners_step_when_first_seen():
    txns = [make_txn("A", D0 + timedelta(days=d)) for d in range(5)] + [make_txn("B", D0 + timedelta(days=2))]
    (s,) = build_daily_series(txns, {"A": 1, "B": 1})
    assert s.frame.owners.tolist() == [1, 1, 2, 2, 2]


def test_unmapped_participant():
    with pytest.raises(DataError):
        build_daily_series([make_txn("X")], {"A": 1})


@pytest.mark.parametrize("d,season", [(date(2017, 1, 15), "Winter"), (date(2017, 6, 1), "Summer"),
                                      (date(2018, 11, 30), "Autumn"), (date(2018, 3, 1), "Spring"),
                                      (date(2017, 12, 1), "Winter")])
def test_season_mapping(d, season):
    assert season_of(d) == season


_sessions = st.lists(st.tuples(st.sampled_from("ABCDE"), st.integers(0, 20), st.integers(0, 23),
                               st.sampled_from([8.8, 22.0, 40.0, 75.0]), st.floats(0, 1)),
                     min_size=1, max_size=40)


def _build(rows):
    txns = [make_txn(p, datetime(2017, 5, 1) + timedelta(days=d, hours=h), cap, cap * f) for p, d, h, cap, f in rows]
    cmap = {p: 1 if p in "ABC" else 2 for p in "ABCDE"}
    return txns, cmap


@settings(max_examples=60, deadline=None)
@given(_sessions, st.randoms())
def test_invariants_and_order_independence(rows, rnd):
    txns, cmap = _build(rows)
    series = build_daily_series(txns, cmap)
    shuffled = txns[:]
    rnd.shuffle(shuffled)
    again = build_daily_series(shuffled, cmap)
    for s, t in zip(series, again):
        pd.testing.assert_frame_equal(s.frame, t.frame)
        f = s.frame
        assert (np.diff(f.owners) >= 0).all()
        assert (f.users <= f.owners).all() and (f.users <= f.trans).all()
        assert (f.demand >= f.consumed).all()
        assert f.date.is_unique
        members = [t for t in txns if cmap[t.participant_id] == s.cluster]
        assert f.consumed.sum() == pytest.approx(sum(t.consumed_kwh for t in members))


def test_reindex_contiguous_and_csv_roundtrip(tmp_path):
    txns = [make_txn("A", D0), make_txn("A", D0 + timedelta(days=3))]
    (s,) = build_daily_series(txns, {"A": 1})
    full = reindex_contiguous(s)
    assert len(full) == 4 and full.owners.tolist() == [1, 1, 1, 1]
    assert full.users.isna().sum() == 2
    p = tmp_path / "s.csv"
    p.write_text(s.to_csv())
    back = DailyClusterSeries.from_csv(1, p)
    pd.testing.assert_frame_equal(back.frame, s.frame)
