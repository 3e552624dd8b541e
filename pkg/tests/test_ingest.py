import io
from datetime import datetime, timedelta

import pytest
from hypothesis import given, settings, strategies as st

from evcast.errors import DataError
from evcast.ingest import (FIELDS, EvType, TrialStage, clean_trial_data, parse_transactions,
                           serialize_transactions)

from conftest import make_txn

HEADER = ",".join(FIELDS)


def _row(**over):
    base = dict(charger_id="C1", participant_id="P1", car_kw="7", car_kwh="40", group_id="G",
                trial_stage="T1", plug_in="2017-03-01T18:00:00", plug_out="2017-03-01T22:00:00",
                consumed_kwh="12.5", active_start="2017-03-01T18:05:00", car_make="Nissan",
                car_model="Leaf", ev_type="BEV")
    base.update(over)
    return ",".join(base[f] for f in FIELDS)


def test_empty_file_with_header():
    recs, rep = parse_transactions(HEADER + "\n")
    assert recs == [] and len(rep) == 0


def test_missing_header_column_is_fatal():
    with pytest.raises(DataError):
        parse_transactions("charger_id,participant_id\n")


def test_time_order_rejected():
    recs, rep = parse_transactions(HEADER + "\n" + _row(plug_out="2017-03-01T17:00:00") + "\n")
    assert recs == [] and rep.reasons() == ["time-order"]


def test_ten_row_fixture_two_bad():
    rows = [_row(participant_id=f"P{i}") for i in range(8)]
    rows.insert(3, _row(consumed_kwh="55"))          # above capacity
    rows.insert(7, _row(plug_in="not-a-time"))
    recs, rep = parse_transactions(HEADER + "\n" + "\n".join(rows) + "\n")
    assert len(recs) == 8 and len(rep) == 2
    assert rep.reasons() == ["consumed-range", "bad-timestamp"]
    assert [r.row for r in rep.rejects] == [4, 8]


@pytest.mark.parametrize("over,reason", [
    ({"car_kw": ""}, "missing-field"),
    ({"car_kwh": "abc"}, "bad-number"),
    ({"car_kwh": "0"}, "nonpositive-rating"),
    ({"trial_stage": "T9"}, "bad-enum"),
    ({"ev_type": "HOVER"}, "bad-enum"),
    ({"consumed_kwh": "-1"}, "consumed-range"),
])
def test_reject_reasons(over, reason):
    _, rep = parse_transactions(HEADER + "\n" + _row(**over) + "\n")
    assert rep.reasons() == [reason]


def test_optional_text_may_be_blank_and_aliases_parse():
    recs, rep = parse_transactions(HEADER + "\n" + _row(car_make="", trial_stage="trial 2", ev_type="phev") + "\n")
    assert len(rep) == 0
    assert recs[0].trial_stage is TrialStage.T2 and recs[0].ev_type is EvType.PHEV


def test_column_map():
    renamed = HEADER.replace("car_kwh", "Car kWh")
    recs, rep = parse_transactions(renamed + "\n" + _row() + "\n", schema={"car_kwh": "Car kWh"})
    assert recs[0].car_kwh == 40.0


def test_reject_report_jsonl():
    _, rep = parse_transactions(HEADER + "\n" + _row(car_kw="x") + "\n")
    assert rep.to_jsonl() == '{"row": 1, "reason": "bad-number"}\n'


_txn = st.builds(
    lambda pid, kwh, frac, start, dur: make_txn(pid=pid, kwh=kwh, consumed=kwh * frac,
                                                day=datetime(2017, 1, 1) + timedelta(minutes=start), hours=dur),
    st.text("abcXYZ0123", min_size=1, max_size=6), st.floats(0.5, 120), st.floats(0, 1),
    st.integers(0, 10 ** 6), st.floats(0.1, 30))


@settings(max_examples=50, deadline=None)
@given(st.lists(_txn, max_size=8))
def test_roundtrip_identity(txns):
    recs, rep = parse_transactions(serialize_transactions(txns))
    assert len(rep) == 0 and recs == txns


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(list(TrialStage)), max_size=12))
def test_clean_drops_t3_preserves_order_idempotent(stages):
    txns = [make_txn(pid=str(i), stage=s) for i, s in enumerate(stages)]
    out = clean_trial_data(txns)
    assert [t.participant_id for t in out] == [str(i) for i, s in enumerate(stages) if s is not TrialStage.T3]
    assert clean_trial_data(out) == out


def test_clean_fixture_counts():
    txns = [make_txn(stage=TrialStage.T1)] * 5 + [make_txn(stage=TrialStage.T3)] * 3
    assert len(clean_trial_data(txns)) == 5
    assert clean_trial_data([make_txn(stage=TrialStage.T3)]) == []
    assert clean_trial_data([]) == []


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["good", "bad"]), max_size=10))
def test_counts_conserved(kinds):
    rows = [_row() if k == "good" else _row(car_kw="?") for k in kinds]
    recs, rep = parse_transactions(io.StringIO(HEADER + "\n" + "".join(r + "\n" for r in rows)))
    assert len(recs) + len(rep) == len(rows)
