from datetime import datetime, timedelta

import numpy as np
import pandas as pd
import pytest

from evcast.ingest import ChargingTransaction, EvType, TrialStage
from evcast.series import day_of, season_of


def make_txn(pid="P1", day=datetime(2017, 3, 1, 18), kwh=40.0, consumed=10.0, stage=TrialStage.T1,
             kw=7.0, hours=2.0):
    return ChargingTransaction(
        charger_id=f"C{pid}", participant_id=pid, car_kw=kw, car_kwh=kwh, group_id="G1",
        trial_stage=stage, plug_in=day, plug_out=day + timedelta(hours=hours), consumed_kwh=consumed,
        active_start=day + timedelta(minutes=5), car_make="Make", car_model="Model", ev_type=EvType.BEV)


@pytest.fixture
def txn_factory():
    return make_txn


def daily_frame(n, start="2017-02-01", owners=None, **cols):
    """A contiguous daily frame with calendar columns and the given numeric columns."""
    dates = pd.date_range(start, periods=n, freq="D").date
    owners = np.arange(50, 50 + n, dtype=float) if owners is None else np.asarray(owners, float)
    df = pd.DataFrame({"date": dates, "day": [day_of(d) for d in dates],
                       "season": [season_of(d) for d in dates], "owners": owners})
    for k, v in cols.items():
        df[k] = np.asarray(v, dtype=float)
    return df


@pytest.fixture
def frame_factory():
    return daily_frame


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
