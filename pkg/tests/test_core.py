import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egsrom.core import (BASE_PARAMETERS, MetricError, ParameterSet, Quantity, TimeSeries,
                         ZeroVarianceError, fit_metrics, mse, parse_time_grid, r_squared,
                         resample_linear, rmse)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_timeseries_validation():
    with pytest.raises(ValueError, match="differ in length"):
        TimeSeries([0, 1], [1.0])
    with pytest.raises(ValueError, match="empty"):
        TimeSeries([], [])
    with pytest.raises(ValueError, match="strictly increasing"):
        TimeSeries([0, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError, match=">= 0"):
        TimeSeries([-1, 0], [1, 2])
    with pytest.raises(ValueError, match="non-finite"):
        TimeSeries([0, 1], [1, np.nan])


def test_timeseries_is_immutable_and_copies():
    t = np.array([0.0, 1.0])
    ts = TimeSeries(t, [1.0, 2.0])
    t[0] = 5.0
    assert ts.times[0] == 0.0
    with pytest.raises(ValueError):
        ts.values[0] = 3.0


@settings(max_examples=50)
@given(st.lists(finite, min_size=1, max_size=30))
def test_csv_round_trip_is_exact(values):
    ts = TimeSeries(np.arange(len(values)) * 0.5, values, Quantity.POWER_MW)
    back = TimeSeries.from_csv_text(ts.to_csv())
    assert np.array_equal(back.times, ts.times)
    assert np.array_equal(back.values, ts.values)


def test_csv_header_and_line_numbers(tmp_path):
    assert TimeSeries([0.0], [1.5]).to_csv().splitlines() == ["time_days,value", "0.0,1.5"]
    with pytest.raises(ValueError, match="header"):
        TimeSeries.from_csv_text("t,v\n0,1\n")
    with pytest.raises(ValueError, match=":3:"):
        TimeSeries.from_csv_text("time_days,value\n0,1\n1,abc\n")
    with pytest.raises(ValueError, match=":2: expected 2 columns"):
        TimeSeries.from_csv_text("time_days,value\n0,1,2\n")
    p = tmp_path / "s.csv"
    TimeSeries([0.0, 2.0], [3.0, 4.0]).to_csv(p)
    assert TimeSeries.from_csv(p).values.tolist() == [3.0, 4.0]


def test_parameter_set_bounds():
    assert BASE_PARAMETERS.k_fz == 7.75e-16
    with pytest.raises(ValueError):
        ParameterSet(1e-9, 1e-13, 9.5e6, 7.5)
    with pytest.raises(ValueError):
        ParameterSet(1e-15, 0.0, 9.5e6, 7.5)
    with pytest.raises(ValueError):
        ParameterSet(1e-15, 1e-13, 9.5e6, -1.0)
    with pytest.raises(ValueError, match="below the initial"):
        BASE_PARAMETERS.check_against(9.0e6)


def test_metrics_hand_values():
    obs = [1.0, 2.0, 3.0, 4.0]
    pred = [1.0, 2.0, 3.0, 5.0]
    assert mse(obs, pred) == 0.25
    assert rmse(obs, pred) == 0.5
    # ss_tot = 5, ss_res = 1
    assert r_squared(obs, pred) == pytest.approx(0.8, abs=1e-15)
    m = fit_metrics(obs, pred)
    assert (m.n, m.r2) == (4, r_squared(obs, pred))


def test_metric_errors():
    with pytest.raises(ZeroVarianceError):
        r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricError, match="length mismatch"):
        mse([1.0, 2.0], [1.0])
    with pytest.raises(MetricError):
        r_squared([1.0], [1.0])


@given(st.lists(finite, min_size=2, max_size=40))
def test_r2_of_self_is_one_and_mean_is_zero(values):
    obs = np.array(values)
    if np.ptp(obs) == 0 or np.sum((obs - obs.mean()) ** 2) == 0:
        return
    assert r_squared(obs, obs) == 1.0
    assert r_squared(obs, np.full_like(obs, obs.mean())) == pytest.approx(0.0, abs=1e-9)


def test_resample_linear():
    ts = TimeSeries([0.0, 2.0, 4.0], [0.0, 4.0, 0.0])
    assert resample_linear(ts, [1.0, 2.0, 3.5]).tolist() == [2.0, 4.0, 1.0]
    with pytest.raises(ValueError, match="span"):
        resample_linear(ts, [4.5])


def test_parse_time_grid():
    g = parse_time_grid("0:120:1")
    assert g.size == 121 and g[-1] == 120.0
    assert parse_time_grid("0:1:0.3").tolist() == pytest.approx([0, 0.3, 0.6, 0.9])
    for bad in ("0:1", "0:1:0", "5:1:1", "a:b:c"):
        with pytest.raises(ValueError):
            parse_time_grid(bad)
    assert math.isclose(parse_time_grid("0:0.3:0.1")[-1], 0.3)
