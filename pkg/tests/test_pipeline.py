import numpy as np
import pytest

from tvstarima import pipeline as pl
from tvstarima import starima as st
from tvstarima.clustering import IsodataParams
from tvstarima.core_data import FlowPanel, smooth_panel
from tvstarima.errors import ParameterError
from tvstarima.partition import DayPartition, TimeRange
from tvstarima.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def day():
    net, flow, speed, truth = generate(SynthConfig(spacing_feet=8000.0, seed=2))
    fp, sp = smooth_panel(flow, 4), smooth_panel(speed, 30)
    _, part = pl.classify_day(pl.speed_profile(sp), IsodataParams(), 8, sp.slot_seconds)
    return net, fp, sp, part


def test_speed_profile_sources(day):
    _, _, sp, _ = day
    assert np.allclose(pl.speed_profile(sp), sp.matrix.mean(axis=1))
    assert np.array_equal(pl.speed_profile(sp, "s2"), sp.column("s2"))
    with pytest.raises(ParameterError):
        pl.speed_profile(sp, "nowhere")


def test_holdout_is_last_slots_of_each_range(day):
    _, fp, _, part = day
    mask = pl.holdout_mask(fp, part, 30)
    ranges = pl.range_of_slots(fp, part)
    for r in range(len(part)):
        idx = np.flatnonzero(ranges == r)
        assert mask[idx[-30:]].all() and not mask[idx[:-30]].any()


def test_lag_schedules(day):
    net, fp, _, part = day
    sv = pl.lag_schedule("speed_varying", net, part, fp, 3)
    assert len(sv) == len(part)
    slow = [i for i, r in enumerate(part) if r.mean_speed < 50][0]
    fast = [i for i, r in enumerate(part) if r.mean_speed > 50][0]
    assert sv[slow][0].entries[0, 1] > sv[fast][0].entries[0, 1]
    assert len(pl.lag_schedule("fixed_ccf", net, part, fp, 3)) == 1
    assert {lag for _, _, lag in pl.lag_schedule("fixed_constant", net, part, fp, 3)[0][0].pairs()} == {1}


def test_compare_models_reports(day):
    net, fp, _, part = day
    comp = pl.compare_models(fp, net, part, st.StarimaSpec(lam=3), horizon=30)
    for name in pl.MODEL_NAMES:
        reps = comp.reports[name]
        assert len(reps) == fp.n_stations * (len(part) + 1)
        assert all(r.n_points == 30 for r in reps if r.range_label != pl.DAY)
        assert set(comp.day_mape(name)) == set(fp.stations)


def test_score_uses_only_test_slots():
    panel = FlowPanel(("a",), 120.0, np.arange(1.0, 31.0)[:, None])
    part = DayPartition((TimeRange(0, 0, 1, 80.0), TimeRange(1, 2, 3, 30.0)), slot_seconds=900)
    pred = FlowPanel(("a",), 120.0, panel.matrix * 1.1)
    test = np.zeros(30, dtype=bool)
    test[[3, 20]] = True
    reps = pl.score(panel, pred, part, test)
    assert [r.range_label for r in reps] == ["T1^1", "T2^1", "day"]
    assert [r.n_points for r in reps] == [1, 1, 2]
