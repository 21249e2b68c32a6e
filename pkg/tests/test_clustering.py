import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from tvstarima.clustering import IsodataParams, SpeedClusterSet, assign_nearest, isodata_1d
from tvstarima.errors import DataError, ParameterError

speeds = hst.lists(hst.floats(0, 120, allow_nan=False), min_size=5, max_size=120)


def two_regime_speeds(seed=0, n=48, sd=5.0):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(82, sd, n), rng.normal(34, sd, n)])


def check_invariants(x, cs, params):
    members = [m for c in cs for m in c.members]
    assert sorted(members) == list(range(len(x)))
    assert len(cs) <= params.k_max
    for c in cs:
        assert len(c.members) >= params.n_min or len(cs) == 1
        assert abs(c.center - np.mean([x[i] for i in c.members])) <= 1e-9


def test_params_defaults():
    p = IsodataParams()
    assert (p.k_max, p.n_min, p.sigma2_max, p.d_min, p.max_iter) == (3, 5, 15.0, 30.0, 10)


@pytest.mark.parametrize("kw", [dict(k_init=4), dict(k_init=0), dict(n_min=0), dict(sigma2_max=0), dict(d_min=-1)])
def test_params_validation(kw):
    with pytest.raises(ParameterError):
        IsodataParams(**kw)


def test_two_gaussian_mixture():
    x = two_regime_speeds()
    cs = isodata_1d(x, IsodataParams())
    assert len(cs) == 2
    assert abs(cs.centers[0] - 82) <= 2 and abs(cs.centers[1] - 34) <= 2
    check_invariants(x, cs, IsodataParams())


def test_constant_speeds_single_cluster():
    cs = isodata_1d(np.full(20, 50.0), IsodataParams())
    assert len(cs) == 1 and cs.centers[0] == 50.0


def test_wide_single_mode_splits_then_merges():
    # variance above the ceiling forces a split; centers closer than d_min merge back
    x = np.random.default_rng(2).normal(60, 6, 80)
    assert len(isodata_1d(x, IsodataParams())) == 1


def test_three_well_separated_modes():
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.normal(20, 2, 30), rng.normal(60, 2, 30), rng.normal(100, 2, 30)])
    cs = isodata_1d(x, IsodataParams(k_init=3))
    assert np.allclose(cs.centers, [100, 60, 20], atol=2)


def test_too_few_points():
    with pytest.raises(DataError):
        isodata_1d([1.0, 2.0], IsodataParams())


def test_non_finite():
    with pytest.raises(DataError):
        isodata_1d([1.0] * 5 + [float("nan")], IsodataParams())


def test_clusters_ordered_fastest_first():
    cs = isodata_1d(two_regime_speeds(1), IsodataParams())
    assert list(cs.centers) == sorted(cs.centers, reverse=True)
    assert cs.labels()[0] == 0


@settings(max_examples=200, deadline=None)
@given(speeds)
def test_invariants_random(xs):
    params = IsodataParams()
    x = np.array(xs)
    check_invariants(x, isodata_1d(x, params), params)


@settings(max_examples=100, deadline=None)
@given(speeds, hst.integers(0, 5))
def test_deterministic(xs, seed):
    p = IsodataParams(seed=seed)
    a, b = isodata_1d(xs, p), isodata_1d(xs, p)
    assert a == b


@settings(max_examples=100, deadline=None)
@given(speeds, hst.integers(-30, 30))
def test_shift_invariance(xs, c):
    x = np.array(xs)
    a, b = isodata_1d(x, IsodataParams()), isodata_1d(x + c, IsodataParams())
    assert [c1.members for c1 in a] == [c2.members for c2 in b]
    assert np.allclose(a.centers + c, b.centers, atol=1e-9)


def test_assign_nearest():
    centers = [82.15, 34.33]
    assert assign_nearest(60, centers) == 0
    assert assign_nearest(50, [40.0, 60.0]) == 0
    assert assign_nearest(34.33, centers) == 1
    cs = SpeedClusterSet.from_labels([82.15, 34.33], [0, 1])
    assert assign_nearest(60, cs) == 0


def test_assign_nearest_empty():
    with pytest.raises(ParameterError):
        assign_nearest(1.0, [])
