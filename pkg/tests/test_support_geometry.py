import numpy as np
import pytest

from engine.errors import NonMonotoneScenario
from engine.flows_kalman import flow_of
from engine.support_geometry import (
    Ball,
    Everywhere,
    HalfSpace,
    IntervalUnion,
    Nowhere,
    PeriodicIntervals,
    SquareRootIntervals,
    ball_volume,
    center_seeds,
    dilating_example_support,
    explicit_support,
    fixed_support,
    radius_gamma_search,
    rotation_escape_centers,
    thickness_at,
    thickness_profile,
    threshold_bisect,
    timespace_thicken,
    translation_cone_support,
    translation_escape_centers,
    verify_timespace_thickness,
)


def _points(*xs):
    return np.array(xs, dtype=float).reshape(len(xs), -1)


def test_square_root_intervals():
    region = SquareRootIntervals()
    inside = region.contains(_points(0.5, 1.5, 2.5, 4.5, 6.5, -4.5, 100.5, 110.5))
    assert inside.tolist() == [True, True, False, True, False, True, True, False]


def test_periodic_intervals():
    region = PeriodicIntervals(2.0, 1.0)
    assert region.contains(_points(0.5, 1.5, -1.5, 4.2)).tolist() == [True, False, True, True]
    with pytest.raises(ValueError):
        PeriodicIntervals(1.0, 2.0)


def test_region_algebra():
    left = HalfSpace([-1.0, 0.0])
    disk = Ball([1.0, 0.0], 1.0)
    points = np.array([[-0.5, 0.0], [0.5, 0.0], [3.0, 0.0]])
    assert (left | disk).contains(points).tolist() == [True, True, False]
    assert (left & disk).contains(points).tolist() == [False, False, False]
    assert (~disk).contains(points).tolist() == [True, False, True]
    assert disk.translated([2.0, 0.0]).contains(points).tolist() == [False, False, True]


def test_translation_cone_at_horizon_is_base_cone():
    sup = translation_cone_support(np.pi / 4, 3.0)
    assert sup.contains(3.0, np.array([[1.0, 0.5], [1.0, 2.0], [-2.0, 1.0]])).tolist() == [True, False, True]


def test_flow_pushforward_transports_points():
    sup = translation_cone_support(np.pi / 4, 3.0)
    base_point = np.array([2.0, 1.0])
    for t in (0.0, 1.0, 2.5):
        moved = flow_of(sup.B)(sup.T - t) @ base_point
        assert sup.contains(t, moved[None, :])[0]


def test_time_array_matches_scalar_times():
    sup = translation_cone_support(np.pi / 6, 2.0)
    points = np.random.default_rng(0).uniform(-5, 5, (200, 2))
    times = np.repeat([0.0, 0.5, 1.7, 2.0], 50)
    batched = sup.contains(times, points)
    looped = np.array([sup.contains(t, p[None, :])[0] for t, p in zip(times, points)])
    assert np.array_equal(batched, looped)


def test_dilating_support_scales():
    sup = dilating_example_support(1.0, 1.0)
    # ω(1) = √3 ω, so √3·4.5 lies inside and √3·2.5 does not
    assert sup.contains(1.0, _points(np.sqrt(3) * 4.5, np.sqrt(3) * 2.5)).tolist() == [True, False]


def test_explicit_support():
    sup = explicit_support(lambda t, p: p[..., 0] < t, 1, 2.0)
    assert sup.contains(1.0, _points(0.5, 1.5)).tolist() == [True, False]


def test_ball_volume():
    assert ball_volume(1, 2.0) == pytest.approx(4.0)
    assert ball_volume(2, 1.0) == pytest.approx(np.pi)
    assert ball_volume(3, 1.0) == pytest.approx(4.0 * np.pi / 3.0)


def test_thickness_extremes():
    full = thickness_at(fixed_support(Everywhere(2), 1.0), [3.0, -1.0], 2.0, 10000, 0)
    empty = thickness_at(fixed_support(Nowhere(2), 1.0), [3.0, -1.0], 2.0, 10000, 0)
    assert (full.value, full.std_err) == (1.0, 0.0)
    assert (empty.value, empty.std_err) == (0.0, 0.0)


def test_half_space_thickness():
    estimate = thickness_at(fixed_support(HalfSpace([1.0, 0.0]), 1.0), [0.0, 0.0], 1.0, 20000, 3)
    assert estimate.value == pytest.approx(0.5, abs=0.02)
    assert 0.0 < estimate.std_err < 0.01


def test_lattice_thickness_is_density():
    sup = fixed_support(PeriodicIntervals(2.0, 1.0), 1.0)
    estimate = thickness_at(sup, [0.3], 4.0, 40000, 5)
    assert estimate.value == pytest.approx(0.5, abs=0.02)


def test_thickness_is_reproducible_and_translation_invariant():
    region = IntervalUnion([(-1.0, 0.5), (2.0, 3.0)])
    x = np.array([1.25])
    first = thickness_at(fixed_support(region, 1.0), x, 2.0, 10000, 42)
    again = thickness_at(fixed_support(region, 1.0), x, 2.0, 10000, 42)
    shifted = thickness_at(fixed_support(region.translated(-x), 1.0), [0.0], 2.0, 10000, 42)
    assert first.value == again.value == shifted.value


def test_thickness_argument_checks():
    sup = fixed_support(Everywhere(1), 1.0)
    with pytest.raises(ValueError):
        thickness_at(sup, [0.0], 1.0, 500, 0)
    with pytest.raises(ValueError):
        thickness_at(sup, [0.0], 0.0, 10000, 0)


def test_center_seeds():
    seeds = center_seeds(7, 5)
    assert seeds == center_seeds(7, 5)
    assert len(set(seeds)) == 5


def test_profile_minimum_and_frame():
    sup = fixed_support(HalfSpace([1.0]), 1.0)
    profile = thickness_profile(sup, 1.0, [[-5.0], [0.0], [5.0]], 10000, 1)
    assert profile.minimum == 0.0
    assert profile.argmin.tolist() == [-5.0]
    assert list(profile.to_frame().columns[:3]) == ["x0", "r", "value"]


def _step_family(threshold):
    def family(T):
        region = Everywhere(2) if T >= threshold else Nowhere(2)
        return fixed_support(region, T)
    return family


def test_threshold_bisect_finds_jump():
    result = threshold_bisect(_step_family(2.0), 1.0, 0.1, [[0.0, 0.0]], 1.0, 3.0, 10000, 0, tol=0.01)
    assert result.T_star == pytest.approx(2.0, abs=0.01)
    assert result.lower < 2.0 <= result.upper


def test_threshold_holding_at_lower_bracket():
    result = threshold_bisect(_step_family(0.5), 1.0, 0.1, [[0.0, 0.0]], 1.0, 3.0, 10000, 0)
    assert result.T_star == 1.0


def test_threshold_rejects_non_monotone():
    def family(T):
        return fixed_support(Everywhere(2) if 1.4 < T < 2.6 else Nowhere(2), T)
    with pytest.raises(NonMonotoneScenario):
        threshold_bisect(family, 1.0, 0.1, [[0.0, 0.0]], 1.0, 3.0, 10000, 0)


def test_escape_schedules():
    centers = translation_escape_centers(3.0, np.pi / 4)
    assert len(centers) == 4
    assert np.allclose(centers[0], 0.0)
    assert centers[1][0] / centers[1][1] == pytest.approx(1.5)
    ray = rotation_escape_centers(np.pi / 8, count=3, stride=2.0)
    assert np.allclose(ray[2], [6.0, 6.0 * np.tan(np.pi / 8)])


def test_timespace_thickening():
    sup = fixed_support(Everywhere(1), 2.0)
    T_gamma, omega = timespace_thicken(sup, 0.5)
    assert T_gamma == pytest.approx(1.5)
    assert omega(np.array([1.0, 1.9]), _points(0.0, 0.0)).tolist() == [True, False]
    with pytest.raises(ValueError):
        timespace_thicken(sup, 0.0)
    table = verify_timespace_thickness(sup, 1.0, 1.0, [[0.0], [3.0]], 10000, 0)
    assert table["holds"].all()


def test_radius_search():
    sup = fixed_support(PeriodicIntervals(2.0, 1.0), 1.0)
    table = radius_gamma_search(sup, [0.25, 4.0], [[0.5], [1.5]], 10000, 0)
    assert table["gamma"].iloc[0] == 0.0
    assert table["gamma"].iloc[1] == pytest.approx(0.5, abs=0.03)


@pytest.mark.slow
def test_translation_cone_threshold():
    def family(T):
        return translation_cone_support(np.pi / 4, T)

    result = threshold_bisect(family, 5.0, 0.005,
                              lambda T: translation_escape_centers(T, np.pi / 4),
                              1.0, 3.0, 20000, 7, tol=0.02)
    assert result.T_star == pytest.approx(2.0, abs=0.05)


def test_doubling_samples_shrinks_the_standard_error():
    sup = fixed_support(HalfSpace([1.0, 0.0]), 1.0)
    coarse = thickness_at(sup, [0.0, 0.0], 1.0, 25600, 11)
    fine = thickness_at(sup, [0.0, 0.0], 1.0, 51200, 11)
    assert fine.samples == 2 * coarse.samples
    assert coarse.std_err / fine.std_err == pytest.approx(np.sqrt(2.0), rel=0.05)


def test_threshold_compares_the_normalized_value():
    def family(T):
        return fixed_support(HalfSpace([1.0, 0.0]), T)

    # the half-plane covers half of a centered ball at every horizon
    result = threshold_bisect(family, 1.0, 0.45, [[0.0, 0.0]], 1.0, 3.0, 10000, 0)
    assert result.T_star == 1.0
    for row in result.evaluations:
        assert row["holds"] == (row["min_value"] >= 0.45)
        assert row["integral"] == pytest.approx(row["min_value"] * row["T"] * np.pi)
    with pytest.raises(NonMonotoneScenario):
        threshold_bisect(family, 1.0, 0.55, [[0.0, 0.0]], 1.0, 3.0, 10000, 0)
