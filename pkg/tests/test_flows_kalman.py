import numpy as np
import pytest

from engine.errors import FlowOverflow
from engine.flows_kalman import (
    MatrixPair,
    analyze_hypoellipticity,
    exact_kernel_chain,
    fit_power_law,
    flow_of,
    gramian_curve,
    gramian_matrix,
    matrix_exponential,
    multiscale_gramian_ratio,
    sphere_points,
)
from engine.symbol_engine import ou_gramian


@pytest.mark.parametrize("name, k0", [("kolmogorov", 1), ("rotation", 1), ("heat2", 0), ("chain3", 2)])
def test_hypoellipticity_index(name, k0):
    report = analyze_hypoellipticity(MatrixPair.example(name), exact=True)
    assert report.kalman_holds
    assert report.k0 == k0
    assert report.kernel_chain == report.exact_chain
    assert report.kernel_chain[-1] == 0


def test_degenerate_pair_fails_kalman():
    pair = MatrixPair(np.diag([1.0, 0.0]), np.zeros((2, 2)))
    report = analyze_hypoellipticity(pair)
    assert not report.kalman_holds
    assert report.k0 is None
    assert report.rank == 1
    assert exact_kernel_chain(pair.Q, pair.B) == [1, 1]


def test_pair_validation():
    with pytest.raises(ValueError):
        MatrixPair([[1.0, 2.0], [0.0, 1.0]], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        MatrixPair(-np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        MatrixPair(np.eye(2), np.zeros((3, 3)))
    with pytest.raises(KeyError):
        MatrixPair.example("nonexistent")


def test_conjugation_keeps_index():
    angle = 0.3
    O = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    report = analyze_hypoellipticity(MatrixPair.example("kolmogorov").conjugated(O))
    assert report.k0 == 1


def test_matrix_exponential_nilpotent():
    B = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(matrix_exponential(B, 0.0), np.eye(2))
    assert np.allclose(matrix_exponential(B, 2.5), np.eye(2) + 2.5 * B, atol=1e-14)


def test_matrix_exponential_overflow():
    with pytest.raises(FlowOverflow):
        matrix_exponential(np.eye(2), 1e7)
    with pytest.raises(FlowOverflow):
        matrix_exponential(np.eye(2), 1000.0)


def test_flow_is_a_group():
    flow = flow_of([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(flow(0.4) @ flow(0.7), flow(1.1), atol=1e-13)
    assert np.allclose(flow(0.9) @ flow_of([[0.0, -1.0], [1.0, 0.0]])(0.9), np.eye(2), atol=1e-13)


def test_gramian_matches_closed_form():
    pair = MatrixPair.example("rotation")
    assert np.allclose(gramian_matrix(pair, 0.7), ou_gramian(pair, 0.7), atol=1e-11)


def test_kolmogorov_gramian_exponent():
    pair = MatrixPair.example("kolmogorov")
    taus = np.logspace(-3, -1, 12)
    curve = gramian_curve(pair, taus)
    assert curve.fitted_exponent == pytest.approx(3.0, abs=0.05)
    # smallest eigenvalue of [[τ³/3, τ²/2], [τ²/2, τ]] is about τ³/12
    assert curve.values[0] == pytest.approx(taus[0] ** 3 / 12.0, rel=0.02)


def test_heat_gramian_exponent():
    curve = gramian_curve(MatrixPair.example("heat2"), np.logspace(-3, -1, 8))
    assert curve.fitted_exponent == pytest.approx(1.0, abs=0.01)


def test_gramian_curve_rejects_bad_grid():
    with pytest.raises(ValueError):
        gramian_curve(MatrixPair.example("heat2"), [0.1, 0.05])


def test_multiscale_ratio_bounded():
    rows = multiscale_gramian_ratio(MatrixPair.example("kolmogorov"), np.logspace(-3, -1, 6))
    assert all(0.01 < row["min_ratio"] <= row["max_ratio"] < 100.0 for row in rows)


def test_fit_power_law_exact():
    x = np.logspace(-3, 0, 10)
    slope, residual = fit_power_law(x, 2.0 * x ** 3)
    assert slope == pytest.approx(3.0, abs=1e-10)
    assert residual < 1e-10


def test_sphere_points_unit_norm():
    points = sphere_points(3, 50)
    assert np.allclose(np.linalg.norm(points, axis=1), 1.0)


def test_rotation_gramian_exponent():
    curve = gramian_curve(MatrixPair.example("rotation"), np.logspace(-3, -1, 12))
    assert curve.fitted_exponent == pytest.approx(3.0, rel=0.05)


def test_gramian_curve_needs_enough_sphere_samples():
    with pytest.raises(ValueError, match="sphere samples"):
        gramian_curve(MatrixPair.example("kolmogorov"), [0.01, 0.1], sphere_samples=99)
    with pytest.raises(ValueError, match="sphere samples"):
        multiscale_gramian_ratio(MatrixPair.example("kolmogorov"), [0.01, 0.1], sphere_samples=10)
    curve = gramian_curve(MatrixPair.example("kolmogorov"), [0.01, 0.1], sphere_samples=100)
    assert np.all(curve.values > 0)


def test_gramian_is_positive_for_random_pairs():
    rng = np.random.default_rng(7)
    taus = [0.25, 0.5, 1.0]
    for _ in range(50):
        v = rng.normal(size=2)
        pair = MatrixPair(np.outer(v, v), rng.normal(size=(2, 2)))
        W = gramian_matrix(pair, 1.0)
        assert np.allclose(W, W.T, atol=1e-12)
        assert np.linalg.eigvalsh(W).min() >= -1e-12 * np.linalg.norm(W, 2)
        curve = gramian_curve(pair, taus)
        assert np.all(curve.values >= 0.0)
        if analyze_hypoellipticity(pair).kalman_holds:
            assert curve.values[-1] == pytest.approx(np.linalg.eigvalsh(W).min(), rel=1e-4, abs=1e-10)
            assert np.all(np.diff(curve.values) >= -1e-12)
