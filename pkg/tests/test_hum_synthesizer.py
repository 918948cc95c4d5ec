import numpy as np
import pytest

from engine.errors import CgStall, GridMismatch
from engine.hum_synthesizer import (
    CERTIFIED,
    NOT_CERTIFIED,
    HumProblem,
    _plateaued,
    certify_uniform_cost,
    cost_lower_bound,
    duality_check,
    grad_J,
    gramian_apply,
    observability_check,
    quadrature_convergence,
    synthesize,
)
from engine.spectral_field import GridSpec, SpectralField, apply_propagator
from engine.support_geometry import Everywhere, Nowhere, PeriodicIntervals, fixed_support


def _problem(heat_line, f0, region, epsilon=0.1, C=100.0, time_nodes=16):
    return HumProblem(fam=heat_line, sup=fixed_support(region, heat_line.T), f0=f0,
                      epsilon=epsilon, C=C, time_nodes=time_nodes, panel_nodes=8)


@pytest.fixture
def lattice_problem(heat_line, bump):
    return _problem(heat_line, bump, PeriodicIntervals(2.0, 1.0), C=1000.0)


def test_optimality_identities(lattice_problem):
    prob = lattice_problem
    sol = synthesize(prob, cg_tol=1e-10)
    target = apply_propagator(prob.fam, 0.0, prob.f0)
    assert sol.ledger.cg_residual <= 1e-9
    # at the minimizer f(T) = −ε h0 and the ledger equals −⟨U(T,0)f0, h0⟩
    defect = (sol.terminal + sol.h0.scaled(prob.epsilon)).norm()
    assert defect <= 1e-8 * target.norm()
    assert sol.ledger.lhs == pytest.approx(-target.inner(sol.h0).real, rel=1e-5)
    assert grad_J(prob, sol.h0).norm() <= 1e-8 * target.norm()


def test_certificate_flag_matches_ledger(lattice_problem):
    sol = synthesize(lattice_problem, cg_tol=1e-10)
    ledger = sol.ledger
    assert ledger.rhs == pytest.approx(1.0)
    assert ledger.certified == (ledger.lhs <= ledger.rhs * (1 + 1e-6))


def test_controls_live_on_the_support(lattice_problem):
    sol = synthesize(lattice_problem)
    outside = ~lattice_problem.masks
    assert np.all(sol.controls[outside] == 0)
    assert sol.control_energy == pytest.approx(float(np.dot(lattice_problem.weights, sol.control_energies)))
    assert len(sol.time_series()) == lattice_problem.time_nodes


def test_full_support_certifies(heat_line, bump):
    sol = synthesize(_problem(heat_line, bump, Everywhere(1)))
    assert sol.ledger.certified
    assert sol.terminal_norm <= 0.01 * bump.norm()


def test_empty_support_reports_without_raising(heat_line, bump):
    sol = synthesize(_problem(heat_line, bump, Nowhere(1)))
    assert not sol.ledger.certified
    assert sol.control_energy == 0.0
    target = apply_propagator(heat_line, 0.0, bump)
    assert sol.terminal_norm == pytest.approx(target.norm(), rel=1e-12)


def test_zero_datum(heat_line, line_grid):
    sol = synthesize(_problem(heat_line, SpectralField.zeros(line_grid), PeriodicIntervals(2.0, 1.0)))
    assert sol.ledger.iterations == 0
    assert sol.h0.norm() == 0.0
    assert sol.ledger.certified


def test_problem_validation(heat_line, bump):
    with pytest.raises(ValueError):
        _problem(heat_line, bump, Everywhere(1), epsilon=1.5)
    with pytest.raises(ValueError):
        _problem(heat_line, bump, Everywhere(1), C=0.0)
    with pytest.raises(GridMismatch):
        _problem(heat_line, SpectralField.zeros(GridSpec(n=2, L=8.0, N=16)), Everywhere(1))
    with pytest.raises(ValueError):
        synthesize(_problem(heat_line, bump, Everywhere(1)), cg_tol=0.1)


def test_stall_is_raised(lattice_problem):
    with pytest.raises(CgStall) as info:
        synthesize(lattice_problem, cg_tol=1e-11, max_iter=1)
    assert info.value.iterations == 1


def test_gramian_is_self_adjoint_and_nonnegative(lattice_problem, rng):
    grid = lattice_problem.grid
    f = SpectralField.random(grid, rng)
    g = SpectralField.random(grid, rng)
    assert gramian_apply(lattice_problem, f).inner(g) == pytest.approx(
        np.conj(gramian_apply(lattice_problem, g).inner(f)), rel=1e-10)
    assert gramian_apply(lattice_problem, f).inner(f).real >= 0.0


def test_duality_identity(lattice_problem):
    sol = synthesize(lattice_problem)
    assert duality_check(lattice_problem, sol, probes=4, seed=3) < 1e-10


def test_with_rates_reuses_discretization(lattice_problem):
    other = lattice_problem.with_rates(epsilon=0.05, C=10.0)
    assert other.masks is lattice_problem.masks
    assert other.epsilon == 0.05 and lattice_problem.epsilon == 0.1
    assert not np.allclose(other.preconditioner, lattice_problem.preconditioner)


def test_certify_full_support(heat_line, bump):
    table = certify_uniform_cost(_problem(heat_line, bump, Everywhere(1)), [0.5, 0.1, 0.02],
                                 c_start=1.0, c_cap=2.0 ** 20)
    assert (table["status"] == CERTIFIED).all()
    assert np.all(np.diff(table["C_found"].to_numpy()) >= 0)
    assert (table["terminal_ratio"] <= table["epsilon"]).all()


def test_certify_empty_support_hits_cap(heat_line, bump):
    table = certify_uniform_cost(_problem(heat_line, bump, Nowhere(1)), [0.1], c_start=1.0, c_cap=8.0)
    row = table.iloc[0]
    assert row["status"] == NOT_CERTIFIED
    assert row["reason"] == "cap"
    # G = 0, so the ledger at the cap is ‖U(T,0)f0‖²/ε > ‖f0‖² after one attempt
    assert row["attempts"] == 1
    assert np.isnan(row["C_found"])
    target = apply_propagator(heat_line, 0.0, bump)
    assert row["cap_lower_bound"] == pytest.approx(target.norm_sq() / 0.1, rel=1e-10)


def test_observability_with_full_support(heat_line, bump):
    assert observability_check(_problem(heat_line, bump, Everywhere(1)), probes=10) <= 1.0


def test_quadrature_convergence_table(lattice_problem):
    table = quadrature_convergence(lattice_problem, [8, 16, 32])
    assert table["time_nodes"].tolist() == [8, 16, 32]
    assert table["relative_change"].iloc[-1] == 0.0
    assert (table["terminal_norm"] > 0).all()


def test_cost_lower_bound_is_tight_at_the_minimizer(lattice_problem, rng):
    sol = synthesize(lattice_problem, cg_tol=1e-10)
    exact = sol.ledger.lhs
    assert cost_lower_bound(lattice_problem, [sol.h0]) == pytest.approx(exact, rel=1e-5)
    trials = [SpectralField.random(lattice_problem.grid, rng) for _ in range(5)]
    assert cost_lower_bound(lattice_problem, trials) <= exact * (1 + 1e-5)
    assert cost_lower_bound(lattice_problem, []) == 0.0


def test_stall_keeps_the_last_iterate(lattice_problem):
    with pytest.raises(CgStall) as info:
        synthesize(lattice_problem, cg_tol=1e-11, max_iter=3)
    iterate = info.value.iterate
    assert iterate is not None and iterate.shape == lattice_problem.grid.shape
    assert 0.0 < cost_lower_bound(lattice_problem, [iterate])


def test_plateau_rule_ignores_oscillation():
    # a spike above an earlier value while the best keeps dropping
    zigzag = [1.0, 0.5, 0.8, 0.3, 0.6, 0.2, 0.5, 0.1]
    assert not _plateaued(zigzag, window=2, factor=0.99)
    flat = [1.0, 0.5, 0.5, 0.6, 0.55]
    assert _plateaued(flat, window=3, factor=0.99)
    assert not _plateaued([1.0, 2.0], window=2, factor=0.99)


def test_certify_stall_without_proof_is_saturated(lattice_problem):
    table = certify_uniform_cost(lattice_problem, [0.1], c_start=1000.0, c_cap=2.0 ** 40,
                                 cg_tol=1e-11, max_iter=1)
    row = table.iloc[0]
    assert row["status"] == NOT_CERTIFIED
    assert row["reason"] == "solver_saturated"
    assert row["cap_lower_bound"] <= lattice_problem.f0.norm_sq()
