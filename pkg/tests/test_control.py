import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from sheetcontrol.adjoint import ConvergenceError, Hamiltonian
from sheetcontrol.calculus import star
from sheetcontrol.control import (
    HarvestSpec,
    LQSpec,
    MLSpec,
    SingularControlError,
    harvest_problem,
    harvest_solve,
    lq_condition_value,
    lq_feedback,
    lq_find_X,
    lq_lambda_closed_form,
    lq_lambda_separable,
    lq_problem,
    lq_riccati_residual,
    lq_solve_and_verify,
    ml_forward_backward_sweep,
    ml_problem,
    perturbation_dominance,
    star_one_expansion,
)
from sheetcontrol.forward import path_rewards, solve_forward
from sheetcontrol.grid import Field2D, GridSpec, sample_sheet
from sheetcontrol.special import series_f


# ---------------------------------------------------------------- LQ

def test_lq_lambda_examples():
    spec = LQSpec(0.5, 1.0, 1.0)
    assert lq_lambda_closed_form(spec, 0.0, 0.0) == pytest.approx(1.0)
    assert lq_lambda_closed_form(spec, 0.5, 1.0) == pytest.approx(1.0)
    assert lq_lambda_closed_form(spec, 0.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        lq_lambda_closed_form(spec, 0.6, 0.0)
    with pytest.raises(ValueError):
        LQSpec(1.0, 1.0, 1.0)


def test_separable_factors_solve_scalar_riccati_odes():
    theta = 2.0
    spec = LQSpec(0.7, 1.5, theta)
    s = np.linspace(0, 0.7, 8)
    r = np.linspace(0, 1.5, 8)
    phi1 = solve_ivp(lambda t, y: y * y, (0, 0.7), [1.0], t_eval=s, rtol=1e-12, atol=1e-14).y[0]
    phi2 = solve_ivp(lambda t, y: -y * y, (0, 1.5), [theta], t_eval=r, rtol=1e-12, atol=1e-14).y[0]
    got = lq_lambda_separable(spec, 0.7 - s[:, None], 1.5 - r[None, :])
    np.testing.assert_allclose(got, phi1[:, None] * phi2[None, :], rtol=1e-9)
    tt, xx = np.meshgrid(np.linspace(0, 0.7, 5), np.linspace(0, 1.5, 5), indexing="ij")
    np.testing.assert_allclose(lq_lambda_closed_form(spec, tt, xx), lq_lambda_separable(spec, tt, xx),
                               rtol=1e-14)


def test_riccati_residual_is_second_order():
    spec = LQSpec(0.5, 1.0, 1.5)
    r1 = abs(lq_riccati_residual(spec, 0.25, 0.5, h=2e-2))
    r2 = abs(lq_riccati_residual(spec, 0.25, 0.5, h=1e-2))
    assert r1 > 0 and 3.5 < r1 / r2 < 4.5
    assert abs(lq_riccati_residual(spec, 0.25, 0.5, separable=True)) < 1e-6
    with pytest.raises(ValueError):
        lq_riccati_residual(spec, 0.0001, 0.5)


def test_condition_value_limits_and_monotonicity():
    assert lq_condition_value(0.5, 0.0, 1.0) == pytest.approx(0.5)
    T, theta = 0.5, 1.0
    xs = np.linspace(0, 3, 31)
    vals = [lq_condition_value(T, X, theta) for X in xs]
    assert np.all(np.diff(vals) > 0)
    X = 0.8
    arg = math.log(1 / (1 - T)) * math.log(1 + X * theta)
    assert lq_condition_value(T, X, theta) == pytest.approx((1 - T) * (1 + X * theta) * series_f(arg).value)
    with pytest.raises(ValueError):
        lq_condition_value(1.0, 1.0, 1.0)


@pytest.mark.parametrize("T", [0.1, 0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_lq_find_X_root(T, theta):
    X = lq_find_X(T, theta)
    assert abs(lq_condition_value(T, X, theta) - 1.0) < 1e-12
    assert X > 0


def test_lq_root_decreases_in_theta():
    roots = [lq_find_X(0.5, th) for th in (0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(roots) < 0)
    assert lq_find_X(0.5, 1.0) == pytest.approx(0.5227439317793653, abs=1e-12)


def test_lq_problem_and_feedback():
    spec = LQSpec(0.5, 1.0, 1.0)
    prob = lq_problem(spec)
    g = GridSpec(0.5, 1.0, 8, 8)
    assert Hamiltonian(prob, g).check_derivatives() < 1e-8
    fb = lq_feedback(spec, -1.0)
    assert fb(0.0, 0.0, 2.0) == pytest.approx(-2.0)


def test_lq_report_deterministic_identity_small():
    X = lq_find_X(0.5, 1.0)
    rep = lq_solve_and_verify(LQSpec(0.5, X, 1.0), n_paths=200, seed=1, n_det=128, n_mc=16)
    assert rep.condition == pytest.approx(1.0, abs=1e-12)
    assert rep.series_mean == pytest.approx(rep.lambda00, rel=1e-12)
    assert rep.deterministic_rel_err < 2e-5
    with pytest.raises(ValueError):
        lq_solve_and_verify(LQSpec(0.5, X, 1.0, y0=0.0), 10, 0)


# ---------------------------------------------------------------- harvesting

def test_star_one_expansion_equals_star_with_one():
    g = GridSpec(1, 1, 6, 5)
    L = Field2D(g, np.random.default_rng(0).normal(size=g.shape))
    np.testing.assert_allclose(star_one_expansion(L), star(L, 1.0).values, atol=1e-13)
    np.testing.assert_allclose(star_one_expansion(L, 0.5), star(L, 1.0, horizon_t=0.5).values, atol=1e-13)


def test_harvest_without_growth_is_constant():
    u, adj = harvest_solve(HarvestSpec(0.0, 0.5, 2.0), n_t=8)
    np.testing.assert_allclose(u.values, 1.0)
    np.testing.assert_allclose(adj.p.values, 2.0)


def test_harvest_control_stationary_in_hamiltonian():
    spec = HarvestSpec(0.1, 0.5, 1.0)
    u, adj = harvest_solve(spec, n_t=8)
    g = u.grid
    dH = Hamiltonian(harvest_problem(spec), g).dH_du(1.0, u.values, adj.p, adj.q, adj.L)
    assert np.max(np.abs(dH)) < 1e-10
    assert np.all(u.values > 0)


def test_harvest_singular_control():
    with pytest.raises(SingularControlError):
        harvest_solve(HarvestSpec(0.0, 0.5, 0.0), n_t=4)
    with pytest.raises(ValueError):
        HarvestSpec(0.1, 0.5, 1.0, y0=0.0)


# ---------------------------------------------------------------- learning rate

def test_ml_trivial_cases_converge_immediately():
    r = ml_forward_backward_sweep(MLSpec(theta=0.0), n_t=4)
    assert r.converged and r.sweeps == 0 and np.all(r.u.values == 0)
    r = ml_forward_backward_sweep(MLSpec(y0=0.0), n_t=4)
    assert r.converged and np.all(r.u.values == 0)


def test_ml_printed_rule_diverges():
    with np.errstate(all="ignore"):
        with pytest.raises(ArithmeticError):
            ml_forward_backward_sweep(MLSpec(rule="printed"), n_t=4)


def test_ml_stationary_rule_residuals_small_grid():
    r = ml_forward_backward_sweep(MLSpec(max_sweeps=2000), n_t=4)
    assert r.converged
    assert r.residuals["control"] < 1e-6
    assert r.residuals["L"] < 1e-10 and r.residuals["adjoint"] < 1e-10 and r.residuals["state"] == 0
    assert r.residuals["dH_du"] <= 2 * 1e-6 + 1e-12
    assert np.all(r.u.values >= 0)


def test_ml_budget_exhaustion():
    with pytest.raises(ConvergenceError) as info:
        ml_forward_backward_sweep(MLSpec(max_sweeps=3), n_t=4)
    assert len(info.value.residuals) == 3
    r = ml_forward_backward_sweep(MLSpec(max_sweeps=3), n_t=4, raise_on_failure=False)
    assert not r.converged and r.sweeps == 3


def test_ml_mode_checks():
    with pytest.raises(ValueError):
        ml_forward_backward_sweep(MLSpec(beta0=0.5), n_t=4)
    with pytest.raises(ValueError):
        ml_forward_backward_sweep(MLSpec(beta0=0.5), n_t=4, sheet=sample_sheet(GridSpec(1, 1, 2, 2), 0))
    with pytest.raises(ValueError):
        MLSpec(gamma=0.0)
    with pytest.raises(ValueError):
        MLSpec(rule="other")


def test_ml_pathwise_sweep_runs():
    g = GridSpec(1, 1, 4, 4)
    r = ml_forward_backward_sweep(MLSpec(beta0=0.3, max_sweeps=3000), n_t=4, sheet=sample_sheet(g, 0))
    assert r.converged and r.residuals["state"] == 0


# ---------------------------------------------------------------- perturbation harness

def test_zero_step_row_equals_base():
    spec = LQSpec(0.5, 0.5, 1.0)
    g = GridSpec(0.5, 0.5, 8, 8)
    tab = perturbation_dominance(lq_problem(spec), lq_feedback(spec), {"c": Field2D.constant(g, 1.0)},
                                 [0.0, 0.1], 200, 3, g, deriv_step=0.1)
    zero = [r for r in tab.rows if r.eps == 0.0][0]
    assert zero.J == tab.J_base and zero.diff == 0.0
    assert tab.n_paths == 200


def test_harness_recognises_discrete_optimum():
    """At the numerically exact optimum of the discrete ML functional the
    harness must report dominance and a vanishing derivative."""
    spec = MLSpec()
    prob = ml_problem(spec)
    g = GridSpec(1, 1, 4, 4)
    cells = (slice(0, 4), slice(0, 4))

    def J(v):
        u = np.zeros(g.shape)
        u[cells] = v.reshape(4, 4)
        return float(path_rewards(prob, solve_forward(prob, Field2D(g, u), g)))

    opt = minimize(lambda v: -J(v), np.zeros(16), method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15})
    u = np.zeros(g.shape)
    u[cells] = opt.x.reshape(4, 4)
    dirs = {"const": Field2D.constant(g, 1.0), "tx": Field2D.from_function(g, lambda t, x: t - x)}
    tab = perturbation_dominance(prob, Field2D(g, u), dirs, [-0.1, 0.1], None, 0, g, deriv_step=1e-4)
    assert tab.dominated(2.0)
    assert tab.stationary(2.0, floor=1e-6)
    # and a clearly suboptimal control is flagged
    bad = perturbation_dominance(prob, 0.0, dirs, [-0.1, 0.1], None, 0, g, deriv_step=1e-4)
    assert not bad.dominated(2.0) and not bad.stationary(2.0, floor=1e-6)


def test_dominance_table_csv(tmp_path):
    g = GridSpec(1, 1, 2, 2)
    prob = ml_problem(MLSpec())
    tab = perturbation_dominance(prob, 0.0, [Field2D.constant(g, 1.0)], [0.1], None, 0, g)
    tab.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "direction,eps,J,se,diff,diff_se" and lines[1].startswith("base")
    with pytest.raises(ValueError):
        perturbation_dominance(prob, 0.0, {}, [0.1], None, 0, g)
