import numpy as np
import pytest

from sheetcontrol.forward import (
    BlowUpError,
    ControlProblem,
    estimate_J,
    mean_and_se,
    negativity_experiment,
    path_statistics,
    solve_forward,
    solve_mean_volterra,
)
from sheetcontrol.grid import Field2D, GridSpec, sample_ensemble, sample_sheet
from sheetcontrol.special import series_f


def linear_problem(a, b, y0=1.0, T=1.0, X=1.0, **kw):
    return ControlProblem(alpha=lambda t, x, y, u: a * y + u, beta=lambda t, x, y, u: b * y + 0 * u,
                          T=T, X=X, y0=y0, **kw)


def loop_forward(a, b, y0, grid, dB, u):
    Y = np.full(grid.shape, float(y0))
    for i in range(1, grid.n_t + 1):
        for j in range(1, grid.n_x + 1):
            acc = y0
            for k in range(i):
                for l in range(j):
                    acc += (a * Y[k, l] + u[k, l]) * grid.cell_area + b * Y[k, l] * dB[k, l]
            Y[i, j] = acc
    return Y


def test_forward_matches_loop_oracle():
    g = GridSpec(1.0, 2.0, 5, 6)
    s = sample_sheet(g, 3)
    u = Field2D.from_function(g, lambda t, x: np.sin(t + x))
    got = solve_forward(linear_problem(0.7, 0.4, X=2.0), u, s).Y.values
    np.testing.assert_allclose(got, loop_forward(0.7, 0.4, 1.0, g, s.cell_increments, u.values), rtol=1e-12)


def test_deterministic_solution_converges_to_bessel_series():
    lam = 1.3
    errs = []
    for n in (16, 32, 64):
        g = GridSpec(1, 1, n, n)
        Y = solve_forward(linear_problem(lam, 0.0), 0.0, g).Y.values[-1, -1]
        errs.append(abs(Y - series_f(lam).value))
    assert errs[-1] < 0.05 and errs[1] < 0.6 * errs[0] and errs[2] < 0.6 * errs[1]


def test_mean_volterra_matches_forward_when_noise_is_off():
    g = GridSpec(1, 1, 8, 8)
    lam = Field2D.from_function(g, lambda t, x: 0.5 + t * x)
    prob = ControlProblem(alpha=lambda t, x, y, u: (0.5 + t * x) * y, beta=lambda t, x, y, u: 0 * y,
                          T=1, X=1, y0=2.0)
    np.testing.assert_allclose(solve_mean_volterra(lam, 2.0).values,
                               solve_forward(prob, 0.0, g).Y.values, rtol=1e-13)


def test_mean_of_linear_equation_matches_volterra():
    g = GridSpec(1, 1, 16, 16)
    e = sample_ensemble(g, 5, 20000)
    Y = solve_forward(linear_problem(0.8, 0.6), 0.0, e).Y.values[:, -1, -1]
    m = solve_mean_volterra(Field2D.constant(g, 0.8), 1.0).values[-1, -1]
    mean, se = mean_and_se(Y)
    assert abs(mean - m) < 4 * se


def test_additive_noise_gives_brownian_sheet():
    g = GridSpec(1, 1, 6, 6)
    s = sample_sheet(g, 9)
    prob = ControlProblem(alpha=lambda t, x, y, u: 0 * y, beta=lambda t, x, y, u: 0.5 + 0 * y, T=1, X=1, y0=2)
    np.testing.assert_allclose(solve_forward(prob, 0.0, s).Y.values, 2 + 0.5 * s.node_values, atol=1e-13)


def test_feedback_equals_open_loop_of_realised_control():
    g = GridSpec(1, 1, 8, 8)
    s = sample_sheet(g, 2)
    prob = linear_problem(0.3, 0.5)
    fb = solve_forward(prob, lambda t, x, y: -0.4 * y + t, s)
    ol = solve_forward(prob, fb.u, s)
    np.testing.assert_allclose(ol.Y.values, fb.Y.values, rtol=1e-13)


def test_control_shape_and_grid_checks():
    g = GridSpec(1, 1, 4, 4)
    with pytest.raises(ValueError):
        solve_forward(linear_problem(1, 0), Field2D.constant(GridSpec(1, 1, 2, 2), 0.0), g)
    with pytest.raises(ValueError):
        solve_forward(linear_problem(1, 0, T=2.0), 0.0, g)
    with pytest.raises(ValueError):
        ControlProblem(alpha=None, beta=None, T=0, X=1, y0=1)
    with pytest.raises(ValueError):
        ControlProblem(alpha=None, beta=None, T=1, X=1, y0=1, u_bounds=(1, 0))


def test_blow_up_reports_node():
    prob = ControlProblem(alpha=lambda t, x, y, u: y ** 3 * 1e100, beta=lambda t, x, y, u: 0 * y,
                          T=1, X=1, y0=10.0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(BlowUpError) as info:
            solve_forward(prob, 0.0, GridSpec(1, 1, 4, 4))
    assert info.value.node[0] >= 1


def test_path_statistics_chunk_invariant():
    g = GridSpec(1, 1, 8, 8)
    prob = linear_problem(0.2, 0.7, cost=lambda t, x, y, u: -y * y, terminal=lambda y: y)
    a = path_statistics(prob, 0.1, 250, 17, g, chunk=1000)
    b = path_statistics(prob, 0.1, 250, 17, g, chunk=37)
    for key in a:
        np.testing.assert_array_equal(a[key], b[key])


def test_estimate_J_deterministic_reward():
    g = GridSpec(1, 1, 4, 4)
    prob = ControlProblem(alpha=lambda t, x, y, u: 0 * y, beta=lambda t, x, y, u: 0 * y, T=1, X=1, y0=3,
                          cost=lambda t, x, y, u: 2 + 0 * y, terminal=lambda y: -y)
    mean, se = estimate_J(prob, 0.0, 10, 0, g)
    assert mean == pytest.approx(-1.0) and se == 0.0
    with pytest.raises(ValueError):
        estimate_J(prob, 0.0, 1, 0, g)


def test_negativity_probability_invariant_to_y0():
    g = GridSpec(1, 1, 16, 16)
    a = negativity_experiment(0.0, 1.0, 1.0, g, 2000, 4)
    b = negativity_experiment(0.0, 1.0, 7.5, g, 2000, 4)
    assert a.probability == b.probability and a.probability > 0
    np.testing.assert_allclose(b.min_values, 7.5 * a.min_values, rtol=1e-12, atol=1e-13)
    assert a.lower_bound < a.probability
    with pytest.raises(ValueError):
        negativity_experiment(0.0, 1.0, 0.0, g, 10, 0)


def test_mean_and_se_single_value():
    assert mean_and_se(np.array([2.0])) == (2.0, 0.0)
