import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rofflow.analysis import (
    Interpolant,
    RefinementSchedule,
    continuous_J_of_interpolant,
    derivative_energy_audit,
    evaluate_piecewise_linear,
    interpolant_cell_gap,
    interpolant_eval,
    lip_seminorm_estimate,
    refinement_study,
    translation_modulus,
    tv_equality_gap,
)
from rofflow.energy import EnergyParams
from rofflow.grid import GridFunction, project_cell_average
from rofflow.solver import SolverConfig, evolve


def short_trajectory(n=6, steps=3, seed=0):
    rng = np.random.default_rng(seed)
    f = GridFunction(rng.standard_normal((n, n)))
    return evolve(GridFunction(rng.standard_normal((n, n))), f, SolverConfig(dt=0.1, steps=steps))


def test_nodal_values_reproduced_exactly():
    traj = short_trajectory()
    n = traj.states[0].n
    for k, u in enumerate(traj.states):
        t = k * traj.config.dt
        for i, j in [(0, 0), (2, 3), (n - 1, n - 1), (n - 1, 0)]:
            x = ((i + 0.5) / n, (j + 0.5) / n)
            assert interpolant_eval(traj, x, t) == u[i, j]


def test_linear_in_time_between_steps():
    traj = short_trajectory()
    x = (0.37, 0.61)
    a = interpolant_eval(traj, x, 0.1)
    b = interpolant_eval(traj, x, 0.2)
    assert interpolant_eval(traj, x, 0.125) == pytest.approx(0.75 * a + 0.25 * b, abs=1e-13)


def test_out_of_domain_rejected():
    traj = short_trajectory()
    with pytest.raises(ValueError):
        interpolant_eval(traj, (1.01, 0.5), 0.1)
    with pytest.raises(ValueError):
        interpolant_eval(traj, (0.5, 0.5), 0.31)


def test_frame_takes_containing_cell_value():
    a = np.arange(16, dtype=float).reshape(4, 4)
    # x = 0.05 lies in the frame of the first column, cell (0, 2)
    assert evaluate_piecewise_linear(a, 0.05, 0.6) == a[2, 0]
    assert evaluate_piecewise_linear(a, 1.0, 1.0) == a[3, 3]
    assert evaluate_piecewise_linear(a, 0.99, 0.01) == a[0, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_continuous_across_triangle_edges(seed, s):
    n = 5
    a = np.random.default_rng(seed).standard_normal((n, n))
    h = 1.0 / n
    i, j = 1, 2
    # a point on the diagonal of the square anchored at centre (i, j)
    x = (i + 0.5 + s) * h
    y = (j + 0.5 + 1 - s) * h
    d = 1e-9 * h
    lo = evaluate_piecewise_linear(a, x - d, y - d)
    hi = evaluate_piecewise_linear(a, x + d, y + d)
    assert abs(lo - hi) <= 1e-7 * (1 + np.abs(a).max())
    # and across a vertical mesh line
    x = (i + 1.5) * h
    y = (j + 0.5 + s) * h
    lo = evaluate_piecewise_linear(a, x - d, y)
    hi = evaluate_piecewise_linear(a, x + d, y)
    assert abs(lo - hi) <= 1e-7 * (1 + np.abs(a).max())


def test_linear_data_interpolated_exactly_in_hull():
    n = 6
    c = (np.arange(n) + 0.5) / n
    a = 3 * c[None, :] - 2 * c[:, None]
    rng = np.random.default_rng(1)
    x, y = rng.uniform(c[0], c[-1], size=(2, 200))
    np.testing.assert_allclose(evaluate_piecewise_linear(a, x, y), 3 * x - 2 * y, atol=1e-13)


def _brute_force_J(u, f, params, m=1200):
    """Midpoint rule for the data term, centroid finite differences for the variation."""
    n = u.n
    h = 1.0 / n
    c = (np.arange(m) + 0.5) / m
    xs, ys = np.meshgrid(c, c)
    U = evaluate_piecewise_linear(u.values, xs, ys)
    F = f.values[(ys * n).astype(int), (xs * n).astype(int)]
    data = np.mean((U - F) ** 2) / (2 * params.lam)

    total = 0.0
    d = 1e-6 * h
    for i in range(n - 1):
        for j in range(n - 1):
            for cx, cy in ((1 / 3, 1 / 3), (2 / 3, 2 / 3)):
                px, py = (i + 0.5 + cx) * h, (j + 0.5 + cy) * h
                gx = (evaluate_piecewise_linear(u.values, px + d, py) - evaluate_piecewise_linear(u.values, px - d, py)) / (2 * d)
                gy = (evaluate_piecewise_linear(u.values, px, py + d) - evaluate_piecewise_linear(u.values, px, py - d)) / (2 * d)
                total += 0.5 * h * h * math.sqrt(params.epsilon + gx * gx + gy * gy)
    frame = 2 * h - h * h
    return total + frame * math.sqrt(params.epsilon) + data


@pytest.mark.parametrize("n", [3, 6])
def test_continuous_J_matches_brute_force(n):
    rng = np.random.default_rng(20 + n)
    u = GridFunction(rng.standard_normal((n, n)))
    f = GridFunction(rng.standard_normal((n, n)))
    params = EnergyParams(0.2, 1.5)
    assert continuous_J_of_interpolant(u, f, params) == pytest.approx(_brute_force_J(u, f, params), rel=1e-5)


@pytest.mark.parametrize("n", [4, 9, 16])
def test_interior_tv_gap_is_rounding(n):
    rng = np.random.default_rng(n)
    u = GridFunction(rng.standard_normal((n, n)))
    interior, full = tv_equality_gap(u, EnergyParams(0.01, 1.0))
    assert interior <= 1e-12
    assert full > 0


def test_full_tv_gap_is_first_order():
    src = lambda x, y: np.sin(2 * x) + y * y
    sizes = [8, 16, 32]
    gaps = [tv_equality_gap(project_cell_average(src, n), EnergyParams(0.01, 1.0))[1] for n in sizes]
    slope = np.polyfit(np.log([1 / n for n in sizes]), np.log(gaps), 1)[0]
    assert 0.9 <= slope <= 1.2


def test_cell_gap_decays_with_h_for_smooth_data():
    src = lambda x, y: np.cos(3 * x) * np.sin(2 * y)
    gaps = [interpolant_cell_gap(project_cell_average(src, n)) for n in (8, 16, 32)]
    assert gaps[1] < 0.6 * gaps[0] and gaps[2] < 0.6 * gaps[1]
    assert interpolant_cell_gap(GridFunction.constant(5, 2.0)) == 0.0


def test_derivative_energy_audit_holds():
    lhs, rhs = derivative_energy_audit(short_trajectory(n=10, steps=6, seed=3))
    assert 0 < lhs <= rhs + 1e-8


def test_translation_modulus_of_ramp():
    n = 8
    u = GridFunction(np.tile(np.arange(n, dtype=float), (n, 1)))
    mx, my = translation_modulus(u)
    h = 1.0 / n
    # n-1 unit jumps per row, n rows, each weighted by h^2
    assert mx == pytest.approx(math.sqrt((n - 1) * n) * h)
    assert my == 0.0


def test_lip_estimate_of_step():
    n = 32
    a = np.zeros((n, n))
    a[:, n // 2 :] = 1.0
    u = GridFunction(a)
    h = 1.0 / n
    assert lip_seminorm_estimate(u, 1.0) == pytest.approx(1 / math.sqrt(h))
    # a jump is Lip(1/2, L2): every shift gives the same ratio
    assert lip_seminorm_estimate(u, 0.5) == pytest.approx(1.0)
    assert lip_seminorm_estimate(u, 0.5, max_shift=1) == pytest.approx(1.0)


def test_schedule_validation_and_coupling():
    with pytest.raises(ValueError):
        RefinementSchedule(1.0, 0.5, ((32, 2), (16, 2)))
    with pytest.raises(ValueError):
        RefinementSchedule(1.5, 0.5, ((16, 2),))
    sched = RefinementSchedule.power_law(1.0, 0.5, [16, 32, 64])
    assert sched.levels == ((16, 2), (32, 3), (64, 4))
    assert sched.coupled
    # M growing like N^alpha keeps the ratio fixed: not coupled
    assert not RefinementSchedule(1.0, 1.0, ((16, 16), (32, 32))).coupled


def test_study_of_constant_source_has_zero_distances():
    sched = RefinementSchedule.power_law(1.0, 0.5, [4, 8, 16])
    res = refinement_study(lambda x, y: np.full(np.broadcast(x, y).shape, 0.25), sched, SolverConfig())
    assert math.isnan(res.rows[0].dist_to_prev_level)
    assert res.distances == [0.0, 0.0]


def test_interpolant_horizon():
    traj = short_trajectory(steps=4)
    assert Interpolant(traj).horizon == pytest.approx(0.4)


def _subtriangle_quadrature_J(u, f, params, per_edge=16):
    """Dense quadrature oracle: 256 sub-triangles per mesh triangle, degree-2 rule.

    With 16 subdivisions per edge the cell boundaries fall on sub-triangle
    edges, so each sub-triangle sees a single value of f and a linear U; the
    three-interior-point rule is then exact.  The frame is sampled on a grid
    aligned with the cell and frame boundaries.
    """
    n = u.n
    h = 1.0 / n
    a = u.values
    fv = f.values
    c = (np.arange(n) + 0.5) * h

    # reference sub-triangles in barycentric (s, t) coordinates
    k = per_edge
    subs = []
    for i in range(k):
        for j in range(k - i):
            subs.append(((i, j), (i + 1, j), (i, j + 1)))
            if i + j < k - 1:
                subs.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
    subs = np.array(subs, dtype=float) / k  # (256, 3, 2)
    rule = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
    # quadrature points in reference coordinates: (256, 3, 2)
    q = subs[:, :1] + rule[:, :1] * (subs[:, 1:2] - subs[:, :1]) + rule[:, 1:] * (subs[:, 2:3] - subs[:, :1])

    data = 0.0
    variation = 0.0
    d = 1e-6 * h
    for i in range(n - 1):
        for j in range(n - 1):
            for p0, p1, p2 in (
                ((c[i], c[j]), (c[i + 1], c[j]), (c[i], c[j + 1])),
                ((c[i + 1], c[j + 1]), (c[i], c[j + 1]), (c[i + 1], c[j])),
            ):
                p0, p1, p2 = map(np.array, (p0, p1, p2))
                pts = p0 + q[..., :1] * (p1 - p0) + q[..., 1:] * (p2 - p0)
                x, y = pts[..., 0], pts[..., 1]
                U = evaluate_piecewise_linear(a, x, y)
                F = fv[(y * n).astype(int), (x * n).astype(int)]
                data += np.sum((U - F) ** 2) / 3 * (h * h / 2) / len(subs)
                cx, cy = (p0 + p1 + p2) / 3
                gx = (evaluate_piecewise_linear(a, cx + d, cy) - evaluate_piecewise_linear(a, cx - d, cy)) / (2 * d)
                gy = (evaluate_piecewise_linear(a, cx, cy + d) - evaluate_piecewise_linear(a, cx, cy - d)) / (2 * d)
                variation += h * h / 2 * math.sqrt(params.epsilon + gx * gx + gy * gy)

    m = 8 * n
    s = (np.arange(m) + 0.5) / m
    xs, ys = np.meshgrid(s, s)
    frame = (xs < h / 2) | (xs > 1 - h / 2) | (ys < h / 2) | (ys > 1 - h / 2)
    U = evaluate_piecewise_linear(a, xs[frame], ys[frame])
    F = fv[(ys[frame] * n).astype(int), (xs[frame] * n).astype(int)]
    data += np.sum((U - F) ** 2) / m**2
    variation += (2 * h - h * h) * math.sqrt(params.epsilon)
    return variation + data / (2 * params.lam)


def test_continuous_J_matches_subtriangle_oracle():
    n = 8
    rng = np.random.default_rng(88)
    u = GridFunction(rng.standard_normal((n, n)))
    f = GridFunction(rng.standard_normal((n, n)))
    params = EnergyParams(0.5, 2.0)
    assert continuous_J_of_interpolant(u, f, params) == pytest.approx(_subtriangle_quadrature_J(u, f, params), abs=1e-6)


def test_continuous_J_of_constant_is_sqrt_eps():
    u = GridFunction.constant(7, 1.5)
    assert continuous_J_of_interpolant(u, u, EnergyParams(0.09, 1.0)) == pytest.approx(0.3, abs=1e-15)


def test_single_sloped_triangle_contribution():
    # only the lower-left triangle of the first square sees a slope (1, 0)
    n = 4
    h = 1.0 / n
    a = np.zeros((n, n))
    a[0, 1] = h
    u = GridFunction(a)
    eps = 0.25
    # the other triangles touching vertex (1, 0) have nonzero gradients too;
    # compare against the constant-gradient formula for every triangle
    from rofflow.analysis import _triangle_gradients

    grads, areas = _triangle_gradients(a)
    assert areas[0] == pytest.approx(h * h / 2)
    np.testing.assert_allclose(grads[0], [1.0, 0.0], atol=1e-14)
    tri = float(np.sum(areas * np.sqrt(eps + np.sum(grads**2, axis=1))))
    # U differs from the step function u^h, so take the data term out explicitly
    lam = 1.0
    data = interpolant_cell_gap(u) ** 2 / (2 * lam)
    total = continuous_J_of_interpolant(u, u, EnergyParams(eps, lam))
    assert total == pytest.approx(tri + (2 * h - h * h) * math.sqrt(eps) + data)


def test_constant_and_edge_midpoint_evaluation():
    a = np.full((5, 5), 4.25)
    rng = np.random.default_rng(2)
    x, y = rng.random((2, 50))
    assert np.all(evaluate_piecewise_linear(a, x, y) == 4.25)
    b = rng.standard_normal((5, 5))
    h = 0.2
    # horizontal, vertical and anti-diagonal edges
    assert evaluate_piecewise_linear(b, 2 * h, 1.5 * h) == pytest.approx(0.5 * (b[1, 1] + b[1, 2]))
    assert evaluate_piecewise_linear(b, 1.5 * h, 2 * h) == pytest.approx(0.5 * (b[1, 1] + b[2, 1]))
    assert evaluate_piecewise_linear(b, 2 * h, 2 * h) == pytest.approx(0.5 * (b[1, 2] + b[2, 1]))


def test_constant_grid_has_no_tv_gap():
    interior, full = tv_equality_gap(GridFunction.constant(8, 3.0), EnergyParams(0.3, 1.0))
    assert interior == pytest.approx(0.0, abs=1e-14)
    assert full == pytest.approx(0.0, abs=1e-14)


def test_derivative_audit_constant_and_recomputed():
    c = GridFunction.constant(6, 2.0)
    assert derivative_energy_audit(evolve(c, c, SolverConfig(steps=3))) == (0.0, 0.0)

    rng = np.random.default_rng(31)
    f = GridFunction(rng.standard_normal((8, 8)))
    cfg = SolverConfig(dt=0.1, steps=10)
    traj = evolve(f, f, cfg)
    lhs, rhs = derivative_energy_audit(traj)
    from oracles import dense_J

    s = traj.states
    lhs_ref = sum(np.sum((b.values - a.values) ** 2) / 64 for a, b in zip(s, s[1:])) / cfg.dt
    rhs_ref = dense_J(s[0].flat, f.flat, 1.0, 30.0) - dense_J(s[-1].flat, f.flat, 1.0, 30.0)
    assert lhs == pytest.approx(lhs_ref, abs=1e-12)
    assert rhs == pytest.approx(rhs_ref, abs=1e-12)
    assert lhs <= rhs + 1e-8


def test_translation_modulus_shift_invariant():
    rng = np.random.default_rng(4)
    u = GridFunction(rng.standard_normal((6, 6)))
    assert translation_modulus(u + 10.0) == pytest.approx(translation_modulus(u), abs=1e-12)
    assert translation_modulus(GridFunction.constant(6, 1.0)) == (0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_lip_estimate_monotone_in_alpha(seed, a1, a2):
    n = 8
    u = GridFunction(0.5 * np.random.default_rng(seed).random((n, n)))
    lo, hi = sorted((a1, a2))
    # shifts satisfy d h <= 1, so (d h)^alpha shrinks and the ratio grows with alpha
    assert lip_seminorm_estimate(u, lo) <= lip_seminorm_estimate(u, hi) * (1 + 1e-14)
    assert lip_seminorm_estimate(GridFunction.constant(n, 3.0), lo) == 0.0


def test_uncoupled_schedule_is_flagged():
    sched = RefinementSchedule(1.0, 0.5, tuple((n, n * n) for n in (4, 8)))
    assert not sched.coupled
    res = refinement_study(lambda x, y: x, sched, SolverConfig())
    assert not res.coupled and len(res.rows) == 2
