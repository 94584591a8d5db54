import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glidermdo import kernels, sizing

K = 4.0 * np.pi / 3.0
G = 9.804


def y_vec(a=0.1, b=0.1, c=0.1, t=0.01, v_buo=0.01, xi0=0.5, zeta0=0.0):
    return np.array([xi0, zeta0, a, b, c, t, v_buo])


def solve_volume_for_gap(budget, y, delta_vb, gap):
    """Shell volume V at which W - B equals ``gap`` (W - B is affine in V)."""
    a, b, c, t, v_buo = y[2:]
    w_ph = K * ((a + t) * (b + t) * (c + t) - a * b * c) * budget.rho_ph * G
    occupied = K * (a + t) * (b + t) * (c + t) + delta_vb + v_buo + budget.V_sci
    mass = budget.m_sci + budget.m_pay + budget.m_bat + budget.m_buo
    rho_w = budget.rho_water
    # W - B = w_ph + (V - occupied) rho_f g + M g - rho_w g (V - delta_vb - v_buo - V_sci)
    const = w_ph - occupied * budget.rho_fill * G + mass * G + rho_w * G * (delta_vb + v_buo + budget.V_sci)
    return (gap - const) / ((budget.rho_fill - rho_w) * G)


class TestEmptyWeight:
    def test_zero_thickness_shell_weighs_nothing(self, budget):
        v_int, v_ext = sizing.hull_volumes(y_vec(t=0.0))
        assert (v_ext - v_int) * budget.rho_ph * G == 0.0

    def test_shell_weight_hand_value(self, budget):
        v_int, v_ext = sizing.hull_volumes(y_vec(t=0.01))
        assert v_ext - v_int == pytest.approx(K * (1.331e-3 - 1.0e-3), rel=1e-12)
        assert (v_ext - v_int) * budget.rho_ph * G == pytest.approx(36.7, abs=0.05)

    def test_weight_decomposition(self, budget):
        y = y_vec(t=0.01, v_buo=0.02)
        volume, dvb = 0.3, 0.004
        w_ph = K * (0.11**3 - 0.1**3) * 2700.0 * G
        w_fill = (volume - K * 0.11**3 - dvb - 0.02 - 0.0068) * 950.0 * G
        assert sizing.empty_weight(volume, dvb, y, budget) == pytest.approx(w_ph + w_fill, rel=1e-12)

    @given(v1=st.floats(0.0, 0.05), dv=st.floats(1e-4, 0.05))
    def test_more_buoyancy_volume_lighter(self, budget, v1, dv):
        w1 = sizing.empty_weight(0.5, 0.003, y_vec(v_buo=v1), budget)
        w2 = sizing.empty_weight(0.5, 0.003, y_vec(v_buo=v1 + dv), budget)
        assert w2 < w1

    def test_overfull_shell_raises(self, budget):
        with pytest.raises(sizing.PackagingError):
            sizing.empty_weight(0.001, 0.003, y_vec(), budget)
        assert sizing.empty_weight(0.001, 0.003, y_vec(), budget, check=False) < 0

    def test_batch_matches_single(self, budget):
        Y = np.stack([y_vec(a=0.1), y_vec(a=0.2)])
        batch = sizing.empty_weight(0.5, 0.003, Y, budget)
        assert batch.shape == (2,)
        assert batch[1] == sizing.empty_weight(0.5, 0.003, Y[1], budget)
        assert batch[0] == sizing.empty_weight(0.5, 0.003, sizing.SizingVariables.from_array(Y[0]), budget)


class TestStructure:
    def test_hand_example(self, budget):
        y = y_vec(a=0.30, b=0.20, c=0.10, t=0.005)
        r_min = 0.10**2 / 0.30
        p_cr = 2 * 69e9 / np.sqrt(3 * (1 - 0.33**2)) * (0.005 / r_min) ** 2
        assert p_cr == pytest.approx(1.90e9, rel=0.01)
        assert sizing.g_struct(y, budget) == pytest.approx(10e6 / p_cr - 1, rel=1e-9)
        assert sizing.g_struct(y, budget) == pytest.approx(-0.995, abs=5e-4)

    def test_axis_order_irrelevant(self, budget):
        a = sizing.g_struct(y_vec(a=0.30, b=0.20, c=0.10, t=0.005), budget)
        b = sizing.g_struct(y_vec(a=0.10, b=0.30, c=0.20, t=0.005), budget)
        assert a == b

    def test_sphere(self, budget):
        r, t = 0.2, 0.004
        classical = 2 * 69e9 * t**2 / (r**2 * np.sqrt(3 * (1 - 0.33**2)))
        assert sizing.critical_pressure(y_vec(a=r, b=r, c=r, t=t), budget) == pytest.approx(classical, rel=1e-12)

    @given(t=st.floats(1e-3, 0.03))
    def test_thickness_scaling(self, budget, t):
        g1 = sizing.g_struct(y_vec(a=0.3, b=0.2, c=0.15, t=t), budget)
        g2 = sizing.g_struct(y_vec(a=0.3, b=0.2, c=0.15, t=t / 2), budget)
        assert (g2 + 1) == pytest.approx(4 * (g1 + 1), rel=1e-12)


class TestHydrostatics:
    @pytest.mark.parametrize("gap_in_tau, expected", [(0.0, -1.0), (1.0, 0.0), (2.0, 1.0)])
    def test_boundary_examples(self, budget, gap_in_tau, expected):
        y, dvb = y_vec(a=0.15, b=0.12, c=0.1, t=0.01, v_buo=0.01), 0.003
        volume = solve_volume_for_gap(budget, y, dvb, gap_in_tau * budget.tau)
        assert volume > 0
        assert sizing.g_hydro(volume, dvb, y, budget) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("excess, expected", [(1.0, 0.0), (1.1, 0.1)])
    def test_surfacing_examples(self, budget, excess, expected):
        y, dvb = y_vec(), 0.003
        # choose V with W = excess * rho g (V - V_sci); W depends on V through the filler
        w_fixed = sizing.total_weight(0.0, dvb, y, budget)  # weight at V = 0
        rho_g = budget.rho_water * G
        slope = budget.rho_fill * G
        volume = (w_fixed + excess * rho_g * budget.V_sci) / (excess * rho_g - slope)
        assert sizing.g_surf(volume, dvb, y, budget) == pytest.approx(expected, abs=1e-9)

    def test_weightless_vehicle(self):
        light = sizing.MassBudget(
            m_sci=1e-15, m_pay=1e-15, m_bat=1e-15, m_buo=1e-15, rho_fill=1e-12, rho_ph=1e-12
        )
        assert sizing.g_surf(0.5, 0.003, y_vec(), light) == pytest.approx(-1.0, abs=1e-9)


def shell_points_at(y, d2, directions):
    """Points at normalized squared distance ``d2`` from the inflated hull of ``y``."""
    centre = np.array([y[0], 0.0, y[1]])
    axes = y[2:5] + y[5]
    return centre + np.sqrt(d2) * directions * axes


class TestContainment:
    directions = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 0, 0], [0, 0, -1]], float)

    def test_clear_points(self):
        budget = sizing.MassBudget(eps_cont=0.1)
        y = y_vec(a=0.2, b=0.15, c=0.1)
        pts = shell_points_at(y, 2.0, self.directions)
        assert sizing.g_cont(pts, y, budget) == 0.0

    def test_point_on_hull(self):
        budget = sizing.MassBudget(eps_cont=0.1)
        y = y_vec(a=0.2, b=0.15, c=0.1)
        pts = np.vstack([shell_points_at(y, 2.0, self.directions), shell_points_at(y, 1.0, self.directions[:1])])
        assert sizing.g_cont(pts, y, budget) == pytest.approx(0.1, rel=1e-12)

    @given(
        seed=st.integers(0, 2**31),
        shrink=st.tuples(*[st.floats(0.1, 1.0)] * 3),
    )
    def test_shrinking_never_increases(self, budget, seed, shrink):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(200, 3)) * [0.4, 0.3, 0.1]
        y = y_vec(a=0.2, b=0.15, c=0.05, t=0.005, xi0=0.02, zeta0=0.01)
        small = y.copy()
        small[2:5] *= shrink
        assert sizing.g_cont(pts, small, budget) <= sizing.g_cont(pts, y, budget) + 1e-12

    def test_baseline_backend_agrees_with_fallback(self, baseline_geometry, budget):
        from glidermdo import _pykernels

        rng = np.random.default_rng(1)
        Y = np.column_stack(
            [rng.uniform(0.2, 0.6, 16), rng.uniform(-0.05, 0.05, 16), rng.uniform(0.05, 0.4, (16, 3)),
             rng.uniform(0.001, 0.02, 16), np.full(16, 0.01)]
        )
        centres, axes = Y[:, [0, 1]], Y[:, 2:5] + Y[:, 5:6]
        pts = baseline_geometry.mesh.points
        np.testing.assert_allclose(
            kernels.containment_sum(pts, centres, axes, 0.05),
            _pykernels.containment_sum(pts, centres, axes, 0.05),
            rtol=1e-12,
        )


class TestPayload:
    def test_hand_example(self, budget):
        v_int = K * 0.15**3
        assert v_int == pytest.approx(0.01414, rel=1e-3)
        assert sizing.g_pay(y_vec(a=0.15, b=0.15, c=0.15), budget) == pytest.approx(0.0076 / v_int - 1, rel=1e-12)
        assert sizing.g_pay(y_vec(a=0.15, b=0.15, c=0.15), budget) == pytest.approx(-0.4626, abs=5e-4)  # hand value used V_int rounded to 0.01414

    def test_exact_fit(self, budget):
        r = (0.0076 / K) ** (1 / 3)
        assert sizing.g_pay(y_vec(a=r, b=r, c=r), budget) == pytest.approx(0.0, abs=1e-12)

    @given(k=st.integers(2, 4), f=st.floats(0.1, 0.99))
    def test_shrinking_increases(self, budget, k, f):
        y = y_vec(a=0.2, b=0.15, c=0.1)
        small = y.copy()
        small[k] *= f
        assert sizing.g_pay(small, budget) > sizing.g_pay(y, budget)


@pytest.fixture(scope="module")
def baseline_case(baseline_geometry, evaluator):
    _, _, glide, _ = evaluator.hydrodynamics(baseline_geometry, 1)
    return baseline_geometry.volume, baseline_geometry.mesh.points, glide.delta_Vb


@pytest.fixture(scope="module")
def baseline_solution(baseline_case, budget):
    return sizing.solve_sizing(*baseline_case, budget)


class TestSolver:
    def test_bounds_only_corner(self, baseline_case, budget):
        cfg = sizing.PsoConfig(active=(), guards=False)
        sol = sizing.solve_sizing(*baseline_case, budget, cfg)
        problem = sizing.SizingProblem(*baseline_case, budget, cfg)
        y = sol.y_star.as_array()
        # dW/dt > 0 (shell denser than filler), dW/dv_buo < 0, dW/d(axis) < 0 at thin walls
        assert y[5] == pytest.approx(problem.lower[5], abs=1e-9)
        assert y[6] == pytest.approx(problem.upper[6], abs=1e-9)
        np.testing.assert_allclose(y[2:5], problem.upper[2:5], atol=1e-9)

    def test_baseline_feasible(self, baseline_solution):
        assert baseline_solution.feasible
        assert np.all(baseline_solution.constraint_values <= 0.0)
        assert len(baseline_solution.constraint_values) == 5

    def test_constraints_rechecked(self, baseline_case, baseline_solution, budget):
        volume, points, dvb = baseline_case
        y = baseline_solution.y_star
        independent = [
            sizing.g_struct(y, budget),
            sizing.g_hydro(volume, dvb, y, budget),
            sizing.g_surf(volume, dvb, y, budget),
            sizing.g_cont(points, y, budget),
            sizing.g_pay(y, budget),
        ]
        assert max(independent) <= 1e-9
        assert baseline_solution.W_empty_star == pytest.approx(sizing.empty_weight(volume, dvb, y, budget))

    def test_deterministic(self, baseline_case, baseline_solution, budget):
        again = sizing.solve_sizing(*baseline_case, budget)
        assert again.to_json(include_trace=True) == baseline_solution.to_json(include_trace=True)

    def test_within_box(self, baseline_case, baseline_solution, budget):
        problem = sizing.SizingProblem(*baseline_case, budget)
        y = baseline_solution.y_star.as_array()
        assert np.all(y >= problem.lower - 1e-12) and np.all(y <= problem.upper + 1e-12)
        assert y[6] >= baseline_case[2]

    def test_penalty_exact_on_feasible(self, baseline_case, baseline_solution, budget):
        problem = sizing.SizingProblem(*baseline_case, budget)
        Y = baseline_solution.y_star.as_array()[None, :]
        assert problem.penalized(Y)[0] == problem.weight(Y)[0]

    def test_infeasible_reported(self, baseline_case, budget):
        heavy = sizing.MassBudget(m_bat=400.0)
        sol = sizing.solve_sizing(*baseline_case, heavy, sizing.PsoConfig(particles=8, iterations=20))
        assert not sol.feasible
        assert max(sol.max_violation.values()) > 0

    def test_report_json(self, baseline_solution):
        d = baseline_solution.to_dict(include_trace=True)
        assert set(d["constraints"]) == set(sizing.CONSTRAINT_NAMES)
        assert set(d["y_star"]) == set(sizing.VARIABLE_NAMES)
        assert len(d["trace"]) > 0

    def test_unknown_constraint_rejected(self):
        with pytest.raises(ValueError):
            sizing.PsoConfig(active=("struct", "bogus"))
