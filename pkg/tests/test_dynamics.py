import numpy as np
import pytest

import voltvar as vv
from voltvar.control import CurveBundle

from helpers import random_feeder, two_bus_feeder


def two_bus_config(kind="d1", alpha=1.0, deadband=0.04, **kw):
    curves = {0: vv.DroopCurve(alpha=alpha, deadband=deadband)}
    return vv.ControllerConfig(
        kind=kind, curves=curves,
        q_min=np.array([-1e6]), q_max=np.array([1e6]), **kw,
    )


@pytest.fixture
def feeder2():
    return two_bus_feeder(r=0.1, x=0.5, v0=1.05)


class TestStepD1:
    def test_deadband_everywhere_gives_zero(self, feeder2):
        cfg = two_bus_config()
        out = vv.step_d1(np.array([0.3]), feeder2.v_nom.copy(), cfg, feeder2.v_nom)
        assert out == pytest.approx([0.0])

    def test_single_step_from_flat(self, feeder2):
        cfg = two_bus_config()
        out = vv.step_d1(np.zeros(1), np.array([1.05]), cfg, feeder2.v_nom)
        assert out == pytest.approx([-0.03], rel=1e-14)

    def test_iterated_fixed_point(self, feeder2):
        cfg = two_bus_config()
        traj = vv.simulate(feeder2, cfg, tol=1e-12, max_iter=500)
        assert traj.verdict == "converged"
        assert traj.final_q == pytest.approx([-0.02], abs=1e-11)
        assert traj.final_v == pytest.approx([1.04], abs=1e-11)


class TestStepD2:
    def test_zero_injection_inside_deadband_moves_by_voltage_error(self, feeder2):
        cfg = two_bus_config("d2", gamma2=0.1)
        out = vv.step_d2(np.zeros(1), np.array([1.015]), cfg, feeder2.v_nom)
        assert out == pytest.approx([-0.1 * 0.015], rel=1e-12)

    def test_inverse_branch_case(self, feeder2):
        gamma2 = 0.25
        cfg = two_bus_config("d2", gamma2=gamma2)
        out = vv.step_d2(np.array([-0.03]), np.array([1.035]), cfg, feeder2.v_nom)
        # subgradient: -(0.03 + 0.02) + 0.035 = -0.015
        assert out == pytest.approx([-0.03 + gamma2 * 0.015], rel=1e-12)

    def test_zero_injection_beyond_deadband_cases(self, feeder2):
        cfg = two_bus_config("d2", gamma2=1.0)
        high = vv.step_d2(np.zeros(1), np.array([1.05]), cfg, feeder2.v_nom)
        assert high == pytest.approx([-(0.05 - 0.02)], rel=1e-12)
        low = vv.step_d2(np.zeros(1), np.array([0.95]), cfg, feeder2.v_nom)
        assert low == pytest.approx([0.05 - 0.02], rel=1e-12)

    def test_interior_equilibrium_is_fixed(self, feeder2):
        cfg = two_bus_config("d2", gamma2=0.5)
        q_star = np.array([-0.02])
        v_star = np.array([1.05 + 0.5 * -0.02])
        out = vv.step_d2(q_star, v_star, cfg, feeder2.v_nom)
        assert out == pytest.approx(q_star, abs=1e-15)


class TestStepD3:
    def test_unit_weight_equals_d1(self, feeder2):
        rng = np.random.default_rng(53)
        cfg1 = two_bus_config("d1")
        cfg3 = two_bus_config("d3", gamma3=1.0)
        for _ in range(25):
            q = rng.normal(size=1)
            v = 1.0 + rng.normal(size=1) * 0.05
            a = vv.step_d1(q, v, cfg1, feeder2.v_nom)
            b = vv.step_d3(q, v, cfg3, feeder2.v_nom)
            np.testing.assert_array_equal(a, b)

    def test_zero_weight_freezes(self, feeder2):
        cfg = two_bus_config("d3", gamma3=1e-300)
        q = np.array([0.17])
        out = vv.step_d3(q, np.array([1.05]), cfg, feeder2.v_nom)
        assert out == pytest.approx(q, rel=1e-12)

    def test_stepsize_splits_convergence(self, feeder2):
        # alpha x = 1.5 > 1: d1 diverges, d3 with gamma below 0.8 contracts
        cfg = two_bus_config("d3", alpha=3.0, deadband=0.0, gamma3=0.5)
        traj = vv.simulate(feeder2, cfg, tol=1e-10, max_iter=2000)
        assert traj.verdict == "converged"
        # multiplier 1 - 0.5 * 2.5 = -0.25; fixed point -3*0.05/2.5
        assert traj.final_q == pytest.approx([-0.06], abs=1e-9)


class TestSimulate:
    def test_sce42_d1_converges_with_monotone_residuals(self, sce42, sce42_mats):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=10.0)
        report = vv.check_d1_condition(cfg.bundle, sce42_mats.X)
        assert report.sufficient
        traj = vv.simulate(sce42, cfg, mats=sce42_mats, tol=1e-9)
        assert traj.verdict == "converged"
        res = traj.residuals[1:]
        assert np.all(np.diff(res) <= 1e-15)
        assert res[-1] < 1e-9

    def test_linear_trajectory_satisfies_model(self, sce42, sce42_mats):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=10.0)
        traj = vv.simulate(sce42, cfg, mats=sce42_mats)
        expect = traj.q @ sce42_mats.X.T + sce42_mats.vtilde
        np.testing.assert_allclose(traj.v, expect, atol=1e-13)

    def test_distflow_trajectory_satisfies_model(self, sce42):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=10.0)
        traj = vv.simulate(sce42, cfg, plant="distflow", tol=1e-8)
        assert traj.verdict == "converged"
        for i in (0, len(traj.times) // 2, -1):
            sol = vv.distflow_sweep(sce42, traj.q[i], tol=1e-10)
            np.testing.assert_allclose(traj.v[i], sol.v, atol=1e-9)

    def test_oscillation_detected_beyond_stability_limit(self, feeder2):
        cfg = two_bus_config("d1", alpha=3.0, deadband=0.0)
        traj = vv.simulate(feeder2, cfg, tol=1e-8, max_iter=5000)
        assert traj.verdict == "oscillating"

    def test_record_thinning_keeps_ends(self, sce42, sce42_mats):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=10.0)
        traj = vv.simulate(sce42, cfg, mats=sce42_mats, record_every=7, tol=1e-9)
        assert traj.times[0] == 0
        assert traj.times[-1] == traj.converged_at
        assert np.all(np.diff(traj.times) > 0)

    def test_scalar_and_array_paths_agree(self, sce42, sce42_mats):
        # track_objective forces the generic loop; default takes the fast one
        for kind, g2, g3 in (("d1", None, None), ("d2", 1e-2, None), ("d3", None, 0.7)):
            cfg = vv.ControllerConfig.from_feeder(
                sce42, kind, alpha=20.0, gamma2=g2, gamma3=g3
            )
            fast = vv.simulate(sce42, cfg, mats=sce42_mats, tol=0.0, max_iter=250)
            slow = vv.simulate(
                sce42, cfg, mats=sce42_mats, tol=0.0, max_iter=250, track_objective=True
            )
            assert fast.verdict == slow.verdict
            np.testing.assert_allclose(fast.q, slow.q, rtol=0, atol=5e-13)
            np.testing.assert_allclose(fast.q_average, slow.q_average, rtol=0, atol=5e-13)

    def test_invalid_config_rejected(self):
        with pytest.raises(vv.InvalidRecord):
            vv.ControllerConfig(kind="d2", curves={}, q_min=np.zeros(1), q_max=np.zeros(1))
        with pytest.raises(vv.InvalidRecord):
            vv.ControllerConfig(kind="d9", curves={}, q_min=np.zeros(1), q_max=np.zeros(1))


class TestConditionChecks:
    def test_scalar_case(self):
        curves = {0: vv.DroopCurve(alpha=1.0, deadband=0.04)}
        rep = vv.check_d1_condition(curves, np.array([[0.5]]))
        assert rep.sigma == pytest.approx(0.5)
        assert rep.sufficient and rep.corollary_holds
        assert rep.uniform_alpha_limit == pytest.approx(2.0)

    def test_corollary_implies_spectral_condition(self):
        rng = np.random.default_rng(59)
        checked = 0
        for _ in range(500):
            f = random_feeder(rng, int(rng.integers(2, 12)), z_lo=0.05, z_hi=0.8)
            mats = vv.sensitivity_matrices(f)
            curves = {
                k: vv.DroopCurve(alpha=float(rng.uniform(0.05, 2.0)))
                for k in range(f.n)
            }
            rep = vv.check_d1_condition(curves, mats.X)
            assert rep.corollary_value >= rep.sigma - 1e-12
            if rep.corollary_holds:
                assert rep.sufficient
                checked += 1
        assert checked > 20  # the sampled family actually exercises the implication

    def test_uniform_alpha_limit_separates_regimes(self, sce42, sce42_mats):
        rep = vv.check_d1_condition(
            {k: vv.DroopCurve(alpha=1.0, deadband=0.04) for k in sce42.inverters},
            sce42_mats.X,
        )
        a_star = rep.uniform_alpha_limit
        below = vv.check_d1_condition(
            {k: vv.DroopCurve(alpha=0.99 * a_star, deadband=0.04) for k in sce42.inverters},
            sce42_mats.X,
        )
        above = vv.check_d1_condition(
            {k: vv.DroopCurve(alpha=1.01 * a_star, deadband=0.04) for k in sce42.inverters},
            sce42_mats.X,
        )
        assert below.sufficient and not above.sufficient


class TestD3Bound:
    def test_scalar_value(self):
        curves = {0: vv.DroopCurve(alpha=3.0)}
        assert vv.d3_stepsize_bound(curves, np.array([[0.5]])) == pytest.approx(0.8)

    def test_small_slope_limit(self):
        curves = {0: vv.DroopCurve(alpha=1e-12)}
        assert vv.d3_stepsize_bound(curves, np.array([[0.5]])) == pytest.approx(2.0)

    def test_matches_direct_eigenvalues(self, sce42, sce42_mats):
        rng = np.random.default_rng(61)
        curves = {
            k: vv.DroopCurve(alpha=float(rng.uniform(1, 30)), deadband=0.04)
            for k in sce42.inverters
        }
        bundle = CurveBundle(curves)
        sub = sce42_mats.X[np.ix_(bundle.positions, bundle.positions)]
        lam = np.linalg.eigvals(np.diag(bundle.alpha_bar) @ sub)
        assert np.abs(lam.imag).max() < 1e-12
        expect = 2.0 / (1.0 + lam.real.max())
        assert vv.d3_stepsize_bound(curves, sce42_mats.X) == pytest.approx(expect, rel=1e-10)


class TestObjective:
    def test_zero(self, feeder2):
        mats = vv.sensitivity_matrices(feeder2)
        curves = {0: vv.DroopCurve(alpha=1.0, deadband=0.04)}
        assert vv.objective_f(mats, curves, np.zeros(1)) == 0.0

    def test_term_by_term_arithmetic(self, feeder2):
        mats = vv.sensitivity_matrices(feeder2)
        curves = {0: vv.DroopCurve(alpha=1.0, deadband=0.04)}
        cost, quad, linear = vv.objective_terms(mats, curves, np.array([-0.02]))
        assert cost == pytest.approx(0.0002 + 0.0004, rel=1e-12)
        assert quad == pytest.approx(0.0001, rel=1e-12)
        assert linear == pytest.approx(-0.001, rel=1e-12)
        assert cost + quad + linear == pytest.approx(-0.0003, rel=1e-12)

    def test_tradeoff_form_differs_by_constant(self, sce42, sce42_mats):
        rng = np.random.default_rng(67)
        curves = {k: vv.DroopCurve(alpha=12.0, deadband=0.04) for k in sce42.inverters}
        q_min, q_max = vv.limits_arrays(sce42)
        for _ in range(5):
            q = rng.uniform(q_min, q_max)
            cost, deviation, constant = vv.objective_tradeoff(sce42_mats, curves, q)
            direct = vv.objective_f(sce42_mats, curves, q)
            assert cost + deviation - constant == pytest.approx(direct, rel=1e-9, abs=1e-12)

    def test_local_minimality_at_equilibrium(self, sce42, sce42_mats):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=27.0)
        eq = vv.solve_equilibrium(
            sce42, curves=cfg.curves, q_min=cfg.q_min, q_max=cfg.q_max,
            tol=1e-11, mats=sce42_mats,
        )
        f_star = vv.objective_f(sce42_mats, cfg.curves, eq.q_star)
        for k in cfg.bundle.positions:
            for eps in (1e-4, -1e-4):
                probe = eq.q_star.copy()
                probe[k] = np.clip(probe[k] + eps, cfg.q_min[k], cfg.q_max[k])
                assert vv.objective_f(sce42_mats, cfg.curves, probe) >= f_star - 1e-12

    def test_variational_inequality_at_box_corners(self, feeder2):
        # optimality certificate against every corner of a small box
        curves = {0: vv.DroopCurve(alpha=1.0, deadband=0.04)}
        mats = vv.sensitivity_matrices(feeder2)
        q_min, q_max = np.array([-0.015]), np.array([0.015])
        eq = vv.solve_equilibrium(feeder2, curves=curves, q_min=q_min, q_max=q_max, tol=1e-12)
        grad = vv.objective_subgradient(mats, curves, eq.q_star)
        for corner in (q_min, q_max):
            assert grad @ (corner - eq.q_star) >= -1e-10

    def test_variational_inequality_at_all_controllable_corners(self, sce42, sce42_mats):
        import itertools

        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=27.0)
        eq = vv.solve_equilibrium(
            sce42, curves=cfg.curves, q_min=cfg.q_min, q_max=cfg.q_max,
            tol=1e-11, mats=sce42_mats,
        )
        grad = vv.objective_subgradient(sce42_mats, cfg.curves, eq.q_star)
        act = cfg.bundle.positions
        for bits in itertools.product((0, 1), repeat=act.size):
            corner = eq.q_star.copy()
            corner[act] = np.where(bits, cfg.q_max[act], cfg.q_min[act])
            assert grad @ (corner - eq.q_star) >= -1e-8


class TestSolveEquilibrium:
    def test_nominal_profile_stays_idle(self):
        f = two_bus_feeder(v0=1.0)
        eq = vv.solve_equilibrium(f, curves={0: vv.DroopCurve(alpha=1.0, deadband=0.04)})
        assert eq.q_star == pytest.approx([0.0], abs=1e-12)
        assert eq.v_star == pytest.approx([1.0], abs=1e-12)

    def test_single_line_closed_form(self, feeder2):
        eq = vv.solve_equilibrium(
            feeder2, curves={0: vv.DroopCurve(alpha=1.0, deadband=0.04)}, tol=1e-12
        )
        assert eq.q_star == pytest.approx([-0.02], abs=1e-10)
        assert eq.v_star == pytest.approx([1.04], abs=1e-10)
        assert eq.fixed_point_residual < 1e-12

    def test_agrees_with_converged_d1(self, sce42, sce42_mats):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=10.0)
        traj = vv.simulate(sce42, cfg, mats=sce42_mats, tol=1e-12, max_iter=2000)
        eq = vv.solve_equilibrium(
            sce42, curves=cfg.curves, q_min=cfg.q_min, q_max=cfg.q_max,
            tol=1e-12, mats=sce42_mats,
        )
        np.testing.assert_allclose(traj.final_q, eq.q_star, atol=1e-9)

    def test_budget_exhaustion(self, feeder2):
        with pytest.raises(vv.MaxIterations):
            vv.solve_equilibrium(
                feeder2, curves={0: vv.DroopCurve(alpha=1.0, deadband=0.04)},
                tol=0.0, max_iter=50,
            )


class TestRegretAudit:
    def setup_run(self, sce42, sce42_mats, gamma2, q0=None, steps=400):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d2", alpha=27.0, gamma2=gamma2)
        eq = vv.solve_equilibrium(
            sce42, curves=cfg.curves, q_min=cfg.q_min, q_max=cfg.q_max,
            tol=1e-11, mats=sce42_mats,
        )
        bound = vv.estimate_gradient_bound(sce42_mats, cfg.curves, cfg.q_min, cfg.q_max, seed=0)
        traj = vv.simulate(
            sce42, cfg, mats=sce42_mats, q0=q0, tol=0.0, max_iter=steps,
            track_objective=True, oscillation_window=None,
        )
        return cfg, eq, bound, traj

    def test_standard_bound_holds_from_flat_start(self, sce42, sce42_mats):
        _, eq, bound, traj = self.setup_run(sce42, sce42_mats, 1e-3)
        audit = vv.d2_regret_bound_check(traj, eq.q_star, eq.objective, 1e-3, bound)
        assert audit.standard_holds

    def test_tight_bound_at_first_step(self, sce42, sce42_mats):
        _, eq, bound, traj = self.setup_run(sce42, sce42_mats, 1e-3, steps=1)
        audit = vv.d2_regret_bound_check(traj, eq.q_star, eq.objective, 1e-3, bound)
        assert audit.times[0] == 1
        # at t=1 the distance term dominates and even the tight form holds
        assert audit.average_gap[0] <= audit.tight_bound[0]

    def test_tight_bound_from_equilibrium_start(self, sce42, sce42_mats):
        _, eq, bound, traj = self.setup_run(sce42, sce42_mats, 1e-3, q0=eq_start(sce42, sce42_mats))
        audit = vv.d2_regret_bound_check(traj, traj.q[0], eq.objective, 1e-3, bound)
        assert audit.tight_holds

    def test_requires_tracked_objective(self, sce42, sce42_mats):
        cfg = vv.ControllerConfig.from_feeder(sce42, "d2", alpha=27.0, gamma2=1e-3)
        traj = vv.simulate(sce42, cfg, mats=sce42_mats, max_iter=5)
        with pytest.raises(vv.InvalidRecord):
            vv.d2_regret_bound_check(traj, traj.q[0], 0.0, 1e-3, 1.0)


def eq_start(sce42, sce42_mats):
    cfg = vv.ControllerConfig.from_feeder(sce42, "d1", alpha=27.0)
    eq = vv.solve_equilibrium(
        sce42, curves=cfg.curves, q_min=cfg.q_min, q_max=cfg.q_max,
        tol=1e-12, mats=sce42_mats,
    )
    return eq.q_star


def test_gradient_bound_dominates_samples(sce42, sce42_mats):
    cfg = vv.ControllerConfig.from_feeder(sce42, "d2", alpha=27.0, gamma2=1e-3)
    bound = vv.estimate_gradient_bound(sce42_mats, cfg.curves, cfg.q_min, cfg.q_max, seed=0)
    g0 = np.linalg.norm(vv.objective_subgradient(sce42_mats, cfg.curves, np.zeros(sce42.n)))
    assert bound >= g0
    again = vv.estimate_gradient_bound(sce42_mats, cfg.curves, cfg.q_min, cfg.q_max, seed=0)
    assert bound == again


def test_two_bus_controllers_share_equilibrium(feeder2):
    curves = {0: vv.DroopCurve(alpha=1.0, deadband=0.04)}
    lims = dict(q_min=np.array([-1e6]), q_max=np.array([1e6]))
    eq = vv.solve_equilibrium(feeder2, curves=curves, tol=1e-12, **lims)
    d1 = vv.simulate(feeder2, two_bus_config("d1"), tol=1e-12, max_iter=500)
    d2 = vv.simulate(feeder2, two_bus_config("d2", gamma2=0.5), tol=1e-12, max_iter=5000)
    d3 = vv.simulate(feeder2, two_bus_config("d3", gamma3=0.9), tol=1e-12, max_iter=500)
    for traj in (d1, d2, d3):
        assert traj.verdict == "converged"
        np.testing.assert_allclose(traj.final_q, eq.q_star, atol=1e-9)
