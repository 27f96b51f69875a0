import math

import numpy as np
import pytest

from cfbench.errors import CollisionError, ConfigError, DomainError
from cfbench.idm import (
    DEFAULT_BOUNDS,
    IdmParams,
    SignConvention,
    acceleration,
    calibrate,
    dataset_rmse,
    desired_gap,
    equilibrium_gap,
    load_params,
    predict_accel_series,
    save_params,
    simulate_follower,
)

from conftest import TRUE_PARAMS, leader_profile, wavy_leader

EX_PARAMS = IdmParams(a_max=2.0, v_d=36.0, c0=4.0, c1=2.0, c2=0.0, d=2.0, tau=1.5, b_d=3.0)

# frozen from a 50-digit evaluation of the two closed-form equations
DSTAR_PAPER = 52.412414523193151
DSTAR_TREIBER = 11.587585476806849
ACCEL_PAPER_S30 = -4.2951001737360148


class TestDesiredGap:
    def test_standstill_reduces_to_d(self):
        for v_l in (0.0, 10.0, 30.0):
            assert desired_gap(EX_PARAMS, 0.0, v_l) == pytest.approx(2.0, abs=1e-15)

    def test_paper_convention_example(self):
        got = desired_gap(EX_PARAMS, 20.0, 25.0, SignConvention.PAPER_VERBATIM)
        assert got == pytest.approx(DSTAR_PAPER, rel=1e-12)

    def test_treiber_convention_example(self):
        got = desired_gap(EX_PARAMS, 20.0, 25.0, SignConvention.TREIBER_2000)
        assert got == pytest.approx(DSTAR_TREIBER, rel=1e-12)

    def test_clamped_positive(self):
        # fast leader pulling away under the verbatim sign makes the raw value negative
        p = IdmParams(a_max=1.0, c0=4.0, d=0.0, tau=1.0, b_d=2.0)
        got = desired_gap(p, 30.0, 0.0, SignConvention.PAPER_VERBATIM)
        assert got == 0.01


class TestAcceleration:
    def test_free_flow_equilibrium(self):
        p = EX_PARAMS
        a = acceleration(p, p.v_d, p.v_d, 1e12)
        assert abs(a) < 1e-9

    def test_standstill_equilibrium(self):
        a = acceleration(EX_PARAMS, 0.0, 0.0, EX_PARAMS.d)
        assert a == pytest.approx(0.0, abs=1e-15)

    def test_chained_example(self):
        a = acceleration(EX_PARAMS, 20.0, 25.0, 30.0, SignConvention.PAPER_VERBATIM)
        assert a == pytest.approx(ACCEL_PAPER_S30, rel=1e-12)

    def test_nonpositive_spacing_rejected(self):
        with pytest.raises(DomainError):
            acceleration(EX_PARAMS, 10.0, 10.0, 0.0)

    def test_clamped_to_physical_range(self):
        a = acceleration(EX_PARAMS, 30.0, 0.0, 0.5)
        assert a == -10.0

    def test_monotone_in_spacing(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = _random_params(rng)
            v_f, v_l = rng.uniform(0.5, 35.0, size=2)
            s1, s2 = sorted(rng.uniform(2.0, 150.0, size=2))
            if s1 == s2:
                continue
            a1 = acceleration(p, v_f, v_l, s1)
            a2 = acceleration(p, v_f, v_l, s2)
            if -10.0 < a1 < 10.0 or -10.0 < a2 < 10.0:
                assert a2 >= a1

    def test_never_exceeds_a_max(self):
        rng = np.random.default_rng(12)
        for _ in range(300):
            p = _random_params(rng)
            a = acceleration(p, rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(0.5, 200))
            assert a <= p.a_max + 1e-12


def _random_params(rng) -> IdmParams:
    return IdmParams(
        a_max=rng.uniform(*DEFAULT_BOUNDS["a_max"]),
        c0=rng.uniform(*DEFAULT_BOUNDS["c0"]),
        d=rng.uniform(0.05, DEFAULT_BOUNDS["d"][1]),
        tau=rng.uniform(*DEFAULT_BOUNDS["tau"]),
        b_d=rng.uniform(*DEFAULT_BOUNDS["b_d"]),
    )


class TestSimulate:
    def test_equilibrium_fixed_point(self):
        p = TRUE_PARAMS
        v0 = 24.0
        gap0 = equilibrium_gap(p, v0)
        leader = leader_profile("L", [v0] * 101)
        sim = simulate_follower(p, leader, init=(-gap0, v0))
        assert np.max(np.abs(sim.v_f - v0)) < 1e-6
        assert np.max(np.abs(sim.a_f)) < 1e-9

    def test_free_flow_speed_holds_with_huge_gap(self):
        p = TRUE_PARAMS
        leader = leader_profile("L", [p.v_d] * 101)
        sim = simulate_follower(p, leader, init=(-1e9, p.v_d))
        assert np.max(np.abs(sim.v_f - p.v_d)) < 1e-6

    def test_stopped_leader_standstill(self):
        p = IdmParams(a_max=1.5, c0=4.0, d=2.0, tau=1.2, b_d=3.0, c2=0.0)
        leader = leader_profile("L", [0.0] * 50)
        sim = simulate_follower(p, leader, init=(-p.d, 0.0))
        assert np.allclose(sim.v_f, 0.0)
        assert np.allclose(sim.x_f, -p.d)

    def test_collision_reports_step(self):
        p = TRUE_PARAMS
        leader = leader_profile("L", [0.0] * 50)
        with pytest.raises(CollisionError) as err:
            simulate_follower(p, leader, init=(-0.5, 30.0))  # closing fast on a stopped leader
        assert err.value.step > 0

    def test_step_decelerating_leader_converges(self):
        # leader drops 30 -> 20 m/s; follower must settle near 20 m/s with the
        # equilibrium spacing. Oracle: an independently coded integrator at dt/10.
        p = TRUE_PARAMS
        speeds = np.concatenate([np.full(50, 30.0), np.full(1200, 20.0)])
        leader = leader_profile("L", speeds)
        gap0 = equilibrium_gap(p, 30.0)
        sim = simulate_follower(p, leader, init=(-gap0, 30.0))

        assert abs(sim.v_f[-1] - 20.0) < 0.05
        assert abs(sim.gap[-1] - equilibrium_gap(p, 20.0)) < 0.2

        oracle_v, oracle_gap = _oracle_integrate(p, leader, gap0, refine=10)
        assert abs(sim.v_f[-1] - oracle_v) < 0.02
        assert abs(sim.gap[-1] - oracle_gap) < 0.2

    def test_dt_refinement_consistency(self):
        p = TRUE_PARAMS
        leader = wavy_leader("L", n=400)
        gap0 = equilibrium_gap(p, leader.v_l[0])
        sim = simulate_follower(p, leader, init=(-gap0, leader.v_l[0]))
        v10, gap10 = _oracle_integrate(p, leader, gap0, refine=10)
        assert abs(sim.v_f[-1] - v10) < 0.05
        assert abs(sim.gap[-1] - gap10) < 0.5


def _oracle_integrate(p, leader, init_gap, refine=10):
    """Separate fine-step integrator of the same dynamics (piecewise-constant
    leader speed within each recorded sample)."""
    dt = leader.dt / refine
    x_l = 0.0
    x_f = -init_gap
    v = float(leader.v_l[0])
    for k in range(len(leader) - 1):
        v_lead = float(leader.v_l[k])
        for _ in range(refine):
            gap = x_l - x_f
            dv_term = v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * abs(p.b_d)))
            d_star = max(p.d + p.c2 * math.sqrt(v / p.v_d) + v * p.tau + dv_term, 0.01)
            a = p.a_max * (1.0 - (v / p.v_d) ** p.c0 - (d_star / gap) ** p.c1)
            a = min(max(a, -10.0), 10.0)
            x_l += v_lead * dt
            nxt = v + a * dt
            if nxt < 0.0 and a < 0.0:
                x_f += -(v * v) / (2.0 * a)
                v = 0.0
            else:
                x_f += v * dt + 0.5 * a * dt * dt
                v = max(nxt, 0.0)
    return v, x_l - x_f


class TestPredictSeries:
    def test_equilibrium_all_zero(self):
        p = TRUE_PARAMS
        v0 = 22.0
        leader = leader_profile("L", [v0] * 80)
        sim = simulate_follower(p, leader, init=(-equilibrium_gap(p, v0), v0))
        assert np.max(np.abs(predict_accel_series(p, sim))) < 1e-9

    def test_elementwise_equals_acceleration(self, idm_dataset):
        p = TRUE_PARAMS
        tr = idm_dataset[0]
        pred = predict_accel_series(p, tr)
        direct = [acceleration(p, tr.v_f[i], tr.v_l[i], tr.gap[i]) for i in range(len(tr))]
        # scalar and SIMD evaluation may differ in the last ulp
        assert np.allclose(pred, np.asarray(direct), rtol=0, atol=1e-13)


class TestCalibrate:
    def test_recovers_generating_params(self, idm_dataset):
        result = calibrate(idm_dataset, budget=6000, n_starts=12, seed=0)
        assert result.rmse <= 0.05
        for name in ("a_max", "c0", "d", "tau", "b_d"):
            lo, hi = DEFAULT_BOUNDS[name]
            assert lo <= getattr(result.params, name) <= hi

    def test_objective_at_truth_is_zero(self, idm_dataset):
        assert dataset_rmse(TRUE_PARAMS, idm_dataset) < 1e-12

    def test_equilibrium_training_set_reaches_zero(self):
        p = TRUE_PARAMS
        v0 = 25.0
        leader = leader_profile("L", [v0] * 200)
        sim = simulate_follower(p, leader, init=(-equilibrium_gap(p, v0), v0))
        result = calibrate([sim], budget=2000, n_starts=8, seed=1)
        assert result.rmse < 1e-6

    def test_bounds_outside_invariants_rejected(self, idm_dataset):
        with pytest.raises(ConfigError):
            calibrate(idm_dataset, bounds={"tau": (0.5, 2.5)})

    def test_budget_too_small_rejected(self, idm_dataset):
        with pytest.raises(ConfigError):
            calibrate(idm_dataset, budget=10, n_starts=16)

    def test_deterministic_given_seed(self, idm_dataset):
        small = idm_dataset[:1]
        r1 = calibrate(small, budget=600, n_starts=4, seed=42)
        r2 = calibrate(small, budget=600, n_starts=4, seed=42)
        assert r1.params == r2.params
        assert r1.rmse == r2.rmse


class TestParamsFile:
    def test_round_trip(self, tmp_path, idm_dataset):
        result = calibrate(idm_dataset[:1], budget=600, n_starts=4, seed=3)
        path = tmp_path / "params.txt"
        save_params(path, result)
        back = load_params(path)
        assert back.params == result.params
        assert back.rmse == result.rmse
        assert back.convention == result.convention
