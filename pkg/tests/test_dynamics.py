import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_min_hamiltonian, fd_state_gradient, random_state_costate

from pontryagus.dynamics import (
    ControlAction,
    Costate,
    EngineParams,
    MassDepleted,
    SingularCostateError,
    SpacecraftState,
    TrajectoryRecord,
    augmented_rhs,
    control_law,
    hamiltonian,
    hamiltonian_along,
    optimal_control,
    optimal_direction,
    optimal_throttle,
    propagate,
    switching_function,
)

X1 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0])


def lam_of(lr=(0, 0, 0), lv=(0, 0, 0), lm=0.0):
    return np.array([*lr, *lv, lm], dtype=float)


class TestTypes:
    def test_state_validation(self):
        with pytest.raises(ValueError):
            SpacecraftState([1, 0, 0], [0, 1, 0], 0.0)
        with pytest.raises(ValueError):
            SpacecraftState([0, 0, 0], [0, 1, 0], 1.0)

    def test_state_round_trip(self):
        s = SpacecraftState.from_array(X1)
        assert np.array_equal(s.to_array(), X1)
        assert np.array_equal(Costate.from_array(np.arange(7.0)).to_array(), np.arange(7.0))

    @pytest.mark.parametrize("c1,c2,alpha", [(0, 1, 0), (1, -1, 0), (1, 1, -0.1), (1, 1, 1.1)])
    def test_engine_validation(self, c1, c2, alpha):
        with pytest.raises(ValueError):
            EngineParams(c1, c2, alpha)

    def test_polar_view(self):
        c = ControlAction(0.5, np.array([0.0, 1.0, 0.0]))
        assert c.polar == pytest.approx((0.5, math.pi / 2, math.pi / 2))
        assert np.allclose(c.thrust, [0, 0.5, 0])


class TestDirection:
    def test_axis(self):
        assert np.array_equal(optimal_direction([0, 0, 2]), [0, 0, -1])

    def test_345(self):
        assert np.allclose(optimal_direction([3, 4, 0]), [-0.6, -0.8, 0], atol=1e-16)

    def test_singular(self):
        with pytest.raises(SingularCostateError):
            optimal_direction([0, 0, 0])

    def test_singular_control_is_coast(self):
        c = optimal_control(X1, lam_of(lm=-5.0), EngineParams(1.0, 0.5, 0.0))
        assert c.u == 0.0
        assert np.array_equal(c.dir, [1, 0, 0])


class TestThrottle:
    def test_interior(self):
        u = optimal_throttle(X1, lam_of(lv=(0.5, 0, 0)), EngineParams(1.0, 0.5, 0.0))
        assert u == pytest.approx(0.25, abs=1e-15)

    def test_upper_clamp(self):
        assert optimal_throttle(X1, lam_of(lv=(4, 0, 0)), EngineParams(1.0, 0.5, 0.0)) == 1.0

    def test_lower_clamp(self):
        assert optimal_throttle(X1, lam_of(lv=(0.1, 0, 0), lm=-1.0), EngineParams(1.0, 0.5, 0.0)) == 0.0

    def test_bang_bang(self):
        eng = EngineParams(1.0, 0.5, 1.0)
        assert switching_function(X1, lam_of(lv=(2, 0, 0)), eng) == pytest.approx(1.0)
        assert optimal_throttle(X1, lam_of(lv=(2, 0, 0)), eng) == 1.0

    def test_tie_is_coast(self):
        eng = EngineParams(1.0, 0.5, 1.0)
        lam = lam_of(lv=(1, 0, 0))
        assert switching_function(X1, lam, eng) == 0.0
        assert optimal_throttle(X1, lam, eng) == 0.0

    def test_switching_zero(self):
        assert switching_function(X1, lam_of(), EngineParams(1.0, 0.5, 0.0)) == 0.0

    def test_switching_sign_matches_bang_bang(self, rng):
        eng = EngineParams(0.7, 0.4, 1.0)
        for _ in range(500):
            x, lam = random_state_costate(rng)
            s = switching_function(x, lam, eng)
            assert (optimal_throttle(x, lam, eng) == 1.0) == (s > 0.0)

    def test_bang_bang_values_exact(self, rng):
        eng = EngineParams(0.7, 0.4, 1.0)
        ys = np.array([np.concatenate(random_state_costate(rng)) for _ in range(2000)])
        u, _ = control_law(ys, eng)
        assert set(np.unique(u)) <= {0.0, 1.0}

    def test_limit_alpha_to_one(self, rng):
        near, one = EngineParams(0.7, 0.4, 1.0 - 1e-9), EngineParams(0.7, 0.4, 1.0)
        checked = 0
        for _ in range(1000):
            x, lam = random_state_costate(rng)
            if abs(switching_function(x, lam, one)) < 1e-6:
                continue
            assert optimal_throttle(x, lam, near) == optimal_throttle(x, lam, one)
            checked += 1
        assert checked > 900

    @given(st.floats(0.0, 0.999), st.integers(0, 2**32 - 1))
    def test_vectorised_law_matches_scalar(self, alpha, seed):
        rng = np.random.default_rng(seed)
        eng = EngineParams(0.7, 0.4, alpha)
        x, lam = random_state_costate(rng)
        u, d = control_law(np.concatenate([x, lam]), eng)
        c = optimal_control(x, lam, eng)
        assert u[0] == c.u
        assert np.array_equal(d[0], c.dir)


class TestHamiltonian:
    def test_zero_costates(self):
        assert hamiltonian(X1, lam_of(), ControlAction(0.0, np.array([1.0, 0, 0])), EngineParams(1, 1, 0)) == 0.0

    def test_orthogonal(self):
        assert hamiltonian(X1, lam_of(lr=(1, 0, 0)), ControlAction(0.0, np.array([1.0, 0, 0])), EngineParams(1, 1, 0)) == 0.0

    def test_gravity_term(self):
        x = np.array([1.0, 0, 0, 0, 0, 0, 1.0])
        assert hamiltonian(x, lam_of(lv=(1, 0, 0)), ControlAction(0.0, np.array([1.0, 0, 0])), EngineParams(1, 1, 0)) == -1.0

    def test_time_weight_shift(self, rng):
        x, lam = random_state_costate(rng)
        eng = EngineParams(0.7, 0.4, 0.3)
        c = optimal_control(x, lam, eng)
        assert hamiltonian(x, lam, c, eng, time_weight=0.2) == pytest.approx(hamiltonian(x, lam, c, eng) + 0.2, abs=1e-15)

    def test_along_matches_pointwise(self, rng):
        eng = EngineParams(0.7, 0.4, 0.3)
        ys = np.array([np.concatenate(random_state_costate(rng)) for _ in range(50)])
        H = hamiltonian_along(ys, eng)
        for y, h in zip(ys, H):
            assert h == pytest.approx(hamiltonian(y[:7], y[7:], optimal_control(y[:7], y[7:], eng), eng), abs=1e-13)

    @pytest.mark.parametrize("alpha", [0.0, 0.4, 1.0])
    def test_pointwise_minimality(self, rng, alpha):
        eng = EngineParams(0.7, 0.4, alpha)
        for _ in range(20):
            x, lam = random_state_costate(rng)
            h_star = hamiltonian(x, lam, optimal_control(x, lam, eng), eng)
            assert h_star <= brute_min_hamiltonian(x, lam, eng, rng, 1000) + 1e-12


class TestAugmentedRhs:
    def test_no_lv_no_mass_costate_rate(self):
        _, dlam = augmented_rhs(X1, lam_of(lr=(1, 2, 3), lm=0.5), EngineParams(1, 1, 0))
        assert dlam[6] == 0.0

    def test_lr_rate_example(self):
        _, dlam = augmented_rhs(X1, lam_of(lv=(1, 0, 0)), EngineParams(1, 1, 0))
        assert np.allclose(dlam[0:3], [-2, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
    def test_adjoint_equals_minus_state_gradient(self, rng, alpha):
        eng = EngineParams(0.7, 0.4, alpha)
        for _ in range(100):
            x, lam = random_state_costate(rng)
            y = np.concatenate([x, lam])
            if alpha == 1.0 and abs(switching_function(x, lam, eng)) < 1e-4:
                continue
            _, dlam = augmented_rhs(x, lam, eng)
            g = fd_state_gradient(y, eng)
            assert np.max(np.abs(dlam + g)) <= 1e-6 * max(np.max(np.abs(g)), 1.0)

    def test_mass_rate_nonpositive(self, rng):
        eng = EngineParams(0.7, 0.4, 0.2)
        for _ in range(200):
            dx, _ = augmented_rhs(*random_state_costate(rng), eng)
            assert dx[6] <= 0.0


def _energy(x):
    return 0.5 * x[3:6] @ x[3:6] - 1.0 / np.linalg.norm(x[0:3])


class TestPropagate:
    eng = EngineParams(0.05, 0.06, 0.0)

    def test_ballistic_energy(self):
        x0 = np.array([1.0, 0.0, 0.0, 0.0, 1.1, 0.05, 1.0])
        period = 2 * math.pi * (1.0 / (2.0 / 1.0 - x0[3:6] @ x0[3:6])) ** 1.5
        rec = propagate(x0, lam_of(), period, self.eng)
        assert np.all(rec.u == 0.0)
        assert abs(_energy(rec.ys[-1]) - _energy(x0)) <= 1e-10
        assert rec.ts[-1] == period
        assert np.all(np.diff(rec.ts) > 0)

    def test_records_controls(self, rng):
        x0 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0])
        rec = propagate(x0, lam_of(lr=(0.3, -0.2, 0.1), lv=(0.2, 1.0, 0.1), lm=0.1), 3.0, self.eng)
        u, d = control_law(rec.ys, self.eng)
        assert np.array_equal(u, rec.u)
        assert np.array_equal(d, rec.dirs)
        assert len(rec.nodes) == len(rec)
        assert np.all(np.diff(rec.ys[:, 6]) <= 0.0)

    def test_hamiltonian_constant(self):
        x0 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0])
        for alpha in (0.0, 0.6, 1.0):
            eng = self.eng.with_alpha(alpha)
            rec = propagate(x0, lam_of(lr=(0.3, -0.2, 0.1), lv=(0.2, 1.5, 0.1), lm=0.1), 4.0, eng)
            H = hamiltonian_along(rec.ys, eng)
            assert np.ptp(H) <= 1e-8

    def test_tolerance_convergence(self):
        x0 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0])
        lam = lam_of(lr=(0.3, -0.2, 0.1), lv=(0.2, 1.0, 0.1), lm=0.1)
        ref = propagate(x0, lam, 5.0, self.eng, tol=1e-13).ys[-1]
        errs = [np.max(np.abs(propagate(x0, lam, 5.0, self.eng, tol=t).ys[-1] - ref)) for t in (1e-6, 1e-8, 1e-10)]
        assert errs[0] > errs[1] > errs[2]

    def test_mass_depletion(self):
        x0 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0])
        with pytest.raises(MassDepleted):
            propagate(x0, lam_of(lv=(0, -50, 0)), 50.0, EngineParams(0.05, 0.5, 0.0))

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            propagate(X1, lam_of(), 0.0, self.eng)

    def test_record_needs_controls_or_engine(self):
        with pytest.raises(ValueError):
            TrajectoryRecord([0.0, 1.0], np.zeros((2, 14)), 0.0)
