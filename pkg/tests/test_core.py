import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssamc.core import (THETA_BOUND, ContractError, EnergyGrid, GainSchedule, IndexRange,
                        UnstartedRunError, estimate_probabilities, gain, lyapunov_check,
                        mean_field_h, recenter, update_theta)


class TestGain:
    @pytest.mark.parametrize("t, expected", [(10, 1.0), (25, 1.0), (100, 0.25)])
    def test_examples(self, t, expected):
        assert gain(GainSchedule(25), t) == expected

    def test_positive_and_nonincreasing(self):
        g = GainSchedule(7)
        vals = np.array([g(t) for t in range(1, 1_000_001, 97)])
        assert np.all(vals > 0)
        assert np.all(np.diff(vals) <= 0)

    def test_rejects_bad_input(self):
        with pytest.raises(ContractError):
            gain(GainSchedule(5), 0)
        with pytest.raises(ContractError):
            GainSchedule(0)


class TestUpdateTheta:
    def test_fixed_point(self):
        np.testing.assert_array_equal(update_theta([0, 0], 0.1, [0.5, 0.5], [0.5, 0.5]), [0, 0])

    def test_arithmetic(self):
        np.testing.assert_allclose(update_theta([0, 0], 0.1, [1, 0], [0.5, 0.5]), [0.05, -0.05])

    def test_identity(self):
        third = [1 / 3] * 3
        np.testing.assert_allclose(update_theta([1, 2, 3], 0.5, third, third), [1, 2, 3])

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            update_theta([0, 0], 0.1, [1, 0, 0], [0.5, 0.5])

    def test_shift_equivariant(self):
        th = np.array([0.3, -1.2, 4.0])
        p, pi = np.array([0.2, 0.5, 0.3]), np.full(3, 1 / 3)
        np.testing.assert_allclose(update_theta(th + 7.5, 0.3, p, pi),
                                   update_theta(th, 0.3, p, pi) + 7.5)

    def test_leaving_theta_set_recentres(self):
        out = update_theta([2 * THETA_BOUND, 0.0], 1.0, [0.5, 0.5], [0.5, 0.5])
        assert np.all(np.abs(out) <= THETA_BOUND)
        assert out[0] - out[1] == 2 * THETA_BOUND

    def test_self_adjusting_direction(self):
        pi = np.array([0.1, 0.2, 0.3, 0.4])
        d = update_theta(np.zeros(4), 0.25, [0, 1, 0, 0], pi)
        assert d[1] == 0.25 * (1 - pi[1]) and d[1] > 0
        for j in (0, 2, 3):
            assert d[j] == -0.25 * pi[j] and d[j] < 0


class TestRecenter:
    def test_examples(self):
        np.testing.assert_array_equal(recenter([1, 1, 1]), [0, 0, 0])
        np.testing.assert_array_equal(recenter([0, 2]), [-1, 1])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
    def test_idempotent_and_differences(self, xs):
        r = recenter(xs)
        np.testing.assert_allclose(recenter(r), r, atol=1e-9)
        np.testing.assert_allclose(np.diff(r), np.diff(xs), atol=1e-6)


class TestEstimateProbabilities:
    def test_symmetric(self):
        np.testing.assert_allclose(estimate_probabilities([0, 0], [0.5, 0.5], [3, 4]), [0.5, 0.5])

    def test_nu_correction(self):
        p = estimate_probabilities([0, 0, 5.0], np.full(3, 1 / 3), [1, 1, 0])
        np.testing.assert_allclose(p, [0.5, 0.5, 0.0])
        assert p[2] == 0.0

    def test_inversion(self):
        p = estimate_probabilities([math.log(3), 0], [0.5, 0.5], [1, 1])
        np.testing.assert_allclose(p, [0.75, 0.25])

    def test_unstarted(self):
        with pytest.raises(UnstartedRunError):
            estimate_probabilities([0, 0], [0.5, 0.5], [0, 0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-300, 300), min_size=2, max_size=20), st.floats(-1e3, 1e3),
           st.data())
    def test_probability_vector_and_shift_invariance(self, theta, c, data):
        m = len(theta)
        visits = data.draw(st.lists(st.integers(0, 3), min_size=m, max_size=m))
        visits[0] = 1
        pi = np.full(m, 1 / m)
        p = estimate_probabilities(theta, pi, visits)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(estimate_probabilities(np.add(theta, c), pi, visits), p,
                                   atol=1e-9)

    def test_large_spread_is_stable(self):
        p = estimate_probabilities([800.0, 0.0, -800.0], np.full(3, 1 / 3), [1, 1, 1])
        assert np.all(np.isfinite(p)) and p[0] == 1.0


class TestMeanField:
    def test_examples(self):
        np.testing.assert_allclose(mean_field_h([1, 1], [0, 0], [0.5, 0.5]), [0, 0])
        np.testing.assert_allclose(mean_field_h([1, 1], [math.log(3), 0], [0.5, 0.5]),
                                   [-0.25, 0.25])

    def test_zero_on_solution_set(self):
        omega = np.array([0.2, 3.0, 0.7, 1.1])
        pi = np.array([0.1, 0.4, 0.3, 0.2])
        theta = np.log(omega / pi) + 2.0
        np.testing.assert_allclose(mean_field_h(omega, theta, pi), 0, atol=1e-15)

    def test_components_sum_to_zero(self, rng):
        for _ in range(100):
            m = 2 + int(rng.random() * 20)
            omega = np.exp(rng.standard_normal(m) * 3)
            pi = rng.random(m) + 0.1
            pi /= pi.sum()
            h = mean_field_h(omega, rng.standard_normal(m) * 5, pi)
            assert abs(h.sum()) < 1e-12


class TestLyapunov:
    def test_on_solution_set(self):
        omega = np.array([1.0, 2.0, 5.0])
        pi = np.full(3, 1 / 3)
        chk = lyapunov_check(omega, np.log(omega / pi), pi)
        assert chk.v < 1e-30 and abs(chk.v_dot) < 1e-30

    def test_v_dot_nonpositive(self, rng):
        for _ in range(1000):
            m = 2 + int(rng.random() * 10)
            omega = np.exp(rng.standard_normal(m) * 2)
            pi = rng.random(m) + 0.05
            pi /= pi.sum()
            chk = lyapunov_check(omega, rng.standard_normal(m) * 3, pi)
            assert chk.v >= 0 and chk.v_dot <= 0
            # v_dot is the directional derivative along the mean field
            assert chk.v_dot == pytest.approx(float(chk.grad_v @ chk.h), abs=1e-12)


class TestPartitions:
    def test_energy_grid(self):
        g = EnergyGrid.uniform(0.5, 0.5, 45, capital_lambda=22)
        assert g.m == 45
        assert g.region_index(0.49) == 1
        assert g.region_index(2.49) == 5
        assert g.region_index(22.0) == 45
        assert g.region_index(1e9) == 45

    def test_energy_grid_rejects_unsorted(self):
        with pytest.raises(ContractError):
            EnergyGrid((1.0, 1.0), 2.0)

    def test_index_range(self):
        r = IndexRange(7, 14)
        assert r.m == 8 and r.capital_lambda == 8
        assert r.region_index(7) == 1 and r.region_index(14) == 8
        with pytest.raises(ContractError):
            r.region_index(15)
