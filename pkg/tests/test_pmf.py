# tests/test_pmf.py
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import math

import numpy as np
import pytest
from dist_core.errors import (
    ConfigurationError, DegenerateStarLaw, SupportBudgetExceeded, TruncationTooAggressive,
)
from dist_core.pmf import (
    DEFAULT_POLICY, FFT_MIN_SUPPORT, NO_TRUNCATION, IntPmf, ModelSpec, StarLaw,
    TruncationPolicy, completed, convolve, convolve_arrays, convolve_power,
    dr_step, iterate_laws, make_initial_law, mean, mean_interval, survival,
    tail_reference, truncate, weighted_moment,
)


def approx_dict(pmf, expected, abs_tol=1e-15):
    got = pmf.as_dict()
    assert set(got) == set(expected)
    for k, p in expected.items():
        assert got[k] == pytest.approx(p, abs=abs_tol)


STAR2 = StarLaw.constant(2)


class TestIntPmf:
    def test_trailing_zeros_trimmed(self):
        pmf = IntPmf(np.array([0.5, 0.5, 0.0, 0.0]))
        assert pmf.support_max == 1

    def test_probs_read_only(self):
        pmf = IntPmf(np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            pmf.probs[0] = 1.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            IntPmf(np.array([1.1, -0.1]))

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            IntPmf(np.array([np.nan, 1.0]))

    def test_tilted_storage_reads_back_probabilities(self):
        pmf = IntPmf(np.array([0.9, 0.0, 0.4]), tilt=2.0)
        assert pmf[2] == pytest.approx(0.1)
        np.testing.assert_allclose(pmf.true_probs(), [0.9, 0.0, 0.1])
        assert pmf.mass_error() <= 1e-15

    def test_with_tilt_round_trip(self):
        pmf = IntPmf.from_dict({0: 0.5, 1: 0.3, 4: 0.2})
        back = pmf.with_tilt(3.0).with_tilt(1.0)
        np.testing.assert_allclose(back.probs, pmf.probs, rtol=1e-14)
        assert back.tilt == 1.0

    def test_tilt_below_one_rejected(self):
        with pytest.raises(ValueError):
            IntPmf(np.array([1.0]), tilt=0.5)


    def test_getitem_outside_support(self):
        pmf = IntPmf.from_dict({0: 0.5, 2: 0.5})
        assert pmf[-1] == 0.0
        assert pmf[7] == 0.0
        assert pmf[1] == 0.0

    def test_dirac(self):
        assert IntPmf.dirac(3).as_dict() == {3: 1.0}


class TestStarLaw:
    def test_constant_one_is_degenerate(self):
        with pytest.raises(DegenerateStarLaw):
            StarLaw.constant(1)

    def test_degenerate_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            StarLaw.from_pairs([(1, 1.0)])

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            StarLaw.from_pairs([(1, 0.5), (2, 0.4)])

    def test_zero_value_rejected(self):
        with pytest.raises(ConfigurationError):
            StarLaw.from_pairs([(0, 0.5), (2, 0.5)])

    def test_duplicate_values_rejected(self):
        with pytest.raises(ConfigurationError):
            StarLaw.from_pairs([(2, 0.5), (2, 0.5)])

    def test_sorted_and_zero_entries_dropped(self):
        star = StarLaw.from_pairs([(3, 0.5), (1, 0.5), (2, 0.0)])
        assert star.pairs() == [(1, 0.5), (3, 0.5)]
        assert star.max_value == 3

    def test_tail(self):
        star = StarLaw.uniform(1, 4)
        assert star.tail(1) == pytest.approx(1.0)
        assert star.tail(3) == pytest.approx(0.5)
        assert star.tail(5) == 0.0


class TestModelSpec:
    def test_critical_point_and_epsilon(self):
        spec = ModelSpec(2, STAR2, 0.15)
        assert spec.p_c == pytest.approx(0.2, abs=1e-15)
        assert spec.epsilon == pytest.approx(0.05, abs=1e-15)
        assert spec.theta == pytest.approx(0.75)
        assert spec.regime == "subcritical"

    def test_from_epsilon(self):
        spec = ModelSpec.from_epsilon(2, STAR2, 0.05)
        assert spec.p == pytest.approx(0.15, abs=1e-15)

    def test_regimes(self):
        spec = ModelSpec(2, STAR2, 0.3)
        assert spec.regime == "supercritical"
        assert spec.critical().regime == "critical"

    def test_p_out_of_range(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(2, STAR2, 1.5)

    def test_arity_below_two(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(1, STAR2, 0.1)


class TestTruncationPolicy:
    def test_tau_out_of_range(self):
        with pytest.raises(ConfigurationError):
            TruncationPolicy(tau=1.0)

    def test_cap_too_small(self):
        with pytest.raises(ConfigurationError):
            TruncationPolicy(support_cap=1)


class TestInitialLaw:
    def test_star_two(self):
        approx_dict(make_initial_law(ModelSpec(2, STAR2, 0.1)), {0: 0.9, 2: 0.1})

    def test_p_zero_is_dirac(self):
        assert make_initial_law(ModelSpec(2, STAR2, 0.0)).as_dict() == {0: 1.0}

    def test_uniform_star(self):
        law = make_initial_law(ModelSpec(2, StarLaw.uniform(1, 2), 0.3))
        approx_dict(law, {0: 0.7, 1: 0.15, 2: 0.15})


class TestConvolve:
    def test_fair_coins(self):
        coin = IntPmf.from_dict({0: 0.5, 1: 0.5})
        approx_dict(convolve(coin, coin), {0: 0.25, 1: 0.5, 2: 0.25})

    def test_dirac_zero_is_identity(self):
        a = IntPmf.from_dict({0: 0.9, 2: 0.1})
        approx_dict(convolve(a, IntPmf.dirac(0)), {0: 0.9, 2: 0.1})

    def test_hand_enumeration(self):
        a = IntPmf.from_dict({0: 0.9, 2: 0.1})
        approx_dict(convolve(a, a), {0: 0.81, 2: 0.18, 4: 0.01})

    def test_defects_combine(self):
        a = IntPmf.from_dict({0: 0.9}, defect=0.1)
        assert convolve(a, a).defect == pytest.approx(0.19)

    def test_power_one_is_identity(self):
        a = IntPmf.from_dict({0: 0.9, 2: 0.1})
        assert convolve_power(a, 1) is a

    def test_power_three(self):
        a = IntPmf.from_dict({0: 0.9, 2: 0.1})
        approx_dict(convolve_power(a, 3), {0: 0.729, 2: 0.243, 4: 0.027, 6: 0.001})

    def test_power_zero_rejected(self):
        with pytest.raises(ValueError):
            convolve_power(IntPmf.dirac(0), 0)

    def test_fft_path_matches_direct(self):
        rng = np.random.default_rng(5)
        size = FFT_MIN_SUPPORT + 904
        a = rng.random(size)
        b = rng.random(size)
        a /= a.sum()
        b /= b.sum()
        np.testing.assert_allclose(convolve_arrays(a, b), np.convolve(a, b), rtol=0, atol=1e-14)
        assert np.all(convolve_arrays(a, b) >= 0.0)


class TestTruncate:
    def test_tau_zero_is_noop(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.5 - 1e-20, 9: 1e-20})
        assert truncate(a, NO_TRUNCATION) is a

    def test_tiny_tail_removed_into_defect(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.5 - 1e-20, 9: 1e-20})
        out = truncate(a, DEFAULT_POLICY)
        assert out.support_max == 1
        assert out.defect == pytest.approx(1e-20, rel=1e-12)

    def test_removed_mass_not_renormalized(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.5 - 1e-20, 9: 1e-20})
        out = truncate(a, DEFAULT_POLICY)
        assert out[0] == 0.5

    def test_second_pass_changes_nothing(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.5 - 1e-20, 9: 1e-20})
        once = truncate(a, DEFAULT_POLICY)
        twice = truncate(once, DEFAULT_POLICY)
        assert twice.support_max == once.support_max
        assert twice.defect == once.defect

    def test_support_cap_within_limit(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.5 - 1e-9, 5: 1e-9})
        out = truncate(a, TruncationPolicy(tau=0.0, support_cap=2))
        assert out.support_max == 1
        assert out.defect == pytest.approx(1e-9, rel=1e-9)

    def test_support_cap_too_aggressive(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.25, 5: 0.25})
        with pytest.raises(TruncationTooAggressive):
            truncate(a, TruncationPolicy(tau=0.0, support_cap=2))


class TestDrStep:
    def test_hand_enumeration(self):
        spec = ModelSpec(2, STAR2, 0.1)
        out = dr_step(IntPmf.from_dict({0: 0.9, 2: 0.1}), spec)
        approx_dict(out, {0: 0.81, 1: 0.18, 3: 0.01})

    def test_zero_is_absorbing(self):
        spec = ModelSpec(2, STAR2, 0.0)
        assert dr_step(IntPmf.dirac(0), spec).as_dict() == {0: 1.0}

    def test_deterministic_doubling(self):
        # X_n = 2^n + 1 for n >= 1
        spec = ModelSpec(2, STAR2, 1.0)
        laws = list(iterate_laws(spec, 3))
        assert [law.as_dict() for law in laws] == [{2: 1.0}, {3: 1.0}, {5: 1.0}, {9: 1.0}]

    def test_mass_conserved_over_run(self):
        spec = ModelSpec(2, STAR2, 0.1)
        for law in iterate_laws(spec, 50):
            assert law.mass_error() <= 1e-12

    def test_defect_carried_not_multiplied(self):
        spec = ModelSpec(2, STAR2, 0.1)
        start = IntPmf.from_dict({0: 0.9, 2: 0.1 - 1e-3}, defect=1e-3)
        out = dr_step(start, spec, NO_TRUNCATION)
        assert out.defect == 1e-3
        assert out.mass_error() <= 1e-12

    def test_completed_restores_mass(self):
        a = IntPmf.from_dict({0: 0.5, 1: 0.4}, defect=0.1)
        assert completed(a).as_dict()[0] == pytest.approx(0.6)
        assert completed(a).defect == 0.0

    def test_iterate_rejects_negative_horizon(self):
        with pytest.raises(ConfigurationError):
            list(iterate_laws(ModelSpec(2, STAR2, 0.1), -1))


class TestScalars:
    def test_mean_and_survival(self):
        a = IntPmf.from_dict({0: 0.81, 1: 0.18, 3: 0.01})
        assert mean(a) == pytest.approx(0.21)
        assert survival(a) == pytest.approx(0.19)

    def test_mean_interval_exact(self):
        interval = mean_interval(IntPmf.from_dict({0: 0.5, 2: 0.5}))
        assert interval.value == interval.upper == pytest.approx(1.0)
        assert not interval.is_lower_bound

    def test_mean_interval_with_defect(self):
        interval = mean_interval(IntPmf.from_dict({0: 0.5, 2: 0.4}, defect=0.1))
        assert interval.is_lower_bound
        assert math.isinf(interval.upper)

    def test_weighted_moments(self):
        a = IntPmf.from_dict({0: 0.9, 2: 0.1})
        assert weighted_moment(a, 0, 2) == pytest.approx(1.3)
        assert weighted_moment(a, 1, 2) == pytest.approx(0.8)
        assert weighted_moment(a, 2, 1) == pytest.approx(0.4)

    def test_weighted_moment_at_zero(self):
        a = IntPmf.from_dict({0: 0.9, 2: 0.1})
        assert weighted_moment(a, 0, 0.0) == pytest.approx(0.9)
        assert weighted_moment(a, 1, 0.0) == 0.0

    def test_weighted_moment_large_support(self):
        probs = np.zeros(2001)
        probs[0] = 1.0
        probs[2000] = 1e-300
        expected = 1.0 + (1e-300 * 2.0 ** 1000) * 2.0 ** 1000
        assert weighted_moment(IntPmf(probs), 0, 2) == pytest.approx(expected, rel=1e-10)

    def test_weighted_moment_negative_rejected(self):
        with pytest.raises(ValueError):
            weighted_moment(IntPmf.dirac(0), -1, 2)


def cdf(law, size):
    probs = np.zeros(size)
    full = completed(law).probs
    probs[: full.size] = full
    return np.cumsum(probs)


class TestMassClosure:
    @pytest.mark.parametrize("p", [0.15, 0.2])
    def test_mass_plus_defect_is_one(self, p):
        for law in iterate_laws(ModelSpec(2, STAR2, p), 200):
            assert law.stored_mass() + law.defect == pytest.approx(1.0, abs=1e-12)

    def test_zero_atom_closed_from_positive_part(self):
        spec = ModelSpec(2, STAR2, 0.2).critical()
        law = make_initial_law(spec)
        for _ in range(30):
            law = dr_step(law, spec)
        assert law[0] == pytest.approx(1.0 - law.defect - survival(law), abs=1e-15)


class TestWeightedTruncation:
    def test_reference_of_tilted_law(self):
        # Σ_{k>=1} P(X=k)(2^k - 1) = 0.1 · 3
        law = make_initial_law(ModelSpec(2, STAR2, 0.1))
        assert law.tilt == 2.0
        assert tail_reference(law) == pytest.approx(0.3)

    def test_reference_of_plain_law(self):
        assert tail_reference(IntPmf.from_dict({0: 0.5, 3: 0.5})) == pytest.approx(0.5)

    def test_weighted_tail_kept(self):
        # raw tail 1e-20 but weighted 1e-20 · 2^60 is far above tau
        a = IntPmf.from_dict({0: 0.5, 1: 0.5 - 1e-20, 60: 1e-20}).with_tilt(2.0)
        assert truncate(a, DEFAULT_POLICY).support_max == 60

    def test_matches_untruncated_means(self):
        spec = ModelSpec(2, STAR2, 0.15)
        cut = [mean(law) for law in iterate_laws(spec, 100, DEFAULT_POLICY)]
        full = [mean(law) for law in iterate_laws(spec, 100, NO_TRUNCATION)]
        np.testing.assert_allclose(cut, full, rtol=1e-6, atol=0.0)


class TestSupportBudget:
    def test_truncate_over_budget(self):
        a = IntPmf.from_dict({0: 0.5, 9: 0.5})
        with pytest.raises(SupportBudgetExceeded):
            truncate(a, TruncationPolicy(tau=0.0, max_support=8))

    def test_supercritical_growth_stops(self):
        with pytest.raises(SupportBudgetExceeded):
            list(iterate_laws(ModelSpec(2, STAR2, 0.5), 40, TruncationPolicy(max_support=256)))

    def test_budget_too_small_rejected(self):
        with pytest.raises(ConfigurationError):
            TruncationPolicy(max_support=1)


class TestRecursionProperties:
    @pytest.mark.parametrize("lower,upper", [(0.05, 0.1), (0.1, 0.15), (0.15, 0.2)])
    def test_monotone_in_p(self, lower, upper):
        small = iterate_laws(ModelSpec(2, STAR2, lower), 50)
        large = iterate_laws(ModelSpec(2, STAR2, upper), 50)
        for a, b in zip(small, large):
            size = max(a.probs.size, b.probs.size)
            assert np.all(cdf(a, size) >= cdf(b, size) - 1e-12)

    @pytest.mark.parametrize("p", [0.15, 0.2, 0.3])
    def test_mean_contraction(self, p):
        spec = ModelSpec(2, STAR2, p)
        law = make_initial_law(spec)
        for _ in range(12):
            nxt = dr_step(law, spec)
            assert mean(nxt) <= 2.0 * mean(law) * (1.0 + 1e-12)
            law = nxt

    @pytest.mark.parametrize("s", [0.5, 1.5, 2.0])
    def test_generating_function_recursion(self, s):
        # H'(s) = H(s)^m / s + (1 - 1/s) H(0)^m
        spec = ModelSpec(2, STAR2, 0.15)
        laws = list(iterate_laws(spec, 30))
        for a, b in zip(laws, laws[1:]):
            expected = weighted_moment(a, 0, s) ** 2 / s + (1.0 - 1.0 / s) * a[0] ** 2
            assert weighted_moment(b, 0, s) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("m", [2, 3, 5])
    def test_power_matches_repeated_convolve(self, m):
        a = IntPmf.from_dict({0: 0.6, 1: 0.1, 2: 0.2, 5: 0.1})
        repeated = a
        for _ in range(m - 1):
            repeated = convolve(repeated, a)
        np.testing.assert_allclose(convolve_power(a, m).probs, repeated.probs, rtol=1e-13, atol=0.0)

    def test_power_of_tilted_law(self):
        a = IntPmf.from_dict({0: 0.7, 2: 0.3})
        tilted = convolve_power(a.with_tilt(2.0), 3)
        np.testing.assert_allclose(tilted.true_probs(), convolve_power(a, 3).probs, rtol=1e-13)
