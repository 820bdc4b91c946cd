import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpurify import calculus as C
from qpurify.calculus import DeltaRole, DomainError

# Frozen from exact rational arithmetic (fractions.Fraction) and a 40-digit
# mpmath root of d(delta)/dF = 0; neither route touches the code under test.
SWAP_099 = 0.9801333333333333
P_08_08 = 0.7688888888888888
FPUR_08_08 = 0.838150289017341
FPUR_09_08 = 0.8831521739130435
GAIN_09_08 = -0.01684782608695652
F2MIN_09 = 0.8373493975903614
DELTA_09 = 0.06265060240963856
DELTA_099 = 0.009544617004474861
FEAS_09 = 0.9506959534856404
CHAIN5_099 = 0.9513156737580247
F1_STAR = 0.81067948571020826
F2_STAR = 0.73466132602743472
DELTA_MAX = 0.07601815968277354

entangled = st.floats(min_value=0.501, max_value=0.999)


def exact_fpur(a, b):
    a, b = Fraction(a), Fraction(b)
    p = Fraction(8, 9) * a * b - Fraction(2, 9) * (a + b) + Fraction(5, 9)
    return (a * b + (1 - a) * (1 - b) / 9) / p


class TestConversions:
    @pytest.mark.parametrize("w,f", [(0.0, 0.25), (1.0, 1.0), (2 / 3, 0.75)])
    def test_fidelity_from_werner(self, w, f):
        assert C.fidelity_from_werner(w) == pytest.approx(f, abs=1e-15)

    @pytest.mark.parametrize("w", [-0.1, 1.01])
    def test_werner_out_of_range(self, w):
        with pytest.raises(DomainError):
            C.fidelity_from_werner(w)

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_round_trip(self, w):
        assert abs(C.werner_from_fidelity(C.fidelity_from_werner(w)) - w) <= 1e-15


class TestGenerationProbability:
    def test_lossless(self):
        assert C.generation_probability(C.HardwareParams(1, 1, 0)) == 0.5

    def test_one_attenuation_length(self):
        hw = C.HardwareParams(1, 1, 22.0)
        assert C.generation_probability(hw) == pytest.approx(0.5 / math.e, rel=1e-12)
        assert C.generation_probability(hw) == pytest.approx(0.18394, abs=1e-5)

    def test_dead_detector(self):
        assert C.generation_probability(C.HardwareParams(0, 0.7, 10)) == 0.0

    def test_validation(self):
        with pytest.raises(DomainError):
            C.HardwareParams(1.2, 1, 0)
        with pytest.raises(DomainError):
            C.HardwareParams(1, 1, 1, l_att_km=0)


class TestSwap:
    def test_examples(self):
        assert C.swap_fidelity(1.0, 1.0) == 1.0
        assert C.swap_fidelity(0.99, 0.99) == pytest.approx(SWAP_099, abs=1e-15)
        assert C.swap_fidelity(0.25, 0.93) == pytest.approx(0.25, abs=1e-15)

    @given(entangled, entangled)
    def test_degrades_below_worst_input(self, a, b):
        assert C.swap_fidelity(a, b) < min(a, b)

    @pytest.mark.parametrize("f_ab,expected", [(1.0, 0.5), (0.9, 0.5384615384615384), (0.5, 1.0)])
    def test_partner_bound(self, f_ab, expected):
        bound = C.swap_partner_lower_bound(f_ab)
        assert bound == pytest.approx(expected, abs=1e-12)
        assert C.swap_fidelity(f_ab, bound) == pytest.approx(0.5, abs=1e-12)

    def test_partner_bound_domain(self):
        with pytest.raises(DomainError):
            C.swap_partner_lower_bound(0.25)


class TestPurification:
    def test_success_probability(self):
        assert C.purification_success_prob(1.0, 1.0) == pytest.approx(1.0, abs=1e-15)
        assert C.purification_success_prob(0.8, 0.8) == pytest.approx(P_08_08, abs=1e-15)
        assert C.purification_success_prob(0.5, 0.5) == pytest.approx(5 / 9, abs=1e-15)

    def test_output_fidelity(self):
        assert C.purified_fidelity(1.0, 1.0) == pytest.approx(1.0, abs=1e-15)
        assert C.purified_fidelity(0.5, 0.5) == pytest.approx(0.5, abs=1e-15)
        assert C.purified_fidelity(0.8, 0.8) == pytest.approx(FPUR_08_08, abs=1e-15)
        assert C.purified_fidelity(0.9, 0.8) == pytest.approx(FPUR_09_08, abs=1e-15)

    def test_gain(self):
        assert C.purification_gain(0.8, 0.8) == pytest.approx(FPUR_08_08 - 0.8, abs=1e-15)
        assert C.purification_gain(0.9, 0.8) == pytest.approx(GAIN_09_08, abs=1e-15)
        assert C.purification_gain(1.0, 1.0) == pytest.approx(0.0, abs=1e-15)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_exactly_symmetric(self, a, b):
        assert C.purification_success_prob(a, b) == C.purification_success_prob(b, a)
        assert C.purified_fidelity(a, b) == C.purified_fidelity(b, a)

    @given(entangled, entangled)
    def test_matches_rational_oracle(self, a, b):
        assert C.purified_fidelity(a, b) == pytest.approx(float(exact_fpur(a, b)), abs=1e-14)

    @given(st.floats(0.5, 1.0), st.floats(0.5, 1.0))
    def test_success_probability_positive(self, a, b):
        assert C.purification_success_prob(a, b) > 0


class TestTolerance:
    def test_f2_min(self):
        assert C.f2_min(0.811) == pytest.approx(0.735, abs=5e-4)
        assert C.f2_min(0.9) == pytest.approx(F2MIN_09, abs=1e-15)
        assert C.purified_fidelity(0.9, C.f2_min(0.9)) == pytest.approx(0.9, abs=1e-6)
        assert C.f2_min(1.0) == pytest.approx(1.0, abs=1e-15)

    def test_f1_max(self):
        assert C.f1_max(0.735) == pytest.approx(0.811, abs=5e-4)
        v = C.f1_max(0.9)
        assert C.purified_fidelity(v, 0.9) == pytest.approx(v, abs=1e-12)
        assert C.f1_max(1.0) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("fn", [C.f2_min, C.f1_max, C.delta_tolerance])
    @pytest.mark.parametrize("f", [0.5, 0.3, 1.2])
    def test_domain_guard(self, fn, f):
        with pytest.raises(DomainError):
            fn(f)

    def test_delta_examples(self):
        assert C.delta_tolerance(0.811) == pytest.approx(0.076, abs=5e-4)
        assert C.delta_tolerance(0.9) == pytest.approx(DELTA_09, abs=1e-15)
        assert C.delta_tolerance(0.99) == pytest.approx(DELTA_099, abs=1e-15)
        assert C.delta_tolerance(0.735, DeltaRole.AS_INFERIOR) == pytest.approx(0.076, abs=5e-4)

    @given(st.floats(0.51, 0.99))
    def test_delta_rational_form(self, f):
        rational = (8 * f**3 - 14 * f**2 + 7 * f - 1) / (8 * f**2 - 12 * f + 1)
        assert C.delta_tolerance(f) == pytest.approx(rational, abs=1e-12)

    @given(st.floats(0.51, 0.99))
    def test_boundary_fixed_points(self, f):
        assert abs(C.purified_fidelity(f, C.f2_min(f)) - f) <= 1e-9
        top = C.f1_max(f)
        assert abs(C.purified_fidelity(top, f) - top) <= 1e-9

    @given(st.floats(0.501, 0.999))
    def test_nonnegative(self, f):
        assert C.delta_tolerance(f, DeltaRole.AS_SUPERIOR) >= 0
        assert C.delta_tolerance(f, DeltaRole.AS_INFERIOR) >= 0

    def test_roles_differ(self):
        f = 0.9
        assert C.delta_tolerance(f, DeltaRole.AS_SUPERIOR) != pytest.approx(
            C.delta_tolerance(f, DeltaRole.AS_INFERIOR), abs=1e-6
        )


class TestDecision:
    @pytest.mark.parametrize("f1,f2,expected", [(0.8, 0.8, True), (0.9, 0.8, False), (0.82, 0.75, True)])
    def test_examples(self, f1, f2, expected):
        assert C.should_purify(f1, f2) is expected
        assert (C.purification_gain(f1, f2) > 0) is expected

    def test_domain(self):
        with pytest.raises(DomainError):
            C.should_purify(0.4, 0.9)

    @settings(max_examples=500)
    @given(entangled, entangled)
    def test_agrees_with_gain(self, a, b):
        gain = C.purification_gain(a, b)
        if abs(gain) > 1e-8:
            assert C.should_purify(a, b) == (gain > 0)


class TestDeltaMax:
    def test_matches_root_oracle(self):
        res = C.find_delta_max()
        assert res.f1_star == pytest.approx(F1_STAR, abs=1e-6)
        assert res.f2_star == pytest.approx(F2_STAR, abs=1e-6)
        assert res.delta_max == pytest.approx(DELTA_MAX, abs=1e-12)

    def test_deterministic(self):
        assert C.find_delta_max() == C.find_delta_max()

    def test_universal_bound(self):
        dmax = C.find_delta_max().delta_max
        fs = np.linspace(0.5, 1.0, 10_002)[1:-1]
        sup = max(C.delta_tolerance(f) for f in fs)
        inf = max(C.delta_tolerance(f, DeltaRole.AS_INFERIOR) for f in fs)
        assert sup <= dmax + 1e-6
        assert inf <= dmax + 1e-6
        # the inferior-referenced peak recovers the same bound
        assert inf == pytest.approx(dmax, abs=1e-6)

    def test_golden_section_parabola(self):
        x, y = C.golden_section_max(lambda t: -(t - 0.3) ** 2, 0.0, 1.0)
        assert x == pytest.approx(0.3, abs=1e-8)
        assert y == pytest.approx(0.0, abs=1e-15)


class TestChainLimit:
    def test_examples(self):
        assert C.chain_fidelity_limit([1.0, 1.0, 1.0]) == 1.0
        assert C.chain_fidelity_limit([0.99, 0.99]) == pytest.approx(SWAP_099, abs=1e-15)
        assert C.chain_fidelity_limit([0.99] * 5) == pytest.approx(CHAIN5_099, abs=1e-15)
        assert C.chain_fidelity_limit([0.93]) == 0.93

    def test_empty(self):
        with pytest.raises(ValueError):
            C.chain_fidelity_limit([])

    @given(st.lists(st.floats(0.25, 1.0), min_size=1, max_size=8), st.randoms())
    def test_any_fold_order(self, fs, rnd):
        limit = C.chain_fidelity_limit(fs)
        assert abs(C.fold_swaps(fs) - limit) <= 1e-12
        pool = list(fs)
        while len(pool) > 1:
            i = rnd.randrange(len(pool) - 1)
            pool[i : i + 2] = [C.swap_fidelity(pool[i], pool[i + 1])]
        assert abs(pool[0] - limit) <= 1e-12


class TestFeasibility:
    def test_examples(self):
        f_hat, ok = C.purification_feasibility(0.9, 0.95)
        assert f_hat == pytest.approx(FEAS_09, abs=1e-12)
        assert ok
        assert C.purification_feasibility(1.0, 1.0) == (pytest.approx(1.0, abs=1e-15), True)
        f_hat, ok = C.purification_feasibility(0.6, 0.99)
        assert not ok
        assert f_hat == pytest.approx(0.6401832800207486, abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            C.purification_feasibility(0.5, 0.9)


class TestGainGrid:
    def test_structure(self):
        g = C.gain_grid(201)
        assert g.shape == (201, 201)
        assert np.max(np.abs(g - g.T)) <= 1e-12
        assert np.all(np.diag(g)[1:-1] > 0)

    def test_entry_matches_gain(self):
        g = C.gain_grid(11)
        axis = C.grid_axis(11)
        i = int(np.argmin(np.abs(axis - 0.9)))
        j = int(np.argmin(np.abs(axis - 0.8)))
        assert g[i, j] == pytest.approx(GAIN_09_08, abs=1e-12)

    def test_resolution_guard(self):
        with pytest.raises(ValueError):
            C.gain_grid(1)
