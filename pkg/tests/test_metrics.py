import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixbench.metrics import (
    CLAMP_DB,
    brute_force_assignment,
    composite_loss,
    pit_evaluate,
    pit_from_matrix,
    ri_mag_loss,
    sdr,
    si_sdr,
)
from mixbench.signal import ComplexSpectrogram, StftConfig


def _oracle_si_sdr(est, ref):
    alpha = np.dot(ref, est) / np.dot(ref, ref)
    num = np.sum((alpha * ref) ** 2)
    den = np.sum((est - alpha * ref) ** 2)
    return 10 * np.log10(num / den)


class TestSiSdr:
    def test_worked_example(self):
        assert si_sdr(np.array([1.0, 1, 0, 0]), np.array([1.0, 0, 0, 0])) == pytest.approx(0.0, abs=1e-12)

    def test_identity_hits_clamp(self, rng):
        s = rng.standard_normal(100)
        assert si_sdr(s, s) == CLAMP_DB

    def test_orthogonal_hits_floor(self):
        assert si_sdr(np.array([0.0, 1.0]), np.array([1.0, 0.0])) == -CLAMP_DB

    def test_matches_closed_form(self, rng):
        for _ in range(200):
            s, e = rng.standard_normal(64), rng.standard_normal(64)
            assert abs(si_sdr(e, s) - _oracle_si_sdr(e, s)) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=1e3), st.integers(0, 2**32 - 1))
    def test_scale_invariance(self, a, seed):
        r = np.random.default_rng(seed)
        s, e = r.standard_normal(128), r.standard_normal(128)
        assert abs(si_sdr(a * e, s) - si_sdr(e, s)) < 1e-9

    def test_sign_flip_invariance(self, rng):
        s, e = rng.standard_normal(50), rng.standard_normal(50)
        assert si_sdr(-e, -s) == pytest.approx(si_sdr(e, s), abs=1e-12)

    def test_as_written_variant_not_scale_invariant(self, rng):
        s = rng.standard_normal(64)
        e = s + 0.1 * rng.standard_normal(64)
        assert si_sdr(2 * e, s, variant="as_written") != pytest.approx(si_sdr(e, s, variant="as_written"))

    def test_rejects_silent_inputs(self):
        with pytest.raises(ValueError, match="zero energy"):
            si_sdr(np.ones(4), np.zeros(4))
        with pytest.raises(ValueError, match="zero energy"):
            si_sdr(np.zeros(4), np.ones(4))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths differ"):
            si_sdr(np.ones(4), np.ones(5))


class TestSdr:
    def test_identity_clamp(self, rng):
        s = rng.standard_normal(10)
        assert sdr(s, s) == CLAMP_DB

    def test_double(self, rng):
        s = rng.standard_normal(10)
        assert sdr(2 * s, s) == pytest.approx(0.0, abs=1e-12)

    def test_twenty_db(self, rng):
        s = rng.standard_normal(1000)
        e = rng.standard_normal(1000)
        e *= np.sqrt(np.sum(s**2) / 100 / np.sum(e**2))
        assert sdr(s + e, s) == pytest.approx(20.0, abs=1e-9)

    def test_silent_estimate_allowed(self):
        assert sdr(np.zeros(4), np.ones(4)) == pytest.approx(0.0)


def _spec(values):
    v = np.asarray(values, dtype=complex)
    cfg = StftConfig(2, 1)
    return ComplexSpectrogram(v.reshape(1, -1, 2), cfg, 1)


class TestRiMag:
    def test_zero_when_identical(self, rng):
        v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        assert ri_mag_loss(_spec(v), _spec(v)) == 0.0

    @pytest.mark.parametrize("variant", ["complex_difference", "magnitude_difference"])
    def test_single_cell_example(self, variant):
        s = _spec([1 + 1j, 0])
        z = _spec([0, 0])
        assert abs(ri_mag_loss(z, s, variant) - (2 + math.sqrt(2))) < 1e-12

    def test_nonnegative(self, rng):
        for _ in range(200):
            a = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            b = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            assert ri_mag_loss(_spec(a), _spec(b)) >= 0.0

    def test_triangle(self, rng):
        for _ in range(100):
            a, b, c = (rng.standard_normal(6) + 1j * rng.standard_normal(6) for _ in range(3))
            lhs = ri_mag_loss(_spec(a), _spec(c))
            assert lhs <= ri_mag_loss(_spec(a), _spec(b)) + ri_mag_loss(_spec(b), _spec(c)) + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            ri_mag_loss(np.zeros((1, 2, 3)), np.zeros((1, 3, 3)))

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="magnitude term"):
            ri_mag_loss(np.zeros(3), np.zeros(3), "phase")


class TestCompositeLoss:
    def test_perfect(self, rng):
        refs = [rng.standard_normal(800) for _ in range(2)]
        out = composite_loss(refs, refs)
        assert out.ri_mag == 0.0 and out.si_sdr_loss == -2 * CLAMP_DB

    def test_additive(self, rng):
        refs = [rng.standard_normal(800) for _ in range(2)]
        ests = [r + 0.3 * rng.standard_normal(800) for r in refs]
        out = composite_loss(ests, refs)
        assert out.total == out.ri_mag + out.si_sdr_loss

    def test_degrading_increases_total(self, rng):
        refs = [rng.standard_normal(800) for _ in range(2)]
        noise = rng.standard_normal(800)
        ests = [refs[0] + 0.1 * noise, refs[1] + 0.1 * rng.standard_normal(800)]
        worse = [refs[0] + 0.5 * noise, ests[1]]
        assert composite_loss(worse, refs).total > composite_loss(ests, refs).total

    def test_count_mismatch(self, rng):
        with pytest.raises(ValueError):
            composite_loss([rng.standard_normal(10)], [])


class TestPit:
    def test_swapped_estimates(self, rng):
        r1, r2 = rng.standard_normal(500), rng.standard_normal(500)
        res = pit_evaluate([r2, r1], [r1, r2])
        assert res.permutation == (1, 0)
        assert res.score == CLAMP_DB

    @pytest.mark.parametrize("c", [2, 3, 4])
    def test_matches_brute_force(self, c, rng):
        for _ in range(100):
            m = rng.standard_normal((c, c))
            for maximize in (True, False):
                res = pit_from_matrix(m, maximize)
                perm, total = brute_force_assignment(m, maximize)
                assert res.permutation == perm
                assert res.score * c == pytest.approx(total, abs=1e-12)

    def test_dominates_identity(self, rng):
        for _ in range(200):
            m = rng.standard_normal((3, 3))
            assert pit_from_matrix(m, True).score >= np.trace(m) / 3 - 1e-12
            assert pit_from_matrix(m, False).score <= np.trace(m) / 3 + 1e-12

    def test_diagonal_dominance(self, rng):
        m = rng.uniform(0, 1, (4, 4)) + np.eye(4) * 10
        assert pit_from_matrix(m).permutation == (0, 1, 2, 3)

    def test_score_reverified(self, rng):
        refs = [rng.standard_normal(300) for _ in range(3)]
        ests = [refs[2] + 0.1 * rng.standard_normal(300), refs[0], refs[1] * 0.5]
        res = pit_evaluate(ests, refs, "sdr")
        again = [sdr(ests[i], refs[p]) for i, p in enumerate(res.permutation)]
        assert res.score == pytest.approx(np.mean(again))

    def test_joint_objective_brute_force(self, rng):
        refs = [rng.standard_normal(100) for _ in range(3)]
        ests = [refs[1], refs[2], refs[0]]

        def joint(e, r):
            return min(si_sdr(a, b) for a, b in zip(e, r))

        res = pit_evaluate(ests, refs, ("joint", joint), maximize=True)
        assert res.permutation == (1, 2, 0)

    def test_joint_too_many_sources(self):
        refs = [np.ones(4)] * 9
        with pytest.raises(ValueError, match="at most 8"):
            pit_evaluate(refs, refs, ("joint", lambda e, r: 0.0), maximize=True)

    def test_callable_needs_direction(self):
        with pytest.raises(ValueError, match="maximize"):
            pit_evaluate([np.ones(3)], [np.ones(3)], lambda e, r: 0.0)

    def test_non_square_matrix(self):
        with pytest.raises(ValueError, match="square"):
            pit_from_matrix(np.zeros((2, 3)))
