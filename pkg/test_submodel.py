"""
Test script for submodel.

Linear tilts, the QMD residual and its decay, score recovery, derivatives of
expectations along paths, the Hellinger gap between two paths and the
saturation of tilt scores.
"""

import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from model_core import (
    Distribution,
    ModelError,
    NumericConfig,
    SampleSpace,
    inner_product,
)
from submodel import (
    VERDICT_NOT_SCORE,
    VERDICT_SCORE,
    Submodel,
    centered_indicator_directions,
    ddt_expectation_fixed,
    ddt_expectation_varying,
    hellinger_gap_check,
    linear_tilt,
    qmd_residual,
    random_tilt_directions,
    recover_score,
    tilt_score_rank,
    varying_decomposition,
    verify_qmd,
)

FIXED_GRID = (1e-2, 1e-3, 1e-4)


def two_point(p=(0.5, 0.5)):
    return Distribution(SampleSpace(["a", "b"]), p)


def random_base(rng, size):
    return Distribution.from_weights(SampleSpace(range(size)), rng.dirichlet(np.ones(size)) + 1e-3)


class TestLinearTilt(unittest.TestCase):
    """Construction of p_t = p0 (1 + t g)."""

    def test_tilt_values(self):
        """Test densities along tilts on the uniform and skewed two-point bases."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        assert_allclose(sub.density_at(0.1).p, [0.55, 0.45])
        self.assertEqual(sub.t_range, 1.0)
        sub = linear_tilt(two_point((0.7, 0.3)), [0.3, -0.7])
        assert_allclose(sub.density_at(0.5).p, [0.805, 0.195])

    def test_zero_direction_is_identity_path(self):
        """Test that a zero direction gives a constant path with infinite range."""
        base = two_point((0.7, 0.3))
        sub = linear_tilt(base, [0.0, 0.0])
        self.assertTrue(math.isinf(sub.t_range))
        assert_allclose(sub.density_at(123.0).p, base.p)

    def test_base_returned_at_zero(self):
        """Test that t = 0 returns the base object itself."""
        base = two_point()
        self.assertIs(linear_tilt(base, [1.0, -1.0]).density_at(0.0), base)

    def test_rejections(self):
        """Test the rejection of uncentered directions, partial supports and out-of-range t."""
        with self.assertRaises(ModelError):
            linear_tilt(two_point(), [1.0, 0.0])
        with self.assertRaises(ModelError):
            linear_tilt(two_point((1.0, 0.0)), [0.0, 0.0])
        with self.assertRaises(ModelError):
            linear_tilt(two_point(), [1.0, -1.0]).density_at(1.0)
        with self.assertRaises(ModelError):
            Submodel(two_point(), lambda t: two_point(), 0.0)

    def test_valid_over_range(self):
        """Test that every p_t with |t| <= 0.9 / M is a distribution."""
        rng = np.random.default_rng(7)
        for size in (2, 5, 30):
            base = random_base(rng, size)
            g = random_tilt_directions(base, 1, seed=size, sup=2.0)[0]
            sub = linear_tilt(base, g)
            for t in np.linspace(-0.9, 0.9, 19) / 2.0:
                self.assertTrue(np.all(sub.density_at(t).p >= 0))


class TestQMD(unittest.TestCase):
    """QMD residuals and verdicts."""

    def test_zero_path_zero_residual(self):
        """Test that the constant path has zero residual and passes."""
        sub = linear_tilt(two_point(), [0.0, 0.0])
        self.assertEqual(qmd_residual(sub, [0.0, 0.0], 1e-3), 0.0)
        report = verify_qmd(sub, [0.0, 0.0])
        self.assertTrue(report.passed)
        self.assertEqual(report.residuals, (0.0, 0.0, 0.0))

    def test_declared_score_passes(self):
        """Test the QMD check of a tilt against its declared score."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        report = verify_qmd(sub, sub.declared_score)
        self.assertTrue(report.passed)
        self.assertEqual(report.verdict, VERDICT_SCORE)
        self.assertAlmostEqual(report.slope, 2.0, delta=0.05)

    def test_wrong_score_plateaus(self):
        """Test that with s' = 2g the residual tends to E0[g^2] / 4."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        self.assertAlmostEqual(qmd_residual(sub, [2.0, -2.0], 1e-4), 0.25, delta=1e-3)
        report = verify_qmd(sub, [2.0, -2.0], FIXED_GRID)
        self.assertFalse(report.passed)
        self.assertEqual(report.verdict, VERDICT_NOT_SCORE)

    def test_residual_rejects_bad_t(self):
        """Test that t = 0 and t outside the range are rejected."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        with self.assertRaises(ModelError):
            qmd_residual(sub, [1.0, -1.0], 0.0)
        with self.assertRaises(ModelError):
            qmd_residual(sub, [1.0, -1.0], 2.0)

    def test_grid_validation(self):
        """Test the rejection of short and unordered grids."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        with self.assertRaises(ModelError):
            verify_qmd(sub, [1.0, -1.0], (1e-2, 1e-3))
        with self.assertRaises(ModelError):
            verify_qmd(sub, [1.0, -1.0], (1e-3, 1e-2, 1e-4))

    def test_random_tilts_decay_quadratically(self):
        """Test quadratic decay on 100 random (p0, g) pairs with 2 to 50 atoms."""
        rng = np.random.default_rng(2024)
        for i in range(100):
            base = random_base(rng, int(rng.integers(2, 51)))
            g = random_tilt_directions(base, 1, seed=i, sup=0.8)[0]
            report = verify_qmd(linear_tilt(base, g), g, FIXED_GRID)
            self.assertGreaterEqual(report.slope, 1.9)
            self.assertLessEqual(report.residuals[-1], 1e-10)

    def test_small_mass_indicator_tilt(self):
        """Test the default grid on an indicator tilt through an atom of mass 1e-3."""
        base = Distribution(SampleSpace(range(4)), (0.001, 0.3, 0.3, 0.399))
        g = centered_indicator_directions(base)[0]
        self.assertAlmostEqual(g.sup_norm(), 999.0, places=9)
        report = verify_qmd(linear_tilt(base, g), g)
        self.assertTrue(report.passed)
        self.assertEqual(report.verdict, VERDICT_SCORE)
        self.assertLessEqual(report.residuals[-1], 1e-10)
        # The bottom point sits near res_max, not decades under it
        self.assertGreater(report.t_grid[-1], 1e-10)
        self.assertLessEqual(report.t_grid[0] * g.sup_norm(), 0.1 + 1e-12)


class TestScoreRecovery(unittest.TestCase):
    """Numerical scores of paths."""

    def test_recovers_tilt_score(self):
        """Test recovering the score of a linear tilt."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        assert_allclose(recover_score(sub).values, [1.0, -1.0], atol=1e-8)

    def test_zero_path(self):
        """Test that the constant path recovers the zero score."""
        assert_allclose(recover_score(linear_tilt(two_point(), [0.0, 0.0])).values, [0.0, 0.0], atol=1e-12)

    def test_nonlinear_path(self):
        """Test that p_t proportional to p0 exp(t g) recovers g - E0[g]."""
        base = two_point((0.7, 0.3))
        g = np.array([1.0, 2.0])

        def density(t):
            return Distribution.from_weights(base.space, base.p * np.exp(t * g))

        sub = Submodel(base, density, 1.0, name="exponential tilt")
        expected = g - float(np.dot(g, base.mass))
        assert_allclose(recover_score(sub).values, expected, atol=1e-8)

    def test_large_sup_nonlinear_path(self):
        """Test recovery along an exponential tilt whose direction has sup 100."""
        base = Distribution(SampleSpace(range(3)), (0.2, 0.5, 0.3))
        g = np.array([100.0, -50.0, 0.0])

        def density(t):
            return Distribution.from_weights(base.space, base.p * np.exp(t * g))

        sub = Submodel(base, density, 1.0 / 100.0, name="steep exponential tilt")
        expected = g - float(np.dot(g, base.mass))
        assert_allclose(recover_score(sub).values, expected, atol=1e-6)
        f = np.array([1.0, 2.0, -1.0])
        self.assertAlmostEqual(ddt_expectation_fixed(sub, f), inner_product(base, f, expected), delta=1e-6)

    def test_saturation_rank(self):
        """Test that indicator tilt scores span a space of dimension K - 1."""
        rng = np.random.default_rng(11)
        for size in range(2, 21):
            self.assertEqual(tilt_score_rank(random_base(rng, size)), size - 1)

    def test_indicator_directions(self):
        """Test the centered indicator direction of the first atom."""
        base = two_point((0.7, 0.3))
        directions = centered_indicator_directions(base)
        self.assertEqual(len(directions), 2)
        assert_allclose(directions[0].values, [1.0 / 0.7 - 1.0, -1.0])


class TestExpectationDerivatives(unittest.TestCase):
    """Differentiating E_{P_t}[f] and E_{P_t}[f_t]."""

    def test_fixed_function(self):
        """Test d/dt E[f] for a varying f, a constant f and a constant path."""
        sub = linear_tilt(two_point(), [1.0, -1.0])
        self.assertAlmostEqual(ddt_expectation_fixed(sub, [2.0, 4.0]), -1.0, places=9)
        self.assertAlmostEqual(ddt_expectation_fixed(sub, [3.0, 3.0]), 0.0, places=9)
        zero = linear_tilt(two_point(), [0.0, 0.0])
        self.assertEqual(ddt_expectation_fixed(zero, [2.0, 4.0]), 0.0)

    def test_fixed_function_matches_inner_product(self):
        """Test d/dt E_{P_t}[f] = E0[f s] over random triples."""
        rng = np.random.default_rng(99)
        config = NumericConfig()
        for i in range(100):
            base = random_base(rng, int(rng.integers(2, 30)))
            g = random_tilt_directions(base, 1, seed=1000 + i, sup=0.8)[0]
            f = rng.uniform(-5.0, 5.0, base.space.size)
            expected = inner_product(base, f, g)
            value = ddt_expectation_fixed(linear_tilt(base, g), f, config)
            self.assertLessEqual(abs(value - expected), config.derivative_tolerance(expected))

    def test_varying_function(self):
        """Test the derivative of E_{P_t}[f_t] and its two-term decomposition."""
        base = two_point((0.7, 0.3))
        u = np.array([1.0, 3.0])
        zero = linear_tilt(base, [0.0, 0.0])
        value = ddt_expectation_varying(zero, lambda t: np.array([2.0, 4.0]) + t * u)
        self.assertAlmostEqual(value, 0.7 + 0.9, places=9)

        sub = linear_tilt(base, [0.3, -0.7])
        family = lambda t: np.array([2.0, 4.0]) + t * u
        value = ddt_expectation_varying(sub, family)
        first, second = varying_decomposition(sub, family)
        self.assertAlmostEqual(value, first + second, places=9)
        self.assertAlmostEqual(first, inner_product(base, [2.0, 4.0], [0.3, -0.7]), places=9)

    def test_varying_family_undefined(self):
        """Test that a family undefined away from zero raises ModelError."""
        sub = linear_tilt(two_point(), [1.0, -1.0])

        def family(t):
            if t != 0.0:
                raise ValueError("only defined at zero")
            return np.array([1.0, 1.0])

        with self.assertRaises(ModelError):
            ddt_expectation_varying(sub, family)


class TestHellingerGap(unittest.TestCase):
    """Distance between two tilts through the same base."""

    def test_two_point_limit(self):
        """Test the gap ratio against its limit on the uniform two-point base."""
        base = two_point()
        report = hellinger_gap_check(linear_tilt(base, [1.0, -1.0]), linear_tilt(base, [2.0, -2.0]))
        self.assertTrue(report.passed)
        limit = 1.0 / (2.0 * math.sqrt(2.0))
        self.assertAlmostEqual(report.limit_bound, limit, places=12)
        self.assertAlmostEqual(report.ratios[-1], limit, delta=0.05 * limit)

    def test_identical_scores(self):
        """Test that a path compared with itself has zero gap."""
        base = two_point((0.7, 0.3))
        sub = linear_tilt(base, [0.3, -0.7])
        report = hellinger_gap_check(sub, sub)
        self.assertTrue(all(r == 0.0 for r in report.ratios))

    def test_different_bases_rejected(self):
        """Test that paths through different bases are rejected."""
        with self.assertRaises(ModelError):
            hellinger_gap_check(linear_tilt(two_point(), [1.0, -1.0]),
                                linear_tilt(two_point((0.7, 0.3)), [0.3, -0.7]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(0, 2 ** 32 - 1))
    def test_bound_holds_for_random_tilts(self, size, seed):
        """Test the gap bound on random pairs of tilts."""
        base = random_base(np.random.default_rng(seed), size)
        s, g = random_tilt_directions(base, 2, seed=seed)
        report = hellinger_gap_check(linear_tilt(base, s), linear_tilt(base, g))
        self.assertTrue(report.passed)


class TestRandomDirections(unittest.TestCase):
    """Seeded tilt directions."""

    def test_deterministic_and_scaled(self):
        """Test that directions repeat for a seed and carry the requested sup-norm."""
        base = random_base(np.random.default_rng(3), 6)
        first = random_tilt_directions(base, 4, seed=42, sup=0.5)
        second = random_tilt_directions(base, 4, seed=42, sup=0.5)
        for a, b in zip(first, second):
            assert_allclose(a.values, b.values, rtol=0, atol=0)
            self.assertAlmostEqual(a.sup_norm(), 0.5, places=12)


if __name__ == "__main__":
    unittest.main()
