"""
Test script for model_core.

Covers the sample space and distribution invariants, the L2(P0) geometry,
the finite-difference helpers, the numeric configuration and the model file
reader.
"""

import math
import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from model_core import (
    MAX_STEP_FRACTION,
    DimensionMismatchError,
    Distribution,
    ModelError,
    NumericalError,
    NumericConfig,
    RealFunction,
    SampleSpace,
    ScoreFunction,
    SpecFileError,
    center,
    expectation,
    fit_steps,
    hellinger,
    inner_product,
    l2_norm,
    loglog_slope,
    read_model_file,
    richardson_derivative,
    total_variation,
)


def two_point(p=(0.5, 0.5)):
    return Distribution(SampleSpace(["a", "b"]), p)


@st.composite
def distributions(draw, min_size=2, max_size=12):
    """Full-support distributions with random nu weights."""
    size = draw(st.integers(min_size, max_size))
    weights = draw(arrays(np.float64, size, elements=st.floats(0.05, 1.0)))
    nu = draw(arrays(np.float64, size, elements=st.floats(0.5, 2.0)))
    space = SampleSpace(range(size), nu)
    return Distribution.from_weights(space, weights)


class TestSampleSpace(unittest.TestCase):
    """Construction rules for SampleSpace."""

    def test_defaults_to_counting_measure(self):
        """Test that nu defaults to one per atom."""
        space = SampleSpace(["x", "y", "z"])
        assert_allclose(space.nu, [1.0, 1.0, 1.0])
        self.assertEqual(space.size, 3)
        self.assertEqual(space.index("y"), 1)

    def test_rejects_bad_spaces(self):
        """Test the rejection of single-atom, duplicate and non-positive-measure spaces."""
        with self.assertRaises(ModelError):
            SampleSpace(["only"])
        with self.assertRaises(ModelError):
            SampleSpace(["a", "a"])
        with self.assertRaises(ModelError):
            SampleSpace(["a", "b"], [1.0, 0.0])
        with self.assertRaises(DimensionMismatchError):
            SampleSpace(["a", "b"], [1.0, 1.0, 1.0])

    def test_unknown_atom(self):
        """Test that looking up an atom outside the space raises."""
        with self.assertRaises(ModelError):
            SampleSpace(["a", "b"]).index("c")

    def test_arrays_are_read_only(self):
        """Test that the measure cannot be modified in place."""
        space = SampleSpace(["a", "b"])
        with self.assertRaises(ValueError):
            space.nu[0] = 3.0


class TestDistribution(unittest.TestCase):
    """Validation of densities."""

    def test_valid_distribution(self):
        """Test a full-support two-point distribution."""
        dist = two_point((0.7, 0.3))
        self.assertTrue(dist.full_support)
        assert_allclose(dist.mass, [0.7, 0.3])

    def test_zero_mass_atom(self):
        """Test that a zero-mass atom clears full_support."""
        self.assertFalse(two_point((1.0, 0.0)).full_support)

    def test_rejects_invalid_densities(self):
        """Test the rejection of unnormalized, negative and wrongly sized densities."""
        space = SampleSpace(["a", "b"])
        with self.assertRaises(ModelError):
            Distribution(space, [0.6, 0.6])
        with self.assertRaises(ModelError):
            Distribution(space, [1.2, -0.2])
        with self.assertRaises(DimensionMismatchError):
            Distribution(space, [0.2, 0.3, 0.5])

    def test_nu_weighted_normalization(self):
        """Test that normalization integrates p against nu."""
        space = SampleSpace(["a", "b"], [2.0, 1.0])
        dist = Distribution(space, [0.25, 0.5])
        assert_allclose(dist.mass, [0.5, 0.5])

    def test_from_weights(self):
        """Test normalizing raw weights into a density."""
        dist = Distribution.from_weights(SampleSpace(["a", "b", "c"]), [1.0, 1.0, 2.0])
        assert_allclose(dist.p, [0.25, 0.25, 0.5])

    def test_norm_tolerance_comes_from_config(self):
        """Test that an overridden norm_tol is honoured at construction time."""
        space = SampleSpace(["a", "b"])
        loose = NumericConfig().override("norm_tol", 1e-6)
        with self.assertRaises(ModelError):
            Distribution(space, [0.5 + 1e-8, 0.5])
        dist = Distribution(space, [0.5 + 1e-8, 0.5], loose)
        self.assertTrue(dist.full_support)


class TestGeometry(unittest.TestCase):
    """Expectations, inner products, centering and distances."""

    def test_expectation_and_inner_product(self):
        """Test expectations and inner products on the uniform two-point space."""
        dist = two_point()
        self.assertAlmostEqual(expectation(dist, [2.0, 4.0]), 3.0)
        self.assertEqual(inner_product(dist, [1.0, 1.0], [0.0, 0.0]), 0.0)
        self.assertAlmostEqual(inner_product(dist, [1.0, 1.0], [1.0, 1.0]), 1.0)

    def test_center(self):
        """Test that centering returns a ScoreFunction and is idempotent."""
        dist = two_point()
        centered = center(dist, [2.0, 4.0])
        self.assertIsInstance(centered, ScoreFunction)
        assert_allclose(centered.values, [-1.0, 1.0])
        assert_allclose(center(dist, [5.0, 5.0]).values, [0.0, 0.0])
        assert_allclose(center(dist, centered).values, centered.values)

    def test_score_function_requires_mean_zero(self):
        """Test that a non-centered function is not accepted as a score."""
        with self.assertRaises(ModelError):
            ScoreFunction(two_point(), [1.0, 0.0])

    def test_score_mean_tolerance_comes_from_config(self):
        """Test that an overridden mean_tol is honoured by ScoreFunction."""
        values = [1e-7, -1e-7 + 1e-8]
        with self.assertRaises(ModelError):
            ScoreFunction(two_point(), values)
        loose = NumericConfig().override("mean_tol", 1e-6)
        score = ScoreFunction(two_point(), values, loose)
        assert_allclose(score.values, values)

    def test_real_function_arithmetic(self):
        """Test the arithmetic operators of RealFunction."""
        space = SampleSpace(["a", "b"])
        f = RealFunction(space, [1.0, 2.0])
        g = RealFunction(space, [3.0, -1.0])
        assert_allclose((f + g).values, [4.0, 1.0])
        assert_allclose((2 * f - 1).values, [1.0, 3.0])
        assert_allclose((-g / 2).values, [-1.5, 0.5])
        self.assertEqual(g.sup_norm(), 3.0)

    def test_mismatched_spaces(self):
        """Test that distances between different spaces raise."""
        other = Distribution(SampleSpace(["x", "y"]), [0.5, 0.5])
        with self.assertRaises(DimensionMismatchError):
            hellinger(two_point(), other)

    def test_hellinger_and_tv_examples(self):
        """Test Hellinger and total variation on identical, disjoint and nearby pairs."""
        same = two_point()
        self.assertEqual(hellinger(same, same), 0.0)
        self.assertEqual(total_variation(same, same), 0.0)
        # Disjoint supports
        self.assertAlmostEqual(hellinger(two_point((1.0, 0.0)), two_point((0.0, 1.0))), 1.0, places=12)
        self.assertAlmostEqual(total_variation(two_point((1.0, 0.0)), two_point((0.0, 1.0))), 2.0)
        self.assertAlmostEqual(hellinger(two_point(), two_point((0.7, 0.3))), 0.14524, places=5)

    @settings(max_examples=100, deadline=None)
    @given(distributions(), st.data())
    def test_tv_bounded_by_hellinger(self, dist, data):
        """Test TV <= 2 sqrt 2 H on random pairs."""
        weights = data.draw(arrays(np.float64, dist.space.size, elements=st.floats(0.0, 1.0)))
        weights = np.where(weights < 1e-6, 0.0, weights)
        if not np.any(weights > 0):
            weights[0] = 1.0
        other = Distribution.from_weights(dist.space, weights)
        self.assertLessEqual(total_variation(dist, other), 2.0 * math.sqrt(2.0) * hellinger(dist, other) + 1e-12)
        self.assertLessEqual(hellinger(dist, other), 1.0 + 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(distributions(), st.data())
    def test_center_is_mean_zero(self, dist, data):
        """Test that centered functions have mean zero on random distributions."""
        f = data.draw(arrays(np.float64, dist.space.size, elements=st.floats(-10.0, 10.0)))
        centered = center(dist, f)
        self.assertLessEqual(abs(expectation(dist, centered)), 1e-12)
        self.assertGreaterEqual(l2_norm(dist, centered), 0.0)


class TestNumerics(unittest.TestCase):
    """Finite differences and slope fits."""

    def test_richardson_on_smooth_functions(self):
        """Test Richardson extrapolation on scalar and vector functions."""
        value, err = richardson_derivative(math.sin, NumericConfig.FD_STEPS)
        self.assertAlmostEqual(value, 1.0, places=10)
        self.assertLess(err, 1e-8)
        value, _ = richardson_derivative(lambda h: np.array([math.exp(h), h * h]), NumericConfig.FD_STEPS)
        assert_allclose(value, [1.0, 0.0], atol=1e-10)

    def test_richardson_needs_two_steps(self):
        """Test that a single step is rejected."""
        with self.assertRaises(NumericalError):
            richardson_derivative(math.sin, (1e-3,))

    def test_fit_steps(self):
        """Test that steps are capped at a fixed fraction of the path range."""
        self.assertEqual(fit_steps((1e-3, 5e-4), 1.0), (1e-3, 5e-4))
        self.assertEqual(fit_steps((1e-3, 5e-4), 4.0), (1e-3, 5e-4))
        self.assertEqual(fit_steps((1e-3, 5e-4), math.inf), (1e-3, 5e-4))
        # A tilt with sup|g| = 100 has t_range 0.01
        shrunk = fit_steps((1e-3, 5e-4, 2.5e-4), 1e-2)
        assert_allclose(shrunk, (1e-5, 5e-6, 2.5e-6))
        self.assertLessEqual(max(shrunk) * 100.0, MAX_STEP_FRACTION * (1.0 + 1e-12))

    def test_loglog_slope(self):
        """Test slope fits on a pure power law and on degenerate data."""
        ts = np.array([1e-2, 1e-3, 1e-4])
        self.assertAlmostEqual(loglog_slope(ts, 3.0 * ts ** 2), 2.0, places=10)
        self.assertTrue(math.isnan(loglog_slope(ts, [0.0, 0.0, 1.0])))


class TestNumericConfig(unittest.TestCase):
    """Tolerance overrides."""

    def test_defaults(self):
        """Test the default tolerances and the derivative tolerance floor."""
        config = NumericConfig()
        self.assertEqual(config.res_max, 1e-10)
        self.assertEqual(config.fd_steps, (1e-3, 5e-4, 2.5e-4))
        self.assertEqual(config.derivative_tolerance(0.0), config.deriv_abs_floor)
        self.assertAlmostEqual(config.derivative_tolerance(10.0), 1e-5, places=15)

    def test_override(self):
        """Test validated overrides and the rejection of bad names and values."""
        config = NumericConfig().override("neyman_tol", 1e-6)
        self.assertEqual(config.neyman_tol, 1e-6)
        with self.assertRaises(ModelError):
            NumericConfig().override("neyman_tol", 0.0)
        with self.assertRaises(ModelError):
            NumericConfig().override("neyman_tol", float("nan"))
        with self.assertRaises(ModelError):
            NumericConfig().override("no_such_tol", 1.0)


class TestModelFile(unittest.TestCase):
    """Reading key-value model files."""

    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmpdir.cleanup()

    def write(self, text):
        path = os.path.join(self.tmpdir.name, "model.spec")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
        return path

    def test_reads_model(self):
        """Test reading atoms, measure, density and extra keys."""
        path = self.write("# comment\nspace.atoms = a, b, c\nspace.nu = 1, 2, 1\np0 = 0.5, 0.125, 0.25\nf = 1,2,3\n")
        dist, entries = read_model_file(path)
        self.assertEqual(dist.space.atoms, ("a", "b", "c"))
        assert_allclose(dist.space.nu, [1.0, 2.0, 1.0])
        self.assertIn("f", entries)

    def test_norm_tolerance_is_passed_through(self):
        """Test that the reader builds the density with the given configuration."""
        path = self.write("space.atoms = a, b\np0 = 0.50000001, 0.5\n")
        with self.assertRaises(SpecFileError):
            read_model_file(path)
        dist, _ = read_model_file(path, NumericConfig().override("norm_tol", 1e-6))
        self.assertEqual(dist.space.size, 2)

    def test_length_mismatch_names_line(self):
        """Test that a wrong-length density names its line."""
        path = self.write("space.atoms = a, b\n\np0 = 0.2, 0.3, 0.5\n")
        with self.assertRaises(SpecFileError) as ctx:
            read_model_file(path)
        self.assertIn(f"{path}:3", str(ctx.exception))

    def test_negative_entry(self):
        """Test that a negative density entry names its line."""
        path = self.write("space.atoms = a, b\np0 = 1.5, -0.5\n")
        with self.assertRaises(SpecFileError) as ctx:
            read_model_file(path)
        self.assertIn(":2", str(ctx.exception))

    def test_malformed_line_and_missing_key(self):
        """Test malformed lines, missing keys and missing files."""
        with self.assertRaises(SpecFileError):
            read_model_file(self.write("space.atoms = a, b\np0 0.5 0.5\n"))
        with self.assertRaises(SpecFileError):
            read_model_file(self.write("space.atoms = a, b\n"))
        with self.assertRaises(SpecFileError):
            read_model_file(os.path.join(self.tmpdir.name, "missing.spec"))


if __name__ == "__main__":
    unittest.main()
