from unittest import TestCase

import numpy as np
from attrs import evolve

from jdflow.errors import ArgumentError, ProbeError
from jdflow.models.coefficients import CoefficientCatalog, CoefficientSet, StateBox
from jdflow.probe import probe_hypotheses

BOX = StateBox.cube(3.0, 1)


def ou():
    return CoefficientCatalog.build("ornstein_uhlenbeck", {"theta": 2.0, "sigma": 0.5})


class TestProbeHypotheses(TestCase):
    def test_ornstein_uhlenbeck(self):
        report = probe_hypotheses(ou(), BOX, 50, seed=0)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.estimated_lipschitz_x["b"], 2.0, places=6)
        self.assertEqual(report.estimated_lipschitz_x["alpha"], 0.0)
        self.assertEqual(report.estimated_lipschitz_x["g"], 0.0)
        self.assertIsNone(report.action_box)
        record = report.to_record()
        self.assertTrue(record["pass"])
        self.assertEqual(record["sample_count"], 50)

    def test_understated_constant_fails(self):
        report = probe_hypotheses(evolve(ou(), declared_lipschitz=0.1), BOX, 20, seed=0)
        self.assertFalse(report.passed)

    def test_more_samples_never_lower_estimates(self):
        coeffs = CoefficientCatalog.build("jump_linear", {"theta": 1.0, "gamma": 0.5, "small_gain": 0.3})
        few = probe_hypotheses(coeffs, BOX, 10, seed=5)
        many = probe_hypotheses(coeffs, BOX, 40, seed=5)
        for name, value in few.estimated_lipschitz_x.items():
            self.assertLessEqual(value, many.estimated_lipschitz_x[name])
        for name, value in few.estimated_growth.items():
            self.assertLessEqual(value, many.estimated_growth[name])
        self.assertTrue(many.passed)

    def test_threads(self):
        one = probe_hypotheses(ou(), BOX, 12, seed=3)
        two = probe_hypotheses(ou(), BOX, 12, seed=3, threads=2)
        self.assertEqual(one.estimated_lipschitz_x, two.estimated_lipschitz_x)
        self.assertEqual(one.estimated_growth, two.estimated_growth)

    def test_action_lipschitz(self):
        coeffs = CoefficientCatalog.build("controlled_drift", {"gain": 1.5}, control_dim=1)
        report = probe_hypotheses(coeffs, BOX, 30, seed=1)
        self.assertEqual(report.action_box, StateBox.cube(1.0, 1))
        self.assertAlmostEqual(report.estimated_lipschitz_a["b"], 1.5, places=6)
        self.assertEqual(report.estimated_lipschitz_x["b"], 0.0)

    def test_default_box(self):
        coeffs = CoefficientCatalog.build("geometric", {"low": -2.0, "high": 2.0})
        report = probe_hypotheses(coeffs, None, 10, seed=0)
        self.assertEqual(report.state_box, coeffs.state_box)

    def test_bad_arguments(self):
        with self.assertRaises(ArgumentError):
            probe_hypotheses(ou(), BOX, 1, seed=0)
        with self.assertRaises(ArgumentError):
            probe_hypotheses(ou(), None, 10, seed=0)
        with self.assertRaises(ArgumentError):
            probe_hypotheses(ou(), StateBox.cube(1.0, 2), 10, seed=0)

    def test_non_finite_coefficient(self):
        coeffs = CoefficientSet(
            state_dim=1, brownian_dim=1, mark_dim=1, drift=lambda t, x, a: np.full_like(x, np.inf)
        )
        with self.assertRaises(ProbeError):
            probe_hypotheses(coeffs, BOX, 5, seed=0)
