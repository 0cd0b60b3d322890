from unittest import TestCase

import numpy as np

from jdflow.errors import ArgumentError
from jdflow.models.coefficients import CoefficientCatalog
from jdflow.models.control import ActionSet, SimpleControl
from jdflow.models.noise import LevyMeasureSpec, MarkDistribution, NoiseModel
from jdflow.regularity import (
    DETERMINISTIC_NOTE,
    box_lattice,
    check_flow_property,
    estimate_cadlag_exponent,
    estimate_lipschitz_moment,
    estimate_stochastic_continuity,
)


def make_noise(level=4, small=2.0) -> NoiseModel:
    levy = LevyMeasureSpec(
        small_intensity=small,
        small_marks=MarkDistribution(kind="uniform_ball"),
        large_intensity=2.0,
        large_marks=MarkDistribution(kind="uniform_shell", params=(2.0,)),
    )
    return NoiseModel(levy=levy, horizon=1.0, level=level)


def jump_coeffs():
    return CoefficientCatalog.build(
        "jump_linear", {"theta": 0.5, "sigma": 0.4, "small_gain": 0.2, "large_gain": 0.5}
    )


class TestBoxLattice(TestCase):
    def test_lattice(self):
        lattice = box_lattice([1.0, -1.0], 0.5, 3, 2)
        self.assertEqual(lattice.shape, (9, 2))
        self.assertEqual(lattice.min(axis=0).tolist(), [0.5, -1.5])
        self.assertEqual(lattice.max(axis=0).tolist(), [1.5, -0.5])
        self.assertEqual(box_lattice([0.0], 1.0, 1, 1).tolist(), [[0.0]])
        with self.assertRaises(ArgumentError):
            box_lattice([0.0], 1.0, 0, 1)


class TestFlowProperty(TestCase):
    def test_passes_with_jumps(self):
        report = check_flow_property(
            jump_coeffs(), make_noise(), 0.25, 0.5, 1.0, [[-1.0], [0.0], [1.0]], scenarios=20, seed=3
        )
        self.assertTrue(report.passed)
        self.assertEqual(report.statistic, 0.0)
        self.assertEqual(report.sample_count, 60)
        self.assertEqual(report.to_record()["test_name"], "flow_property")

    def test_perturbation_is_detected(self):
        report = check_flow_property(
            jump_coeffs(), make_noise(), 0.25, 0.5, 1.0, [[0.0]], scenarios=5, seed=3, perturbation=1e-3
        )
        self.assertFalse(report.passed)
        self.assertGreater(report.statistic, 0.0)
        self.assertIn(report.details["worst_path_index"], range(5))

    def test_threads_do_not_change_result(self):
        args = (jump_coeffs(), make_noise(), 0.0, 0.5, 1.0, [[0.0]])
        one = check_flow_property(*args, scenarios=8, seed=1, perturbation=1e-2)
        two = check_flow_property(*args, scenarios=8, seed=1, perturbation=1e-2, threads=2)
        self.assertEqual(one.statistic, two.statistic)
        self.assertEqual(one.details, two.details)

    def test_time_order(self):
        with self.assertRaises(ArgumentError):
            check_flow_property(jump_coeffs(), make_noise(), 0.5, 0.25, 1.0, [[0.0]], scenarios=2)
        with self.assertRaises(ArgumentError):
            check_flow_property(jump_coeffs(), make_noise(), 0.25, 0.3, 1.0, [[0.0]], scenarios=2)


class TestLipschitzMoment(TestCase):
    def test_additive_noise_passes(self):
        # with additive noise the gap between two flows is deterministic
        coeffs = CoefficientCatalog.build("ornstein_uhlenbeck", {"theta": 1.0, "sigma": 0.5})
        report = estimate_lipschitz_moment(coeffs, make_noise(), 0.0, [0.0], [0.4], 2.0, scenarios=10)
        self.assertTrue(report.passed)
        np.testing.assert_allclose(report.details["ratios"], 1.0, rtol=1e-9)
        np.testing.assert_allclose(report.details["separations"], [0.4, 0.2, 0.1])
        self.assertEqual(report.threshold, 4.0 * 3.0 * min(report.details["ratios"]))

    def test_multiplicative_jumps(self):
        coeffs = CoefficientCatalog.build("jump_linear", {"theta": 0.5, "gamma": 0.5, "large_gain": 0.0})
        report = estimate_lipschitz_moment(coeffs, make_noise(small=5.0), 0.0, [0.0], [1.0], 4.0, scenarios=50)
        self.assertEqual(len(report.details["moments"]), 3)
        self.assertTrue((report.details["moment_stderr"] >= 0).all())
        self.assertTrue(report.passed)

    def test_controlled_bilinear_bound(self):
        # with |a| <= 1 in b = a x the gap grows at most like e^(T - s)
        coeffs = CoefficientCatalog.build("bilinear", {"kappa": 1.0, "sigma": 0.3}, control_dim=1)
        actions = ActionSet.from_values([-1.0, 1.0])
        for s in (0.0, 0.5):
            for indices in ([1, 1], [0, 1]):
                control = SimpleControl.dyadic(1, indices, actions, 1.0)
                report = estimate_lipschitz_moment(coeffs, make_noise(), s, [0.5], [1.0], 2.0, control, scenarios=5)
                self.assertTrue((report.details["ratios"] <= np.exp(2.0 * (1.0 - s))).all())
                self.assertTrue(report.passed)

    def test_bad_arguments(self):
        coeffs = CoefficientCatalog.build("ornstein_uhlenbeck")
        with self.assertRaises(ArgumentError):
            estimate_lipschitz_moment(coeffs, make_noise(), 0.0, [0.0], [1.0], 1.5, scenarios=2)
        with self.assertRaises(ArgumentError):
            estimate_lipschitz_moment(coeffs, make_noise(), 0.0, [0.0], [0.0], 2.0, scenarios=2)
        with self.assertRaises(ArgumentError):
            estimate_lipschitz_moment(jump_coeffs(), make_noise(), 0.0, [0.0], [1.0], 2.0, scenarios=2)

    def test_large_jumps_allowed(self):
        report = estimate_lipschitz_moment(
            jump_coeffs(), make_noise(), 0.0, [0.0], [1.0], 2.0, scenarios=5, allow_large_jumps=True
        )
        # large jumps do not depend on the state here
        np.testing.assert_allclose(report.details["ratios"], report.details["ratios"][0], rtol=1e-9)


class TestStochasticContinuity(TestCase):
    def test_zero_coefficients(self):
        coeffs = CoefficientCatalog.build("zero")
        report = estimate_stochastic_continuity(
            coeffs, make_noise(), 0.25, 1.0, 0.1, [0.25, 0.125], scenarios=5, lattice_points=3
        )
        self.assertTrue(report.passed)
        self.assertEqual(report.details["estimates"].tolist(), [0.0, 0.0])
        self.assertEqual(report.statistic, 0.0)

    def test_offsets_sorted_descending(self):
        report = estimate_stochastic_continuity(
            jump_coeffs(), make_noise(), 0.25, 1.0, 0.05, [0.0625, 0.25, 0.125], scenarios=20, lattice_points=3
        )
        self.assertEqual(report.details["offsets"], [0.25, 0.125, 0.0625])
        estimates = report.details["estimates"]
        self.assertTrue(((estimates >= 0) & (estimates <= 1)).all())

    def test_two_sided(self):
        report = estimate_stochastic_continuity(
            jump_coeffs(), make_noise(), 0.5, 0.5, 0.05, [0.25, 0.125], scenarios=10, two_sided=True
        )
        self.assertEqual(len(report.details["estimates"]), 2)
        with self.assertRaises(ArgumentError):
            estimate_stochastic_continuity(
                jump_coeffs(), make_noise(), 0.125, 0.5, 0.05, [0.25], scenarios=2, two_sided=True
            )

    def test_effective_offsets(self):
        with self.assertLogs("jdflow.regularity", level="WARNING"):
            report = estimate_stochastic_continuity(
                CoefficientCatalog.build("zero"), make_noise(), 0.25, 1.0, 0.1, [0.1, 0.25], scenarios=2
            )
        self.assertEqual(report.details["offsets"], [0.25, 0.1])
        # 0.1 is floored to one grid step of 1/16
        self.assertEqual(report.details["effective_offsets"], [0.25, 0.0625])
        self.assertEqual(report.to_record()["details"]["effective_offsets"], [0.25, 0.0625])

    def test_drift_only_hits_iff_offset_exceeds_epsilon(self):
        # two drift-only flows end exactly |r - s| apart
        report = estimate_stochastic_continuity(
            CoefficientCatalog.build("constant", {"drift": 1.0}), make_noise(), 0.25, 1.0, 0.1,
            [0.25, 0.125, 0.0625], scenarios=5, lattice_points=3,
        )
        self.assertEqual(report.details["estimates"].tolist(), [1.0, 1.0, 0.0])
        self.assertTrue(report.passed)

    def test_large_jump_gap_matches_poisson(self):
        # a flow moves only at large jumps, so the two flows differ iff (s, r] holds one
        n = 2000
        report = estimate_stochastic_continuity(
            CoefficientCatalog.build("jump_linear"), make_noise(small=0.0), 0.25, 1.0, 0.5,
            [0.25, 0.125, 0.0625], scenarios=n, lattice_points=1,
        )
        expected = -np.expm1(-2.0 * np.array([0.25, 0.125, 0.0625]))
        bound = 4 * np.sqrt(expected * (1 - expected) / n)
        self.assertTrue((np.abs(report.details["estimates"] - expected) <= bound).all(), report.details["estimates"])
        self.assertTrue(report.passed)

    def test_bad_offsets(self):
        with self.assertRaises(ArgumentError):
            estimate_stochastic_continuity(jump_coeffs(), make_noise(), 0.25, 1.0, 0.1, [0.01], scenarios=2)
        with self.assertRaises(ArgumentError):
            estimate_stochastic_continuity(jump_coeffs(), make_noise(), 0.75, 1.0, 0.1, [0.25], scenarios=2)
        with self.assertRaises(ArgumentError):
            estimate_stochastic_continuity(jump_coeffs(), make_noise(), 0.25, 1.0, 0.1, [], scenarios=2)
        with self.assertRaises(ArgumentError):
            estimate_stochastic_continuity(jump_coeffs(), make_noise(), 0.25, 1.0, 0.0, [0.25], scenarios=2)


class TestCadlagExponent(TestCase):
    def test_deterministic_family(self):
        report = estimate_cadlag_exponent(
            CoefficientCatalog.build("zero"), make_noise(level=6), [0.0], 1.0, 1.0, 20,
            scenarios=2, lattice_points=2, min_decades=1.0,
        )
        self.assertTrue(report.passed)
        self.assertEqual(report.details["note"], DETERMINISTIC_NOTE)
        self.assertEqual(report.sample_count, 40)

    def test_drift_only_slope(self):
        # D(s, u) = u - s, so the product moment grows like the squared width
        report = estimate_cadlag_exponent(
            CoefficientCatalog.build("constant", {"drift": 1.0}), make_noise().with_level(8), [0.0], 1.0, 1.0, 300,
            scenarios=2, lattice_points=1, min_decades=1.5,
        )
        self.assertEqual(report.threshold, 1.0)
        self.assertEqual(report.sample_count, 600)
        self.assertAlmostEqual(report.details["slope"], 2.0, delta=0.2)
        self.assertAlmostEqual(report.statistic, report.details["slope"] - 2 * report.details["stderr"])
        self.assertTrue(report.passed)

    def test_small_jump_ou_passes(self):
        coeffs = CoefficientCatalog.build("jump_linear", {"theta": 1.0, "small_gain": 0.3, "large_gain": 0.0})
        report = estimate_cadlag_exponent(
            coeffs, make_noise().with_level(8), [0.0], 0.5, 1.0, 400,
            scenarios=10, lattice_points=2, min_decades=1.5,
        )
        self.assertGreater(report.details["slope"], 1.5)
        self.assertGreater(report.statistic, 1.0)
        self.assertTrue(report.passed)

    def test_bad_arguments(self):
        with self.assertRaises(ArgumentError):
            estimate_cadlag_exponent(jump_coeffs(), make_noise(level=6), [0.0], 1.0, 0.5, 10, min_decades=1.0)
        with self.assertRaises(ArgumentError):
            # 16 cells leave less than two decades of widths
            estimate_cadlag_exponent(jump_coeffs(), make_noise(level=4), [0.0], 1.0, 1.0, 10)
