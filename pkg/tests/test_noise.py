from unittest import TestCase
import json
import os
import tempfile

import numpy as np
from scipy import stats

from jdflow.errors import ArgumentError, ConfigurationError
from jdflow.models.noise import (
    LevyMeasureSpec,
    MarkDistribution,
    NoiseModel,
    RegionEnum,
    dyadic_level,
)
from jdflow.noise import arrival_times, build_scenario, dump_scenarios, large_jump_times
from jdflow.rng import substream
from jdflow.storage import TextFile


def make_levy(small=3.0, large=2.0, mark_dim=1) -> LevyMeasureSpec:
    return LevyMeasureSpec(
        small_intensity=small,
        small_marks=MarkDistribution(kind="uniform_ball"),
        large_intensity=large,
        large_marks=MarkDistribution(kind="uniform_shell", params=(3.0,)),
        mark_dim=mark_dim,
    )


class TestDyadicLevel(TestCase):
    def test_level(self):
        self.assertEqual(dyadic_level(1.0, 1.0), 0)
        self.assertEqual(dyadic_level(1.0, 0.125), 3)
        self.assertEqual(dyadic_level(2.0, 2.0 / 64), 6)

    def test_not_dyadic(self):
        with self.assertRaises(ConfigurationError):
            dyadic_level(1.0, 0.3)
        with self.assertRaises(ConfigurationError):
            dyadic_level(1.0, 2.0)
        with self.assertRaises(ConfigurationError):
            dyadic_level(0.0, 0.1)


class TestArrivalTimes(TestCase):
    def test_increasing_inside_horizon(self):
        times = arrival_times(substream(7, 0, 1), 50.0, 1.0)
        self.assertGreater(len(times), 0)
        self.assertTrue((np.diff(times) > 0).all())
        self.assertGreater(times[0], 0.0)
        self.assertLess(times[-1], 1.0)

    def test_zero_rate(self):
        self.assertEqual(len(arrival_times(substream(7, 0, 1), 0.0, 1.0)), 0)


class TestLevyMeasureSpec(TestCase):
    def test_large_intensity_required(self):
        with self.assertRaises(ConfigurationError):
            make_levy(large=0.0)

    def test_negative_small_intensity(self):
        with self.assertRaises(ConfigurationError):
            make_levy(small=-1.0)

    def test_region_mismatch(self):
        with self.assertRaises(ConfigurationError):
            LevyMeasureSpec(
                small_intensity=1.0,
                small_marks=MarkDistribution(kind="uniform_shell"),
                large_intensity=1.0,
                large_marks=MarkDistribution(kind="uniform_shell"),
            )
        with self.assertRaises(ConfigurationError):
            LevyMeasureSpec(
                small_intensity=1.0,
                small_marks=MarkDistribution(kind="point", params=(0.5,)),
                large_intensity=1.0,
                large_marks=MarkDistribution(kind="point", params=(0.5,)),
            )

    def test_marks_in_region(self):
        levy = make_levy(mark_dim=2)
        small = levy.small_marks.sample(substream(1, 0, 3), 500, 2, RegionEnum.SMALL)
        large = levy.large_marks.sample(substream(1, 0, 4), 500, 2, RegionEnum.LARGE)
        self.assertTrue(LevyMeasureSpec.in_region(small, RegionEnum.SMALL).all())
        self.assertTrue(LevyMeasureSpec.in_region(large, RegionEnum.LARGE).all())
        self.assertTrue((np.linalg.norm(large, axis=1) <= 3.0).all())

    def test_quadrature_marks_antithetic(self):
        marks = make_levy().quadrature_marks(5)
        np.testing.assert_array_equal(marks[0::2], -marks[1::2])
        self.assertIs(marks, make_levy().quadrature_marks(5))


class TestScenario(TestCase):
    def setUp(self):
        self.noise = NoiseModel(levy=make_levy(), horizon=1.0, level=4, brownian_dim=2)

    def test_reproducible(self):
        a = self.noise.scenario(11, 3)
        b = self.noise.scenario(11, 3)
        self.assertEqual(a.fingerprint(), b.fingerprint())
        np.testing.assert_array_equal(a.brownian_increments, b.brownian_increments)
        self.assertNotEqual(a.fingerprint(), self.noise.scenario(11, 4).fingerprint())
        self.assertNotEqual(a.fingerprint(), self.noise.scenario(12, 3).fingerprint())

    def test_independent_of_other_paths(self):
        # drawing other paths first never changes a scenario
        before = self.noise.scenario(2, 9).fingerprint()
        for k in range(5):
            self.noise.scenario(2, k)
        self.assertEqual(self.noise.scenario(2, 9).fingerprint(), before)

    def test_shapes(self):
        scenario = self.noise.scenario(0, 0)
        self.assertEqual(scenario.brownian_increments.shape, (16, 2))
        self.assertEqual(scenario.bridge_normals.shape, (len(scenario.large_jumps), 2))
        self.assertEqual(scenario.grid_step, 1.0 / 16)
        times = [e.time for e in scenario.jumps]
        self.assertEqual(times, sorted(times))
        self.assertEqual(large_jump_times(scenario), [e.time for e in scenario.large_jumps])

    def test_no_shared_jump_times(self):
        for k in range(20):
            scenario = self.noise.scenario(3, k)
            small = {e.time for e in scenario.small_jumps}
            large = {e.time for e in scenario.large_jumps}
            self.assertFalse(small & large)

    def test_frozen_arrays(self):
        scenario = self.noise.scenario(0, 0)
        with self.assertRaises(ValueError):
            scenario.brownian_increments[0, 0] = 1.0

    def test_brownian_at(self):
        scenario = self.noise.scenario(4, 1)
        grid = scenario.grid_times()
        np.testing.assert_array_equal(scenario.brownian_at(grid), scenario.brownian_path())
        self.assertEqual(scenario.brownian_at([0.0]).tolist(), [[0.0, 0.0]])
        with self.assertRaises(ArgumentError):
            scenario.brownian_at([0.5 * scenario.grid_step])

    def test_bridge_between_cell_ends(self):
        for k in range(30):
            scenario = self.noise.scenario(6, k)
            for event, partial in zip(scenario.large_jumps, scenario.large_jump_partials()):
                self.assertTrue(np.isfinite(partial).all())
                cell = scenario.cell_of(event.time)
                self.assertLess(cell * scenario.grid_step, event.time)
                self.assertLessEqual(event.time, (cell + 1) * scenario.grid_step)

    def test_coarsen(self):
        fine = NoiseModel(levy=make_levy(large=8.0), horizon=1.0, level=5).scenario(9, 2)
        coarse = fine.coarsen()
        self.assertEqual(coarse.level, 4)
        np.testing.assert_allclose(coarse.brownian_path(), fine.brownian_path()[0::2], atol=1e-12)
        times = large_jump_times(fine)
        self.assertEqual(times, large_jump_times(coarse))
        if times:
            np.testing.assert_allclose(coarse.brownian_at(times), fine.brownian_at(times), atol=1e-12)

        single = NoiseModel(levy=make_levy(), horizon=1.0, level=0).scenario(0, 0)
        with self.assertRaises(ConfigurationError):
            single.coarsen()

    def test_without_large_jumps(self):
        scenario = self.noise.scenario(1, 1)
        stripped = scenario.without_large_jumps()
        self.assertEqual(stripped.large_jumps, [])
        self.assertEqual(len(stripped.small_jumps), len(scenario.small_jumps))
        np.testing.assert_array_equal(stripped.brownian_increments, scenario.brownian_increments)

    def test_build_scenario_rejects_non_dyadic_step(self):
        with self.assertRaises(ConfigurationError):
            build_scenario(make_levy(), 1.0, 0.3, 0, 0)

    def test_dump_scenarios(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            file = TextFile(os.path.join(tmpdir, "scenarios.jsonl"))
            scenarios = [self.noise.scenario(5, k) for k in range(3)]
            self.assertEqual(dump_scenarios(scenarios, file), 3)
            records = [json.loads(line) for line in file.read().splitlines()]

        self.assertEqual([r["path_index"] for r in records], [0, 1, 2])
        self.assertEqual(records[0]["m"], 4)
        self.assertEqual(len(records[1]["jumps"]), len(scenarios[1].jumps))
        for record, scenario in zip(records, scenarios):
            self.assertEqual([j["region"] for j in record["jumps"]], [e.region.value for e in scenario.jumps])


class TestScenarioStatistics(TestCase):
    """Distribution checks over a few thousand scenarios; every bound is a
    four-sigma or 0.1% significance bound.
    """

    COUNT = 2000
    SMALL, LARGE = 3.0, 2.0

    @classmethod
    def setUpClass(cls):
        noise = NoiseModel(levy=make_levy(small=cls.SMALL, large=cls.LARGE), horizon=1.0, level=2)
        cls.scenarios = [noise.scenario(21, k) for k in range(cls.COUNT)]

    def assert_poisson(self, counts, rate, top):
        observed = [np.sum(counts == k) for k in range(top)] + [np.sum(counts >= top)]
        probs = np.append(stats.poisson.pmf(np.arange(top), rate), stats.poisson.sf(top - 1, rate))
        self.assertGreater(stats.chisquare(observed, self.COUNT * probs).pvalue, 1e-3)
        self.assertLess(abs(counts.mean() - rate), 4 * np.sqrt(rate / self.COUNT))

    def test_jump_counts_are_poisson(self):
        self.assert_poisson(np.array([len(s.large_jumps) for s in self.scenarios]), self.LARGE, 6)
        self.assert_poisson(np.array([len(s.small_jumps) for s in self.scenarios]), self.SMALL, 8)

    def test_first_large_jump_is_exponential(self):
        firsts = [s.large_jumps[0].time for s in self.scenarios if s.large_jumps]
        def cdf(t):
            # exponential arrival conditioned on landing before T = 1
            return np.expm1(-self.LARGE * t) / np.expm1(-self.LARGE)

        self.assertGreater(stats.kstest(firsts, cdf).pvalue, 1e-3)

    def test_brownian_endpoint(self):
        w_end = np.array([s.brownian_path()[-1, 0] for s in self.scenarios])
        self.assertGreater(stats.kstest(w_end, "norm").pvalue, 1e-3)
        counts = np.array([len(s.large_jumps) for s in self.scenarios])
        self.assertGreater(stats.pearsonr(w_end, counts).pvalue, 1e-3)

    def test_large_mark_radius(self):
        radii = np.abs([e.mark[0] for s in self.scenarios for e in s.large_jumps])
        self.assertGreater(stats.kstest(radii, stats.uniform(loc=1.0, scale=2.0).cdf).pvalue, 1e-3)
