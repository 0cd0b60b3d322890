from unittest import TestCase
import os
import tempfile

import numpy as np

from jdflow.errors import ConfigurationError
from jdflow.models.config import ExperimentConfig, TypedConfigParser, parse_stopping_time
from jdflow.models.control import StoppingTimeSpec

CONFIG = """
# controlled drift on a small grid
[model]
catalog_id: str = controlled_drift
control_dim: int = 1

[model.params]
gain: float = 2.0

[noise]
horizon: float = 1.0
level: int = 3
large_intensity: float = 2.0
large_mark_params: floats = 2.0

[grid]
low: floats = -2
high: floats = 2
counts: ints = 5
dyadic_level: int = 2

[control]
actions: floats = -1, 1
terminal_cost: str = linear

[control.terminal_cost]
offset: float = 0.5

[run]
scenarios: int = 10
two_sided: bool = yes
thetas: strs = deterministic:0.5, first_exit:0;1.5
"""


class TestTypedConfigParser(TestCase):
    def test_typed_values(self):
        sections = TypedConfigParser.parse_text(CONFIG)
        self.assertEqual(sections["model"]["catalog_id"], ("str", "controlled_drift"))
        self.assertEqual(sections["noise"]["level"], ("int", 3))
        self.assertEqual(sections["control"]["actions"], ("floats", [-1.0, 1.0]))
        self.assertEqual(sections["grid"]["counts"], ("ints", [5]))
        self.assertEqual(sections["run"]["two_sided"], ("bool", True))
        self.assertEqual(sections["run"]["thetas"][1], ["deterministic:0.5", "first_exit:0;1.5"])

    def test_missing_type(self):
        with self.assertRaises(ConfigurationError):
            TypedConfigParser.parse_text("[model]\ncatalog_id = zero\n")

    def test_unknown_type(self):
        with self.assertRaises(ConfigurationError):
            TypedConfigParser.parse_text("[noise]\nlevel: integer = 3\n")

    def test_bad_value(self):
        with self.assertRaises(ConfigurationError):
            TypedConfigParser.parse_text("[noise]\nlevel: int = three\n")
        with self.assertRaises(ConfigurationError):
            TypedConfigParser.parse_value("bool", "maybe")

    def test_malformed(self):
        with self.assertRaises(ConfigurationError):
            TypedConfigParser.parse_text("level: int = 3\n")

    def test_override(self):
        sections = TypedConfigParser.parse_text(CONFIG)
        TypedConfigParser.apply_override(sections, "noise.level=5")
        TypedConfigParser.apply_override(sections, "model.params.gain=0.5")
        self.assertEqual(sections["noise"]["level"], ("int", 5))
        self.assertEqual(sections["model.params"]["gain"], ("float", 0.5))

    def test_bad_override(self):
        sections = TypedConfigParser.parse_text(CONFIG)
        for assignment in ("noise.level", "level=3", "noise.steps=3", "noise.level=x"):
            with self.assertRaises(ConfigurationError):
                TypedConfigParser.apply_override(sections, assignment)

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with self.assertRaises(ConfigurationError):
                TypedConfigParser.parse_file(os.path.join(tmpdir, "missing.ini"))


class TestExperimentConfig(TestCase):
    def setUp(self):
        self.config = ExperimentConfig.from_sections(TypedConfigParser.parse_text(CONFIG))

    def test_sections(self):
        self.assertEqual(self.config.model.params, {"gain": 2.0})
        self.assertEqual(self.config.control.terminal_cost_params, {"offset": 0.5})
        self.assertEqual(self.config.run.scenarios, 10)
        self.assertEqual(self.config.run.inner_scenarios, 100)

    def test_built_objects(self):
        coeffs = self.config.coefficients()
        self.assertEqual(coeffs.catalog_id, "controlled_drift")
        self.assertEqual(coeffs.control_dim, 1)
        noise = self.config.noise_model()
        self.assertEqual(noise.level, 3)
        self.assertEqual(noise.levy.large_intensity, 2.0)
        self.assertEqual(len(self.config.action_set()), 2)
        self.assertEqual(self.config.state_grid().size, 5)
        j = self.config.terminal_cost()
        self.assertAlmostEqual(float(j(1.0, np.array([[1.0]]))[0]), 1.5)

    def test_states(self):
        np.testing.assert_array_equal(self.config.states("x0"), [[0.0]])
        self.assertEqual(self.config.states("x_values").shape, (5, 1))

    def test_stopping_times(self):
        thetas = self.config.stopping_times()
        self.assertEqual(thetas[0].describe(), StoppingTimeSpec.deterministic(0.5).describe())
        self.assertEqual(len(thetas), 2)

    def test_hash_ignores_output_and_threads(self):
        sections = TypedConfigParser.parse_text(CONFIG + "output_dir: str = elsewhere\nthreads: int = 4\n")
        other = ExperimentConfig.from_sections(sections)
        self.assertEqual(self.config.config_hash(), other.config_hash())

        TypedConfigParser.apply_override(sections, "noise.level=4")
        self.assertNotEqual(self.config.config_hash(), ExperimentConfig.from_sections(sections).config_hash())

    def test_load_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "experiment.ini")
            with open(path, "w") as f:
                f.write(CONFIG)
            config = ExperimentConfig.load(path, ("run.scenarios=3",))
        self.assertEqual(config.run.scenarios, 3)

    def test_inconsistent(self):
        sections = TypedConfigParser.parse_text(CONFIG)
        TypedConfigParser.apply_override(sections, "grid.dyadic_level=4")
        with self.assertRaises(ConfigurationError):
            ExperimentConfig.from_sections(sections)

        sections = TypedConfigParser.parse_text(CONFIG)
        TypedConfigParser.apply_override(sections, "grid.counts=5, 5")
        with self.assertRaises(ConfigurationError):
            ExperimentConfig.from_sections(sections)

    def test_unknown_names(self):
        for text in (
            "[model]\ncatalog_id: str = nope\n[noise]\nlevel: int = 1\n",
            "[model]\ncatalog_id: str = zero\n[noise]\nlevel: int = 1\nsteps: int = 3\n",
            "[model]\ncatalog_id: str = zero\n",
        ):
            with self.assertRaises(ConfigurationError):
                ExperimentConfig.from_sections(TypedConfigParser.parse_text(text))

    def test_grid_required(self):
        config = ExperimentConfig.from_sections(
            TypedConfigParser.parse_text("[model]\ncatalog_id: str = zero\n[noise]\nlevel: int = 1\n")
        )
        with self.assertRaises(ConfigurationError):
            config.state_grid()
        with self.assertRaises(ConfigurationError):
            config.action_set()

    def test_clamp_box(self):
        self.assertIsNone(self.config.clamp_box())

        sections = TypedConfigParser.parse_text(CONFIG + "clamp_to_box: bool = on\n")
        with self.assertRaises(ConfigurationError):
            ExperimentConfig.from_sections(sections).clamp_box()

        geometric = ExperimentConfig.from_sections(
            TypedConfigParser.parse_text(
                "[model]\ncatalog_id: str = geometric\n[model.params]\nlow: floats = -1\nhigh: floats = 3\n"
                "[noise]\nlevel: int = 1\n[run]\nclamp_to_box: bool = true\n"
            )
        )
        box = geometric.clamp_box()
        np.testing.assert_array_equal(box.low, [-1.0])
        np.testing.assert_array_equal(box.high, [3.0])


class TestParseStoppingTime(TestCase):
    def test_kinds(self):
        self.assertEqual(parse_stopping_time("deterministic:0.25").describe(), "deterministic(0.25)")
        parse_stopping_time("first_large_jump_after:0.5")
        parse_stopping_time("first_exit:0/1;2")

    def test_bad(self):
        for text in ("deterministic", "deterministic:x", "never:1", "first_exit:0;r"):
            with self.assertRaises(ValueError):
                parse_stopping_time(text)
