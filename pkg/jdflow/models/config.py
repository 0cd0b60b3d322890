"""Experiment configuration.

Config files are INI-like: every line in a section reads `name: type = value`
with type one of int, float, bool, str and the comma-separated list types
ints, floats, strs. `#` and `;` start comment lines.

    [model]
    catalog_id: str = ornstein_uhlenbeck
    state_dim: int = 1

    [model.params]
    theta: float = 1.0
"""

import configparser
import hashlib
import json
from typing import Any, Callable, ClassVar, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError, root_validator, validator

from jdflow import config
from jdflow.errors import ConfigurationError
from jdflow.models.base import _BaseModel
from jdflow.models.coefficients import CoefficientCatalog, CoefficientSet, StateBox
from jdflow.models.control import ActionSet, StateGrid, StoppingTimeSpec
from jdflow.models.costs import CostCatalog, CostFunction
from jdflow.models.noise import LevyMeasureSpec, MarkDistribution, MarkKindEnum, NoiseModel

__all__ = (
    "TypedConfigParser",
    "ModelSection",
    "NoiseSection",
    "GridSection",
    "ControlSection",
    "RunSection",
    "ExperimentConfig",
    "parse_stopping_time",
)

# section -> name -> (type, value)
TypedSections = Dict[str, Dict[str, Tuple[str, Any]]]


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a bool: {text!r}")


def _list(item: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(text: str) -> List[Any]:
        return [item(part.strip()) for part in text.split(",") if part.strip()]

    return parse


class TypedConfigParser:
    TYPES: ClassVar[Dict[str, Callable[[str], Any]]] = {
        "int": int,
        "float": float,
        "bool": _bool,
        "str": str.strip,
        "ints": _list(int),
        "floats": _list(float),
        "strs": _list(str.strip),
    }

    @classmethod
    def parse_value(cls, type_name: str, text: str) -> Any:
        if type_name not in cls.TYPES:
            raise ConfigurationError(f"unknown type {type_name!r}, known: {', '.join(cls.TYPES)}")
        try:
            return cls.TYPES[type_name](text)
        except ValueError as e:
            raise ConfigurationError(f"cannot read {text!r} as {type_name}: {e}") from e

    @classmethod
    def parse_text(cls, text: str) -> TypedSections:
        parser = configparser.ConfigParser(
            delimiters=("=",),
            comment_prefixes=("#", ";"),
            interpolation=None,
        )
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigurationError(f"malformed config: {e}") from e

        out: TypedSections = {}
        for section in parser.sections():
            entries = {}
            for key, raw in parser.items(section):
                name, sep, type_name = key.partition(":")
                if not sep:
                    raise ConfigurationError(f"[{section}] {key!r} lacks a type, write `name: type = value`")
                name, type_name = name.strip(), type_name.strip()
                entries[name] = (type_name, cls.parse_value(type_name, raw))
            out[section] = entries
        return out

    @classmethod
    def parse_file(cls, path: str) -> TypedSections:
        try:
            with open(path, encoding="utf-8") as f:
                return cls.parse_text(f.read())
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path!r}: {e}") from e

    @classmethod
    def apply_override(cls, sections: TypedSections, assignment: str) -> None:
        """`section.name=value`, parsed with the declared type of the key"""
        target, sep, text = assignment.partition("=")
        section, dot, name = target.strip().rpartition(".")
        if not sep or not dot:
            raise ConfigurationError(f"override {assignment!r} is not of the form section.name=value")
        if name not in sections.get(section, {}):
            raise ConfigurationError(f"override {assignment!r} names no existing key")
        type_name = sections[section][name][0]
        sections[section][name] = (type_name, cls.parse_value(type_name, text))


class ModelSection(_BaseModel):
    catalog_id: str
    state_dim: int = 1
    brownian_dim: int = 1
    mark_dim: int = 1
    control_dim: int = 0
    params: Dict[str, Any] = {}

    @validator("catalog_id")
    def check_catalog_id(cls, v):
        if v not in CoefficientCatalog.names():
            raise ValueError(f"unknown model {v!r}, known: {', '.join(CoefficientCatalog.names())}")
        return v

    @validator("state_dim", "brownian_dim", "mark_dim")
    def check_positive(cls, v):
        if v < 1:
            raise ValueError("dimensions must be positive")
        return v


class NoiseSection(_BaseModel):
    horizon: float = 1.0
    level: int
    seed: int = 0
    small_intensity: float = 0.0
    small_marks: MarkKindEnum = MarkKindEnum.UNIFORM_BALL
    small_mark_params: List[float] = []
    large_intensity: float = 1.0
    large_marks: MarkKindEnum = MarkKindEnum.UNIFORM_SHELL
    large_mark_params: List[float] = []

    @validator("horizon")
    def check_horizon(cls, v):
        if not v > 0:
            raise ValueError("horizon must be positive")
        return v

    @validator("level")
    def check_level(cls, v):
        if v < 0:
            raise ValueError("level must be >= 0")
        return v


class GridSection(_BaseModel):
    low: List[float]
    high: List[float]
    counts: List[int]
    dyadic_level: int = 2


class ControlSection(_BaseModel):
    actions: List[float] = []
    running_cost: str = "zero"
    terminal_cost: str = "zero"
    running_cost_params: Dict[str, Any] = {}
    terminal_cost_params: Dict[str, Any] = {}

    @validator("running_cost", "terminal_cost")
    def check_cost(cls, v):
        if v not in CostCatalog.names():
            raise ValueError(f"unknown cost {v!r}, known: {', '.join(CostCatalog.names())}")
        return v


class RunSection(_BaseModel):
    scenarios: int = 200
    inner_scenarios: int = 100
    threads: int = config.DEFAULT_THREADS
    output_dir: str = config.DEFAULT_OUT_DIR
    x0: List[float] = [0.0]
    clamp_to_box: bool = False
    # flow check
    flow_times: List[float] = [0.25, 0.5, 0.75]
    x_values: List[float] = [-1.0, -0.5, 0.0, 0.5, 1.0]
    # lipschitz moments
    moment_orders: List[float] = [2.0]
    lipschitz_x: List[float] = [0.0]
    lipschitz_y: List[float] = [0.5]
    margin: float = config.DEFAULT_MARGIN
    # stochastic continuity
    continuity_start: float = 0.25
    offsets: List[float] = [0.25, 0.125, 0.0625]
    epsilon: float = 0.1
    two_sided: bool = False
    radius: float = 1.0
    lattice_points: int = config.DEFAULT_LATTICE_POINTS
    # cadlag exponent
    q: float = 1.0
    triple_count: int = 200
    cadlag_scenarios: int = 20
    min_decades: float = 2.0
    # control
    thetas: List[str] = ["deterministic:0.5"]
    dpp_starts: List[float] = [0.0]
    dpp_states: List[float] = [0.0]
    dpp_min_pass: float = 0.95
    approach_count: int = 8
    probe_samples: int = 1000

    @validator("scenarios", "inner_scenarios", "probe_samples", "triple_count", "cadlag_scenarios")
    def check_count(cls, v):
        if v < 1:
            raise ValueError("counts must be positive")
        return v

    @validator("threads")
    def check_threads(cls, v):
        if v < 0:
            raise ValueError("threads must be >= 0")
        return v

    @validator("thetas", each_item=True)
    def check_theta(cls, v):
        parse_stopping_time(v)
        return v


def parse_stopping_time(text: str) -> StoppingTimeSpec:
    """`deterministic:t`, `first_large_jump_after:t` or
    `first_exit:c0/c1/..;radius`
    """
    kind, sep, arg = text.partition(":")
    try:
        if kind == "deterministic" and sep:
            return StoppingTimeSpec.deterministic(float(arg))
        if kind == "first_large_jump_after" and sep:
            return StoppingTimeSpec.first_large_jump_after(float(arg))
        if kind == "first_exit" and sep:
            center, _, radius = arg.partition(";")
            return StoppingTimeSpec.first_exit([float(c) for c in center.split("/")], float(radius))
    except ValueError as e:
        raise ValueError(f"bad stopping time {text!r}: {e}") from e
    raise ValueError(f"bad stopping time {text!r}")


class ExperimentConfig(_BaseModel):
    model: ModelSection
    noise: NoiseSection
    grid: Optional[GridSection] = None
    control: ControlSection = ControlSection()
    run: RunSection = RunSection()

    # fields that change where or how fast a run goes, never its results
    HASH_EXCLUDE: ClassVar[Dict[str, Any]] = {"run": {"output_dir", "threads"}}
    # `[a.b]` sections fold into field `b` of section a, or `a_b`
    NESTED: ClassVar[Dict[str, Tuple[str, str]]] = {
        "model.params": ("model", "params"),
        "control.running_cost": ("control", "running_cost_params"),
        "control.terminal_cost": ("control", "terminal_cost_params"),
    }

    @root_validator(skip_on_failure=True)
    def check_consistency(cls, values):
        model, noise, grid, control, run = (values.get(k) for k in ("model", "noise", "grid", "control", "run"))
        d = model.state_dim
        if grid is not None:
            if not len(grid.low) == len(grid.high) == len(grid.counts) == d:
                raise ValueError(f"grid bounds and counts need {d} entries each")
            if grid.dyadic_level > noise.level:
                raise ValueError(f"grid dyadic level {grid.dyadic_level} exceeds noise level {noise.level}")
        if model.control_dim and len(control.actions) % model.control_dim:
            raise ValueError(f"{len(control.actions)} action values do not split into rows of {model.control_dim}")
        for name in ("x0", "x_values", "lipschitz_x", "lipschitz_y", "dpp_states"):
            if len(getattr(run, name)) % d:
                raise ValueError(f"run.{name} does not split into states of dimension {d}")
        return values

    @classmethod
    def from_sections(cls, sections: TypedSections) -> "ExperimentConfig":
        raw: Dict[str, Dict[str, Any]] = {}
        for section, entries in sections.items():
            values = {name: value for name, (_, value) in entries.items()}
            if section in cls.NESTED:
                parent, field_name = cls.NESTED[section]
                raw.setdefault(parent, {})[field_name] = values
            else:
                raw.setdefault(section, {}).update(values)
        try:
            return cls(**raw)
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e

    @classmethod
    def load(cls, path: str, overrides: Tuple[str, ...] = ()) -> "ExperimentConfig":
        sections = TypedConfigParser.parse_file(path)
        for assignment in overrides:
            TypedConfigParser.apply_override(sections, assignment)
        return cls.from_sections(sections)

    def config_hash(self) -> str:
        canonical = self.dict(exclude=self.HASH_EXCLUDE)
        text = json.dumps(canonical, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def coefficients(self) -> CoefficientSet:
        m = self.model
        return CoefficientCatalog.build(
            m.catalog_id,
            m.params,
            state_dim=m.state_dim,
            brownian_dim=m.brownian_dim,
            mark_dim=m.mark_dim,
            control_dim=m.control_dim,
        )

    def clamp_box(self) -> Optional[StateBox]:
        """state box of the model when run.clamp_to_box is set"""
        if not self.run.clamp_to_box:
            return None
        box = self.coefficients().state_box
        if box is None:
            raise ConfigurationError(
                f"run.clamp_to_box needs a model with a state box, {self.model.catalog_id!r} has none"
            )
        return box

    def levy(self) -> LevyMeasureSpec:
        n = self.noise
        return LevyMeasureSpec(
            small_intensity=n.small_intensity,
            small_marks=MarkDistribution(kind=n.small_marks, params=n.small_mark_params),
            large_intensity=n.large_intensity,
            large_marks=MarkDistribution(kind=n.large_marks, params=n.large_mark_params),
            mark_dim=self.model.mark_dim,
        )

    def noise_model(self) -> NoiseModel:
        return NoiseModel(
            levy=self.levy(),
            horizon=self.noise.horizon,
            level=self.noise.level,
            brownian_dim=self.model.brownian_dim,
        )

    def require_grid(self) -> GridSection:
        if self.grid is None:
            raise ConfigurationError("this subcommand needs a [grid] section")
        return self.grid

    def state_grid(self) -> StateGrid:
        grid = self.require_grid()
        return StateGrid(low=grid.low, high=grid.high, counts=grid.counts)

    def action_set(self) -> ActionSet:
        if not self.model.control_dim or not self.control.actions:
            raise ConfigurationError("this subcommand needs control.actions and model.control_dim")
        return ActionSet.from_values(self.control.actions, self.model.control_dim)

    def running_cost(self) -> CostFunction:
        c = self.control
        return CostCatalog.build(c.running_cost, c.running_cost_params, self.model.state_dim)

    def terminal_cost(self) -> CostFunction:
        c = self.control
        return CostCatalog.build(c.terminal_cost, c.terminal_cost_params, self.model.state_dim, terminal=True)

    def states(self, name: str) -> np.ndarray:
        """a flat run list as rows of the state dimension"""
        return np.asarray(getattr(self.run, name), dtype=float).reshape(-1, self.model.state_dim)

    def stopping_times(self) -> List[StoppingTimeSpec]:
        return [parse_stopping_time(t) for t in self.run.thetas]
