from __future__ import annotations
from enum import Enum
from logging import Logger, getLogger
from typing import ClassVar, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field
from scipy.interpolate import RegularGridInterpolator

from jdflow.errors import ArgumentError, ConfigurationError
from jdflow.models.base import ConverterWrapper as CW
from jdflow.models.coefficients import StateBox
from jdflow.models.costs import CostFunction

__all__ = (
    "ActionSet",
    "SimpleControl",
    "FeedbackPolicy",
    "StateGrid",
    "ValueGrid",
    "StoppingKindEnum",
    "StoppingTimeSpec",
)


@define(kw_only=True, frozen=True, eq=False)
class ActionSet:
    """Finite set of control values, rows of `actions` with shape (k, l)."""

    actions: np.ndarray = field(converter=CW.frozen_array(2))
    labels: Tuple[str, ...] = field(default=(), converter=tuple)

    def __attrs_post_init__(self) -> None:
        if self.actions.shape[0] == 0:
            raise ConfigurationError("action set is empty")
        if len(np.unique(self.actions, axis=0)) != self.actions.shape[0]:
            raise ConfigurationError(f"duplicate actions in {self.actions.tolist()}")
        if self.labels and len(self.labels) != self.actions.shape[0]:
            raise ConfigurationError("one label per action is required")
        if not self.labels:
            object.__setattr__(
                self, "labels", tuple(",".join(f"{v:g}" for v in row) for row in self.actions)
            )

    @classmethod
    def from_values(cls, values: Sequence, control_dim: int = 1) -> "ActionSet":
        arr = np.asarray(values, dtype=float).reshape(-1, control_dim)
        return cls(actions=arr)

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def control_dim(self) -> int:
        return self.actions.shape[1]

    def take(self, indices) -> np.ndarray:
        return self.actions[np.asarray(indices, dtype=int)]


@define(kw_only=True, frozen=True, eq=False)
class SimpleControl:
    """Deterministic step control, value a_k on (c_k, c_{k+1}].

    `cut_points` are the interior breaks 0 < c_1 < ... < c_r < T. On the
    integration grid a cell (t_i, t_{i+1}] takes the piece with
    c_k <= t_i < c_{k+1}, so a cut between grid times takes effect from the
    next grid time.
    """

    action_set: ActionSet
    action_indices: Tuple[int, ...] = field(converter=lambda v: tuple(int(i) for i in v))
    cut_points: Tuple[float, ...] = field(default=(), converter=CW.floats)
    horizon: float = field(converter=float)
    dyadic_level: Optional[int] = None

    def __attrs_post_init__(self) -> None:
        cuts = np.array(self.cut_points)
        if len(self.action_indices) != len(cuts) + 1:
            raise ConfigurationError(
                f"{len(cuts)} cut points need {len(cuts) + 1} values, got {len(self.action_indices)}"
            )
        if len(cuts) and ((np.diff(cuts) <= 0).any() or cuts[0] <= 0 or cuts[-1] >= self.horizon):
            raise ConfigurationError(f"cut points must increase strictly inside (0, T): {self.cut_points}")
        bad = [i for i in self.action_indices if not 0 <= i < len(self.action_set)]
        if bad:
            raise ConfigurationError(f"invalid action indices {bad}")

    @classmethod
    def dyadic(
        cls, level: int, indices: Sequence[int], action_set: ActionSet, horizon: float
    ) -> "SimpleControl":
        if len(indices) != 2**level:
            raise ConfigurationError(f"a level-{level} control needs {2**level} values, got {len(indices)}")
        cuts = [k * horizon / 2**level for k in range(1, 2**level)]
        return cls(
            action_set=action_set,
            action_indices=indices,
            cut_points=cuts,
            horizon=horizon,
            dyadic_level=level,
        )

    @classmethod
    def constant(cls, index: int, action_set: ActionSet, horizon: float) -> "SimpleControl":
        return cls.dyadic(0, [index], action_set, horizon)

    def piece_at(self, t: float) -> int:
        """piece k with c_k <= t < c_{k+1}"""
        return int(np.searchsorted(np.array(self.cut_points), t, side="right"))

    def index_at(self, t: float) -> int:
        return self.action_indices[self.piece_at(t)]

    def value_at(self, t: float) -> np.ndarray:
        return self.action_set.actions[self.index_at(t)]

    def label(self) -> str:
        return "|".join(self.action_set.labels[i] for i in self.action_indices)


@define(kw_only=True, frozen=True)
class StateGrid:
    """Rectangular grid, `counts[i]` equispaced points on [low[i], high[i]]."""

    low: Tuple[float, ...] = field(converter=CW.floats)
    high: Tuple[float, ...] = field(converter=CW.floats)
    counts: Tuple[int, ...] = field(converter=lambda v: tuple(int(c) for c in np.atleast_1d(v)))

    def __attrs_post_init__(self) -> None:
        if not len(self.low) == len(self.high) == len(self.counts):
            raise ConfigurationError("state grid bounds and counts differ in length")
        if any(c < 2 for c in self.counts):
            raise ConfigurationError(f"every state axis needs at least 2 points: {self.counts}")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ConfigurationError(f"degenerate state grid: {self.low} .. {self.high}")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def box(self) -> StateBox:
        return StateBox(low=self.low, high=self.high)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.high) - np.array(self.low)) / (np.array(self.counts) - 1)

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, c) for lo, hi, c in zip(self.low, self.high, self.counts)]

    def points(self) -> np.ndarray:
        """all grid points, shape (size, d), C order over the axes"""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """flat index of the nearest grid point for every row of x"""
        x = np.atleast_2d(x)
        idx = np.rint((x - np.array(self.low)) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.array(self.counts) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.counts)

    def clamp(self, x: np.ndarray) -> Tuple[np.ndarray, int]:
        """x clipped to the grid box and the number of clipped rows"""
        clipped = np.clip(x, self.low, self.high)
        return clipped, int((clipped != x).any(axis=-1).sum())


@define(kw_only=True, frozen=True, eq=False)
class FeedbackPolicy:
    """Markov feedback on dyadic slots: the action for slot k is read from
    `table[k]` at the state cell nearest to X at the slot start.
    """

    dyadic_level: int = field(converter=int)
    horizon: float = field(converter=float)
    state_grid: StateGrid
    table: np.ndarray = field(converter=CW.frozen_array(2, int))
    action_set: ActionSet

    def __attrs_post_init__(self) -> None:
        if self.table.shape != (2**self.dyadic_level, self.state_grid.size):
            raise ConfigurationError(
                f"policy table shape {self.table.shape} does not match "
                f"{2**self.dyadic_level} slots x {self.state_grid.size} states"
            )

    @property
    def slot_length(self) -> float:
        return self.horizon / 2**self.dyadic_level

    def slot_of(self, t: float) -> int:
        k = int(np.floor(t / self.slot_length))
        return min(max(k, 0), 2**self.dyadic_level - 1)

    def is_slot_start(self, t: float) -> bool:
        return self.slot_of(t) * self.slot_length == t

    def indices(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.table[self.slot_of(t), self.state_grid.nearest(x)]

    def actions(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.action_set.take(self.indices(t, x))


@define(kw_only=True, frozen=True, eq=False)
class ValueGrid:
    """v(t_i, x_j) on dyadic times and a rectangular state grid.

    `values` and `stderr` have shape (2**n + 1, *counts); `policy_table` has
    shape (2**n, size) with the greedy action index per slot and state.
    """

    _logger: ClassVar[Logger] = getLogger("ValueGrid")
    dyadic_level: int = field(converter=int)
    horizon: float = field(converter=float)
    state_grid: StateGrid
    values: np.ndarray = field(converter=CW.frozen_array(2))
    stderr: np.ndarray = field(converter=CW.frozen_array(2))
    policy_table: np.ndarray = field(converter=CW.frozen_array(2, int))
    action_set: ActionSet
    running_cost: CostFunction
    terminal_cost: CostFunction
    inner_scenarios: int = 0
    seed: int = 0
    clamp_count: int = 0
    _interpolator: Optional[RegularGridInterpolator] = field(default=None, init=False)

    def __attrs_post_init__(self) -> None:
        shape = (2**self.dyadic_level + 1,) + tuple(self.state_grid.counts)
        if self.values.shape != shape:
            # values may come flat over the state axes
            object.__setattr__(self, "values", CW.frozen_array(2)(self.values.reshape(shape)))
            object.__setattr__(self, "stderr", CW.frozen_array(2)(self.stderr.reshape(shape)))
        object.__setattr__(
            self,
            "_interpolator",
            RegularGridInterpolator(
                (self.times(), *self.state_grid.axes()), self.values, method="linear"
            ),
        )

    def times(self) -> np.ndarray:
        return np.arange(2**self.dyadic_level + 1) * (self.horizon / 2**self.dyadic_level)

    @property
    def slot_length(self) -> float:
        return self.horizon / 2**self.dyadic_level

    def flat_values(self, i: int) -> np.ndarray:
        return self.values[i].reshape(-1)

    def flat_stderr(self, i: int) -> np.ndarray:
        return self.stderr[i].reshape(-1)

    def evaluate(self, t, x: np.ndarray) -> Tuple[np.ndarray, int]:
        """multilinear v(t, x) for rows of x; states outside the grid are
        clamped to the nearest face and counted
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        clipped, n_clamped = self.state_grid.clamp(x)
        if n_clamped:
            self._logger.debug(f"value query clamped: {n_clamped=}")
        tt = np.clip(np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)), 0.0, self.horizon)
        query = np.column_stack([tt, clipped])
        return self._interpolator(query), n_clamped

    def value_at(self, t: float, x) -> float:
        return float(self.evaluate(t, np.atleast_2d(x))[0][0])

    def stderr_at(self, t: float, x) -> float:
        """stderr of the nearest stored node"""
        i = int(np.clip(np.rint(t / self.slot_length), 0, 2**self.dyadic_level))
        j = self.state_grid.nearest(np.atleast_2d(x))[0]
        return float(self.flat_stderr(i)[j])

    def policy(self) -> FeedbackPolicy:
        return FeedbackPolicy(
            dyadic_level=self.dyadic_level,
            horizon=self.horizon,
            state_grid=self.state_grid,
            table=self.policy_table,
            action_set=self.action_set,
        )

    def interpolation_modulus(self, include_time: bool = False) -> float:
        """max |second difference| / 8 over the state axes, and over the
        time axis too with `include_time`
        """
        modulus = 0.0
        for axis in range(0 if include_time else 1, self.values.ndim):
            if self.values.shape[axis] < 3:
                continue
            second = np.diff(self.values, n=2, axis=axis)
            modulus = max(modulus, float(np.max(np.abs(second))) / 8.0)
        return modulus

    def bumped(self, t: float, x, amount: float) -> "ValueGrid":
        """copy with `amount` added to the node nearest to (t, x)"""
        i = int(np.clip(np.rint(t / self.slot_length), 0, 2**self.dyadic_level))
        j = self.state_grid.nearest(np.atleast_2d(x))[0]
        values = np.array(self.values).reshape(len(self.times()), -1)
        values[i, j] += amount
        return ValueGrid(
            dyadic_level=self.dyadic_level,
            horizon=self.horizon,
            state_grid=self.state_grid,
            values=values,
            stderr=np.array(self.stderr).reshape(len(self.times()), -1),
            policy_table=self.policy_table,
            action_set=self.action_set,
            running_cost=self.running_cost,
            terminal_cost=self.terminal_cost,
            inner_scenarios=self.inner_scenarios,
            seed=self.seed,
            clamp_count=self.clamp_count,
        )

    def header(self) -> List[str]:
        return ["t"] + [f"x_{i}" for i in range(self.state_grid.dim)] + ["value", "greedy_action_index"]

    def to_rows(self) -> Iterator[List]:
        points = self.state_grid.points()
        n_slots = 2**self.dyadic_level
        for i, t in enumerate(self.times()):
            flat = self.flat_values(i)
            for j, x in enumerate(points):
                action = int(self.policy_table[i, j]) if i < n_slots else ""
                yield [float(t), *map(float, x), float(flat[j]), action]


class StoppingKindEnum(str, Enum):
    DETERMINISTIC = "deterministic"
    FIRST_EXIT = "first_exit"
    FIRST_LARGE_JUMP_AFTER = "first_large_jump_after"


@define(kw_only=True, frozen=True)
class StoppingTimeSpec:
    """Stopping time evaluated per path, clipped into [s + dt, T - dt] on
    path nodes; if the defining event never happens it is T - dt.
    """

    kind: StoppingKindEnum = field(converter=CW.norm(StoppingKindEnum))
    time: float = field(default=0.0, converter=float)
    center: Tuple[float, ...] = field(default=(0.0,), converter=CW.floats)
    radius: float = field(default=1.0, converter=float)

    def __attrs_post_init__(self) -> None:
        if self.kind == StoppingKindEnum.FIRST_EXIT and self.radius <= 0:
            raise ConfigurationError(f"first_exit needs a positive radius, got {self.radius!r}")

    @classmethod
    def deterministic(cls, t: float) -> "StoppingTimeSpec":
        return cls(kind=StoppingKindEnum.DETERMINISTIC, time=t)

    @classmethod
    def first_exit(cls, center, radius: float) -> "StoppingTimeSpec":
        return cls(kind=StoppingKindEnum.FIRST_EXIT, center=center, radius=radius)

    @classmethod
    def first_large_jump_after(cls, t: float) -> "StoppingTimeSpec":
        return cls(kind=StoppingKindEnum.FIRST_LARGE_JUMP_AFTER, time=t)

    def describe(self) -> str:
        if self.kind == StoppingKindEnum.DETERMINISTIC:
            return f"deterministic({self.time:g})"
        if self.kind == StoppingKindEnum.FIRST_EXIT:
            return f"first_exit({','.join(f'{c:g}' for c in self.center)};{self.radius:g})"
        return f"first_large_jump_after({self.time:g})"

    def evaluate(self, nodes: np.ndarray, values: np.ndarray, jump_mask: np.ndarray,
                 s: float, grid_step: float, horizon: float) -> np.ndarray:
        """theta per path as node indices, values[node, path, dim]"""
        lo_t, hi_t = s + grid_step, horizon - grid_step
        if lo_t > hi_t:
            raise ArgumentError(f"no room for a stopping time in ({s}, {horizon}) at {grid_step=}")
        lo = int(np.searchsorted(nodes, lo_t))
        hi = int(np.searchsorted(nodes, hi_t))
        n_paths = values.shape[1]

        if self.kind == StoppingKindEnum.DETERMINISTIC:
            k = int(np.searchsorted(nodes, self.time))
            return np.full(n_paths, min(max(k, lo), hi))

        after = nodes > s
        if self.kind == StoppingKindEnum.FIRST_EXIT:
            dist = np.linalg.norm(values - np.array(self.center), axis=2)
            hit = (dist > self.radius) & after[:, np.newaxis]
        else:
            hit = np.broadcast_to(
                (jump_mask & (nodes > max(s, self.time)))[:, np.newaxis], (len(nodes), n_paths)
            )

        first = np.where(hit.any(axis=0), np.argmax(hit, axis=0), hi)
        return np.clip(first, lo, hi)
