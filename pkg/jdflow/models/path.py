from __future__ import annotations
from logging import Logger, getLogger
from typing import ClassVar, Iterator, List, Optional

import numpy as np
from attrs import define, field

from jdflow.errors import ArgumentError
from jdflow.models.base import ConverterWrapper as CW

__all__ = (
    "CadlagPath",
    "CadlagPathBatch",
    "FlowField",
)


def _node_index(nodes: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(nodes, t))
    if i >= len(nodes) or nodes[i] != t:
        raise ArgumentError(f"{t=} is not a node of the path")
    return i


@define(kw_only=True, frozen=True, eq=False)
class CadlagPath:
    """Right-continuous path on the augmented node set.

    `values[k]` is the state at `nodes[k]` (right limit). `pre_jump[k]` is the
    left limit at large-jump nodes and NaN elsewhere; `jump_mask` marks the
    nodes where a large jump was applied. `actions[k]` is the control value
    in force on `(nodes[k], nodes[k+1]]`.
    """

    nodes: np.ndarray = field(converter=CW.frozen_array(1))
    values: np.ndarray = field(converter=CW.frozen_array(2))
    pre_jump: np.ndarray = field(converter=CW.frozen_array(2))
    jump_mask: np.ndarray = field(converter=CW.frozen_array(1, bool))
    actions: np.ndarray = field(converter=CW.frozen_array(2))
    grid_index: np.ndarray = field(converter=CW.frozen_array(1, int))
    start_time: float = field(converter=float)
    start_state: np.ndarray = field(converter=CW.frozen_array(1))
    snapped_from: Optional[float] = None
    clamp_count: int = 0

    @property
    def state_dim(self) -> int:
        return self.values.shape[1]

    @property
    def start_index(self) -> int:
        return _node_index(self.nodes, self.start_time)

    def index_of(self, t: float) -> int:
        return _node_index(self.nodes, t)

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]

    def pre_jump_at(self, t: float) -> Optional[np.ndarray]:
        i = self.index_of(t)
        if not self.jump_mask[i]:
            return None
        return self.pre_jump[i]

    def grid_values(self) -> np.ndarray:
        return self.values[self.grid_index]

    @property
    def jump_nodes(self) -> np.ndarray:
        return self.nodes[self.jump_mask]

    def sup_distance(self, other: "CadlagPath") -> float:
        """max over common nodes of |self - other|"""
        if len(self.nodes) != len(other.nodes) or (self.nodes != other.nodes).any():
            raise ArgumentError("paths live on different node sets")
        return float(np.max(np.linalg.norm(self.values - other.values, axis=1)))

    def to_rows(self) -> Iterator[List]:
        d = self.state_dim
        for k, t in enumerate(self.nodes):
            pre = list(self.pre_jump[k]) if self.jump_mask[k] else [""] * d
            yield [float(t), *map(float, self.values[k]), int(self.jump_mask[k]), *pre]

    def header(self) -> List[str]:
        d = self.state_dim
        return (
            ["node_time"]
            + [f"state_{i}" for i in range(d)]
            + ["is_jump"]
            + [f"pre_jump_{i}" for i in range(d)]
        )


@define(kw_only=True, frozen=True, eq=False)
class CadlagPathBatch:
    """Paths from many start states on one scenario; arrays carry a batch
    axis after the node axis: values[node, path, dim].
    """

    _logger: ClassVar[Logger] = getLogger("CadlagPathBatch")
    nodes: np.ndarray = field(converter=CW.frozen_array(1))
    values: np.ndarray = field(converter=CW.frozen_array(3))
    pre_jump: np.ndarray = field(converter=CW.frozen_array(3))
    jump_mask: np.ndarray = field(converter=CW.frozen_array(1, bool))
    actions: np.ndarray = field(converter=CW.frozen_array(3))
    grid_index: np.ndarray = field(converter=CW.frozen_array(1, int))
    start_time: float = field(converter=float)
    start_states: np.ndarray = field(converter=CW.frozen_array(2))
    snapped_from: Optional[float] = None
    clamp_count: int = 0

    def __len__(self) -> int:
        return self.values.shape[1]

    @property
    def start_index(self) -> int:
        return _node_index(self.nodes, self.start_time)

    def index_of(self, t: float) -> int:
        return _node_index(self.nodes, t)

    def at(self, t: float) -> np.ndarray:
        """states of every path at node t, shape (n, d)"""
        return self.values[self.index_of(t)]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def path(self, j: int) -> CadlagPath:
        return CadlagPath(
            nodes=self.nodes,
            values=self.values[:, j],
            pre_jump=self.pre_jump[:, j],
            jump_mask=self.jump_mask,
            actions=self.actions[:, j],
            grid_index=self.grid_index,
            start_time=self.start_time,
            start_state=self.start_states[j],
            snapped_from=self.snapped_from,
            clamp_count=self.clamp_count,
        )


@define(kw_only=True, frozen=True, eq=False)
class FlowField:
    """(s, x, t) -> X^{s,x}_t on one scenario, tensor states[s, x, t, dim]"""

    s_list: np.ndarray = field(converter=CW.frozen_array(1))
    x_list: np.ndarray = field(converter=CW.frozen_array(2))
    t_list: np.ndarray = field(converter=CW.frozen_array(1))
    states: np.ndarray = field(converter=CW.frozen_array(4))
    seed: int
    path_index: int

    def __getitem__(self, key) -> np.ndarray:
        return self.states[key]

    def header(self) -> List[str]:
        return ["s", "x_index", "t"] + [f"state_{i}" for i in range(self.states.shape[3])]

    def to_rows(self) -> Iterator[List]:
        for si, s in enumerate(self.s_list):
            for xi in range(len(self.x_list)):
                for ti, t in enumerate(self.t_list):
                    yield [float(s), xi, float(t), *map(float, self.states[si, xi, ti])]
