"""Compensated Euler stepping with exact large-jump interlacing.

Every grid cell (t_i, t_{i+1}] is advanced from its start state X_i with one
increment D = b dt + alpha dW + sum g - dt * compensator. A large jump at tau
inside the cell sees the pre-jump state X_i + D(tau) built from the Brownian
bridge value W(tau) stored in the scenario, plus the jumps already applied in
the cell; the cell end is X_i + D followed by every jump of the cell, added in
time order. The result depends only on X_i and the scenario, so restarting at
a grid time from the path's own state reproduces the path bit for bit.
"""

from functools import lru_cache
from logging import getLogger
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from attrs import define

from jdflow.errors import ArgumentError, IntegrationError
from jdflow.models.coefficients import CoefficientSet, StateBox
from jdflow.models.control import FeedbackPolicy, SimpleControl
from jdflow.models.noise import JumpEvent, LevyMeasureSpec, LevyNoiseScenario
from jdflow.models.path import CadlagPath, CadlagPathBatch, FlowField
from jdflow.parallel import ordered_map

__all__ = (
    "ControlLike",
    "NodeLayout",
    "node_layout",
    "snap_start",
    "step_small",
    "integrate",
    "integrate_batch",
    "integrate_starts",
    "flow_restart",
    "evaluate_flow_field",
)

logger = getLogger(__name__)

ControlLike = Union[None, SimpleControl, FeedbackPolicy]


@define(kw_only=True, frozen=True, eq=False)
class NodeLayout:
    """Augmented node set of a scenario and the jumps of every grid cell."""

    nodes: np.ndarray
    grid_index: np.ndarray
    # per cell: (node index, tau, mark, W(tau) - W(t_i))
    cell_large: Tuple[Tuple[Tuple[int, float, np.ndarray, np.ndarray], ...], ...]
    # per cell: (time, mark)
    cell_small: Tuple[Tuple[Tuple[float, np.ndarray], ...], ...]
    # node index -> W(node) - W(t_i) for mid-cell large-jump nodes
    node_partial: dict


@lru_cache(maxsize=256)
def node_layout(scenario: LevyNoiseScenario) -> NodeLayout:
    grid = scenario.grid_times()
    large = scenario.large_jumps
    large_t = np.array([e.time for e in large])
    nodes = np.union1d(grid, large_t)
    partials = scenario.large_jump_partials()

    cell_large: List[list] = [[] for _ in range(scenario.n_cells)]
    cell_small: List[list] = [[] for _ in range(scenario.n_cells)]
    node_partial = {}
    for k, e in enumerate(large):
        idx = int(np.searchsorted(nodes, e.time))
        mark = np.array(e.mark)
        cell_large[scenario.cell_of(e.time)].append((idx, e.time, mark, partials[k]))
        node_partial[idx] = partials[k]
    for e in scenario.small_jumps:
        cell_small[scenario.cell_of(e.time)].append((e.time, np.array(e.mark)))

    return NodeLayout(
        nodes=nodes,
        grid_index=np.searchsorted(nodes, grid),
        cell_large=tuple(tuple(c) for c in cell_large),
        cell_small=tuple(tuple(c) for c in cell_small),
        node_partial=node_partial,
    )


def snap_start(s: float, scenario: LevyNoiseScenario) -> Tuple[float, Optional[float]]:
    """Grid time at or below s, and s itself when it had to move."""
    if not 0.0 <= s < scenario.horizon:
        raise ArgumentError(f"start time must lie in [0, T), got {s=}")

    dt = scenario.grid_step
    i = int(np.floor(s / dt))
    if (i + 1) * dt <= s:
        i += 1
    if i * dt == s:
        return s, None

    logger.warning(f"start time {s} is not a grid time, snapped down to {i * dt}")
    return i * dt, s


def _diffusion_term(alpha: np.ndarray, dw: np.ndarray) -> np.ndarray:
    out = alpha[:, :, 0] * dw[0]
    for j in range(1, dw.shape[0]):
        out = out + alpha[:, :, j] * dw[j]
    return out


def _compensator(
    coeffs: CoefficientSet,
    state: np.ndarray,
    t: float,
    a: np.ndarray,
    levy: LevyMeasureSpec,
    marks: np.ndarray,
) -> np.ndarray:
    """lambda_0 E[g(state, t, Z, a)] over the fixed quadrature sample"""
    acc = coeffs.g(state, t, marks[0], a)
    for z in marks[1:]:
        acc = acc + coeffs.g(state, t, z, a)
    return levy.small_intensity * (acc / marks.shape[0])


def _increment(
    coeffs: CoefficientSet,
    t: float,
    h: float,
    state: np.ndarray,
    dw: np.ndarray,
    small: Sequence[Tuple[float, np.ndarray]],
    a: np.ndarray,
    comp: Optional[np.ndarray],
) -> np.ndarray:
    out = coeffs.b(t, state, a) * h
    if coeffs.has_diffusion:
        out = out + _diffusion_term(coeffs.alpha(t, state, a), dw)
    for ts, z in small:
        out = out + coeffs.g(state, ts, z, a)
    if comp is not None:
        out = out - h * comp
    return out


def _uses_compensator(coeffs: CoefficientSet, levy: LevyMeasureSpec) -> bool:
    return not coeffs.small_jump_zero and levy.small_intensity > 0


def step_small(
    coeffs: CoefficientSet,
    t: float,
    dt: float,
    state: np.ndarray,
    dW: np.ndarray,
    small_jumps_in_cell: Iterable[JumpEvent] = (),
    control_value: Optional[np.ndarray] = None,
    levy: Optional[LevyMeasureSpec] = None,
    quadrature_seed: int = 0,
) -> np.ndarray:
    """One Euler cell of drift, diffusion and compensated small jumps.

    The compensator needs the Lévy measure; without `levy` it is left out.
    """
    if not dt > 0:
        raise ArgumentError(f"dt must be positive, got {dt=}")
    dw = np.atleast_1d(np.asarray(dW, dtype=float))
    if not np.isfinite(dw).all():
        raise IntegrationError(f"non-finite Brownian increment at {t=}")

    x = np.asarray(state, dtype=float)
    batch = np.atleast_2d(x)
    a = coeffs.with_actions(batch.shape[0], control_value)
    comp = None
    if levy is not None and _uses_compensator(coeffs, levy):
        comp = _compensator(coeffs, batch, t, a, levy, levy.quadrature_marks(quadrature_seed))

    small = [(e.time, np.array(e.mark)) for e in small_jumps_in_cell]
    out = batch + _increment(coeffs, t, dt, batch, dw, small, a, comp)
    if not np.isfinite(out).all():
        raise IntegrationError(f"non-finite state after the cell starting at {t=}")

    return out.reshape(x.shape)


def _check_control(coeffs: CoefficientSet, control: ControlLike) -> None:
    if control is None:
        return
    if control.action_set.control_dim != coeffs.control_dim:
        raise ArgumentError(
            f"control has dimension {control.action_set.control_dim}, "
            f"coefficients expect {coeffs.control_dim}"
        )


def _cell_action(
    coeffs: CoefficientSet,
    control: ControlLike,
    t_cell: float,
    state: np.ndarray,
    first: bool,
    initial_action: Optional[np.ndarray],
    previous: Optional[np.ndarray],
) -> np.ndarray:
    n = state.shape[0]
    if control is None:
        return np.zeros((n, coeffs.control_dim))
    if isinstance(control, SimpleControl):
        return coeffs.with_actions(n, control.value_at(t_cell))

    if first and initial_action is not None:
        return coeffs.with_actions(n, initial_action)
    if first or control.is_slot_start(t_cell):
        return control.actions(t_cell, state)
    return previous


def _advance_cell(
    coeffs: CoefficientSet,
    layout: NodeLayout,
    scenario: LevyNoiseScenario,
    c: int,
    t0: float,
    state: np.ndarray,
    a: np.ndarray,
    marks: Optional[np.ndarray],
    offset: Optional[np.ndarray],
) -> Tuple[List[Tuple[int, float, np.ndarray, np.ndarray]], np.ndarray]:
    """Advance cell c from (t0, state).

    Returns the large jumps after t0 as (node index, tau, before, after) and
    the unclamped state at the end of the cell.
    """
    t1 = (c + 1) * scenario.grid_step
    comp = _compensator(coeffs, state, t0, a, scenario.levy, marks) if marks is not None else None
    increments = scenario.brownian_increments
    dw = increments[c] if offset is None else increments[c] - offset
    small = [(ts, z) for ts, z in layout.cell_small[c] if ts > t0]
    incr = _increment(coeffs, t0, t1 - t0, state, dw, small, a, comp)

    jumps = []
    applied: List[np.ndarray] = []
    for idx, tau, z, partial in layout.cell_large[c]:
        if tau <= t0:
            continue
        if tau == t1:
            part = incr
        else:
            w_tau = partial if offset is None else partial - offset
            part = _increment(coeffs, t0, tau - t0, state, w_tau, [s for s in small if s[0] <= tau], a, comp)
        before = state + part
        for jump in applied:
            before = before + jump
        after = before
        if not coeffs.large_jump_zero:
            jump = coeffs.f(before, tau, z, a)
            after = before + jump
            applied.append(jump)
        jumps.append((idx, tau, before, after))

    end = state + incr
    for jump in applied:
        end = end + jump
    return jumps, end


def _check_dims(coeffs: CoefficientSet, scenario: LevyNoiseScenario, control: ControlLike) -> None:
    _check_control(coeffs, control)
    if scenario.brownian_dim != coeffs.brownian_dim or scenario.levy.mark_dim != coeffs.mark_dim:
        raise ArgumentError(
            f"scenario dims (m={scenario.brownian_dim}, marks={scenario.levy.mark_dim}) do not match "
            f"coefficients (m={coeffs.brownian_dim}, marks={coeffs.mark_dim})"
        )


def _quadrature(coeffs: CoefficientSet, scenario: LevyNoiseScenario) -> Optional[np.ndarray]:
    levy = scenario.levy
    return levy.quadrature_marks(scenario.seed) if _uses_compensator(coeffs, levy) else None


def _run(
    coeffs: CoefficientSet,
    scenario: LevyNoiseScenario,
    x0: np.ndarray,
    start_time: float,
    control: ControlLike,
    until: Optional[float],
    clamp_box: Optional[StateBox],
    initial_action: Optional[np.ndarray],
    snapped_from: Optional[float],
) -> CadlagPathBatch:
    _check_dims(coeffs, scenario, control)
    layout = node_layout(scenario)
    nodes = layout.nodes
    start = int(np.searchsorted(nodes, start_time))
    if start >= len(nodes) or nodes[start] != start_time:
        raise ArgumentError(f"start time {start_time} is not a node of the scenario")

    stop = len(nodes) - 1
    if until is not None:
        if until < start_time:
            raise ArgumentError(f"{until=} precedes the start time {start_time}")
        stop = min(int(np.searchsorted(nodes, until)), len(nodes) - 1)

    n, d = x0.shape
    values = np.empty((len(nodes), n, d))
    values[: start + 1] = x0
    pre_jump = np.full((len(nodes), n, d), np.nan)
    actions = np.zeros((len(nodes), n, coeffs.control_dim))
    jump_mask = np.zeros(len(nodes), dtype=bool)

    marks = _quadrature(coeffs, scenario)
    dt = scenario.grid_step
    # cell c with t_c <= start_time < t_{c+1}
    first_cell = int(np.searchsorted(nodes[layout.grid_index], start_time, side="right")) - 1
    w_start = layout.node_partial.get(start) if start not in layout.grid_index else None

    state = np.array(x0, dtype=float)
    a = None
    clamp_count = 0
    for c in range(first_cell, scenario.n_cells):
        cell_start = layout.grid_index[c]
        first = c == first_cell
        if (start if first else cell_start) >= stop:
            break

        t_cell = c * dt
        t0 = start_time if first else t_cell
        a = _cell_action(coeffs, control, t_cell, state, first, initial_action, a)
        actions[start if first else cell_start] = a
        jumps, end = _advance_cell(
            coeffs, layout, scenario, c, t0, state, a, marks, w_start if first else None
        )

        for idx, tau, before, after in jumps:
            if not np.isfinite(after).all():
                raise IntegrationError(f"non-finite state at jump node {idx} t={tau}")
            if clamp_box is not None:
                clipped = clamp_box.clip(after)
                clamp_count += int((clipped != after).any(axis=1).sum())
                after = clipped
            pre_jump[idx] = before
            values[idx] = after
            jump_mask[idx] = True
            actions[idx] = a

        end_idx = layout.grid_index[c + 1]
        if not np.isfinite(end).all():
            raise IntegrationError(f"non-finite state at node {end_idx} t={(c + 1) * dt}")
        if clamp_box is not None:
            clipped = clamp_box.clip(end)
            changed = int((clipped != end).any(axis=1).sum())
            if changed and not jump_mask[end_idx]:
                clamp_count += changed
            end = clipped
        values[end_idx] = end
        state = end

    if a is not None:
        actions[stop] = a
    if clamp_count:
        logger.warning(f"state left the box and was clamped: {clamp_count=}")

    keep = stop + 1
    return CadlagPathBatch(
        nodes=nodes[:keep],
        values=values[:keep],
        pre_jump=pre_jump[:keep],
        jump_mask=jump_mask[:keep],
        actions=actions[:keep],
        grid_index=layout.grid_index[layout.grid_index < keep],
        start_time=start_time,
        start_states=x0,
        snapped_from=snapped_from,
        clamp_count=clamp_count,
    )


def _as_batch(x, state_dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim <= 1:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != state_dim:
        raise ArgumentError(f"states have dimension {arr.shape[1]}, coefficients expect {state_dim}")
    return arr


def integrate_batch(
    coeffs: CoefficientSet,
    s: float,
    xs,
    control: ControlLike,
    scenario: LevyNoiseScenario,
    until: Optional[float] = None,
    clamp_box: Optional[StateBox] = None,
) -> CadlagPathBatch:
    """integrate for many start states at once, on one scenario"""
    start, snapped_from = snap_start(s, scenario)
    x0 = _as_batch(xs, coeffs.state_dim)
    return _run(coeffs, scenario, x0, start, control, until, clamp_box, None, snapped_from)


def integrate(
    coeffs: CoefficientSet,
    s: float,
    x,
    control: ControlLike,
    scenario: LevyNoiseScenario,
    until: Optional[float] = None,
    clamp_box: Optional[StateBox] = None,
) -> CadlagPath:
    return integrate_batch(coeffs, s, x, control, scenario, until, clamp_box).path(0)


def flow_restart(
    coeffs: CoefficientSet,
    u: float,
    path: Union[CadlagPath, CadlagPathBatch],
    control: ControlLike,
    scenario: LevyNoiseScenario,
    clamp_box: Optional[StateBox] = None,
    perturbation: float = 0.0,
) -> Union[CadlagPath, CadlagPathBatch]:
    """Restart from (u, X_u + perturbation) of `path` on the same scenario.

    A feedback policy keeps the action the path was using after u. At a
    large-jump node inside a grid cell the remainder of that cell is one
    shorter Euler step from X_u, so only grid-time restarts are bit-exact.
    """
    if u < path.start_time:
        raise ArgumentError(f"restart time {u} precedes the path start {path.start_time}")
    idx = path.index_of(u)
    single = isinstance(path, CadlagPath)
    states = path.values[idx][np.newaxis] if single else path.values[idx]
    if perturbation:
        states = states + perturbation
    initial = None
    if isinstance(control, FeedbackPolicy):
        initial = path.actions[idx][np.newaxis] if single else path.actions[idx]

    batch = _run(coeffs, scenario, np.array(states), u, control, None, clamp_box, initial, None)
    return batch.path(0) if single else batch


def integrate_starts(
    coeffs: CoefficientSet,
    starts: Sequence[float],
    xs,
    control: ControlLike,
    scenario: LevyNoiseScenario,
) -> Tuple[np.ndarray, np.ndarray]:
    """X^{s,x} for every start time s in `starts` and every row x of `xs` in
    one sweep over the cells.

    Returns the scenario nodes and values of shape (nodes, starts, states,
    d); before its start a flow holds x. Each row runs the same cell
    arithmetic as `integrate_batch`, so the results agree bit for bit.
    """
    _check_dims(coeffs, scenario, control)
    x0 = _as_batch(xs, coeffs.state_dim)
    snapped = np.array([snap_start(float(s), scenario)[0] for s in starts])
    if not len(snapped):
        raise ArgumentError("at least one start time is required")
    layout = node_layout(scenario)
    nodes = layout.nodes
    dt = scenario.grid_step
    n_starts, n, d = len(snapped), x0.shape[0], x0.shape[1]

    row_cell = np.repeat(np.rint(snapped / dt).astype(int), n)
    state = np.tile(x0, (n_starts, 1))
    values = np.empty((len(nodes), n_starts * n, d))
    # nodes up to the earliest start
    values[: layout.grid_index[int(row_cell.min())] + 1] = state
    marks = _quadrature(coeffs, scenario)

    a = np.zeros((state.shape[0], coeffs.control_dim))
    for c in range(int(row_cell.min()), scenario.n_cells):
        t_cell = c * dt
        active = (row_cell <= c)[:, np.newaxis]
        if isinstance(control, FeedbackPolicy):
            starting = (row_cell == c)[:, np.newaxis]
            if control.is_slot_start(t_cell):
                a = control.actions(t_cell, state)
            elif starting.any():
                a = np.where(starting, control.actions(t_cell, state), a)
        else:
            a = _cell_action(coeffs, control, t_cell, state, False, None, a)

        jumps, end = _advance_cell(coeffs, layout, scenario, c, t_cell, state, a, marks, None)
        for idx, tau, _, after in jumps:
            if not np.isfinite(after).all():
                raise IntegrationError(f"non-finite state at jump node {idx} t={tau}")
            values[idx] = np.where(active, after, state)
        end_idx = layout.grid_index[c + 1]
        if not np.isfinite(end).all():
            raise IntegrationError(f"non-finite state at node {end_idx} t={(c + 1) * dt}")
        state = np.where(active, end, state)
        values[end_idx] = state

    return nodes, values.reshape(len(nodes), n_starts, n, d)


def evaluate_flow_field(
    coeffs: CoefficientSet,
    s_list: Sequence[float],
    x_list,
    t_list: Sequence[float],
    control: ControlLike,
    scenario: LevyNoiseScenario,
    threads: int = 1,
) -> FlowField:
    """X^{s,x}_t for every (s, x, t), one batched integration per s"""
    s_arr = np.asarray(s_list, dtype=float)
    t_arr = np.asarray(t_list, dtype=float)
    x0 = _as_batch(x_list, coeffs.state_dim)
    if not len(s_arr) or not len(t_arr) or not len(x0):
        raise ArgumentError("s_list, x_list and t_list must be nonempty")

    def one(s: float) -> np.ndarray:
        batch = integrate_batch(coeffs, s, x0, control, scenario)
        return np.stack([batch.at(t) for t in t_arr], axis=1)

    slices = ordered_map(one, list(s_arr), threads=threads)
    return FlowField(
        s_list=s_arr,
        x_list=x0,
        t_list=t_arr,
        states=np.stack(slices, axis=0),
        seed=scenario.seed,
        path_index=scenario.path_index,
    )
