"""Gain functional, value iteration and dynamic programming checks."""

from itertools import product
from logging import getLogger
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from jdflow.defs import CI, STREAM
from jdflow.errors import ArgumentError, InvariantError
from jdflow.integrator import ControlLike, integrate_batch
from jdflow.models.coefficients import CoefficientSet
from jdflow.models.control import (
    ActionSet,
    SimpleControl,
    StateGrid,
    StoppingTimeSpec,
    ValueGrid,
)
from jdflow.models.costs import CostFunction, combined_bound
from jdflow.models.noise import NoiseModel
from jdflow.models.path import CadlagPathBatch
from jdflow.models.reports import DPPResidual, GainEstimate, RegularityReport
from jdflow.parallel import ordered_map
from jdflow.rng import substream

__all__ = (
    "gain",
    "solve_value",
    "enumerate_value",
    "dyadic_shift",
    "dyadic_ceiling",
    "dpp_residual",
    "dpp_battery",
    "discretization_allowance",
    "lsc_spot_check",
)

logger = getLogger(__name__)

# |A| ** (2 ** n) controls at most
ENUMERATION_LIMIT = 10_000


def _running_cost(
    h: CostFunction,
    batch: CadlagPathBatch,
    clip: Optional[StateGrid] = None,
) -> np.ndarray:
    """left-endpoint integral of h from the start node to every node,
    shape (nodes, paths)
    """
    nodes = batch.nodes
    start = batch.start_index
    out = np.zeros((len(nodes), batch.values.shape[1]))
    if h.is_zero:
        return out
    for k in range(start, len(nodes) - 1):
        x = batch.values[k] if clip is None else clip.clamp(batch.values[k])[0]
        out[k + 1] = out[k] + h(float(nodes[k]), x, batch.actions[k]) * (nodes[k + 1] - nodes[k])
    return out


def _path_gain(h: CostFunction, j: CostFunction, batch: CadlagPathBatch) -> np.ndarray:
    return _running_cost(h, batch)[-1] + j.terminal(batch.final)


def _grid_time(noise: NoiseModel, s: float) -> None:
    k = s / noise.grid_step
    if abs(k - round(k)) > 1e-9 or not 0 <= s < noise.horizon:
        raise ArgumentError(f"{s=} is not a grid time in [0, T)")


def gain(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    s: float,
    x,
    control: ControlLike,
    h: CostFunction,
    j: CostFunction,
    scenarios: int,
    seed: int,
    threads: int = 1,
    path_offset: int = 0,
) -> GainEstimate:
    """Monte Carlo E[int_s^T h(r, X_r, a_r) dr + j(X_T)] from (s, x)"""
    _grid_time(noise, s)
    if scenarios < 1:
        raise ArgumentError(f"at least one scenario is required, got {scenarios}")

    def one(path_index: int) -> float:
        batch = integrate_batch(coeffs, s, x, control, noise.scenario(seed, path_index))
        return float(_path_gain(h, j, batch)[0])

    samples = ordered_map(one, [path_offset + k for k in range(scenarios)], threads=threads)
    return GainEstimate.from_samples(np.array(samples))


def _constant_controls(action_set: ActionSet, horizon: float) -> List[SimpleControl]:
    return [SimpleControl.constant(k, action_set, horizon) for k in range(len(action_set))]


def solve_value(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    h: CostFunction,
    j: CostFunction,
    action_set: ActionSet,
    state_grid: StateGrid,
    dyadic_level: int,
    inner_scenarios: int,
    seed: int,
    threads: int = 1,
) -> ValueGrid:
    """Backward induction on the dyadic times t_i = i T / 2**n:

        v(t_i, x) = max_a E[int_{t_i}^{t_{i+1}} h + v(t_{i+1}, X_{t_{i+1}})]

    with the action held constant over the slot, the expectation averaged
    over the same inner scenarios for every slot and action, and
    v(t_{i+1}, .) interpolated multilinearly on the state grid.
    """
    if not 0 <= dyadic_level <= noise.level:
        raise ArgumentError(f"dyadic level {dyadic_level} must lie in [0, {noise.level}]")
    if inner_scenarios < 1:
        raise ArgumentError(f"at least one inner scenario is required, got {inner_scenarios}")
    if state_grid.dim != coeffs.state_dim:
        raise ArgumentError(f"state grid has dimension {state_grid.dim}, state has {coeffs.state_dim}")

    n_slots = 2**dyadic_level
    slot = noise.horizon / n_slots
    points = state_grid.points()
    controls = _constant_controls(action_set, noise.horizon)
    scenarios = [noise.scenario(seed, r) for r in range(inner_scenarios)]

    values = np.zeros((n_slots + 1, state_grid.size))
    stderr = np.zeros((n_slots + 1, state_grid.size))
    policy = np.zeros((n_slots, state_grid.size), dtype=int)
    values[n_slots] = j.terminal(points)
    clamp_count = 0

    for i in range(n_slots - 1, -1, -1):
        t0, t1 = i * slot, (i + 1) * slot
        following = RegularGridInterpolator(
            tuple(state_grid.axes()), values[i + 1].reshape(state_grid.counts), method="linear"
        )

        def one(r: int) -> Tuple[np.ndarray, int]:
            out = np.zeros((len(controls), state_grid.size))
            clamped = 0
            for k, control in enumerate(controls):
                batch = integrate_batch(coeffs, t0, points, control, scenarios[r], until=t1)
                end, n = state_grid.clamp(batch.final)
                clamped += n
                out[k] = _running_cost(h, batch, clip=state_grid)[-1] + following(end)
            return out, clamped

        results = ordered_map(one, range(inner_scenarios), threads=threads)
        q = np.stack([r[0] for r in results])
        clamp_count += sum(r[1] for r in results)

        means = np.mean(q, axis=0)
        best = np.argmax(means, axis=0)
        cols = np.arange(state_grid.size)
        values[i] = means[best, cols]
        policy[i] = best
        if inner_scenarios > 1:
            stderr[i] = np.std(q[:, best, cols], axis=0, ddof=1) / np.sqrt(inner_scenarios)
        logger.debug(f"slot {i}: t={t0:g} value range [{values[i].min():.6g}, {values[i].max():.6g}]")

    bound = combined_bound(h, j, noise.horizon, state_grid.box, action_set.actions)
    worst = float(np.max(np.abs(values)))
    if worst > bound * (1 + 1e-9) + 1e-12:
        raise InvariantError(f"value {worst} exceeds the a priori bound {bound}")
    if clamp_count:
        logger.warning(f"value interpolation clamped to the state grid: {clamp_count=}")

    return ValueGrid(
        dyadic_level=dyadic_level,
        horizon=noise.horizon,
        state_grid=state_grid,
        values=values,
        stderr=stderr,
        policy_table=policy,
        action_set=action_set,
        running_cost=h,
        terminal_cost=j,
        inner_scenarios=inner_scenarios,
        seed=seed,
        clamp_count=clamp_count,
    )


def enumerate_value(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    s: float,
    x,
    h: CostFunction,
    j: CostFunction,
    action_set: ActionSet,
    dyadic_level: int,
    scenarios: int,
    seed: int,
    threads: int = 1,
    path_offset: int = 0,
) -> Tuple[GainEstimate, SimpleControl]:
    """Best gain over every deterministic level-n step control, all of them
    on the same scenarios; ties go to the first control in lexicographic
    order of the action indices.
    """
    count = len(action_set) ** (2**dyadic_level)
    if count > ENUMERATION_LIMIT:
        raise ArgumentError(
            f"{count} controls exceed the enumeration limit {ENUMERATION_LIMIT}; lower the dyadic level or the action count"
        )
    _grid_time(noise, s)
    controls = [
        SimpleControl.dyadic(dyadic_level, indices, action_set, noise.horizon)
        for indices in product(range(len(action_set)), repeat=2**dyadic_level)
    ]

    def one(path_index: int) -> np.ndarray:
        scenario = noise.scenario(seed, path_index)
        return np.array(
            [_path_gain(h, j, integrate_batch(coeffs, s, x, c, scenario))[0] for c in controls]
        )

    samples = np.stack(ordered_map(one, [path_offset + k for k in range(scenarios)], threads=threads))
    gains = [GainEstimate.from_samples(samples[:, k]) for k in range(len(controls))]
    best = int(np.argmax([g.mean for g in gains]))
    logger.info(f"enumerated {len(controls)} controls, best {controls[best].label()} = {gains[best].mean:.6g}")
    return gains[best], controls[best]


def dyadic_ceiling(cut_points: Sequence[float], level: int, horizon: float) -> Tuple[float, ...]:
    """smallest level-`level` dyadic time at or above every cut point"""
    step = horizon / 2**level
    out = []
    for t in cut_points:
        q = np.ceil(t / step) * step
        out.append(float(q))
    return tuple(out)


def dyadic_shift(control: SimpleControl, target: Sequence[float]) -> Tuple[SimpleControl, float]:
    """Move the cut points t_i of `control` to q_i with t_i <= q_i < t_{i+1}.

    The shifted control takes the value a_{t_i} on (q_i, q_{i+1}]; the L2
    distance is sum_i (q_i - t_i) |a_i - a_{i-1}|^2.
    """
    cuts = np.array(control.cut_points)
    target = np.asarray(target, dtype=float)
    if target.shape != cuts.shape:
        raise ArgumentError(f"{len(cuts)} cut points need {len(cuts)} targets, got {len(target)}")
    upper = np.append(cuts[1:], control.horizon)
    bad = (target < cuts) | (target >= upper)
    if bad.any():
        raise ArgumentError(f"targets {target.tolist()} do not interleave the cut points {cuts.tolist()}")

    pieces = control.action_set.take(control.action_indices)
    distance = 0.0
    for i in range(len(cuts)):
        distance += (target[i] - cuts[i]) * float(np.sum((pieces[i + 1] - pieces[i]) ** 2))

    shifted = SimpleControl(
        action_set=control.action_set,
        action_indices=control.action_indices,
        cut_points=tuple(target),
        horizon=control.horizon,
    )
    return shifted, distance


def discretization_allowance(value_grid: ValueGrid, noise: NoiseModel) -> float:
    """interpolation modulus of v plus one grid step of running cost"""
    h_bound = value_grid.running_cost.sup_norm(value_grid.state_grid.box, value_grid.action_set.actions)
    return value_grid.interpolation_modulus() + h_bound * noise.grid_step


def dpp_residual(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    s: float,
    x,
    theta: StoppingTimeSpec,
    value_grid: ValueGrid,
    scenarios: int,
    seed: int,
    threads: int = 1,
    path_offset: Optional[int] = None,
    allowance: Optional[float] = None,
) -> DPPResidual:
    """v(s, x) - max over candidate controls of E[int_s^theta h + v(theta, X_theta)].

    Candidates are the greedy policy of `value_grid` and every constant
    action, evaluated on common scenarios. By default the scenarios start
    after the inner scenarios of `value_grid`.
    """
    _grid_time(noise, s)
    dt = noise.grid_step
    if s > noise.horizon - 2 * dt:
        raise ArgumentError(f"{s=} leaves no room for a stopping time before T - dt")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    offset = value_grid.inner_scenarios if path_offset is None else path_offset
    h = value_grid.running_cost
    candidates: List[Tuple[str, ControlLike]] = [("greedy", value_grid.policy())]
    candidates += [(f"const[{c.label()}]", c) for c in _constant_controls(value_grid.action_set, noise.horizon)]

    def one(path_index: int) -> Tuple[np.ndarray, int]:
        scenario = noise.scenario(seed, path_index)
        out = np.zeros(len(candidates))
        clamped = 0
        for k, (_, control) in enumerate(candidates):
            batch = integrate_batch(coeffs, s, x, control, scenario)
            idx = theta.evaluate(batch.nodes, batch.values, batch.jump_mask, s, dt, noise.horizon)
            t_theta = float(batch.nodes[idx[0]])
            if not s < t_theta < noise.horizon:
                raise InvariantError(f"stopping time {t_theta} outside ({s}, {noise.horizon})")
            running = _running_cost(h, batch, clip=value_grid.state_grid)[idx[0], 0]
            future, n = value_grid.evaluate(t_theta, batch.values[idx[0]])
            clamped += n
            out[k] = running + future[0]
        return out, clamped

    results = ordered_map(one, [offset + k for k in range(scenarios)], threads=threads)
    samples = np.stack([r[0] for r in results])
    clamp_count = sum(r[1] for r in results)
    estimates = [GainEstimate.from_samples(samples[:, k]) for k in range(len(candidates))]
    best = int(np.argmax([e.mean for e in estimates]))

    value = value_grid.value_at(s, x[0])
    stderr = float(np.hypot(estimates[best].stderr, value_grid.stderr_at(s, x[0])))
    result = DPPResidual(
        theta=theta.describe(),
        s=s,
        x=tuple(float(v) for v in x[0]),
        value=value,
        rhs=estimates[best].mean,
        stderr=stderr,
        allowance=discretization_allowance(value_grid, noise) if allowance is None else allowance,
        best=candidates[best][0],
        sample_count=scenarios,
        clamp_count=clamp_count,
    )
    logger.info(
        f"dpp residual {result.theta} s={s:g} x={result.x}: {result.residual:.6g} "
        f"(threshold {result.threshold:.6g}, best {result.best})"
    )
    return result


def dpp_battery(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    value_grid: ValueGrid,
    combinations: Sequence[Tuple[StoppingTimeSpec, float, Sequence[float]]],
    scenarios: int,
    seed: int,
    threads: int = 1,
    allowance: Optional[float] = None,
) -> Tuple[List[DPPResidual], float]:
    """dpp_residual for every (theta, s, x) and the fraction that passed"""
    residuals = [
        dpp_residual(
            coeffs, noise, s, x, theta, value_grid, scenarios, seed, threads=threads, allowance=allowance
        )
        for theta, s, x in combinations
    ]
    if not residuals:
        return residuals, 1.0
    return residuals, sum(r.passed for r in residuals) / len(residuals)


def lsc_spot_check(
    value_grid: ValueGrid,
    s: float,
    x,
    approach_count: int,
    seed: int,
    radius: float = 1.0,
    tolerance: Optional[float] = None,
    atol: float = 1e-9,
) -> RegularityReport:
    """Lower semicontinuity of v at (s, x) along random approaching points.

    Point k sits at radius * 2**-(k-1) in a random direction, measured in
    slot lengths along t and grid spacings along x, shortened on an axis
    where a face is closer. Each point is paired with its mirror image
    through (s, x) so the first-order change of v cancels in the pair mean;
    the statistic is the largest deficit v(s, x) - mean. On a multilinear v
    the deficit stays below four interpolation moduli, which together with
    the Monte Carlo error of the target sets the default tolerance.
    """
    if approach_count < 1:
        raise ArgumentError(f"approach_count must be positive, got {approach_count}")
    if not 0 < radius <= 1:
        raise ArgumentError(f"radius must lie in (0, 1] cells, got {radius}")
    x = np.asarray(x, dtype=float).reshape(-1)
    grid = value_grid.state_grid
    low, high = np.array(grid.low), np.array(grid.high)
    if not 0 <= s <= value_grid.horizon or np.any(x < low) or np.any(x > high):
        raise ArgumentError(f"target ({s}, {x.tolist()}) lies outside the value grid")

    center = np.concatenate([[s], x])
    cell = np.concatenate([[value_grid.slot_length], grid.spacing])
    room = np.minimum(center - np.concatenate([[0.0], low]), np.concatenate([[value_grid.horizon], high]) - center)
    scale = np.minimum(cell, room / radius)

    directions = substream(seed, 0, STREAM.APPROACH).standard_normal((approach_count, 1 + grid.dim))
    directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
    radii = radius * 2.0 ** -np.arange(approach_count)
    steps = directions * radii[:, np.newaxis] * scale
    points = np.concatenate([center + steps, center - steps])
    approach, _ = value_grid.evaluate(points[:, 0], points[:, 1:])
    pair_means = 0.5 * (approach[:approach_count] + approach[approach_count:])

    target = value_grid.value_at(s, x)
    if tolerance is None:
        tolerance = (
            4.0 * value_grid.interpolation_modulus(include_time=True)
            + CI.Z99 * value_grid.stderr_at(s, x)
            + atol
        )
    statistic = float(np.max(target - pair_means))

    return RegularityReport(
        test_name="lsc_spot_check",
        statistic=statistic,
        threshold=tolerance,
        passed=statistic <= tolerance,
        sample_count=approach_count,
        config={"s": s, "x": x, "approach_count": approach_count, "seed": seed, "radius": radius},
        details={"target": target, "pair_means": pair_means, "points": points},
    )
