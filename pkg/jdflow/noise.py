"""Reproducible realizations of the driving noise.

A scenario is a pure function of `(spec, horizon, grid_step, seed,
path_index)`: Brownian increments, small-jump and large-jump arrival times,
their marks and the bridge vectors each come from their own keyed substream.
"""

from logging import getLogger
from typing import Iterable, List

import numpy as np

from jdflow.defs import STREAM
from jdflow.errors import ConfigurationError
from jdflow.models.noise import (
    JumpEvent,
    LevyMeasureSpec,
    LevyNoiseScenario,
    RegionEnum,
    dyadic_level,
)
from jdflow.storage import TextFile
from jdflow.rng import substream

__all__ = (
    "build_scenario",
    "large_jump_times",
    "arrival_times",
    "dump_scenarios",
)

logger = getLogger(__name__)


def arrival_times(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    """Poisson arrival times on (0, horizon) from exponential interarrivals.

    A zero interarrival or an arrival exactly at `horizon` is redrawn, so the
    result is strictly increasing and never contains the horizon itself.
    """
    if rate == 0:
        return np.empty(0)

    times = []
    t = 0.0
    scale = 1.0 / rate
    while True:
        gap = rng.exponential(scale)
        if gap == 0.0 or t + gap == horizon:
            continue
        t += gap
        if t > horizon:
            break
        times.append(t)

    return np.array(times)


def build_scenario(
    spec: LevyMeasureSpec,
    horizon: float,
    grid_step: float,
    seed: int,
    path_index: int,
    brownian_dim: int = 1,
) -> LevyNoiseScenario:
    level = dyadic_level(horizon, grid_step)
    if not spec.large_intensity > 0:
        raise ConfigurationError("large_intensity must be strictly positive")

    n_cells = 2**level
    dt = horizon / n_cells
    increments = substream(seed, path_index, STREAM.BROWNIAN).standard_normal(
        (n_cells, brownian_dim)
    ) * np.sqrt(dt)

    large_rng = substream(seed, path_index, STREAM.LARGE_JUMPS)
    small_rng = substream(seed, path_index, STREAM.SMALL_JUMPS)
    large_t = arrival_times(large_rng, spec.large_intensity, horizon)
    small_t = arrival_times(small_rng, spec.small_intensity, horizon)
    # a small arrival on top of a large one is redrawn from the small stream
    while np.intersect1d(small_t, large_t).size:
        logger.debug(f"jump time collision, redrawing small arrivals {seed=} {path_index=}")
        small_t = arrival_times(small_rng, spec.small_intensity, horizon)

    large_z = spec.large_marks.sample(
        substream(seed, path_index, STREAM.LARGE_MARKS),
        len(large_t),
        spec.mark_dim,
        RegionEnum.LARGE,
    )
    small_z = spec.small_marks.sample(
        substream(seed, path_index, STREAM.SMALL_MARKS),
        len(small_t),
        spec.mark_dim,
        RegionEnum.SMALL,
    )
    bridge = substream(seed, path_index, STREAM.BRIDGE).standard_normal(
        (len(large_t), brownian_dim)
    )

    events: List[JumpEvent] = [
        JumpEvent(time=t, mark=z, region=RegionEnum.LARGE) for t, z in zip(large_t, large_z)
    ]
    events.extend(
        JumpEvent(time=t, mark=z, region=RegionEnum.SMALL) for t, z in zip(small_t, small_z)
    )
    events.sort(key=lambda e: e.time)

    return LevyNoiseScenario(
        levy=spec,
        horizon=horizon,
        level=level,
        brownian_increments=increments,
        jumps=events,
        bridge_normals=bridge.reshape(len(large_t), brownian_dim),
        seed=seed,
        path_index=path_index,
    )


def large_jump_times(scenario: LevyNoiseScenario) -> List[float]:
    return [e.time for e in scenario.jumps if e.is_large]


def dump_scenarios(scenarios: Iterable[LevyNoiseScenario], file: TextFile) -> int:
    """Write one JSONL record per scenario, Brownian increments omitted."""
    from jdflow.exporter import to_jsonl_line

    lines = [to_jsonl_line(s.to_record()) for s in scenarios]
    file.write_lines_atomic(lines)
    return len(lines)
