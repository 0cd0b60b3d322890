from __future__ import annotations
from enum import Enum
from functools import lru_cache
from logging import Logger, getLogger
from typing import ClassVar, Dict, List, Optional, Tuple
import hashlib

import numpy as np
from attrs import define, field, evolve

from jdflow.defs import STREAM, QUADRATURE_POINTS
from jdflow.errors import ArgumentError, ConfigurationError
from jdflow.models.base import ConverterWrapper as CW
from jdflow.rng import substream

__all__ = (
    "RegionEnum",
    "MarkKindEnum",
    "MarkDistribution",
    "LevyMeasureSpec",
    "JumpEvent",
    "LevyNoiseScenario",
    "NoiseModel",
    "dyadic_level",
)


class RegionEnum(str, Enum):
    SMALL = "small"
    LARGE = "large"


class MarkKindEnum(str, Enum):
    UNIFORM_BALL = "uniform_ball"
    UNIFORM_SHELL = "uniform_shell"
    EXPONENTIAL_SHELL = "exponential_shell"
    POINT = "point"


def dyadic_level(horizon: float, grid_step: float) -> int:
    """m such that grid_step == horizon / 2**m, else ConfigurationError"""
    if horizon <= 0 or grid_step <= 0:
        raise ConfigurationError(f"horizon and grid_step must be positive: {horizon=} {grid_step=}")

    ratio = horizon / grid_step
    level = int(round(np.log2(ratio))) if ratio >= 1 else -1
    if level < 0 or not np.isclose(ratio, 2.0**level, rtol=1e-12, atol=0.0):
        raise ConfigurationError(
            f"grid_step must be horizon / 2**m, got {horizon=} {grid_step=}"
        )

    return level


def _directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # zero vectors have probability zero; map them to the first axis
    norms[norms == 0] = 1.0
    v[(v == 0).all(axis=1), 0] = 1.0
    return v / norms


@define(kw_only=True, frozen=True)
class MarkDistribution:
    """Named samplable distribution of marks.

    >>> MarkDistribution(kind="uniform_shell", params=(3.0,))
    """

    kind: MarkKindEnum = field(converter=CW.norm(MarkKindEnum))
    params: Tuple[float, ...] = field(default=(), converter=CW.floats)

    REGIONS: ClassVar[Dict[MarkKindEnum, Tuple[RegionEnum, ...]]] = {
        MarkKindEnum.UNIFORM_BALL: (RegionEnum.SMALL,),
        MarkKindEnum.UNIFORM_SHELL: (RegionEnum.LARGE,),
        MarkKindEnum.EXPONENTIAL_SHELL: (RegionEnum.LARGE,),
        MarkKindEnum.POINT: (RegionEnum.SMALL, RegionEnum.LARGE),
    }
    MAX_REJECTION_ROUNDS: ClassVar[int] = 1000

    @property
    def is_symmetric(self) -> bool:
        if self.kind == MarkKindEnum.POINT:
            return not any(self.params)
        return True

    def validate(self, region: RegionEnum, mark_dim: int) -> None:
        if region not in self.REGIONS[self.kind]:
            raise ConfigurationError(f"{self.kind.value!r} marks cannot describe {region.value} jumps")

        if self.kind == MarkKindEnum.UNIFORM_SHELL:
            r_max = self.params[0] if self.params else 2.0
            if r_max <= 1.0:
                raise ConfigurationError(f"uniform_shell needs r_max > 1, got {r_max!r}")

        elif self.kind == MarkKindEnum.EXPONENTIAL_SHELL:
            scale = self.params[0] if self.params else 1.0
            if scale <= 0.0:
                raise ConfigurationError(f"exponential_shell needs scale > 0, got {scale!r}")

        elif self.kind == MarkKindEnum.POINT:
            if len(self.params) != mark_dim:
                raise ConfigurationError(
                    f"point mark has {len(self.params)} components, mark_dim is {mark_dim}"
                )
            if not LevyMeasureSpec.in_region(np.array([self.params]), region).all():
                raise ConfigurationError(f"point mark {self.params!r} is not a {region.value} mark")

    def _draw(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        if self.kind == MarkKindEnum.POINT:
            return np.tile(np.array(self.params, dtype=float), (n, 1))

        directions = _directions(rng, n, dim)
        u = rng.random(n)
        if self.kind == MarkKindEnum.UNIFORM_BALL:
            radius = u ** (1.0 / dim)
        elif self.kind == MarkKindEnum.UNIFORM_SHELL:
            r_max = self.params[0] if self.params else 2.0
            radius = 1.0 + (r_max - 1.0) * (1.0 - u)
        else:
            scale = self.params[0] if self.params else 1.0
            radius = 1.0 - scale * np.log1p(-u)

        return directions * radius[:, np.newaxis]

    def sample(
        self, rng: np.random.Generator, n: int, dim: int, region: RegionEnum
    ) -> np.ndarray:
        """n marks of dimension dim, rejection-checked against region"""
        marks = self._draw(rng, n, dim)
        for _ in range(self.MAX_REJECTION_ROUNDS):
            bad = ~LevyMeasureSpec.in_region(marks, region)
            if not bad.any():
                return marks
            marks[bad] = self._draw(rng, int(bad.sum()), dim)

        raise ConfigurationError(f"{self!r} keeps producing marks outside the {region.value} region")


@define(kw_only=True, frozen=True)
class LevyMeasureSpec:
    """Finite Lévy measure split at |z| = 1 into the small and large regions."""

    small_intensity: float = field(converter=float)
    small_marks: MarkDistribution
    large_intensity: float = field(converter=float)
    large_marks: MarkDistribution
    mark_dim: int = field(default=1, converter=int)

    def __attrs_post_init__(self) -> None:
        if self.mark_dim < 1:
            raise ConfigurationError(f"mark_dim must be positive, got {self.mark_dim!r}")
        if not np.isfinite(self.small_intensity) or self.small_intensity < 0:
            raise ConfigurationError(f"small_intensity must be finite and >= 0, got {self.small_intensity!r}")
        if not np.isfinite(self.large_intensity) or self.large_intensity <= 0:
            raise ConfigurationError(
                f"large_intensity must be finite and > 0, got {self.large_intensity!r}"
            )
        self.small_marks.validate(RegionEnum.SMALL, self.mark_dim)
        self.large_marks.validate(RegionEnum.LARGE, self.mark_dim)

    @staticmethod
    def in_region(marks: np.ndarray, region: RegionEnum) -> np.ndarray:
        norms = np.linalg.norm(marks, axis=-1)
        if region == RegionEnum.SMALL:
            # U_0 excludes the origin
            return (norms <= 1.0) & (norms > 0.0)
        return norms > 1.0

    def intensity(self, region: RegionEnum) -> float:
        return self.small_intensity if region == RegionEnum.SMALL else self.large_intensity

    def marks(self, region: RegionEnum) -> MarkDistribution:
        return self.small_marks if region == RegionEnum.SMALL else self.large_marks

    def quadrature_marks(self, seed: int) -> np.ndarray:
        return _quadrature_marks(self, int(seed))


@lru_cache(maxsize=64)
def _quadrature_marks(levy: LevyMeasureSpec, seed: int) -> np.ndarray:
    """Fixed small-mark sample for the compensator drift.

    Symmetric distributions get antithetic pairs (z, -z) interleaved, so the
    compensator of an odd g cancels exactly.
    """
    rng = substream(seed, 0, STREAM.QUADRATURE)
    dist = levy.small_marks
    if dist.is_symmetric:
        half = dist.sample(rng, QUADRATURE_POINTS // 2, levy.mark_dim, RegionEnum.SMALL)
        marks = np.empty((QUADRATURE_POINTS, levy.mark_dim))
        marks[0::2] = half
        marks[1::2] = -half
    else:
        marks = dist.sample(rng, QUADRATURE_POINTS, levy.mark_dim, RegionEnum.SMALL)

    marks.setflags(write=False)
    return marks


@define(kw_only=True, frozen=True)
class JumpEvent:
    time: float = field(converter=float)
    mark: Tuple[float, ...] = field(converter=CW.floats)
    region: RegionEnum = field(converter=CW.norm(RegionEnum))

    @property
    def is_large(self) -> bool:
        return self.region == RegionEnum.LARGE

    def to_record(self) -> Dict:
        return {"t": self.time, "mark": list(self.mark), "region": self.region.value}


@define(kw_only=True, frozen=True, eq=False)
class LevyNoiseScenario:
    """One frozen realization of the driving noise.

    Brownian increments live on the dyadic grid `k * T / 2**level`. Jump times
    are stored exactly; each large jump carries a standard normal vector in
    `bridge_normals` that pins W at the jump time inside its grid cell.
    """

    _logger: ClassVar[Logger] = getLogger("LevyNoiseScenario")
    levy: LevyMeasureSpec
    horizon: float = field(converter=float)
    level: int = field(converter=int)
    brownian_increments: np.ndarray = field(converter=CW.frozen_array(2))
    jumps: Tuple[JumpEvent, ...] = field(converter=tuple)
    bridge_normals: np.ndarray = field(converter=CW.frozen_array(2))
    seed: int = field(converter=int)
    path_index: int = field(converter=int)

    def __attrs_post_init__(self) -> None:
        times = np.array([e.time for e in self.jumps])
        if len(times) and (
            (np.diff(times) <= 0).any() or times[0] <= 0 or times[-1] >= self.horizon
        ):
            raise ConfigurationError("jump times must be strictly increasing inside (0, T)")
        if self.brownian_increments.shape[0] != self.n_cells:
            raise ConfigurationError(
                f"expected {self.n_cells} Brownian increments, got {self.brownian_increments.shape[0]}"
            )
        if self.bridge_normals.shape[0] != len(self.large_jumps):
            raise ConfigurationError("one bridge vector per large jump is required")

    @property
    def n_cells(self) -> int:
        return 2**self.level

    @property
    def grid_step(self) -> float:
        return self.horizon / self.n_cells

    @property
    def brownian_dim(self) -> int:
        return self.brownian_increments.shape[1]

    @property
    def large_jumps(self) -> List[JumpEvent]:
        return [e for e in self.jumps if e.is_large]

    @property
    def small_jumps(self) -> List[JumpEvent]:
        return [e for e in self.jumps if not e.is_large]

    def grid_times(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.grid_step

    def cell_of(self, t: float) -> int:
        """index i of the grid cell (t_i, t_{i+1}] holding t"""
        i = int(np.ceil(t / self.grid_step)) - 1
        return min(max(i, 0), self.n_cells - 1)

    def large_jump_partials(self) -> np.ndarray:
        """W(tau_k) - W(t_i) for every large jump tau_k in cell (t_i, t_{i+1}]

        Sequential Brownian bridge between the cell end points, one stored
        normal vector per jump.
        """
        large = self.large_jumps
        partials = np.zeros((len(large), self.brownian_dim))
        dt = self.grid_step
        prev_cell, prev_t, prev_w = -1, 0.0, None
        for k, event in enumerate(large):
            cell = self.cell_of(event.time)
            t_end = (cell + 1) * dt
            w_end = self.brownian_increments[cell]
            if cell != prev_cell:
                prev_cell, prev_t, prev_w = cell, cell * dt, np.zeros(self.brownian_dim)
            span = t_end - prev_t
            frac = (event.time - prev_t) / span
            var = max((event.time - prev_t) * (t_end - event.time) / span, 0.0)
            partials[k] = prev_w + frac * (w_end - prev_w) + np.sqrt(var) * self.bridge_normals[k]
            prev_t, prev_w = event.time, partials[k]

        return partials

    def brownian_path(self) -> np.ndarray:
        """W at every grid time, W(0) = 0"""
        w = np.zeros((self.n_cells + 1, self.brownian_dim))
        np.cumsum(self.brownian_increments, axis=0, out=w[1:])
        return w

    def brownian_at(self, times) -> np.ndarray:
        """W at grid times and large-jump times, shape (len(times), m)

        Other times are not determined by the stored noise and raise
        ArgumentError.
        """
        w_grid = self.brownian_path()
        large = self.large_jumps
        partials = self.large_jump_partials()
        by_time = {e.time: k for k, e in enumerate(large)}
        out = np.empty((len(times), self.brownian_dim))
        for n, t in enumerate(np.asarray(times, dtype=float).ravel()):
            if t in by_time:
                k = by_time[t]
                out[n] = w_grid[self.cell_of(t)] + partials[k]
                continue

            i = int(round(t / self.grid_step))
            if not 0 <= i <= self.n_cells or i * self.grid_step != t:
                raise ArgumentError(f"W is only stored at nodes, got {t=}")
            out[n] = w_grid[i]

        return out

    def coarsen(self) -> "LevyNoiseScenario":
        """Same noise on the grid with half the cells.

        Increments are summed pairwise; bridge vectors are recomputed so that W
        at every large-jump time is unchanged.
        """
        if self.level == 0:
            raise ConfigurationError("cannot coarsen a single-cell scenario")

        inc = self.brownian_increments[0::2] + self.brownian_increments[1::2]
        coarse = evolve(
            self,
            level=self.level - 1,
            brownian_increments=inc,
            bridge_normals=np.zeros_like(self.bridge_normals),
        )
        w_fine = self.brownian_path()
        w_jump = np.array(
            [w_fine[self.cell_of(e.time)] for e in self.large_jumps]
        ).reshape(-1, self.brownian_dim) + self.large_jump_partials()

        w_coarse = coarse.brownian_path()
        normals = np.zeros_like(self.bridge_normals)
        dt = coarse.grid_step
        prev_cell, prev_t, prev_w = -1, 0.0, None
        for k, event in enumerate(coarse.large_jumps):
            cell = coarse.cell_of(event.time)
            t_end = (cell + 1) * dt
            w_end = w_coarse[cell + 1]
            if cell != prev_cell:
                prev_cell, prev_t, prev_w = cell, cell * dt, w_coarse[cell]
            span = t_end - prev_t
            frac = (event.time - prev_t) / span
            var = (event.time - prev_t) * (t_end - event.time) / span
            if var > 0:
                normals[k] = (w_jump[k] - prev_w - frac * (w_end - prev_w)) / np.sqrt(var)
            prev_t, prev_w = event.time, w_jump[k]

        return evolve(coarse, bridge_normals=normals)

    def without_large_jumps(self) -> "LevyNoiseScenario":
        return evolve(
            self,
            jumps=tuple(self.small_jumps),
            bridge_normals=np.zeros((0, self.brownian_dim)),
        )

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.brownian_increments).tobytes())
        digest.update(np.ascontiguousarray(self.bridge_normals).tobytes())
        for e in self.jumps:
            digest.update(np.array([e.time, *e.mark]).tobytes())
            digest.update(e.region.value.encode())
        return digest.hexdigest()

    def to_record(self) -> Dict:
        return {
            "seed": self.seed,
            "path_index": self.path_index,
            "m": self.level,
            "jumps": [e.to_record() for e in self.jumps],
        }


@define(kw_only=True, frozen=True)
class NoiseModel:
    """Everything needed to regenerate scenarios from (seed, path_index)."""

    levy: LevyMeasureSpec
    horizon: float = field(converter=float)
    level: int = field(converter=int)
    brownian_dim: int = field(default=1, converter=int)

    def __attrs_post_init__(self) -> None:
        if self.horizon <= 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon!r}")
        if self.level < 0:
            raise ConfigurationError(f"level must be >= 0, got {self.level!r}")
        if self.brownian_dim < 1:
            raise ConfigurationError(f"brownian_dim must be positive, got {self.brownian_dim!r}")

    @property
    def grid_step(self) -> float:
        return self.horizon / 2**self.level

    @property
    def n_cells(self) -> int:
        return 2**self.level

    def grid_times(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.grid_step

    def scenario(self, seed: int, path_index: int) -> LevyNoiseScenario:
        from jdflow.noise import build_scenario

        return build_scenario(
            self.levy,
            self.horizon,
            self.grid_step,
            seed,
            path_index,
            brownian_dim=self.brownian_dim,
        )

    def with_level(self, level: int, levy: Optional[LevyMeasureSpec] = None) -> "NoiseModel":
        return evolve(self, level=level, levy=levy or self.levy)
