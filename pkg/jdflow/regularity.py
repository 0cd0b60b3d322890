"""Statistical checks of the flow: flow identity, Lipschitz moments,
stochastic continuity in the start time and the three-point càdlàg criterion.

Every check runs one job per scenario through `ordered_map` and reduces the
per-scenario results in path-index order.
"""

from logging import getLogger
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from jdflow import config
from jdflow.defs import CI, STREAM
from jdflow.errors import ArgumentError
from jdflow.integrator import ControlLike, flow_restart, integrate_batch, integrate_starts
from jdflow.models.coefficients import CoefficientSet
from jdflow.models.noise import NoiseModel
from jdflow.models.reports import RegularityReport
from jdflow.parallel import ordered_map
from jdflow.rng import substream

__all__ = (
    "box_lattice",
    "check_flow_property",
    "estimate_lipschitz_moment",
    "estimate_stochastic_continuity",
    "estimate_cadlag_exponent",
)

logger = getLogger(__name__)

DETERMINISTIC_NOTE = "deterministic-in-s family"


def box_lattice(center: Sequence[float], radius: float, points: int, dim: int) -> np.ndarray:
    """`points`**dim equispaced states of the cube of half-width `radius`"""
    if points < 1:
        raise ArgumentError(f"lattice needs at least one point per axis, got {points}")
    center = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
    axis = np.linspace(-radius, radius, points) if points > 1 else np.zeros(1)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return center + np.stack([m.ravel() for m in mesh], axis=1)


def _grid_index(noise: NoiseModel, t: float, name: str, allow_end: bool = False) -> int:
    k = t / noise.grid_step
    i = int(round(k))
    if abs(k - i) > 1e-9 or i < 0 or i > noise.n_cells or (i == noise.n_cells and not allow_end):
        raise ArgumentError(f"{name}={t} is not a grid time of step {noise.grid_step}")
    return i


def _scenarios(count: int, offset: int) -> List[int]:
    if count < 1:
        raise ArgumentError(f"at least one scenario is required, got {count}")
    return [offset + k for k in range(count)]


def _snapshot(coeffs: CoefficientSet, noise: NoiseModel, seed: int, scenarios: int, **extra: Any) -> Dict:
    snapshot = {
        "catalog_id": coeffs.catalog_id,
        "horizon": noise.horizon,
        "level": noise.level,
        "seed": seed,
        "scenarios": scenarios,
    }
    snapshot.update(extra)
    return snapshot


def check_flow_property(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    s: float,
    u: float,
    t: float,
    x_list,
    control: ControlLike = None,
    scenarios: int = 100,
    seed: int = 0,
    threads: int = 1,
    path_offset: int = 0,
    perturbation: float = 0.0,
) -> RegularityReport:
    """max |X^{s,x}_t - X^{u, X^{s,x}_u}_t| over scenarios and x; a nonzero
    `perturbation` is added to the restart state
    """
    i_s = _grid_index(noise, s, "s")
    i_u = _grid_index(noise, u, "u")
    i_t = _grid_index(noise, t, "t", allow_end=True)
    if not i_s < i_u < i_t:
        raise ArgumentError(f"flow check needs s < u < t, got {s=} {u=} {t=}")
    xs = np.atleast_2d(np.asarray(x_list, dtype=float))

    def one(path_index: int) -> float:
        scenario = noise.scenario(seed, path_index)
        batch = integrate_batch(coeffs, s, xs, control, scenario)
        restart = flow_restart(coeffs, u, batch, control, scenario, perturbation=perturbation)
        return float(np.max(np.linalg.norm(batch.at(t) - restart.at(t), axis=1)))

    gaps = ordered_map(one, _scenarios(scenarios, path_offset), threads=threads)
    statistic = max(gaps)
    worst = path_offset + int(np.argmax(gaps))
    logger.info(f"flow check {coeffs.catalog_id}: {statistic=} {worst=}")

    return RegularityReport(
        test_name="flow_property",
        statistic=statistic,
        threshold=0.0,
        passed=statistic == 0.0,
        sample_count=scenarios * xs.shape[0],
        config=_snapshot(
            coeffs, noise, seed, scenarios, s=s, u=u, t=t, x_list=xs, perturbation=perturbation
        ),
        details={"worst_path_index": worst},
    )


def estimate_lipschitz_moment(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    s: float,
    x,
    y,
    p: float,
    control: ControlLike = None,
    scenarios: int = 200,
    seed: int = 0,
    margin: float = config.DEFAULT_MARGIN,
    allow_large_jumps: bool = False,
    threads: int = 1,
    path_offset: int = 0,
) -> RegularityReport:
    """E[sup_{s<=t<=T} |X^{s,x}_t - X^{s,y}_t|^p] / |x - y|^p at the
    separations h, h/2 and h/4 along the segment from x to y.

    Passes when the three ratios agree within a factor 4**(p-1) * margin, i.e.
    when the largest ratio is at most that factor times the smallest.
    """
    if p < 2:
        raise ArgumentError(f"moment order p must be >= 2, got {p=}")
    if not coeffs.large_jump_zero and not allow_large_jumps:
        raise ArgumentError(
            f"{coeffs.catalog_id} has large jumps; pass allow_large_jumps=True for the controlled extension"
        )
    _grid_index(noise, s, "s")
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    h = float(np.linalg.norm(y - x))
    if h == 0:
        raise ArgumentError("x and y must differ")

    scales = np.array([1.0, 0.5, 0.25])
    starts = np.vstack([x] + [x + k * (y - x) for k in scales])
    separations = h * scales

    def one(path_index: int) -> np.ndarray:
        batch = integrate_batch(coeffs, s, starts, control, noise.scenario(seed, path_index))
        window = batch.values[batch.start_index:]
        gaps = np.linalg.norm(window[:, 1:] - window[:, :1], axis=2)
        return np.max(gaps, axis=0) ** p

    sups = np.array(ordered_map(one, _scenarios(scenarios, path_offset), threads=threads))
    moments = np.mean(sups, axis=0)
    stderr = np.std(sups, axis=0, ddof=1) / np.sqrt(scenarios) if scenarios > 1 else np.zeros(3)
    ratios = moments / separations**p

    allowed = 4 ** (p - 1) * margin
    low, high = float(np.min(ratios)), float(np.max(ratios))
    threshold = allowed * low
    logger.info(f"lipschitz moment {coeffs.catalog_id}: {p=} ratios={ratios.tolist()} {threshold=}")

    return RegularityReport(
        test_name=f"lipschitz_moment_p{p:g}",
        statistic=high,
        threshold=threshold,
        passed=high <= threshold,
        sample_count=scenarios,
        config=_snapshot(coeffs, noise, seed, scenarios, s=s, x=x, y=y, p=p, margin=margin),
        details={
            "separations": separations,
            "moments": moments,
            "moment_stderr": stderr,
            "ratios": ratios,
            "allowed_spread": allowed,
        },
    )


def _offset_starts(
    noise: NoiseModel, s: float, offsets: Sequence[float], two_sided: bool
) -> Tuple[List[float], List[float]]:
    """start times s + shift (and s - shift) with every offset floored to a
    multiple of the grid step; returns the starts and the shifts
    """
    dt = noise.grid_step
    starts, shifts = [], []
    for delta in offsets:
        if delta < dt * (1 - 1e-9):
            raise ArgumentError(f"offset {delta} is below the grid step {dt}")
        shift = float(np.floor(delta / dt + 1e-9) * dt)
        if abs(shift - delta) > 1e-9 * dt:
            logger.warning(f"offset {delta} is not a multiple of the grid step, using {shift}")
        shifts.append(shift)
        if s + shift >= noise.horizon:
            raise ArgumentError(f"s + offset = {s + shift} reaches the horizon")
        starts.append(s + shift)
        if two_sided:
            if s - shift < 0:
                raise ArgumentError(f"s - offset = {s - shift} is negative")
            starts.append(s - shift)
    return starts, shifts


def estimate_stochastic_continuity(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    s: float,
    radius: float,
    epsilon: float,
    offsets: Sequence[float],
    control: ControlLike = None,
    scenarios: int = 200,
    seed: int = 0,
    lattice_points: int = config.DEFAULT_LATTICE_POINTS,
    two_sided: bool = False,
    center: Optional[Sequence[float]] = None,
    threads: int = 1,
    path_offset: int = 0,
) -> RegularityReport:
    """P(max over the lattice and all nodes of |X^{r,x}_t - X^{s,x}_t| > eps)
    for r = s + offset (and s - offset when two-sided).

    Passes when the estimates do not increase as the offsets shrink, beyond
    a 99% binomial allowance.
    """
    if not len(offsets):
        raise ArgumentError("at least one offset is required")
    if epsilon <= 0:
        raise ArgumentError(f"epsilon must be positive, got {epsilon}")
    _grid_index(noise, s, "s")
    offsets = sorted(float(o) for o in offsets)[::-1]
    lattice = box_lattice(center if center is not None else [0.0], radius, lattice_points, coeffs.state_dim)
    shifted, effective = _offset_starts(noise, s, offsets, two_sided)
    starts = [s] + shifted
    sides = 2 if two_sided else 1

    def one(path_index: int) -> np.ndarray:
        _, values = integrate_starts(coeffs, starts, lattice, control, noise.scenario(seed, path_index))
        base = values[:, 0]
        out = np.zeros(len(offsets))
        for k in range(len(offsets)):
            gap = 0.0
            for side in range(sides):
                other = values[:, 1 + k * sides + side]
                gap = max(gap, float(np.max(np.linalg.norm(other - base, axis=2))))
            out[k] = gap > epsilon
        return out

    hits = np.array(ordered_map(one, _scenarios(scenarios, path_offset), threads=threads))
    estimates = np.mean(hits, axis=0)
    stderr = np.sqrt(estimates * (1 - estimates) / scenarios)

    # larger offset first: the next estimate may exceed it only by the allowance
    violations = [
        estimates[k + 1] - estimates[k] - CI.Z99 * np.hypot(stderr[k], stderr[k + 1])
        for k in range(len(offsets) - 1)
    ]
    statistic = max(violations, default=0.0)
    logger.info(f"stochastic continuity {coeffs.catalog_id}: estimates={estimates.tolist()} {statistic=}")

    return RegularityReport(
        test_name="stochastic_continuity",
        statistic=statistic,
        threshold=0.0,
        passed=statistic <= 0.0,
        sample_count=scenarios,
        config=_snapshot(
            coeffs,
            noise,
            seed,
            scenarios,
            s=s,
            radius=radius,
            epsilon=epsilon,
            offsets=offsets,
            lattice_points=lattice_points,
            two_sided=two_sided,
        ),
        details={
            "offsets": offsets,
            "effective_offsets": effective,
            "estimates": estimates,
            "stderr": stderr,
        },
    )


def _triples(rng: np.random.Generator, count: int, n_cells: int, w_min: int, w_max: int) -> np.ndarray:
    """(count, 3) grid indices s < u < v with v - s log-uniform in cells"""
    u = rng.random((count, 3))
    log_lo, log_hi = np.log(w_min), np.log(w_max + 1)
    widths = np.clip(np.floor(np.exp(log_lo + (log_hi - log_lo) * u[:, 0])), w_min, w_max).astype(int)
    i_s = np.floor(u[:, 1] * (n_cells - widths)).astype(int)
    i_u = i_s + 1 + np.floor(u[:, 2] * (widths - 1)).astype(int)
    return np.column_stack([i_s, i_u, i_s + widths])


def _sup_distances(values: np.ndarray) -> np.ndarray:
    """(S, S) max over nodes and lattice of |X^{s_a} - X^{s_b}|"""
    n_starts = values.shape[1]
    out = np.zeros((n_starts, n_starts))
    for a in range(n_starts):
        gaps = np.linalg.norm(values - values[:, a : a + 1], axis=3)
        out[a] = np.max(gaps, axis=(0, 2))
    return out


def _binned_fit(widths: np.ndarray, moments: np.ndarray, bins: int) -> Tuple[Optional[Any], int]:
    edges = np.geomspace(widths.min(), widths.max() * (1 + 1e-12), bins + 1)
    which = np.digitize(widths, edges) - 1
    xs, ys = [], []
    for b in range(bins):
        mask = which == b
        if not mask.any():
            continue
        mean = float(np.mean(moments[mask]))
        if mean > 0:
            xs.append(np.log(np.mean(widths[mask])))
            ys.append(np.log(mean))
    if len(xs) < 3:
        return None, len(xs)
    return stats.linregress(xs, ys), len(xs)


def estimate_cadlag_exponent(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    center: Sequence[float],
    radius: float,
    q: float,
    triple_count: int,
    scenarios: int = 20,
    seed: int = 0,
    control: ControlLike = None,
    lattice_points: int = config.DEFAULT_LATTICE_POINTS,
    min_decades: float = 2.0,
    bins: int = 8,
    threads: int = 1,
    path_offset: int = 0,
) -> RegularityReport:
    """Fit E[D(s,u)^q D(u,v)^q] ~ (v - s)^slope over random triples s < u < v,
    where D is the max over the lattice and all nodes between the flows
    started at the two times.

    Passes when slope - 2 stderr > 1.
    """
    if q <= 0.5:
        raise ArgumentError(f"exponent q must exceed 1/2, got {q=}")
    if triple_count < 1:
        raise ArgumentError(f"triple_count must be positive, got {triple_count}")
    n_cells = noise.n_cells
    w_min, w_max = 2, n_cells // 2
    if w_max < w_min or np.log10(w_max / w_min) < min_decades:
        raise ArgumentError(
            f"widths from {w_min} to {w_max} cells span less than {min_decades} decades; refine the grid"
        )
    lattice = box_lattice(center, radius, lattice_points, coeffs.state_dim)
    dt = noise.grid_step

    def one(path_index: int) -> Tuple[np.ndarray, np.ndarray]:
        triples = _triples(substream(seed, path_index, STREAM.TRIPLES), triple_count, n_cells, w_min, w_max)
        needed = np.unique(triples)
        _, values = integrate_starts(coeffs, needed * dt, lattice, control, noise.scenario(seed, path_index))
        dist = _sup_distances(values)
        pos = np.searchsorted(needed, triples)
        moments = (dist[pos[:, 0], pos[:, 1]] * dist[pos[:, 1], pos[:, 2]]) ** q
        return (triples[:, 2] - triples[:, 0]) * dt, moments

    results = ordered_map(one, _scenarios(scenarios, path_offset), threads=threads)
    widths = np.concatenate([r[0] for r in results])
    moments = np.concatenate([r[1] for r in results])
    snapshot = _snapshot(
        coeffs,
        noise,
        seed,
        scenarios,
        center=center,
        radius=radius,
        q=q,
        triple_count=triple_count,
        lattice_points=lattice_points,
        min_decades=min_decades,
        bins=bins,
    )
    sample_count = int(moments.shape[0])

    if not np.any(moments > 0):
        logger.info(f"cadlag exponent {coeffs.catalog_id}: all moments vanish")
        return RegularityReport(
            test_name="cadlag_exponent",
            statistic=0.0,
            threshold=1.0,
            passed=True,
            sample_count=sample_count,
            config=snapshot,
            details={"note": DETERMINISTIC_NOTE},
        )

    fit, used = _binned_fit(widths, moments, bins)
    if fit is None:
        logger.warning(f"cadlag exponent {coeffs.catalog_id}: only {used} usable bins")
        return RegularityReport(
            test_name="cadlag_exponent",
            statistic=float("nan"),
            threshold=1.0,
            passed=False,
            sample_count=sample_count,
            config=snapshot,
            details={"note": f"too few usable bins ({used})"},
        )

    statistic = fit.slope - 2 * fit.stderr
    logger.info(f"cadlag exponent {coeffs.catalog_id}: slope={fit.slope:.4f} stderr={fit.stderr:.4f}")
    return RegularityReport(
        test_name="cadlag_exponent",
        statistic=statistic,
        threshold=1.0,
        passed=statistic > 1.0,
        sample_count=sample_count,
        config=snapshot,
        details={"slope": fit.slope, "stderr": fit.stderr, "bins_used": used},
    )
