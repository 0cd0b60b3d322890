"""Finite-difference probe of the Lipschitz and linear-growth hypotheses.

All randomness comes from one uniform matrix drawn from the probe substream,
row by row, so a run with fewer samples sees a prefix of the tuples of a
larger run and the running maxima can only grow with the sample count.
"""

from logging import getLogger
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import ndtri

from jdflow.defs import STREAM, QUADRATURE_POINTS
from jdflow.errors import ArgumentError, ProbeError
from jdflow.models.coefficients import CoefficientSet, StateBox
from jdflow.models.noise import LevyMeasureSpec, MarkDistribution, RegionEnum
from jdflow.models.reports import HypothesisProbeReport
from jdflow.parallel import ordered_map
from jdflow.rng import substream

__all__ = ("probe_hypotheses", "default_levy")

logger = getLogger(__name__)

# pair distances are log-uniform in [10**MIN_EXP, 10**MAX_EXP]
MIN_EXP, MAX_EXP = -4.0, 0.0
_EPS = 1e-12
_NAMES = ("b", "alpha", "g", "f")


def default_levy(mark_dim: int) -> LevyMeasureSpec:
    """unit-intensity uniform marks, used when no Lévy measure is given"""
    return LevyMeasureSpec(
        small_intensity=1.0,
        small_marks=MarkDistribution(kind="uniform_ball"),
        large_intensity=1.0,
        large_marks=MarkDistribution(kind="uniform_shell", params=(2.0,)),
        mark_dim=mark_dim,
    )


def _unit(u: np.ndarray) -> np.ndarray:
    v = ndtri(np.clip(u, _EPS, 1 - _EPS))
    norm = np.linalg.norm(v)
    if norm == 0:
        v = np.zeros_like(v)
        v[0] = 1.0
        return v
    return v / norm


class _Evaluator:
    """per-tuple evaluation of every coefficient at a pair of points"""

    def __init__(self, coeffs: CoefficientSet, small_marks: np.ndarray, small_rate: float,
                 large_marks: np.ndarray) -> None:
        self.coeffs = coeffs
        self.small_marks = small_marks
        self.small_rate = small_rate
        self.large_marks = large_marks

    def _check(self, name: str, value: np.ndarray, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        if not np.isfinite(value).all():
            raise ProbeError(f"coefficient {name} is not finite at t={t!r} x={x.tolist()} a={a.tolist()}")
        return value

    def fields(self, t: float, x: np.ndarray, a: np.ndarray) -> Dict[str, np.ndarray]:
        """b, alpha, g, f at the rows of x; g as the (n, q, d) stack over
        small marks, f over large marks
        """
        c = self.coeffs
        out = {
            "b": self._check("b", c.b(t, x, a), t, x, a),
            "alpha": self._check("alpha", c.alpha(t, x, a), t, x, a).reshape(x.shape[0], -1),
        }
        if c.small_jump_zero:
            out["g"] = np.zeros((x.shape[0], 1, c.state_dim))
        else:
            out["g"] = np.stack(
                [self._check("g", c.g(x, t, z, a), t, x, a) for z in self.small_marks], axis=1
            )
        if c.large_jump_zero:
            out["f"] = np.zeros((x.shape[0], 1, c.state_dim))
        else:
            out["f"] = np.stack(
                [self._check("f", c.f(x, t, z, a), t, x, a) for z in self.large_marks], axis=1
            )
        return out

    def distances(self, fx: Dict[str, np.ndarray]) -> Dict[str, float]:
        """norm of the difference between row 0 and row 1 of each field"""
        return {
            "b": float(np.linalg.norm(fx["b"][0] - fx["b"][1])),
            "alpha": float(np.linalg.norm(fx["alpha"][0] - fx["alpha"][1])),
            # L2(nu) norm over the quadrature sample
            "g": float(np.sqrt(self.small_rate * np.mean(np.sum((fx["g"][0] - fx["g"][1]) ** 2, axis=1)))),
            "f": float(np.max(np.linalg.norm(fx["f"][0] - fx["f"][1], axis=1))),
        }

    def sizes(self, fx: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {
            "b": np.linalg.norm(fx["b"], axis=1),
            "alpha": np.linalg.norm(fx["alpha"], axis=1),
            "g": np.sqrt(self.small_rate * np.mean(np.sum(fx["g"] ** 2, axis=2), axis=1)),
            "f": np.max(np.linalg.norm(fx["f"], axis=2), axis=1),
        }


def _layout(d: int, l: int) -> Dict[str, Tuple[int, int]]:
    """column ranges of one probe tuple in the uniform matrix"""
    spans = [("t", 1), ("x", d), ("dir_x", d), ("r_x", 1), ("a", l), ("dir_a", l), ("r_a", 1)]
    out, col = {}, 0
    for name, width in spans:
        out[name] = (col, col + width)
        col += width
    out["width"] = (col, col)
    return out


def probe_hypotheses(
    coeffs: CoefficientSet,
    box: Optional[StateBox],
    samples: int,
    seed: int,
    action_box: Optional[StateBox] = None,
    levy: Optional[LevyMeasureSpec] = None,
    horizon: float = 1.0,
    threads: int = 1,
) -> HypothesisProbeReport:
    if samples < 2:
        raise ArgumentError(f"probe needs at least 2 samples, got {samples}")
    box = box or coeffs.state_box
    if box is None:
        raise ArgumentError("probe needs a state box")
    if box.dim != coeffs.state_dim:
        raise ArgumentError(f"box has dimension {box.dim}, state has {coeffs.state_dim}")

    d, l = coeffs.state_dim, coeffs.control_dim
    if l and action_box is None:
        action_box = StateBox.cube(1.0, l)
    levy = levy or default_levy(coeffs.mark_dim)
    small = levy.quadrature_marks(seed)
    large = levy.large_marks.sample(
        substream(seed, 1, STREAM.PROBE), QUADRATURE_POINTS, levy.mark_dim, RegionEnum.LARGE
    )
    evaluator = _Evaluator(coeffs, small, levy.small_intensity, large)

    cols = _layout(d, l)
    u = substream(seed, 0, STREAM.PROBE).random((samples, cols["width"][0]))
    lo, hi = np.array(box.low), np.array(box.high)
    a_lo = np.array(action_box.low) if l else np.zeros(0)
    a_hi = np.array(action_box.high) if l else np.zeros(0)

    def part(row: np.ndarray, name: str) -> np.ndarray:
        i, j = cols[name]
        return row[i:j]

    def one(k: int) -> Tuple[Dict[str, float], Dict[str, float], Dict[str, float]]:
        row = u[k]
        t = horizon * float(part(row, "t")[0])
        x = lo + (hi - lo) * part(row, "x")
        a = a_lo + (a_hi - a_lo) * part(row, "a")
        # central pair around x, kept inside the box
        r = 10 ** (MIN_EXP + (MAX_EXP - MIN_EXP) * float(part(row, "r_x")[0]))
        step = 0.5 * r * _unit(part(row, "dir_x"))
        pair = np.clip(np.stack([x - step, x + step]), lo, hi)
        gap = float(np.linalg.norm(pair[0] - pair[1]))
        a_pair = np.stack([a, a])
        fx = evaluator.fields(t, pair, a_pair)
        lip_x = {n: 0.0 for n in _NAMES}
        if gap > 0:
            lip_x = {n: v / gap for n, v in evaluator.distances(fx).items()}

        norm_x = 1.0 + np.linalg.norm(pair, axis=1)
        growth = {n: float(np.max(v / norm_x)) for n, v in evaluator.sizes(fx).items()}

        lip_a = {n: 0.0 for n in _NAMES}
        if l:
            r_a = 10 ** (MIN_EXP + (MAX_EXP - MIN_EXP) * float(part(row, "r_a")[0]))
            step_a = 0.5 * r_a * _unit(part(row, "dir_a"))
            acts = np.clip(np.stack([a - step_a, a + step_a]), a_lo, a_hi)
            gap_a = float(np.linalg.norm(acts[0] - acts[1]))
            if gap_a > 0:
                fa = evaluator.fields(t, np.stack([x, x]), acts)
                lip_a = {n: v / gap_a for n, v in evaluator.distances(fa).items()}

        return lip_x, lip_a, growth

    results = ordered_map(one, range(samples), threads=threads)
    est_x = {n: max(r[0][n] for r in results) for n in _NAMES}
    est_a = {n: max(r[1][n] for r in results) for n in _NAMES}
    est_growth = {n: max(r[2][n] for r in results) for n in _NAMES}
    logger.info(f"probe {coeffs.catalog_id}: {samples=} lipschitz_x={est_x}")

    return HypothesisProbeReport(
        catalog_id=coeffs.catalog_id,
        estimated_lipschitz_x=est_x,
        estimated_lipschitz_a=est_a,
        estimated_growth=est_growth,
        sample_count=samples,
        state_box=box,
        action_box=action_box if l else None,
        declared_lipschitz=coeffs.declared_lipschitz,
        declared_growth=coeffs.declared_growth,
        small_intensity=levy.small_intensity,
    )
