from __future__ import annotations
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import numpy as np
from attrs import define, field, asdict

from jdflow.defs import CI
from jdflow.models.base import _RootListMixin, to_plain
from jdflow.models.coefficients import StateBox

__all__ = (
    "HypothesisProbeReport",
    "RegularityReport",
    "RegularityReports",
    "GainEstimate",
    "DPPResidual",
)


@define(kw_only=True, frozen=True, eq=False)
class HypothesisProbeReport:
    """Finite-difference estimates of Lipschitz and growth constants.

    Keys of the estimate dicts are the coefficient names b, alpha, g, f; the
    f entry is informational and never counts against `passed`.
    """

    catalog_id: str
    estimated_lipschitz_x: Dict[str, float]
    estimated_lipschitz_a: Dict[str, float]
    estimated_growth: Dict[str, float]
    sample_count: int
    state_box: StateBox
    action_box: Optional[StateBox] = None
    declared_lipschitz: float = 0.0
    declared_growth: float = 0.0
    small_intensity: float = 1.0
    tolerance: float = 1e-9

    CHECKED: ClassVar[Tuple[str, ...]] = ("b", "alpha", "g")

    @property
    def max_lipschitz(self) -> float:
        return max(self.estimated_lipschitz_x[k] for k in self.CHECKED)

    def bound_for(self, name: str) -> float:
        """declared x-Lipschitz bound of one coefficient; g is measured in
        L2(nu), which scales the pointwise constant by sqrt(nu(U_0))
        """
        bound = self.declared_lipschitz
        if name == "g":
            bound *= float(np.sqrt(self.small_intensity))
        return bound * (1 + self.tolerance) + self.tolerance

    @property
    def passed(self) -> bool:
        return all(self.estimated_lipschitz_x[k] <= self.bound_for(k) for k in self.CHECKED)

    def to_record(self) -> Dict[str, Any]:
        return to_plain(
            {
                "test_name": "probe_hypotheses",
                "catalog_id": self.catalog_id,
                "estimated_lipschitz_x": self.estimated_lipschitz_x,
                "estimated_lipschitz_a": self.estimated_lipschitz_a,
                "estimated_growth": self.estimated_growth,
                "declared_lipschitz": self.declared_lipschitz,
                "declared_growth": self.declared_growth,
                "sample_count": self.sample_count,
                "state_box": {"low": self.state_box.low, "high": self.state_box.high},
                "action_box": None
                if self.action_box is None
                else {"low": self.action_box.low, "high": self.action_box.high},
                "pass": self.passed,
            }
        )

    def summary_row(self) -> List[str]:
        return [
            "probe_hypotheses",
            f"{self.max_lipschitz:.6g}",
            f"{self.declared_lipschitz:.6g}",
            "PASS" if self.passed else "FAIL",
            str(self.sample_count),
        ]


@define(kw_only=True, frozen=True, eq=False)
class RegularityReport:
    """One statistical check; `passed` follows the threshold semantics of
    the test that produced it.
    """

    test_name: str
    statistic: float = field(converter=float)
    threshold: float = field(converter=float)
    passed: bool = field(converter=bool)
    sample_count: int = field(converter=int)
    config: Dict[str, Any] = field(factory=dict)
    details: Dict[str, Any] = field(factory=dict)

    def to_record(self) -> Dict[str, Any]:
        return to_plain(
            {
                "test_name": self.test_name,
                "statistic": self.statistic,
                "threshold": self.threshold,
                "pass": self.passed,
                "sample_count": self.sample_count,
                "config": self.config,
                "details": self.details,
            }
        )

    def summary_row(self) -> List[str]:
        return [
            self.test_name,
            f"{self.statistic:.6g}",
            f"{self.threshold:.6g}",
            "PASS" if self.passed else "FAIL",
            str(self.sample_count),
        ]


@define(kw_only=True)
class RegularityReports(_RootListMixin[RegularityReport]):
    records: List[Any] = field(factory=list)

    HEADER: ClassVar[Tuple[str, ...]] = ("test", "statistic", "threshold", "result", "samples")

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.records)

    def to_records(self) -> List[Dict[str, Any]]:
        return [r.to_record() for r in self.records]

    def summary_table(self) -> str:
        rows = [list(self.HEADER)] + [r.summary_row() for r in self.records]
        widths = [max(len(row[i]) for row in rows) for i in range(len(self.HEADER))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


@define(kw_only=True, frozen=True, eq=False)
class GainEstimate:
    """Monte Carlo mean of the gain with its standard error; `samples` keeps
    the per-scenario values, ordered by path index
    """

    mean: float = field(converter=float)
    stderr: float = field(converter=float)
    samples: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "GainEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        stderr = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(mean=float(np.mean(samples)), stderr=stderr, samples=samples)

    @property
    def sample_count(self) -> int:
        return int(self.samples.shape[0])

    def to_record(self) -> Dict[str, Any]:
        return to_plain({"mean": self.mean, "stderr": self.stderr, "sample_count": self.sample_count})


@define(kw_only=True, frozen=True, eq=False)
class DPPResidual:
    """v(s, x) - sup_a E[int_s^theta h + v(theta, X_theta)]"""

    theta: str
    s: float = field(converter=float)
    x: Tuple[float, ...]
    value: float = field(converter=float)
    rhs: float = field(converter=float)
    stderr: float = field(converter=float)
    allowance: float = field(converter=float)
    best: str = ""
    sample_count: int = 0
    clamp_count: int = 0

    @property
    def residual(self) -> float:
        return self.value - self.rhs

    @property
    def threshold(self) -> float:
        return CI.Z99 * self.stderr + self.allowance

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= self.threshold

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record.update(residual=self.residual, threshold=self.threshold)
        record["pass"] = self.passed
        return to_plain(record)

    def summary_row(self) -> List[str]:
        return [
            f"dpp[{self.theta} s={self.s:g}]",
            f"{self.residual:.6g}",
            f"{self.threshold:.6g}",
            "PASS" if self.passed else "FAIL",
            str(self.sample_count),
        ]
