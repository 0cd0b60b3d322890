from __future__ import annotations
from itertools import product
from typing import Any, Callable, ClassVar, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from attrs import define

from jdflow.errors import ConfigurationError
from jdflow.models.base import ConverterWrapper as CW
from jdflow.models.coefficients import StateBox

__all__ = (
    "CostFunction",
    "CostCatalog",
    "combined_bound",
)

# (t, x[n, d], a[n, l]) -> [n]
CostFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
# (box, actions[k, l]) -> sup of |cost|
BoundFn = Callable[[StateBox, np.ndarray], float]


@define(kw_only=True, frozen=True, eq=False)
class CostFunction:
    """Bounded running cost h(t, x, a) or terminal cost j(x)."""

    name: str
    params: Tuple[Tuple[str, Tuple[float, ...]], ...] = ()
    fn: CostFn
    bound_fn: BoundFn
    uses_action: bool = False
    state_dim: int = 1
    terminal_only: bool = False

    def __reduce__(self):
        # closures do not pickle; rebuild from the catalog instead
        params = {k: v[0] if len(v) == 1 else v for k, v in self.params}
        return CostCatalog.build, (self.name, params, self.state_dim, self.terminal_only)

    def __call__(self, t: float, x: np.ndarray, a: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if a is None:
            a = np.zeros((x.shape[0], 0))
        return self.fn(t, x, a)

    def terminal(self, x: np.ndarray) -> np.ndarray:
        return self(0.0, x)

    def sup_norm(self, box: StateBox, actions: np.ndarray) -> float:
        """sup of |cost| over the box and the action set"""
        return float(self.bound_fn(box, np.atleast_2d(actions)))

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


def _corners(box: StateBox) -> np.ndarray:
    return np.array(list(product(*zip(box.low, box.high))))


class CostCatalog:
    """Named cost families for h and j."""

    _entries: ClassVar[Dict[str, Callable[..., CostFunction]]] = {}
    DEFAULTS: ClassVar[Dict[str, Dict[str, Any]]] = {}
    RUNNING_ONLY: ClassVar[Tuple[str, ...]] = ("action_penalty",)

    @classmethod
    def register(cls, name: str, **defaults: Any) -> Callable:
        def decorator(builder: Callable[..., CostFunction]) -> Callable[..., CostFunction]:
            cls._entries[name] = builder
            cls.DEFAULTS[name] = defaults
            return builder

        return decorator

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(sorted(cls._entries))

    @classmethod
    def build(
        cls,
        name: str,
        params: Optional[Mapping[str, Any]] = None,
        state_dim: int = 1,
        terminal: bool = False,
    ) -> CostFunction:
        if name not in cls._entries:
            raise ConfigurationError(f"unknown cost catalog id {name!r}, known: {', '.join(cls.names())}")
        if terminal and name in cls.RUNNING_ONLY:
            raise ConfigurationError(f"{name!r} depends on the action and cannot be a terminal cost")

        merged = dict(cls.DEFAULTS[name])
        for key, value in (params or {}).items():
            if key not in merged:
                raise ConfigurationError(f"cost {name!r} has no parameter {key!r}")
            merged[key] = value

        fn, bound_fn, uses_action = cls._entries[name](state_dim, **merged)
        snapshot = tuple(sorted((k, CW.floats(v)) for k, v in merged.items()))
        return CostFunction(
            name=name,
            params=snapshot,
            fn=fn,
            bound_fn=bound_fn,
            uses_action=uses_action,
            state_dim=state_dim,
            terminal_only=terminal,
        )


def _as_vector(value: Any, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ConfigurationError(f"{name} needs 1 or {dim} values, got {arr.size}")
    return arr


@CostCatalog.register("zero")
def _zero(dim: int):
    return (lambda t, x, a: np.zeros(x.shape[0])), (lambda box, actions: 0.0), False


@CostCatalog.register("constant", c=0.0)
def _constant(dim: int, c: Any):
    value = float(c)
    return (lambda t, x, a: np.full(x.shape[0], value)), (lambda box, actions: abs(value)), False


@CostCatalog.register("linear", weights=1.0, offset=0.0)
def _linear(dim: int, weights: Any, offset: Any):
    """w . x + offset"""
    w = _as_vector(weights, dim, "weights")
    off = float(offset)

    def fn(t, x, a):
        # explicit sum keeps the result independent of the batch size
        out = np.full(x.shape[0], off)
        for i in range(dim):
            out = out + w[i] * x[:, i]
        return out

    def bound(box, actions):
        return float(np.max(np.abs(_corners(box) @ w + off)))

    return fn, bound, False


@CostCatalog.register("neg_abs", center=0.0, scale=1.0)
def _neg_abs(dim: int, center: Any, scale: Any):
    """-scale |x - center|"""
    c = _as_vector(center, dim, "center")
    k = float(scale)

    def fn(t, x, a):
        return -k * np.sqrt(np.sum((x - c) ** 2, axis=1))

    def bound(box, actions):
        return abs(k) * float(np.max(np.linalg.norm(_corners(box) - c, axis=1)))

    return fn, bound, False


@CostCatalog.register("tanh", weights=1.0, scale=1.0)
def _tanh(dim: int, weights: Any, scale: Any):
    """scale tanh(w . x)"""
    w = _as_vector(weights, dim, "weights")
    k = float(scale)

    def fn(t, x, a):
        s = np.zeros(x.shape[0])
        for i in range(dim):
            s = s + w[i] * x[:, i]
        return k * np.tanh(s)

    return fn, (lambda box, actions: abs(k)), False


@CostCatalog.register("action_penalty", kappa=1.0)
def _action_penalty(dim: int, kappa: Any):
    """-kappa |a|^2"""
    k = float(kappa)

    def fn(t, x, a):
        return -k * np.sum(a**2, axis=1)

    def bound(box, actions: np.ndarray):
        if actions.size == 0:
            return 0.0
        return abs(k) * float(np.max(np.sum(actions**2, axis=1)))

    return fn, bound, True


def combined_bound(
    h: CostFunction, j: CostFunction, horizon: float, box: StateBox, actions: Sequence
) -> float:
    """|h|_inf T + |j|_inf, the a priori bound of any value function"""
    acts = np.atleast_2d(np.asarray(actions, dtype=float))
    return h.sup_norm(box, acts) * horizon + j.sup_norm(box, acts)
