from __future__ import annotations
from logging import Logger, getLogger
from typing import Any, Callable, ClassVar, Dict, Mapping, Optional, Tuple

import numpy as np
from attrs import define, field, evolve

from jdflow.errors import ConfigurationError
from jdflow.models.base import ConverterWrapper as CW

__all__ = (
    "CoefficientSet",
    "CoefficientCatalog",
    "StateBox",
)

# (t, x[n, d], a[n, l]) -> [n, d] or [n, d, m]
FieldFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
# (x[n, d], t, z[mark_dim], a[n, l]) -> [n, d]
JumpFn = Callable[[np.ndarray, float, np.ndarray, np.ndarray], np.ndarray]


@define(kw_only=True, frozen=True)
class StateBox:
    """Axis-aligned box [low, high] in state space."""

    low: Tuple[float, ...] = field(converter=CW.floats)
    high: Tuple[float, ...] = field(converter=CW.floats)

    def __attrs_post_init__(self) -> None:
        if len(self.low) != len(self.high):
            raise ConfigurationError(f"box bounds differ in length: {self.low} vs {self.high}")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ConfigurationError(f"degenerate box: {self.low} .. {self.high}")

    @classmethod
    def cube(cls, radius: float, dim: int) -> "StateBox":
        return cls(low=[-radius] * dim, high=[radius] * dim)

    @property
    def dim(self) -> int:
        return len(self.low)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.low, self.high)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return ((x >= self.low) & (x <= self.high)).all(axis=-1)


def _zero_field(t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


def _zero_jump(x: np.ndarray, t: float, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


@define(kw_only=True, frozen=True, eq=False)
class CoefficientSet:
    """Drift b, diffusion alpha, small-jump g and large-jump f of a
    (possibly controlled) jump-diffusion, vectorized over a batch of states.
    """

    state_dim: int = field(converter=int)
    brownian_dim: int = field(converter=int)
    mark_dim: int = field(converter=int)
    control_dim: int = field(default=0, converter=int)
    drift: FieldFn = field(default=_zero_field)
    diffusion: Optional[FieldFn] = field(default=None)
    small_jump: JumpFn = field(default=_zero_jump)
    large_jump: JumpFn = field(default=_zero_jump)
    declared_lipschitz: float = field(default=0.0, converter=float)
    declared_growth: float = field(default=0.0, converter=float)
    catalog_id: str = "custom"
    params: Tuple[Tuple[str, Tuple[float, ...]], ...] = ()
    # used by the integrator for optional clamping and by the probe as default box
    state_box: Optional[StateBox] = None
    large_jump_zero: bool = False
    small_jump_zero: bool = False

    def b(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self.drift(t, x, a)

    def alpha(self, t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.diffusion is None:
            return np.zeros((x.shape[0], self.state_dim, self.brownian_dim))
        return self.diffusion(t, x, a)

    def g(self, x: np.ndarray, t: float, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self.small_jump(x, t, z, a)

    def f(self, x: np.ndarray, t: float, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self.large_jump(x, t, z, a)

    @property
    def has_diffusion(self) -> bool:
        return self.diffusion is not None

    def without_large_jumps(self) -> "CoefficientSet":
        return evolve(self, large_jump=_zero_jump, large_jump_zero=True)

    def with_actions(self, n: int, a: Optional[np.ndarray] = None) -> np.ndarray:
        """Broadcast an action (or none) to a batch of n states, shape (n, l)."""
        if a is None:
            return np.zeros((n, self.control_dim))
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = np.broadcast_to(a, (n, a.shape[0]))
        return a


def _vector(value: Any, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ConfigurationError(f"{name} needs 1 or {dim} values, got {arr.size}")
    return arr


def _matrix(value: Any, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return float(arr[0]) * np.eye(rows, cols)
    if arr.size != rows * cols:
        raise ConfigurationError(f"{name} needs 1 or {rows * cols} values, got {arr.size}")
    return arr.reshape(rows, cols)


def _linear_map(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """rows of x mapped by mat, summed column by column so a row never
    depends on the batch it is evaluated in
    """
    out = x[:, 0:1] * mat[:, 0]
    for j in range(1, mat.shape[1]):
        out = out + x[:, j : j + 1] * mat[:, j]
    return out


def _constant_diffusion(sigma: np.ndarray) -> FieldFn:
    """alpha(t, x, a) = sigma for a (d, m) matrix"""

    def diffusion(t: float, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.broadcast_to(sigma, (x.shape[0],) + sigma.shape)

    return diffusion


def _control_to_state(a: np.ndarray, dim: int) -> np.ndarray:
    # l == d acts componentwise, l == 1 acts on every component
    if a.shape[1] == dim:
        return a
    return np.broadcast_to(a[:, :1], (a.shape[0], dim))


def _mark_to_state(z: np.ndarray, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] == dim:
        return z
    return np.full(dim, z[0])


class CoefficientCatalog:
    """Named coefficient families, built from a flat parameter table.

    >>> CoefficientCatalog.build("ornstein_uhlenbeck", {"theta": 1.0, "sigma": 0.5})
    """

    _logger: ClassVar[Logger] = getLogger("CoefficientCatalog")
    _entries: ClassVar[Dict[str, Callable[..., CoefficientSet]]] = {}
    DEFAULTS: ClassVar[Dict[str, Dict[str, Any]]] = {}

    @classmethod
    def register(cls, name: str, **defaults: Any) -> Callable:
        def decorator(builder: Callable[..., CoefficientSet]) -> Callable[..., CoefficientSet]:
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
        catalog_id: str,
        params: Optional[Mapping[str, Any]] = None,
        state_dim: int = 1,
        brownian_dim: int = 1,
        mark_dim: int = 1,
        control_dim: int = 0,
    ) -> CoefficientSet:
        if catalog_id not in cls._entries:
            raise ConfigurationError(
                f"unknown coefficient catalog id {catalog_id!r}, known: {', '.join(cls.names())}"
            )

        merged = dict(cls.DEFAULTS[catalog_id])
        for key, value in (params or {}).items():
            if key not in merged:
                raise ConfigurationError(f"{catalog_id!r} has no parameter {key!r}")
            merged[key] = value

        dims = dict(d=state_dim, m=brownian_dim, k=mark_dim, l=control_dim)
        coeffs = cls._entries[catalog_id](dims, **merged)
        snapshot = tuple(sorted((k, CW.floats(v)) for k, v in merged.items()))
        cls._logger.debug(f"built {catalog_id}: {snapshot}")
        return evolve(coeffs, catalog_id=catalog_id, params=snapshot)


def _dims(dims: Dict[str, int]) -> Dict[str, int]:
    return dict(
        state_dim=dims["d"],
        brownian_dim=dims["m"],
        mark_dim=dims["k"],
        control_dim=dims["l"],
    )


def _require_control(name: str, dims: Dict[str, int]) -> None:
    if dims["l"] < 1 or dims["l"] not in (1, dims["d"]):
        raise ConfigurationError(f"{name} needs control_dim 1 or {dims['d']}, got {dims['l']}")


@CoefficientCatalog.register("zero")
def _zero(dims: Dict[str, int]) -> CoefficientSet:
    return CoefficientSet(**_dims(dims), large_jump_zero=True, small_jump_zero=True)


@CoefficientCatalog.register("constant", drift=0.0, sigma=0.0)
def _constant(dims: Dict[str, int], drift: Any, sigma: Any) -> CoefficientSet:
    c = _vector(drift, dims["d"], "drift")
    sig = _matrix(sigma, dims["d"], dims["m"], "sigma")

    def b(t, x, a):
        return np.broadcast_to(c, x.shape).copy()

    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=_constant_diffusion(sig) if sig.any() else None,
        declared_lipschitz=0.0,
        declared_growth=float(np.linalg.norm(c) + np.linalg.norm(sig, 2)),
        large_jump_zero=True,
        small_jump_zero=True,
    )


@CoefficientCatalog.register("affine", A=0.0, B=0.0, c=0.0, sigma=0.0)
def _affine(dims: Dict[str, int], A: Any, B: Any, c: Any, sigma: Any) -> CoefficientSet:
    """b = A x + B a + c, alpha = sigma"""
    d, l = dims["d"], dims["l"]
    mat_a = _matrix(A, d, d, "A")
    mat_b = _matrix(B, d, l, "B") if l else np.zeros((d, 0))
    vec_c = _vector(c, d, "c")
    sig = _matrix(sigma, d, dims["m"], "sigma")

    def b(t, x, a):
        out = _linear_map(x, mat_a) + vec_c
        if l:
            out = out + _linear_map(a, mat_b)
        return out

    lip_x = float(np.linalg.norm(mat_a, 2))
    lip_a = float(np.linalg.norm(mat_b, 2)) if l else 0.0
    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=_constant_diffusion(sig) if sig.any() else None,
        declared_lipschitz=max(lip_x, lip_a),
        declared_growth=lip_x + lip_a + float(np.linalg.norm(vec_c) + np.linalg.norm(sig, 2)),
        large_jump_zero=True,
        small_jump_zero=True,
    )


@CoefficientCatalog.register("ornstein_uhlenbeck", theta=1.0, mu=0.0, sigma=1.0)
def _ornstein_uhlenbeck(dims: Dict[str, int], theta: Any, mu: Any, sigma: Any) -> CoefficientSet:
    """b = theta (mu - x), alpha = sigma"""
    th = float(theta)
    mean = _vector(mu, dims["d"], "mu")
    sig = _matrix(sigma, dims["d"], dims["m"], "sigma")

    def b(t, x, a):
        return th * (mean - x)

    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=_constant_diffusion(sig) if sig.any() else None,
        declared_lipschitz=abs(th),
        declared_growth=abs(th) * (1.0 + float(np.linalg.norm(mean))) + float(np.linalg.norm(sig, 2)),
        large_jump_zero=True,
        small_jump_zero=True,
    )


@CoefficientCatalog.register("controlled_drift", gain=1.0, sigma=0.0)
def _controlled_drift(dims: Dict[str, int], gain: Any, sigma: Any) -> CoefficientSet:
    """b = gain * a, alpha = sigma"""
    _require_control("controlled_drift", dims)
    k = float(gain)
    d = dims["d"]
    sig = _matrix(sigma, d, dims["m"], "sigma")

    def b(t, x, a):
        return k * _control_to_state(a, d)

    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=_constant_diffusion(sig) if sig.any() else None,
        declared_lipschitz=abs(k),
        declared_growth=abs(k) + float(np.linalg.norm(sig, 2)),
        large_jump_zero=True,
        small_jump_zero=True,
    )


@CoefficientCatalog.register("geometric", mu=0.05, sigma=0.2, low=-10.0, high=10.0)
def _geometric(dims: Dict[str, int], mu: Any, sigma: Any, low: Any, high: Any) -> CoefficientSet:
    """b = mu x, alpha = sigma diag(x), with x clamped to the state box"""
    d, m = dims["d"], dims["m"]
    drift_rate = float(mu)
    vol = float(sigma)
    box = StateBox(low=_vector(low, d, "low"), high=_vector(high, d, "high"))
    diag = np.eye(d, m)

    def b(t, x, a):
        return drift_rate * box.clip(x)

    def alpha(t, x, a):
        return vol * box.clip(x)[:, :, np.newaxis] * diag

    bound = float(np.max(np.abs(np.concatenate([box.low, box.high]))))
    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=alpha if vol else None,
        declared_lipschitz=max(abs(drift_rate), abs(vol)),
        declared_growth=max(abs(drift_rate), abs(vol)) * (1.0 + bound),
        state_box=box,
        large_jump_zero=True,
        small_jump_zero=True,
    )


@CoefficientCatalog.register(
    "jump_linear",
    theta=0.0,
    drift_gain=0.0,
    sigma=0.0,
    gamma=0.0,
    small_gain=0.0,
    large_gain=1.0,
)
def _jump_linear(
    dims: Dict[str, int],
    theta: Any,
    drift_gain: Any,
    sigma: Any,
    gamma: Any,
    small_gain: Any,
    large_gain: Any,
) -> CoefficientSet:
    """b = -theta x + drift_gain a, alpha = sigma,
    g = gamma x mean(z) + small_gain z, f = large_gain z
    """
    d, k = dims["d"], dims["k"]
    if k not in (1, d):
        raise ConfigurationError(f"jump_linear needs mark_dim 1 or {d}, got {k}")
    th, kd, gm, ks, kl = (float(v) for v in (theta, drift_gain, gamma, small_gain, large_gain))
    if kd:
        _require_control("jump_linear", dims)
    sig = _matrix(sigma, d, dims["m"], "sigma")

    def b(t, x, a):
        out = -th * x
        if kd:
            out = out + kd * _control_to_state(a, d)
        return out

    def g(x, t, z, a):
        zz = _mark_to_state(z, d)
        return gm * float(np.mean(z)) * x + ks * zz

    def f(x, t, z, a):
        return np.broadcast_to(kl * _mark_to_state(z, d), x.shape).copy()

    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=_constant_diffusion(sig) if sig.any() else None,
        small_jump=g,
        large_jump=f,
        declared_lipschitz=max(abs(th), abs(kd), abs(gm)),
        declared_growth=abs(th) + abs(kd) + abs(gm) + abs(ks) + float(np.linalg.norm(sig, 2)),
        large_jump_zero=kl == 0.0,
        small_jump_zero=gm == 0.0 and ks == 0.0,
    )


@CoefficientCatalog.register("bilinear", kappa=1.0, sigma=0.0, action_bound=1.0)
def _bilinear(dims: Dict[str, int], kappa: Any, sigma: Any, action_bound: Any) -> CoefficientSet:
    """b = kappa a * x (componentwise), alpha = sigma"""
    _require_control("bilinear", dims)
    d = dims["d"]
    kap = float(kappa)
    sig = _matrix(sigma, d, dims["m"], "sigma")

    def b(t, x, a):
        return kap * _control_to_state(a, d) * x

    lip = abs(kap) * float(action_bound)
    return CoefficientSet(
        **_dims(dims),
        drift=b,
        diffusion=_constant_diffusion(sig) if sig.any() else None,
        declared_lipschitz=lip,
        declared_growth=lip + float(np.linalg.norm(sig, 2)),
        large_jump_zero=True,
        small_jump_zero=True,
    )
