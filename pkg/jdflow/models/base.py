from enum import Enum
from typing import Generic, Iterator, List, Tuple, TypeVar, Callable, Type, Any

import numpy as np
from pydantic import BaseModel, Extra

__all__ = (
    "_BaseModel",
    "_RootListMixin",
    "ConverterWrapper",
    "to_plain",
)

_VT = TypeVar("_VT")
_ITEM_T = TypeVar("_ITEM_T")


class ConverterWrapper:
    """attrs converters shared by the frozen domain models."""

    @staticmethod
    def norm(
        converter: Callable | Type[_ITEM_T],
        klass: Type[_ITEM_T] = None,
    ) -> Callable[[Any], _ITEM_T]:
        """Make a converter skip values that are already converted."""

        def wrapped(value: Any) -> _ITEM_T:
            _klass = klass or converter
            if isinstance(value, _klass):
                return value

            return converter(value)

        return wrapped

    @staticmethod
    def floats(value: Any) -> Tuple[float, ...]:
        """Scalar or iterable to a tuple of python floats (hashable)."""
        return tuple(float(v) for v in np.atleast_1d(np.asarray(value, dtype=float)))

    @staticmethod
    def frozen_array(ndim: int = 1, dtype=float) -> Callable[[Any], np.ndarray]:
        """Read-only numpy array with at least `ndim` dimensions."""

        def wrapped(value: Any) -> np.ndarray:
            arr = np.array(value, dtype=dtype)
            while arr.ndim < ndim:
                arr = arr[np.newaxis]
            arr.setflags(write=False)
            return arr

        return wrapped


class _BaseModel(BaseModel):
    def dict(self, *args, **kwargs):
        kwargs["exclude_none"] = kwargs.get("exclude_none", True)
        kwargs["by_alias"] = kwargs.get("by_alias", True)
        return super().dict(*args, **kwargs)

    class Config:
        extra = Extra.forbid
        validate_assignment = True


class _RootListMixin(Generic[_VT]):
    """List behaviour for attrs models holding their items in `records`."""

    records: List[_VT]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[_VT]:
        return iter(self.records)

    def __getitem__(self, index: int) -> _VT:
        return self.records[index]

    def append(self, value: _VT) -> None:
        self.records.append(value)


def to_plain(value: Any) -> Any:
    """numpy scalars, arrays and tuples to JSON-ready python values"""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Enum):
        return value.value
    return value
