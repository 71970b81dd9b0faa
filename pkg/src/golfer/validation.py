"""Input validation helpers used by the estimators and loaders."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


def require(condition: bool, message: str, *, doc_id: str | None = None, rule: str | None = None) -> None:
    if not condition:
        raise ValidationError(message, doc_id=doc_id, rule=rule)


def check_finite(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}", rule="finite")
    return value


def check_probability(value: float, name: str = "probability") -> float:
    """A generation probability: finite and in (0, 1]."""
    value = check_finite(value, name)
    if not 0.0 < value <= 1.0:
        raise ValidationError(f"{name} must lie in (0, 1], got {value!r}", rule="probability-range")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = check_finite(value, name)
    if value < 0.0:
        raise ValidationError(f"{name} must be >= 0, got {value!r}", rule="nonnegative")
    return value


def as_float_vector(values: Sequence[float] | np.ndarray, name: str = "vector") -> np.ndarray:
    """Coerce to a read-only 1-D float64 array with finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}", rule="vector-shape")
    if arr.size == 0:
        raise ValidationError(f"{name} must be nonempty", rule="vector-shape")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries", rule="finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def check_choice(value: str, allowed: Iterable[str], name: str) -> str:
    allowed = tuple(allowed)
    if value not in allowed:
        raise ValidationError(f"{name} must be one of {allowed}, got {value!r}", rule="choice")
    return value
