import numbers
from typing import Sequence, Tuple

import numpy as np


def validate_positive(value: float, name: str, allow_zero: bool = False) -> float:
    """
    Returns the value as float if it is positive (or zero when allowed),
    otherwise raises ValueError.
    """
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return float(value)


def validate_int_at_least(value: int, minimum: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def validate_finite_array(values, name: str, ndim: int = None) -> np.ndarray:
    """Converts to an ndarray and rejects NaN/inf entries."""
    arr = np.asarray(values)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def validate_mps_tensor(A) -> Tuple[np.ndarray, int, int]:
    """
    Checks that A has the (d, chi, chi) layout of a uniform MPS tensor.

    Returns the complex array together with d and chi.
    """
    arr = validate_finite_array(A, "A", ndim=3).astype(np.complex128, copy=False)
    d, chi_left, chi_right = arr.shape
    if chi_left != chi_right:
        raise ValueError(f"MPS tensor must be square in the bond indices, got {arr.shape}")
    if d < 1 or chi_left < 1:
        raise ValueError(f"MPS tensor has an empty dimension: {arr.shape}")
    return arr, d, chi_left


def validate_operator(op, d: int, name: str = "op") -> np.ndarray:
    arr = np.asarray(op)
    if arr.shape != (d, d):
        raise ValueError(f"{name} must have shape ({d}, {d}), got {arr.shape}")
    return arr


def validate_same_length(a: Sequence, b: Sequence, names: Tuple[str, str]) -> None:
    if len(a) != len(b):
        raise ValueError(f"{names[0]} and {names[1]} must have equal length "
                         f"({len(a)} != {len(b)})")
