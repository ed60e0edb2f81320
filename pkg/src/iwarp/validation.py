"""Input validation helpers shared by the estimators and free functions."""

import numbers

import numpy as np

from .exceptions import EmptyCloud, InputError


def check_points(points, name="points", allow_empty=False):
    """Return ``points`` as a C-contiguous float64 ``(n, 3)`` array.

    Raises :class:`EmptyCloud` for an empty cloud (unless ``allow_empty``) and
    :class:`InputError` for wrong shapes or non-finite coordinates.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] == 0 and not allow_empty:
        raise EmptyCloud(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite coordinates")
    return np.ascontiguousarray(arr)


def check_vector(x, size, name):
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise InputError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def check_count(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise InputError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InputError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise InputError(f"{name} must be {bound}, got {value}")
    return value


def bbox_diagonal(points):
    points = np.asarray(points)
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
