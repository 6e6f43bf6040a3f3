"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np

MIN_SIDE = 8


def check_frame(frame, name="frame", bounded=True):
    """Return ``frame`` as a C-contiguous float64 2-D array.

    Raises ``ValueError`` for anything that is not a finite 2-D image of at
    least 8x8 pixels, or (when ``bounded``) has values outside [0, 1].
    """
    arr = np.ascontiguousarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise ValueError(f"{name} must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if bounded and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a, b, what="inputs"):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch between {what}: {a.shape} vs {b.shape}")


def check_flow(flow, name="flow"):
    arr = np.asarray(flow, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"{name} must have shape (H, W, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_flow_stack(flows, min_count=1):
    """Stack a sequence of flow fields into an (S, H, W, 2) array."""
    if isinstance(flows, np.ndarray) and flows.ndim == 4:
        stack = np.asarray(flows, dtype=np.float64)
    else:
        flows = list(flows)
        if not flows:
            stack = np.empty((0, 0, 0, 2))
        else:
            first = check_flow(flows[0])
            for f in flows[1:]:
                if np.shape(f) != first.shape:
                    raise ValueError("all flow fields must share dimensions")
            stack = np.stack([np.asarray(f, dtype=np.float64) for f in flows])
    if stack.shape[0] < min_count:
        raise ValueError(f"need at least {min_count} flow fields, got {stack.shape[0]}")
    if stack.shape[-1] != 2:
        raise ValueError(f"flow fields must end in a (dx, dy) axis, got {stack.shape}")
    return stack


def check_sequence(seq, name="sequence"):
    """A feature sequence: finite float64 array of shape (S, D) with S >= 1."""
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (steps, features), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_labels(labels, n_steps, name="labels"):
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if arr.shape[0] != n_steps:
        raise ValueError(f"length mismatch: {arr.shape[0]} {name} for {n_steps} steps")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary")
    return arr.astype(np.int64)


def check_positive(value, name, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def check_odd(value, name, minimum=1):
    check_positive(value, name, integer=True)
    if value % 2 == 0 or value < minimum:
        raise ValueError(f"{name} must be an odd integer >= {minimum}, got {value}")
    return value
