"""Small input-validation helpers shared across modules."""

import math

import numpy as np


def as_vector(value, size=3, name="value"):
    """Return ``value`` as a finite float array of shape ``(size,)``."""
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def check_finite(value, name="value"):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def wrap_angle(angle):
    """Wrap angle(s) in radians to the half-open interval (-pi, pi]."""
    angle = np.asarray(angle, dtype=float)
    # values already in range pass through untouched, keeping them bit-exact
    inside = (angle > -np.pi) & (angle <= np.pi)
    wrapped = np.where(inside, angle, np.pi - np.mod(np.pi - angle, 2.0 * np.pi))
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped
