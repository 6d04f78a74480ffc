"""Scalar activations built on a scaled arcsin, and the smoothed norm.

All three activations share the same first stage, (2/pi) * arcsin(x) with the
argument clamped to [-1, 1]. Inputs are cosine-like similarity values, so a
magnitude beyond 1 can only come from float rounding and clamping is the right
recovery. Non-finite inputs are rejected outright.
"""

from __future__ import annotations

import numpy as np

__all__ = ["asu", "rasu", "tasu", "smooth_norm", "DEFAULT_EPS"]

_TWO_OVER_PI = 2.0 / np.pi

#: default smoothing constant added under the square root of norms
DEFAULT_EPS = 1e-6


def _checked(x):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("activation input must be finite")
    return arr


def _scalar_like(x, out):
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return float(out)
    return out


def asu(x):
    """Arcsin unit: (2/pi) * arcsin(clamp(x, -1, 1)).

    Odd, monotone, and maps [-1, 1] onto [-1, 1]. Accepts scalars or arrays.
    """
    arr = _checked(x)
    out = _TWO_OVER_PI * np.arcsin(np.clip(arr, -1.0, 1.0))
    return _scalar_like(x, out)


def rasu(x):
    """Rectified arcsin unit: asu(x) for x >= 0, else 0."""
    arr = _checked(x)
    out = np.maximum(_TWO_OVER_PI * np.arcsin(np.clip(arr, -1.0, 1.0)), 0.0)
    return _scalar_like(x, out)


def tasu(x, kappa):
    """Tanh-sharpened arcsin unit: tanh(kappa * asu(x)).

    Large kappa approaches the sign function while staying smooth; output is in
    (-1, 1) except at |x| = 1 where it equals tanh(+-kappa).

    Args:
        x: similarity value(s) in [-1, 1] (clamped).
        kappa: sharpness, finite and > 0.
    """
    if not np.isfinite(kappa) or kappa <= 0:
        raise ValueError("kappa must be finite and positive")
    arr = _checked(x)
    out = np.tanh(kappa * _TWO_OVER_PI * np.arcsin(np.clip(arr, -1.0, 1.0)))
    return _scalar_like(x, out)


def smooth_norm(w, eps=DEFAULT_EPS, axis=None):
    """sqrt(sum(w^2) + eps): strictly positive for every input when eps > 0.

    With axis given, reduces along that axis and returns an array of norms
    (used for weight rows). eps defaults to DEFAULT_EPS.
    """
    arr = np.asarray(w, dtype=np.float64)
    out = np.sqrt(np.sum(arr * arr, axis=axis) + eps)
    if axis is None:
        return float(out)
    return out
