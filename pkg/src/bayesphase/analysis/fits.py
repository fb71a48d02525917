"""Fringe fits: probe visibility, port-count visibility and parity oscillations."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..seeding import stream
from .calibration import FitError

__all__ = ["VisibilityFit", "ParityFit", "fit_visibility", "visibility_from_counts", "fit_parity"]

BOOTSTRAP_RESAMPLES = 200


class VisibilityFit(NamedTuple):
    visibility: float
    ci: float  # 95% bootstrap half-width
    rss: float


class ParityFit(NamedTuple):
    amplitude: float
    phase: float
    rss: float
    amplitude_ci: float
    phase_defined: bool


def _as_points(points, min_points):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("points must be a sequence of (phase, value) pairs")
    if len(arr) < min_points:
        raise FitError(f"need at least {min_points} points, got {len(arr)}")
    return arr[:, 0], arr[:, 1]


def _visibility_ls(phi, v):
    basis = -np.sin(phi)  # cos(pi/2 + phi)
    denom = float(np.dot(basis, basis))
    if denom == 0:
        return None
    return float(np.dot(basis, v) / denom)


def fit_visibility(points, resamples=BOOTSTRAP_RESAMPLES, seed=0):
    """Least-squares ``V0`` in ``v = V0 cos(pi/2 + phi)``.

    ``points`` holds ``(phi, v)`` pairs. The confidence value is the 95%
    half-width of ``resamples`` bootstrap refits.
    """
    phi, v = _as_points(points, 3)
    if not np.any(v):
        raise FitError("all visibilities are zero")
    V0 = _visibility_ls(phi, v)
    if V0 is None:
        raise FitError("phases carry no information (sin(phi) = 0 everywhere)")
    rss = float(np.sum((v + V0 * np.sin(phi)) ** 2))
    rng = stream(seed, "analysis", "fit_visibility")
    boot = []
    for _ in range(resamples):
        idx = rng.integers(0, len(phi), len(phi))
        b = _visibility_ls(phi[idx], v[idx])
        if b is not None:
            boot.append(b)
    ci = float((np.percentile(boot, 97.5) - np.percentile(boot, 2.5)) / 2) if boot else math.nan
    return VisibilityFit(V0, ci, rss)


def visibility_from_counts(c1, c2):
    """``(c1 - c2) / (c1 + c2)``."""
    total = c1 + c2
    if total <= 0:
        raise ValueError("total counts must be > 0")
    return (c1 - c2) / total


def _parity_ls(phi, p):
    A = np.column_stack([np.sin(2 * phi), np.cos(2 * phi)])
    coef, *_ = np.linalg.lstsq(A, p, rcond=None)
    a, b = coef
    return math.hypot(a, b), math.atan2(b, a)


def fit_parity(points, resamples=BOOTSTRAP_RESAMPLES, seed=0):
    """Fit ``P(phi) = A sin(2 phi + phi0)`` with ``A >= 0``.

    Linear least squares on the ``sin 2phi`` and ``cos 2phi`` components; a
    negative amplitude is folded into ``phi0``. When the data are all zero
    the amplitude is 0 and ``phase_defined`` is False.
    """
    phi, p = _as_points(points, 3)
    if np.ptp(phi) <= math.pi / 2:
        raise FitError("phases must span more than pi/2")
    A, phi0 = _parity_ls(phi, p)
    defined = A > 1e-12
    if not defined:
        A, phi0 = 0.0, 0.0
    rss = float(np.sum((p - A * np.sin(2 * phi + phi0)) ** 2))
    rng = stream(seed, "analysis", "fit_parity")
    boot = []
    for _ in range(resamples):
        idx = rng.integers(0, len(phi), len(phi))
        if np.ptp(phi[idx]) > 0:
            boot.append(_parity_ls(phi[idx], p[idx])[0])
    ci = float((np.percentile(boot, 97.5) - np.percentile(boot, 2.5)) / 2) if boot else math.nan
    return ParityFit(float(A), float(phi0), rss, ci, bool(defined))
