"""Unit helpers.

Internal time unit is the microsecond. Frequencies are quoted in Hz and
angles in degrees only at the edges (configs, presets, reports).
"""

import math

import numpy as np

US_PER_S = 1e6


def hz_to_per_us(f_hz):
    """Convert a frequency in Hz to cycles per microsecond."""
    return f_hz / US_PER_S


def per_us_to_hz(f_per_us):
    return f_per_us * US_PER_S


def deg(x_rad):
    return x_rad * 180.0 / math.pi


def rad(x_deg):
    return x_deg * math.pi / 180.0


def wrap(x):
    """Wrap angle(s) into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    # mod maps +pi to -pi; keep the half-open interval closed on the right
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if np.ndim(y) == 0 else y
