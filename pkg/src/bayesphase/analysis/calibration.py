"""Increment statistics of phase records and power-law diffusion fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "FitError",
    "DiffusionFit",
    "increment_std",
    "increment_std_ci",
    "allan_deviation",
    "calibrate_diffusion",
]


class FitError(ValueError):
    """A fit could not be carried out on the given data."""


@dataclass(frozen=True)
class DiffusionFit:
    exponent: float
    coeff: float  # rad / us^exponent
    r_squared: float
    tau_range: tuple
    taus: tuple = ()
    stds: tuple = ()
    rss: float = 0.0

    @property
    def diffusion_coeff(self):
        """``coeff**2``, the value a :class:`NoiseModel` takes."""
        return self.coeff**2

    def sigma(self, tau):
        """Fitted increment std at ``tau``; the prior width handed to the filter."""
        return self.coeff * np.asarray(tau, dtype=float) ** self.exponent

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "coeff_rad": self.coeff,
            "coeff_deg": math.degrees(self.coeff),
            "r_squared": self.r_squared,
            "tau_range_us": list(self.tau_range),
            "taus_us": list(self.taus),
            "stds_rad": list(self.stds),
            "rss": self.rss,
        }


def _lag(step, tau, n):
    k = int(round(tau / step))
    if k < 1:
        raise FitError(f"tau={tau} is shorter than the sample step {step}")
    if k >= n:
        raise FitError(f"tau={tau} exceeds the record length")
    return k


def increment_std(samples, step, tau):
    """Standard deviation of ``phi(t + tau) - phi(t)`` over all overlapping windows.

    Overlapping windows average over start times; disjoint windows would
    sample a tone whose period is commensurate with ``tau`` at a single
    fixed phase and return a start-phase-dependent value.
    """
    x = np.asarray(samples, dtype=float)
    k = _lag(step, tau, len(x))
    if len(x) - k < 2 * k:
        raise FitError(f"record holds fewer than two independent windows at tau={tau}")
    return float(np.std(x[k:] - x[:-k]))


def increment_std_ci(samples, step, tau, level=0.95):
    """Point estimate plus a confidence interval for the increment std.

    Both use all overlapping windows. The interval takes its chi-square
    degrees of freedom from the effective sample size ``(n - k) / k``, since
    overlapping increments are correlated.
    """
    x = np.asarray(samples, dtype=float)
    k = _lag(step, tau, len(x))
    point = increment_std(x, step, tau)
    over = x[k:] - x[:-k]
    s = float(np.std(over))
    n_eff = max(2.0, (len(x) - k) / k)
    dof = n_eff - 1
    lo = s * math.sqrt(dof / stats.chi2.ppf(0.5 + level / 2, dof))
    hi = s * math.sqrt(dof / stats.chi2.ppf(0.5 - level / 2, dof))
    return point, lo, hi


def allan_deviation(samples, step, tau):
    """Allan-type deviation: rms change between adjacent ``tau`` averages, over sqrt(2)."""
    x = np.asarray(samples, dtype=float)
    k = _lag(step, tau, len(x))
    m = len(x) // k
    if m < 2:
        raise FitError(f"need two full averaging windows at tau={tau}")
    means = x[: m * k].reshape(m, k).mean(axis=1)
    return float(math.sqrt(0.5 * np.mean(np.diff(means) ** 2)))


def calibrate_diffusion(traj, taus):
    """Fit ``std(tau) = coeff * tau**p`` by least squares on log-log axes.

    ``traj`` is a :class:`~bayesphase.noisegen.PhaseTrajectory` (or any
    object with ``samples`` and ``step_size``). Raises :class:`FitError` for
    fewer than four distinct taus, taus outside the record, or a zero std.
    """
    taus = sorted(set(float(t) for t in taus))
    if len(taus) < 4:
        raise FitError("need at least 4 distinct taus")
    x = np.asarray(traj.samples, dtype=float)
    step = float(traj.step_size)
    stds = np.array([increment_std(x, step, t) for t in taus])
    if np.any(stds <= 0) or not np.all(np.isfinite(stds)):
        raise FitError("increment std is zero or not finite: nothing to fit")
    lx, ly = np.log(taus), np.log(stds)
    slope, icpt = np.polyfit(lx, ly, 1)
    pred = slope * lx + icpt
    rss = float(np.sum((ly - pred) ** 2))
    tss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    return DiffusionFit(float(slope), float(math.exp(icpt)), r2, (taus[0], taus[-1]),
                        tuple(taus), tuple(float(s) for s in stds), rss)
