"""Two-port interferometer counting model and its information bounds.

Mean counts at the two output ports over a window ``tau`` are
``lambda_{1,2} = N/2 (1 +/- V0 cos(phi))`` with ``N = flux * tau``. Dark
counts are added to the sampled counts but not to the analytic bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MeasurementConfig",
    "PortCounts",
    "mean_counts",
    "sample_counts",
    "fisher_info",
    "avg_fisher",
    "effective_visibility",
    "conv_variance_bound",
    "tracking_snl",
    "prior_fisher",
    "bayes_variance_bound",
]

# Dark-count presets in counts/us per detector.
DARK_RATE_WDM = 50e-6
DARK_RATE_HERALD = 1e-6


@dataclass(frozen=True)
class MeasurementConfig:
    flux: float  # photons / us
    window: float  # us
    visibility: float = 1.0
    dark_rate: float = 0.0  # counts / us per detector

    def __post_init__(self):
        if self.flux < 0:
            raise ValueError("flux must be >= 0")
        if not self.window > 0:
            raise ValueError("window must be > 0")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility}")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")

    @property
    def mean_photons(self):
        return self.flux * self.window

    @property
    def strength(self):
        """Measurement strength Gamma = flux * V0^2 (1/us)."""
        return self.flux * self.visibility**2

    def with_window(self, window):
        return MeasurementConfig(self.flux, window, self.visibility, self.dark_rate)

    def to_dict(self):
        return {"flux": self.flux, "window": self.window, "visibility": self.visibility,
                "dark_rate": self.dark_rate}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class PortCounts:
    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 0 or self.n2 < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self):
        return self.n1 + self.n2


def mean_counts(phi, cfg):
    N = cfg.mean_photons
    dark = cfg.dark_rate * cfg.window
    c = cfg.visibility * np.cos(phi)
    return N / 2 * (1 + c) + dark, N / 2 * (1 - c) + dark


def sample_counts(phi, cfg, rng):
    """Independent Poisson draws at the two ports."""
    lam1, lam2 = mean_counts(phi, cfg)
    n1, n2 = rng.poisson([lam1, lam2])
    return PortCounts(int(n1), int(n2))


def fisher_info(phi, cfg):
    """Classical Fisher information of one window (rad^-2), dark counts excluded.

    At ``V0 = 1`` and ``sin(phi) = 0`` the expression is 0/0; the continuous
    extension ``N`` is returned there.
    """
    N = cfg.mean_photons
    V = cfg.visibility
    s2 = math.sin(phi) ** 2
    denom = 1.0 - V * V * math.cos(phi) ** 2
    if denom <= 1e-300:
        return N
    return N * V * V * s2 / denom


def is_degenerate(phi, cfg):
    return cfg.visibility == 1.0 and abs(math.sin(phi)) < 1e-12


def avg_fisher(cfg, D):
    """Average information per window under diffusion, ``mu V0^2 tau e^{-D tau}``."""
    if D < 0:
        raise ValueError("D must be >= 0")
    return cfg.strength * cfg.window * math.exp(-D * cfg.window)


def effective_visibility(V0, D, tau):
    return V0 * np.exp(-D * np.asarray(tau, dtype=float) / 2)


def conv_variance_bound(cfg, D):
    """Variance floor of window-by-window estimation: shot noise plus lag diffusion."""
    tau = cfg.window
    return math.exp(D * tau) / (cfg.strength * tau) + D * tau


def tracking_snl(D, flux, V0, eta=1.0):
    """Shot-noise limit for tracking a diffusing phase, ``sqrt(D / (eta mu V0^2))``."""
    if not (D > 0 and flux > 0 and V0 > 0 and eta > 0):
        raise ValueError("all arguments must be positive")
    return math.sqrt(D / (eta * flux * V0**2))


def prior_fisher(cfg, D, eta=1.0):
    """Information carried by the stabilised prior, ``1 / (D tau + sigma_inf^2)``."""
    snl = tracking_snl(D, cfg.flux, cfg.visibility, eta) if D > 0 else 0.0
    denom = D * cfg.window + snl
    return math.inf if denom == 0 else 1.0 / denom


def bayes_variance_bound(cfg, D, eta=1.0):
    """Variance floor with prior assistance: ``1 / (I_prior + I_avg) + D tau``.

    For ``D = 0`` the prior is perfect and the bound is 0.
    """
    return 1.0 / (prior_fisher(cfg, D, eta) + avg_fisher(cfg, D)) + D * cfg.window
