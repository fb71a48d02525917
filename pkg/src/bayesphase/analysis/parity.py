"""Parity-contrast error budget for heralded two-node entanglement."""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["bessel_j0", "ParityBudget", "parity_contrast", "J0_FIRST_ZERO", "SERIES_LIMIT"]

J0_FIRST_ZERO = 2.404825557695773
SERIES_LIMIT = 12.0  # |x| below this uses the power series


def _j0_series(x):
    q = -(x * x) / 4.0
    term = 1.0
    terms = [term]
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        terms.append(term)
        if abs(term) < 1e-18 and k > 2:
            break
    return math.fsum(terms)


def _j0_asymptotic(x):
    # Hankel expansion; the terms are summed until they stop shrinking.
    p_terms, q_terms = [], []
    a = 1.0
    prev = math.inf
    k = 0
    while True:
        mag = abs(a) / x**k
        if mag > prev or mag < 1e-17:
            break
        prev = mag
        val = a / x**k
        if k % 2 == 0:
            p_terms.append(val * (-1) ** (k // 2))
        else:
            q_terms.append(val * (-1) ** (k // 2))
        k += 1
        a *= -((2 * k - 1) ** 2) / (k * 8.0)
    chi = x - math.pi / 4
    P, Q = math.fsum(p_terms), math.fsum(q_terms)
    return math.sqrt(2.0 / (math.pi * x)) * (P * math.cos(chi) - Q * math.sin(chi))


def bessel_j0(x):
    """Bessel function of the first kind, order zero.

    Power series below ``SERIES_LIMIT``, Hankel asymptotic expansion above.
    """
    x = abs(float(x))
    if x < SERIES_LIMIT:
        return _j0_series(x)
    return _j0_asymptotic(x)


@dataclass(frozen=True)
class ParityBudget:
    """Error sources that reduce the parity fringe amplitude.

    ``phase_stab`` is the residual phase variance (rad^2). ``motion`` holds
    ``(k*A_m, k*sigma)``: the wave-vector-scaled micromotion amplitude and
    the radial motional spread. ``snr`` is the heralding signal-to-noise
    ratio; ``inf`` means no false heralds.
    """

    phase_stab: float = 0.0
    motion: tuple = (0.0, 0.0)
    excitation_alpha: float = 0.0
    manipulation_err: float = 0.0
    decoherence_err: float = 0.0
    snr: float = math.inf

    def __post_init__(self):
        kA, ks = self.motion
        vals = (self.phase_stab, kA, ks, self.manipulation_err, self.decoherence_err, self.snr)
        if any(v < 0 for v in vals):
            raise ValueError("budget entries must be non-negative")
        if not 0 <= self.excitation_alpha <= 1:
            raise ValueError("excitation_alpha must lie in [0, 1]")
        if self.manipulation_err > 1 or self.decoherence_err > 1:
            raise ValueError("error fractions must not exceed 1")

    @classmethod
    def from_error_fractions(cls, phase=0.0, motion=0.0, alpha=0.0, manipulation=0.0,
                             decoherence=0.0, link=0.0):
        """Build a budget from fractional contrast losses.

        The phase loss sets ``sigma^2 = -2 ln(1 - phase)``; the motion loss is
        carried entirely by the radial spread, ``k sigma = sqrt(-ln(1 - motion) / 2)``;
        the link loss fixes ``snr = 1/link - 1``.
        """
        sig2 = -2.0 * math.log1p(-phase)
        ks = math.sqrt(-math.log1p(-motion) / 2.0)
        snr = math.inf if link == 0 else 1.0 / link - 1.0
        return cls(sig2, (0.0, ks), alpha, manipulation, decoherence, snr)


def parity_contrast(budget, V0=1.0, alpha_penalty="linear"):
    """Multiplicative contrast model.

    ``V0 * exp(-sigma^2/2) * J0(2 k A_m) * exp(-2 (k sigma)^2) * a(alpha)
    * (1 - manipulation) * (1 - decoherence) * (1 - 1/(snr + 1))`` with
    ``a(alpha) = 1 - alpha`` for ``alpha_penalty="linear"`` and 1 for
    ``"none"``.
    """
    if alpha_penalty == "linear":
        a = 1.0 - budget.excitation_alpha
    elif alpha_penalty == "none":
        a = 1.0
    else:
        raise ValueError("alpha_penalty must be 'linear' or 'none'")
    kA, ks = budget.motion
    link = 1.0 if math.isinf(budget.snr) else 1.0 - 1.0 / (budget.snr + 1.0)
    return (V0 * math.exp(-budget.phase_stab / 2) * bessel_j0(2 * kA) * math.exp(-2 * ks * ks)
            * a * (1 - budget.manipulation_err) * (1 - budget.decoherence_err) * link)
