"""Stochastic phase trajectories and their analytic descriptors.

Three process families are supported:

* Wiener diffusion, ``Var[phi(t + tau) - phi(t)] = D * tau``;
* a white (Wiener) floor plus a set of discrete sinusoidal tones;
* a power law ``std(tau) = sqrt(D) * tau**p`` with ``0.5 < p <= 1``, realised
  as a white floor plus a small tone bank whose amplitudes are solved by
  non-negative least squares against the target curve over a declared
  ``tau`` window (see :func:`synthesize_tone_bank`).

Time is in microseconds, tone frequencies in Hz, phases in radians. For the
power-law family ``diffusion_coeff`` carries ``coeff**2`` in rad^2/us^(2p),
so ``p = 0.5`` reduces to the ordinary diffusion coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .seeding import stream
from .units import hz_to_per_us

__all__ = [
    "Tone",
    "NoiseModel",
    "PhaseTrajectory",
    "generate_wiener",
    "generate_composite",
    "tone_response",
    "tone_slope",
    "tone_increment_variance",
    "increment_variance",
    "synthesize_tone_bank",
    "DEFAULT_TAU_WINDOW",
    "DEFAULT_TONE_BAND",
]

DEFAULT_TAU_WINDOW = (10.0, 1.0e4)  # us
DEFAULT_TONE_BAND = (None, 200.0)  # Hz; None -> 1 / (2 * tau_hi)
DEFAULT_BANK_SIZE = 5


@dataclass(frozen=True)
class Tone:
    frequency: float  # Hz
    amplitude: float  # rad

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"tone frequency must be > 0, got {self.frequency}")
        if self.amplitude < 0:
            raise ValueError(f"tone amplitude must be >= 0, got {self.amplitude}")


@dataclass(frozen=True)
class NoiseModel:
    diffusion_coeff: float = 0.0
    exponent: float = 0.5
    tones: tuple = ()
    white_background: float = 0.0

    def __post_init__(self):
        if self.diffusion_coeff < 0:
            raise ValueError("diffusion_coeff must be >= 0")
        if not 0.5 <= self.exponent <= 1.0:
            raise ValueError(f"exponent must lie in [0.5, 1.0], got {self.exponent}")
        if self.white_background < 0:
            raise ValueError("white_background must be >= 0")
        tones = tuple(t if isinstance(t, Tone) else Tone(*t) for t in self.tones)
        object.__setattr__(self, "tones", tones)

    @property
    def is_wiener(self):
        return not self.tones and self.exponent == 0.5

    @property
    def needs_bank(self):
        """True when the exponent must be realised by a synthesised tone bank."""
        return not self.tones and self.exponent > 0.5

    def white_level(self):
        """Diffusion coefficient of the Wiener floor (rad^2/us)."""
        if self.white_background > 0:
            return self.white_background
        if self.exponent == 0.5:
            return self.diffusion_coeff
        return 0.0

    @property
    def coeff(self):
        """Power-law prefactor sqrt(D) in rad/us^p."""
        return math.sqrt(self.diffusion_coeff)

    def target_std(self, tau):
        """Nominal std of increments, ``sqrt(D) * tau**p``."""
        return self.coeff * np.asarray(tau, dtype=float) ** self.exponent

    def to_dict(self):
        return {
            "diffusion_coeff": self.diffusion_coeff,
            "exponent": self.exponent,
            "tones": [{"frequency": t.frequency, "amplitude": t.amplitude} for t in self.tones],
            "white_background": self.white_background,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["tones"] = tuple(Tone(**t) if isinstance(t, dict) else Tone(*t) for t in d.get("tones", ()))
        return cls(**d)


@dataclass(frozen=True)
class PhaseTrajectory:
    """Unwrapped phase samples on a uniform grid starting at t = 0."""

    step_size: float
    samples: np.ndarray
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if len(self.samples) == 0:
            raise ValueError("trajectory must be non-empty")

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.step_size

    def __len__(self):
        return len(self.samples)


def _check_grid(step_size, steps):
    if not step_size > 0:
        raise ValueError(f"step_size must be > 0, got {step_size}")
    if int(steps) < 1 or int(steps) != steps:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    return int(steps)


def _wiener_samples(D, seed, step_size, steps):
    rng = stream(seed, "noisegen", "white")
    out = np.zeros(steps + 1)
    if D > 0:
        np.cumsum(rng.standard_normal(steps) * math.sqrt(D * step_size), out=out[1:])
    return out


def generate_wiener(model, seed, step_size, steps):
    """Random-walk phase with Gaussian increments N(0, D * step_size)."""
    steps = _check_grid(step_size, steps)
    if not model.is_wiener:
        raise ValueError("generate_wiener needs a model without tones and exponent 0.5")
    samples = _wiener_samples(model.diffusion_coeff, seed, step_size, steps)
    return PhaseTrajectory(step_size, samples, int(seed), {"kind": "wiener", "white": model.diffusion_coeff})


def tone_response(amplitude, frequency, tau):
    """Phase deviation produced by a single tone over an interval ``tau``.

    ``A sin^2(pi f tau) / (pi f tau)`` with ``f`` in Hz and ``tau`` in us. This
    is the Allan-type deviation of the tone: the rms change between adjacent
    ``tau``-averaged phase readings, with the usual factor 1/2 on the variance
    (see :func:`bayesphase.analysis.allan_deviation`).
    """
    if not frequency > 0:
        raise ValueError("frequency must be > 0")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be > 0")
    x = math.pi * hz_to_per_us(frequency) * tau
    out = amplitude * np.sin(x) ** 2 / x
    return float(out) if out.ndim == 0 else out


def tone_slope(frequency, tau):
    """Log-log slope of :func:`tone_response`, ``2 pi f tau cot(pi f tau) - 1``."""
    if not frequency > 0:
        raise ValueError("frequency must be > 0")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be > 0")
    x = math.pi * hz_to_per_us(frequency) * tau
    s = np.sin(x)
    if np.any(np.abs(s) < 1e-9):
        raise ValueError("f * tau too close to an integer: slope has a pole there")
    out = 2 * x * np.cos(x) / s - 1
    return float(out) if out.ndim == 0 else out


def tone_increment_variance(amplitude, frequency, tau):
    """Variance of ``phi(t + tau) - phi(t)`` for a tone with uniform random phase."""
    x = math.pi * hz_to_per_us(frequency) * np.asarray(tau, dtype=float)
    return 2.0 * amplitude**2 * np.sin(x) ** 2


def increment_variance(model, tau, tones=None, white=None):
    """Analytic variance of raw increments over ``tau`` (us).

    Uses the explicit tones when present; for a bare power law it returns the
    target ``D * tau**(2p)``. ``tones``/``white`` override the model's own
    (used for a synthesised bank).
    """
    tau = np.asarray(tau, dtype=float)
    if tones is None and model.needs_bank:
        return model.diffusion_coeff * tau ** (2 * model.exponent)
    tones = model.tones if tones is None else tones
    white = model.white_level() if white is None else white
    var = white * tau
    for t in tones:
        var = var + tone_increment_variance(t.amplitude, t.frequency, tau)
    return var


def synthesize_tone_bank(
    coeff,
    exponent,
    tau_window=DEFAULT_TAU_WINDOW,
    n_tones=DEFAULT_BANK_SIZE,
    band=DEFAULT_TONE_BAND,
    fixed_white=0.0,
    n_points=60,
):
    """Solve for a white floor and tone amplitudes that mimic ``coeff * tau**p``.

    Tone frequencies are fixed on a geometric grid across ``band`` (Hz); the
    white level and squared amplitudes are non-negative least-squares
    solutions on relative error over ``n_points`` log-spaced ``tau`` in
    ``tau_window``. With ``fixed_white > 0`` the floor is held at that value
    and only the tones are fitted.

    Returns ``(white, tones, info)`` where ``info`` records the fit.
    """
    lo, hi = tau_window
    if not 0 < lo < hi:
        raise ValueError("tau_window must satisfy 0 < lo < hi")
    if not 1 <= n_tones <= 8:
        raise ValueError("n_tones must be between 1 and 8")
    f_lo, f_hi = band
    f_lo = 1e6 / (2 * hi) if f_lo is None else f_lo
    freqs = np.geomspace(f_lo, f_hi, n_tones) if n_tones > 1 else np.array([f_lo])
    taus = np.geomspace(lo, hi, n_points)
    target = (coeff * taus**exponent) ** 2
    cols = [tone_increment_variance(1.0, f, taus) for f in freqs]
    rhs = np.ones_like(taus)
    if fixed_white > 0:
        rhs = rhs - fixed_white * taus / target
        A = np.array(cols).T / target[:, None]
        x, _ = nnls(A, rhs)
        white, amps2 = fixed_white, x
    else:
        A = np.array([taus] + cols).T / target[:, None]
        x, _ = nnls(A, rhs)
        white, amps2 = x[0], x[1:]
    tones = tuple(Tone(float(f), float(math.sqrt(a))) for f, a in zip(freqs, amps2) if a > 0)
    model_var = white * taus + sum(tone_increment_variance(t.amplitude, t.frequency, taus) for t in tones)
    slope, icpt = np.polyfit(np.log(taus), 0.5 * np.log(model_var), 1)
    info = {
        "tau_window": [lo, hi],
        "band_hz": [float(f_lo), float(f_hi)],
        "fit_slope": float(slope),
        "fit_coeff": float(math.exp(icpt)),
        "max_rel_error": float(np.max(np.abs(np.sqrt(model_var / target) - 1))),
    }
    return float(white), tones, info


def _tone_samples(tones, seed, t):
    rng = stream(seed, "noisegen", "tones")
    out = np.zeros(len(t))
    phases = rng.uniform(0.0, 2 * math.pi, size=len(tones))
    for tone, theta in zip(tones, phases):
        # subtract the t = 0 value so every trajectory starts at zero
        out += tone.amplitude * (np.sin(2 * math.pi * hz_to_per_us(tone.frequency) * t + theta) - math.sin(theta))
    return out, phases


def generate_composite(model, seed, step_size, steps, tau_window=DEFAULT_TAU_WINDOW,
                       n_tones=DEFAULT_BANK_SIZE, band=DEFAULT_TONE_BAND):
    """White floor plus tones; power-law models get a synthesised bank first.

    Each tone gets an independent uniform start phase drawn from the seed.
    The bank (when synthesised) and the start phases are recorded in
    ``metadata``.
    """
    steps = _check_grid(step_size, steps)
    meta = {"kind": "composite"}
    if model.needs_bank:
        white, tones, info = synthesize_tone_bank(
            model.coeff, model.exponent, tau_window, n_tones, band, fixed_white=model.white_background
        )
        meta["bank"] = info
    else:
        white, tones = model.white_level(), model.tones
    samples = _wiener_samples(white, seed, step_size, steps)
    if tones:
        t = np.arange(steps + 1) * float(step_size)
        tone_part, phases = _tone_samples(tones, seed, t)
        samples = samples + tone_part
        meta["tone_phases"] = [float(p) for p in phases]
    meta["white"] = white
    meta["tones"] = [{"frequency": tn.frequency, "amplitude": tn.amplitude} for tn in tones]
    return PhaseTrajectory(step_size, samples, int(seed), meta)
