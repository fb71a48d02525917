"""Discrete-time phase-locking loop.

Time advances in actuator ticks of ``slow_interval``. Probe light is
available in a contiguous block of ``duty_cycle * sequence_period`` at the
start of every sequence period (shifted by ``probe_offset``); inside the
block, counts are integrated in measurement windows of ``fast_interval``
(the last window of a block may be shorter). At the end of each window an
estimator turns the counts into a correction request and a PI controller
spreads it over the actuator ticks up to the next measurement. The integral
term acts as a drift rate and keeps being applied while the probe is dark.

The loop runs window by window; between two measurements the actuator ramp
is linear, so each stretch of ticks is evaluated as one vector operation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import welch

from . import __version__
from .noisegen import NoiseModel, PhaseTrajectory, generate_composite, generate_wiener
from .optics import MeasurementConfig
from .seeding import seed_sequence, stream
from .tracker import EstimatorState, FilterConfig, bayes_step, steady_state_variance
from .units import wrap

__all__ = [
    "ServoConfig",
    "Channel",
    "DualBandConfig",
    "RunResult",
    "ESTIMATORS",
    "make_trajectory",
    "run_open_loop",
    "run_closed_loop",
    "run_dual_band",
    "duty_cycle_sweep",
]

ESTIMATORS = ("mle", "bayes")
_GRID_TOL = 1e-9


def _is_multiple(x, step):
    k = x / step
    return abs(k - round(k)) < 1e-6


@dataclass(frozen=True)
class ServoConfig:
    """Timing, controller and estimator settings of one stabilisation channel.

    ``fast_interval`` and ``sequence_period`` must be whole multiples of
    ``slow_interval`` (the actuator tick). ``filter_schedule="slow"`` shortens
    the measurement windows to a single tick, i.e. evaluates the estimator at
    the actuator rate instead of the detection rate.
    """

    measurement: MeasurementConfig
    fast_interval: float = 50.0  # us
    slow_interval: float = 10.0  # us
    duty_cycle: float = 1.0
    sequence_period: float | None = None  # us; None -> fast_interval
    kp: float = 1.0
    ki: float = 0.0
    actuator_resolution: float = 0.0  # rad
    probe_offset: float = 0.0  # us, start of the probe block in each period
    filter: FilterConfig = field(default_factory=FilterConfig)
    gain_mode: str = "unity"
    filter_schedule: str = "fast"
    spread: str = "next_measurement"
    lock_threshold: float = math.pi
    transient_fraction: float = 0.1

    def __post_init__(self):
        if self.sequence_period is None:
            object.__setattr__(self, "sequence_period", self.fast_interval)
        if not self.slow_interval > 0:
            raise ValueError("slow_interval must be > 0")
        if not self.slow_interval <= self.fast_interval <= self.sequence_period:
            raise ValueError("need slow_interval <= fast_interval <= sequence_period")
        if not _is_multiple(self.fast_interval, self.slow_interval):
            raise ValueError("fast_interval must be a whole number of slow_interval ticks")
        if not _is_multiple(self.sequence_period, self.slow_interval):
            raise ValueError("sequence_period must be a whole number of slow_interval ticks")
        if not _is_multiple(self.probe_offset, self.slow_interval) or self.probe_offset < 0:
            raise ValueError("probe_offset must be a non-negative whole number of ticks")
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must lie in [0, 1]")
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be >= 0")
        if self.actuator_resolution < 0:
            raise ValueError("actuator_resolution must be >= 0")
        if self.gain_mode not in ("unity", "posterior"):
            raise ValueError("gain_mode must be 'unity' or 'posterior'")
        if self.spread not in ("next_measurement", "control_cycle"):
            raise ValueError("spread must be 'next_measurement' or 'control_cycle'")
        if self.filter_schedule not in ("fast", "slow"):
            raise ValueError("filter_schedule must be 'fast' or 'slow'")
        if not 0 < self.lock_threshold <= math.pi:
            raise ValueError("lock_threshold must lie in (0, pi]")
        if not 0 <= self.transient_fraction < 1:
            raise ValueError("transient_fraction must lie in [0, 1)")

    @property
    def probe_block(self):
        """Length of the probe block per sequence period (us)."""
        return self.duty_cycle * self.sequence_period

    @property
    def starved(self):
        """Fewer than one full measurement window of probe light per period."""
        return self.duty_cycle == 0 or self.probe_block < self.fast_interval - _GRID_TOL

    @property
    def window(self):
        return self.slow_interval if self.filter_schedule == "slow" else self.fast_interval

    def to_dict(self):
        return {
            "measurement": self.measurement.to_dict(),
            "fast_interval": self.fast_interval,
            "slow_interval": self.slow_interval,
            "duty_cycle": self.duty_cycle,
            "sequence_period": self.sequence_period,
            "kp": self.kp,
            "ki": self.ki,
            "actuator_resolution": self.actuator_resolution,
            "probe_offset": self.probe_offset,
            "filter": self.filter.to_dict(),
            "gain_mode": self.gain_mode,
            "filter_schedule": self.filter_schedule,
            "spread": self.spread,
            "lock_threshold": self.lock_threshold,
            "transient_fraction": self.transient_fraction,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["measurement"] = MeasurementConfig.from_dict(d["measurement"])
        if "filter" in d:
            d["filter"] = FilterConfig.from_dict(d["filter"])
        return cls(**d)


@dataclass(frozen=True)
class Channel:
    """A noise process together with the servo that stabilises it."""

    noise: NoiseModel
    servo: ServoConfig

    def to_dict(self):
        return {"noise": self.noise.to_dict(), "servo": self.servo.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(NoiseModel.from_dict(d["noise"]), ServoConfig.from_dict(d["servo"]))


@dataclass(frozen=True)
class DualBandConfig:
    """Continuous link channel plus duty-cycled residual channel.

    The two channels see independent noise; the phase seen by the heralded
    photons is the sum of both residuals. ``base_visibility`` is the
    interference contrast in the absence of phase noise.
    """

    link: Channel
    residual: Channel
    base_visibility: float = 1.0

    def __post_init__(self):
        if not 0 <= self.base_visibility <= 1:
            raise ValueError("base_visibility must lie in [0, 1]")

    def to_dict(self):
        return {"link": self.link.to_dict(), "residual": self.residual.to_dict(),
                "base_visibility": self.base_visibility}

    @classmethod
    def from_dict(cls, d):
        return cls(Channel.from_dict(d["link"]), Channel.from_dict(d["residual"]),
                   d.get("base_visibility", 1.0))


@dataclass(frozen=True)
class RunResult:
    """Outcome of one simulated run.

    ``residual_series`` is sampled every ``sample_interval`` us. For closed
    loops it is wrapped into (-pi, pi]; ``residual_variance`` is the mean
    square of the series after the first ``transient_cut`` samples, i.e. the
    spread about the lock point including any offset.
    """

    times: np.ndarray
    true_phase: np.ndarray
    correction: np.ndarray
    residual_series: np.ndarray
    probe_on: np.ndarray
    residual_variance: float
    visibility: float
    lock_losses: int
    transient_cut: int
    starved: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def sample_interval(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def steady_residual(self):
        return self.residual_series[self.transient_cut:]

    def summary(self):
        return {
            "residual_variance": self.residual_variance,
            "visibility": self.visibility,
            "lock_losses": self.lock_losses,
            "starved": self.starved,
            "transient_cut": self.transient_cut,
            "samples": int(len(self.residual_series)),
        }

    def to_json(self, config=None):
        """Deterministic JSON text: summary, metadata and (optionally) the config."""
        doc = {"version": __version__, "result": self.summary(), "metadata": self.metadata}
        if config is not None:
            doc["config"] = config
        return json.dumps(doc, sort_keys=True, indent=2, default=_json_default)

    def series_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_us", "true_phase_rad", "correction_rad", "residual_rad", "probe_on"])
        for row in zip(self.times, self.true_phase, self.correction, self.residual_series, self.probe_on):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                        repr(float(row[3])), int(row[4])])
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _subseed(seed, *keys):
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])


def make_trajectory(noise, seed, step, steps):
    """Pick the generator matching the noise model."""
    if noise.is_wiener:
        return generate_wiener(noise, seed, step, steps)
    return generate_composite(noise, seed, step, steps)


def _mean_square_slope(samples, step, max_lag):
    """Slope of the mean squared displacement versus lag (rad^2/us)."""
    lags = np.unique(np.linspace(1, max_lag, 20).astype(int))
    msd = np.array([np.mean((samples[k:] - samples[:-k]) ** 2) for k in lags])
    t = lags * step
    return float(np.sum(t * msd) / np.sum(t * t))


def run_open_loop(noise, duration, step, seed):
    """Free-running phase: the residual is the raw trajectory.

    ``metadata["diffusion_slope"]`` holds a least-squares slope of the mean
    squared displacement over lags up to 1% of the run; for Wiener noise it
    estimates ``D``.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    if duration < 100 * step:
        raise ValueError("duration must cover at least 100 steps")
    steps = int(round(duration / step))
    traj = make_trajectory(noise, seed, step, steps)
    x = traj.samples
    cut = int(len(x) * 0.1)
    var = float(np.mean(x[cut:] ** 2)) if np.any(x) else 0.0
    slope = _mean_square_slope(x, step, max(1, steps // 100))
    zeros = np.zeros_like(x)
    meta = {"kind": "open_loop", "seed": int(seed), "step": step, "duration": duration,
            "diffusion_slope": slope, "noise": noise.to_dict(), "trajectory": traj.metadata}
    return RunResult(traj.times, x, zeros, x.copy(), zeros.astype(np.int8), var,
                     1.0 * math.exp(-var / 2), 0, cut, False, meta)


def _probe_layout(cfg, n_ticks):
    """Per-tick probe overlap (us) and the indices of ticks that close a window."""
    dt = cfg.slow_interval
    t0 = np.arange(n_ticks) * dt
    pos = np.mod(t0 - cfg.probe_offset, cfg.sequence_period)
    block = cfg.probe_block
    overlap = np.clip(block - pos, 0.0, dt)
    if block <= 0:
        return overlap, np.array([], dtype=int)
    win = cfg.window
    end_pos = pos + dt
    full_close = (overlap > 0) & (np.abs(np.mod(end_pos + _GRID_TOL, win) - _GRID_TOL) < 1e-6) & (end_pos <= block + _GRID_TOL)
    last_tick = (overlap > 0) & (end_pos >= block - _GRID_TOL)
    closes = np.flatnonzero(full_close | last_tick)
    return overlap, closes


def _lock_losses(residual, threshold):
    """Count departures from the current lock point by more than ``threshold``.

    ``residual`` is the unwrapped residual. The lock point starts at the
    fringe nearest the first sample; after a departure the loop counts as
    re-acquired once it sits within ``threshold / 2`` of any fringe, which
    then becomes the new lock point.
    """
    two_pi = 2 * math.pi
    if len(residual) == 0:
        return 0
    lock = two_pi * round(residual[0] / two_pi)
    count, locked = 0, True
    for v in residual.tolist():
        if locked:
            if abs(v - lock) > threshold:
                count += 1
                locked = False
        else:
            nearest = two_pi * round(v / two_pi)
            if abs(v - nearest) < threshold / 2:
                lock, locked = nearest, True
    return count


def _suppression_db(true_phase, residual, interval, f_max_hz=500.0):
    """Ratio of open- to closed-loop phase PSD below ``f_max_hz`` (dB)."""
    if len(true_phase) < 64:
        return None
    fs = 1e6 / interval
    nper = min(len(true_phase) - 1, 4096)
    f, p_open = welch(np.diff(true_phase), fs=fs, nperseg=nper)
    _, p_closed = welch(np.diff(np.unwrap(residual)), fs=fs, nperseg=nper)
    band = (f > 0) & (f <= f_max_hz)
    if not np.any(band) or np.sum(p_closed[band]) <= 0 or np.sum(p_open[band]) <= 0:
        return None
    return float(10 * math.log10(np.sum(p_open[band]) / np.sum(p_closed[band])))


def _quantise(x, q):
    return x if q <= 0 else q * np.round(x / q)


def run_closed_loop(noise, servo, estimator, duration, seed, trajectory=None):
    """Simulate one stabilisation channel.

    ``estimator`` is ``"mle"`` (the arcsine error signal goes straight to
    the controller) or ``"bayes"`` (the error is passed through the
    innovation filter with the prior width of the elapsed dark time, and a
    Gaussian posterior variance is carried along). A run with no probe light
    at all returns a result flagged ``starved`` instead of raising.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")
    dt = servo.slow_interval
    n_ticks = int(round(duration / dt))
    if n_ticks < 10:
        raise ValueError("duration must span at least 10 actuator ticks")
    if trajectory is None:
        trajectory = make_trajectory(noise, seed, dt, n_ticks)
    elif abs(trajectory.step_size - dt) > 1e-12 or len(trajectory) < n_ticks:
        raise ValueError("trajectory grid does not match the servo tick")
    true = trajectory.samples[:n_ticks]
    rng = stream(seed, "servo", "counts")
    poisson = rng.poisson
    meas = servo.measurement
    V = meas.visibility
    dark = meas.dark_rate
    q = servo.actuator_resolution
    overlap, closes = _probe_layout(servo, n_ticks)

    filt = servo.filter
    if filt.prior_diffusion > 0:
        prior_d, prior_p = filt.prior_diffusion, filt.prior_exponent
    else:
        prior_d, prior_p = noise.diffusion_coeff, noise.exponent
    state = EstimatorState(0.0, _initial_variance(noise, meas))

    applied = np.empty(n_ticks)
    target = 0.0  # unquantised cumulative controller output
    integ = 0.0  # integral of the error signal
    prop_rate = 0.0  # rad per tick still to be applied from the last step
    prop_ticks = 0
    ticks_per_fast = servo.fast_interval / dt
    last_meas_t = last_window_t = 0.0
    n_meas = n_empty = 0

    start = 0
    closes = closes.tolist()
    bounds = closes + [n_ticks - 1]
    if closes and closes[-1] == n_ticks - 1:
        bounds = list(closes)
    for k, end in enumerate(bounds):
        length = end - start + 1
        int_rate = servo.ki * integ / ticks_per_fast
        inc = prop_rate + int_rate
        closing = k < len(closes) and end == closes[k]
        if length == 1:
            target += inc
            a = q * round(target / q) if q > 0 else target
            applied[start] = a
            if closing:
                wsum = overlap[start]
                lam_s = wsum * math.sin(true[start] - a)
        else:
            steps = np.arange(1, length + 1, dtype=float)
            if prop_ticks < length:
                ramp = target + int_rate * steps + prop_rate * np.minimum(steps, prop_ticks)
                target = target + int_rate * length + prop_rate * prop_ticks
            else:
                ramp = target + inc * steps
                target = target + inc * length
            applied[start:end + 1] = _quantise(ramp, q)
            if closing:
                seg = slice(start, end + 1)
                w = overlap[seg]
                wsum = float(w.sum())
                lam_s = float(np.dot(w, np.sin(true[seg] - applied[seg])))
        if closing:
            base = meas.flux * wsum / 2
            lam1 = max(base - meas.flux * V * lam_s / 2, 0.0) + dark * wsum
            lam2 = max(base + meas.flux * V * lam_s / 2, 0.0) + dark * wsum
            n1 = int(poisson(lam1))
            n2 = int(poisson(lam2))
            n = n1 + n2
            e = math.asin(min(1.0, max(-1.0, (n2 - n1) / (V * max(n, 1))))) if n and V > 0 else 0.0
            t_end = (end + 1) * dt
            # limiter width: diffusion since the last window that saw photons
            sigma_p = math.sqrt(prior_d) * (t_end - last_meas_t) ** prior_p
            drift_var = prior_d * (t_end - last_window_t) ** (2 * prior_p)
            last_window_t = t_end
            if n:
                last_meas_t = t_end
            n_meas += 1
            if estimator == "mle":
                u = e
            else:
                info = n * V * V * math.exp(-drift_var)
                state, u = bayes_step(state, e, info, drift_var, sigma_p, filt.kappa, servo.gain_mode)
                if n == 0:
                    u = 0.0
            if n == 0:
                n_empty += 1
            integ += u
            nxt = bounds[k + 1] if k + 1 < len(bounds) else n_ticks - 1
            span = max(nxt - end, 1)
            if servo.spread == "control_cycle":
                span = min(span, int(round(ticks_per_fast)))
            prop_ticks = span
            prop_rate = servo.kp * u / span
        start = end + 1
        if start >= n_ticks:
            break

    stride = max(1, int(round(servo.fast_interval / dt)))
    idx = np.arange(0, n_ticks, stride)
    times = idx * dt
    resid = wrap(true[idx] - applied[idx])
    resid = np.atleast_1d(np.asarray(resid, dtype=float))
    probe_on = (overlap[idx] > 0).astype(np.int8)
    cut = int(len(resid) * servo.transient_fraction)
    var = float(np.mean(resid[cut:] ** 2))
    losses = _lock_losses(true[idx] - applied[idx], servo.lock_threshold)
    meta = {
        "kind": "closed_loop",
        "estimator": estimator,
        "seed": int(seed),
        "duration": duration,
        "noise": noise.to_dict(),
        "servo": servo.to_dict(),
        "measurements": n_meas,
        "empty_windows": n_empty,
        "final_variance": state.variance,
        "controller_output": target,
        "applied_final": float(applied[-1]),
        "suppression_db_below_500hz": _suppression_db(true[idx], resid, servo.fast_interval),
        "trajectory": trajectory.metadata,
    }
    return RunResult(times, true[idx].copy(), applied[idx].copy(), resid, probe_on, var,
                     V * math.exp(-var / 2), losses, cut, servo.starved, meta)


def _initial_variance(noise, meas):
    d = noise.diffusion_coeff
    if d > 0 and meas.flux > 0 and meas.visibility > 0:
        try:
            return steady_state_variance(d, meas.window, meas.flux, meas.visibility)
        except Exception:
            return 1.0
    return 0.0 if d == 0 else 1.0


def run_dual_band(cfg, duration, seed, estimator="bayes", link_enabled=True):
    """Run the link and residual channels on independent noise and combine them.

    Returns ``(link_result, residual_result, combined_result)``. The combined
    residual is the sum of the two wrapped channel residuals on the residual
    channel's sampling grid; its visibility is
    ``base_visibility * exp(-(var_link + var_residual) / 2)``. With
    ``link_enabled=False`` the link noise is left uncorrected (the WDM loop is
    switched off) and its raw trajectory enters the sum.
    """
    res_servo = cfg.residual.servo
    link_servo = cfg.link.servo
    seed_link = _subseed(seed, "dual", "link")
    seed_res = _subseed(seed, "dual", "residual")
    residual = run_closed_loop(cfg.residual.noise, res_servo, estimator, duration, seed_res)
    if link_enabled:
        link = run_closed_loop(cfg.link.noise, link_servo, estimator, duration, seed_link)
        link_phase = np.interp(residual.times, link.times, link.residual_series)
    else:
        dt = link_servo.slow_interval
        traj = make_trajectory(cfg.link.noise, seed_link, dt, int(round(duration / dt)))
        t = traj.times
        link_phase = np.interp(residual.times, t, traj.samples)
        cut = int(len(t) * link_servo.transient_fraction)
        zeros = np.zeros_like(t)
        var_l = float(np.mean(wrap(traj.samples[cut:]) ** 2))
        link = RunResult(t, traj.samples, zeros, wrap(traj.samples), zeros.astype(np.int8), var_l,
                         link_servo.measurement.visibility * math.exp(-var_l / 2), 0, cut, False,
                         {"kind": "uncorrected", "seed": seed_link})
    total = wrap(link_phase + residual.residual_series)
    cut = residual.transient_cut
    var_sum = link.residual_variance + residual.residual_variance
    combined_vis = cfg.base_visibility * math.exp(-var_sum / 2)
    meta = {
        "kind": "dual_band",
        "estimator": estimator,
        "seed": int(seed),
        "duration": duration,
        "link_enabled": link_enabled,
        "link_variance": link.residual_variance,
        "residual_variance": residual.residual_variance,
        "combined_series_variance": float(np.mean(total[cut:] ** 2)),
        "config": cfg.to_dict(),
    }
    combined = RunResult(residual.times, residual.true_phase + np.interp(residual.times, link.times, link.true_phase),
                         residual.correction + np.interp(residual.times, link.times, link.correction),
                         total, residual.probe_on, var_sum, combined_vis,
                         link.lock_losses + residual.lock_losses, cut, residual.starved, meta)
    return link, residual, combined


def duty_cycle_sweep(base, duties, duration, seed, estimators=ESTIMATORS):
    """Visibility, residual variance and lock losses versus probe duty cycle.

    ``base`` is either a :class:`DualBandConfig` (the residual channel's duty
    is varied) or a :class:`Channel`. Every duty and estimator reuses the same
    seed, so rows are paired. Returns a list of dict rows.
    """
    duties = list(duties)
    if not duties:
        raise ValueError("duties must be non-empty")
    if any(not 0 < d <= 1 for d in duties):
        raise ValueError("duties must lie in (0, 1]")
    rows = []
    for duty in duties:
        for est in estimators:
            if isinstance(base, DualBandConfig):
                res = replace(base.residual, servo=replace(base.residual.servo, duty_cycle=duty))
                cfg = replace(base, residual=res)
                _, r_res, comb = run_dual_band(cfg, duration, seed, est)
                rows.append({"duty_cycle": duty, "estimator": est, "visibility": comb.visibility,
                             "residual_variance": comb.residual_variance,
                             "lock_losses": r_res.lock_losses, "starved": comb.starved})
            else:
                servo = replace(base.servo, duty_cycle=duty)
                r = run_closed_loop(base.noise, servo, est, duration, seed)
                rows.append({"duty_cycle": duty, "estimator": est, "visibility": r.visibility,
                             "residual_variance": r.residual_variance,
                             "lock_losses": r.lock_losses, "starved": r.starved})
    return rows
