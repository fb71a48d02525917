"""Monte-Carlo sweeps over measurement window, flux and limiter width.

Each cell runs the single-band loop with continuous probing and one
measurement window per actuator tick (``fast_interval = slow_interval =
tau``). Runs within a cell use the seeds ``0 .. seeds-1`` (or the given
list) for both estimators, so every MLE/Bayes comparison is paired.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..noisegen import NoiseModel
from ..optics import MeasurementConfig, bayes_variance_bound, conv_variance_bound, avg_fisher, prior_fisher
from ..servo import ServoConfig, run_closed_loop
from ..tracker import FilterConfig
from .tables import loglog_slope

__all__ = [
    "single_band_servo",
    "mc_variance",
    "variance_surface",
    "min_over_tau",
    "small_tau_variance",
    "kappa_sweep",
    "kappa_optimum",
    "flux_sweep",
    "in_advantage_region",
]

DEFAULT_WINDOWS = 4000


def _seed_list(seeds):
    if isinstance(seeds, int):
        if seeds < 1:
            raise ValueError("seeds must be >= 1")
        return list(range(seeds))
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seed list is empty")
    return seeds


def single_band_servo(tau, mu, V0=1.0, kappa=1.0, gain_mode="unity", kp=1.0, ki=0.0):
    """Continuous single-channel loop measuring once per ``tau``."""
    return ServoConfig(MeasurementConfig(mu, tau, V0), fast_interval=tau, slow_interval=tau,
                       kp=kp, ki=ki, filter=FilterConfig(kappa), gain_mode=gain_mode)


def _run_cell(args):
    tau, mu, D, V0, kappa, estimator, seed, windows, gain_mode = args
    servo = single_band_servo(tau, mu, V0, kappa, gain_mode)
    duration = max(windows * tau, 20.0 / math.sqrt(D * mu) if D > 0 and mu > 0 else 0.0)
    r = run_closed_loop(NoiseModel(D), servo, estimator, duration, seed)
    return r.residual_variance


def _map(fn, tasks, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [fn(t) for t in tasks]


def mc_variance(tau, mu, D, V0=1.0, kappa=1.0, estimator="bayes", seeds=20,
                windows=DEFAULT_WINDOWS, gain_mode="unity", jobs=1):
    """Mean residual variance and its standard error over seeds."""
    tasks = [(tau, mu, D, V0, kappa, estimator, s, windows, gain_mode) for s in _seed_list(seeds)]
    vals = np.array(_map(_run_cell, tasks, jobs))
    sem = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
    return float(vals.mean()), sem, vals


def in_advantage_region(tau, mu, D, V0=1.0):
    """True when the stabilised prior carries more information than one window."""
    cfg = MeasurementConfig(mu, tau, V0)
    return prior_fisher(cfg, D) > avg_fisher(cfg, D)


def variance_surface(tau_grid, mu_grid, D, V0=1.0, kappa=1.0, seeds=20,
                     windows=DEFAULT_WINDOWS, gain_mode="unity", jobs=1):
    """Analytic bounds and Monte-Carlo variances on the (tau, mu) grid.

    Returns one row per cell with ``conv_bound``, ``bayes_bound``,
    ``mle_var``/``bayes_var`` (and their standard errors), and
    ``advantage`` (Monte-Carlo Bayes below MLE).
    """
    tau_grid, mu_grid = list(tau_grid), list(mu_grid)
    if not tau_grid or not mu_grid:
        raise ValueError("tau and mu grids must be non-empty")
    seeds = _seed_list(seeds)
    cells = [(tau, mu) for mu in mu_grid for tau in tau_grid]
    tasks = [(tau, mu, D, V0, kappa, est, s, windows, gain_mode)
             for tau, mu in cells for est in ("mle", "bayes") for s in seeds]
    vals = np.array(_map(_run_cell, tasks, jobs)).reshape(len(cells), 2, len(seeds))
    rows = []
    for (tau, mu), v in zip(cells, vals):
        cfg = MeasurementConfig(mu, tau, V0)
        sem = v.std(axis=1, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else [math.nan] * 2
        rows.append({
            "tau_us": tau,
            "mu_per_us": mu,
            "conv_bound": conv_variance_bound(cfg, D),
            "bayes_bound": bayes_variance_bound(cfg, D),
            "mle_var": float(v[0].mean()),
            "mle_sem": float(sem[0]),
            "bayes_var": float(v[1].mean()),
            "bayes_sem": float(sem[1]),
            "advantage": bool(v[1].mean() < v[0].mean()),
        })
    return rows


def min_over_tau(rows, column):
    """Per-flux minimum of ``column`` over the tau grid: ``(mus, mins, taus_at_min)``."""
    mus = sorted({r["mu_per_us"] for r in rows})
    mins, where = [], []
    for mu in mus:
        cell = [r for r in rows if r["mu_per_us"] == mu]
        best = min(cell, key=lambda r: r[column])
        mins.append(best[column])
        where.append(best["tau_us"])
    return mus, mins, where


def small_tau_variance(rows, column):
    """Per-flux value of ``column`` at the smallest tau on the grid."""
    mus = sorted({r["mu_per_us"] for r in rows})
    out = []
    for mu in mus:
        cell = [r for r in rows if r["mu_per_us"] == mu]
        out.append(min(cell, key=lambda r: r["tau_us"])[column])
    return mus, out


def kappa_sweep(kappas, tau_grid, D, mu, V0=1.0, seeds=20, windows=DEFAULT_WINDOWS,
                gain_mode="unity", jobs=1):
    """Bayes residual variance per (kappa, tau); same seeds for every kappa."""
    kappas, tau_grid = list(kappas), list(tau_grid)
    if not kappas or not tau_grid:
        raise ValueError("kappa and tau grids must be non-empty")
    if any(not 0 < k <= 10 for k in kappas):
        raise ValueError("kappas must lie in (0, 10]")
    seeds = _seed_list(seeds)
    cells = [(k, tau) for tau in tau_grid for k in kappas]
    tasks = [(tau, mu, D, V0, k, "bayes", s, windows, gain_mode) for k, tau in cells for s in seeds]
    vals = np.array(_map(_run_cell, tasks, jobs)).reshape(len(cells), len(seeds))
    rows = []
    for (k, tau), v in zip(cells, vals):
        rows.append({
            "kappa": k,
            "tau_us": tau,
            "variance": float(v.mean()),
            "sem": float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan,
            "advantage_region": in_advantage_region(tau, mu, D, V0),
        })
    return rows


def kappa_optimum(rows):
    """Per-tau argmin kappa: ``{tau: kappa}``."""
    out = {}
    for tau in sorted({r["tau_us"] for r in rows}):
        cell = [r for r in rows if r["tau_us"] == tau]
        out[tau] = min(cell, key=lambda r: r["variance"])["kappa"]
    return out


def flux_sweep(fluxes, tau, D, V0=1.0, kappa=1.0, seeds=20, windows=DEFAULT_WINDOWS,
               gain_mode="unity", jobs=1):
    """Residual variance versus flux at a fixed window for both estimators.

    Returns ``(rows, slopes)`` where ``slopes`` maps each estimator to the
    log-log slope of variance against flux.
    """
    fluxes = list(fluxes)
    if len(fluxes) < 2:
        raise ValueError("need at least two flux values")
    rows = variance_surface([tau], fluxes, D, V0, kappa, seeds, windows, gain_mode, jobs)
    slopes = {
        "mle": loglog_slope([r["mu_per_us"] for r in rows], [r["mle_var"] for r in rows]),
        "bayes": loglog_slope([r["mu_per_us"] for r in rows], [r["bayes_var"] for r in rows]),
    }
    return rows, slopes
