"""Command-line front end.

Three subcommands share one set of flags::

    bayesphase simulate  [--config C] [--set k=v ...] [--seed S] [--out-dir D] [--format F]
    bayesphase sweep {surface,kappa,duty,flux} [grid flags] [--jobs J] ...
    bayesphase calibrate (--input series.csv | --preset NAME | --config C)

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
Every artifact carries the resolved configuration and the tool version, and
identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    FitError,
    calibrate_diffusion,
    flux_sweep,
    kappa_optimum,
    kappa_sweep,
    loglog_slope,
    min_over_tau,
    rows_to_csv,
    small_tau_variance,
    variance_surface,
)
from .config import ConfigError, load_config
from .noisegen import PhaseTrajectory
from .optics import bayes_variance_bound, conv_variance_bound, tracking_snl
from .servo import Channel, duty_cycle_sweep, make_trajectory, run_closed_loop, run_dual_band, run_open_loop
from .tracker import NumericalFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

SWEEP_DEFAULT_PRESET = {"surface": "single_band", "kappa": "single_band", "flux": "flux_scaling", "duty": "duty_10km"}
SWEEP_DEFAULTS = {
    "taus": [1, 3, 10, 30, 100, 300, 1000],
    "mus": [0.02, 0.2, 2, 20],
    "kappas": [0.5, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0],
    "fluxes": [0.2, 0.632, 2.0, 6.32, 20.0],
    "duties": [0.001, 0.005, 0.01, 0.02, 0.065, 0.2],
    "seeds": 10,
    "windows": 2000,
}
SWEEP_COLUMNS = {
    "surface": (["tau_us", "mu_per_us", "conv_bound", "bayes_bound", "mle_var", "mle_sem",
                 "bayes_var", "bayes_sem", "advantage"],
                {"tau_us": "us", "mu_per_us": "1/us", "conv_bound": "rad^2", "bayes_bound": "rad^2",
                 "mle_var": "rad^2", "mle_sem": "rad^2", "bayes_var": "rad^2", "bayes_sem": "rad^2"}),
    "kappa": (["kappa", "tau_us", "variance", "sem", "advantage_region"],
              {"tau_us": "us", "variance": "rad^2", "sem": "rad^2"}),
    "flux": (["tau_us", "mu_per_us", "conv_bound", "bayes_bound", "mle_var", "mle_sem",
              "bayes_var", "bayes_sem", "advantage"],
             {"tau_us": "us", "mu_per_us": "1/us", "conv_bound": "rad^2", "bayes_bound": "rad^2",
              "mle_var": "rad^2", "mle_sem": "rad^2", "bayes_var": "rad^2", "bayes_sem": "rad^2"}),
    "duty": (["duty_cycle", "estimator", "visibility", "residual_variance", "lock_losses", "starved"],
             {"residual_variance": "rad^2"}),
}


class InputError(ValueError):
    """Malformed input file."""


# ----------------------------------------------------------------- helpers

def _dumps(doc):
    return json.dumps(doc, sort_keys=True, indent=2, default=_json_default, allow_nan=True) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _csv_header(resolved):
    """Leading comment line carrying version and resolved config."""
    return f"# bayesphase {__version__} config={json.dumps(resolved, sort_keys=True, separators=(',', ':'))}\n"


class _Writer:
    """Collects artifacts and writes them in a fixed order."""

    def __init__(self, out_dir, fmt):
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.written = []

    def want(self, kind):
        return self.fmt == "both" or self.fmt == kind

    def write(self, name, text):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        with open(path, "w", newline="") as f:
            f.write(text)
        self.written.append(str(path))
        return path


def _check_finite(values, what):
    for v in values:
        if isinstance(v, float) and not math.isfinite(v):
            raise NumericalFailure(f"{what} is not finite")


def _parse_list(text, flag):
    if text is None:
        return None
    items = [s for s in text.replace(" ", "").split(",") if s]
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise ConfigError(f"could not parse {text!r} as a comma-separated list of numbers", flag) from exc


# --------------------------------------------------------------- plotting

def _plot(path, draw):
    """Best-effort static SVG; failures only print a warning."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        matplotlib.rcParams["svg.hashsalt"] = "bayesphase"
        fig, ax = plt.subplots(figsize=(6, 4))
        draw(ax)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return True
    except Exception as exc:  # plotting never decides the exit code
        print(f"warning: plot not written ({exc})", file=sys.stderr)
        return False


def _draw_series(runs):
    def draw(ax):
        for name, r in runs.items():
            ax.plot(r.times / 1e3, r.residual_series, lw=0.5, label=name)
        ax.set_xlabel("time [ms]")
        ax.set_ylabel("residual phase [rad]")
        ax.legend()
    return draw


def _draw_sweep(kind, rows):
    def draw(ax):
        if kind in ("surface", "flux"):
            for col, style in (("mle_var", "o-"), ("bayes_var", "s-")):
                for tau in sorted({r["tau_us"] for r in rows}):
                    cell = sorted((r for r in rows if r["tau_us"] == tau), key=lambda r: r["mu_per_us"])
                    if kind == "flux" or tau == min(r["tau_us"] for r in rows):
                        ax.loglog([r["mu_per_us"] for r in cell], [r[col] for r in cell], style,
                                  label=f"{col} tau={tau:g}")
            ax.set_xlabel("flux [1/us]")
            ax.set_ylabel("residual variance [rad^2]")
        elif kind == "kappa":
            for tau in sorted({r["tau_us"] for r in rows}):
                cell = sorted((r for r in rows if r["tau_us"] == tau), key=lambda r: r["kappa"])
                ax.semilogy([r["kappa"] for r in cell], [r["variance"] for r in cell], "o-", label=f"tau={tau:g}")
            ax.set_xlabel("kappa")
            ax.set_ylabel("residual variance [rad^2]")
        else:
            for est in sorted({r["estimator"] for r in rows}):
                cell = [r for r in rows if r["estimator"] == est]
                ax.semilogx([r["duty_cycle"] for r in cell], [r["visibility"] for r in cell], "o-", label=est)
            ax.set_xlabel("duty cycle")
            ax.set_ylabel("combined visibility")
        ax.legend(fontsize=7)
    return draw


# --------------------------------------------------------------- commands

def _bounds(cfg):
    noise, meas = cfg.noise, cfg.measurement
    if noise is None or meas is None or not noise.is_wiener or meas.flux <= 0 or meas.visibility <= 0:
        return {}
    D = noise.diffusion_coeff
    out = {"conv_bound": conv_variance_bound(meas, D), "bayes_bound": bayes_variance_bound(meas, D)}
    if D > 0:
        out["tracking_snl"] = tracking_snl(D, meas.flux, meas.visibility)
    return out


def cmd_simulate(args):
    cfg, _ = load_config(args.config, args.set, args.seed, default="single_band")
    resolved = cfg.to_dict()
    out = _Writer(args.out_dir, args.format)
    doc = {"version": __version__, "config": resolved, "runs": {}}
    series = {}
    if cfg.kind == "calibrate":
        raise ConfigError("calibrate configs are run with the calibrate command", "kind")
    if cfg.kind == "open_loop":
        r = run_open_loop(cfg.noise, cfg.duration, cfg.step, cfg.seed)
        doc["runs"]["open_loop"] = {"result": r.summary(), "metadata": r.metadata}
        series["open_loop"] = r
    elif cfg.kind == "closed_loop":
        doc["bounds"] = _bounds(cfg)
        for est in cfg.estimators:
            r = run_closed_loop(cfg.noise, cfg.servo, est, cfg.duration, cfg.seed)
            doc["runs"][est] = {"result": r.summary(), "metadata": r.metadata}
            series[est] = r
    else:
        for est in cfg.estimators:
            link, res, comb = run_dual_band(cfg.dual_band, cfg.duration, cfg.seed, est)
            doc["runs"][est] = {ch: {"result": r.summary(), "metadata": {k: v for k, v in r.metadata.items()
                                                                          if k != "config"}}
                                for ch, r in (("link", link), ("residual", res), ("combined", comb))}
            series[est] = comb
    for r in series.values():
        _check_finite([r.residual_variance, r.visibility], "residual variance")
    if "mle" in series and "bayes" in series:
        doc["comparison"] = {
            "bayes_minus_mle_variance": series["bayes"].residual_variance - series["mle"].residual_variance,
            "bayes_below_mle": bool(series["bayes"].residual_variance < series["mle"].residual_variance),
        }
    if out.want("json"):
        out.write("result.json", _dumps(doc))
    if out.want("csv"):
        for name, r in series.items():
            out.write(f"series_{name}.csv", _csv_header(resolved) + r.series_csv())
    if args.plot:
        _plot(out.out_dir / "series.svg", _draw_series(series))
    for name, r in series.items():
        print(f"{name}: residual variance {r.residual_variance:.6g} rad^2, visibility {r.visibility:.5f}, "
              f"lock losses {r.lock_losses}")
    return EXIT_OK


def _grid(args, cfg, key):
    flag = getattr(args, key, None)
    values = _parse_list(flag, f"--{key}") if flag is not None else cfg.sweep.get(key, SWEEP_DEFAULTS[key])
    if not values:
        raise ConfigError("grid is empty", f"--{key}" if flag is not None else f"sweep.{key}")
    return values


def _sweep_param(cfg, key, fallback):
    return cfg.sweep.get(key, fallback)


def cmd_sweep(args):
    cfg, _ = load_config(args.config, args.set, args.seed, default=SWEEP_DEFAULT_PRESET[args.kind])
    kind = args.kind
    seeds = args.n_seeds or cfg.sweep.get("seeds", SWEEP_DEFAULTS["seeds"])
    windows = args.windows or cfg.sweep.get("windows", SWEEP_DEFAULTS["windows"])
    extra = {}
    if kind == "duty":
        duties = _grid(args, cfg, "duties")
        if cfg.dual_band is not None:
            base = cfg.dual_band
        elif cfg.noise is not None and cfg.servo is not None:
            base = Channel(cfg.noise, cfg.servo)
        else:
            raise ConfigError("duty sweeps need a dual_band section or noise/measurement/servo", "dual_band")
        rows = duty_cycle_sweep(base, duties, cfg.duration, cfg.seed, cfg.estimators)
    else:
        if cfg.noise is None or cfg.measurement is None:
            raise ConfigError(f"{kind} sweeps need noise and measurement sections", "noise")
        D = _sweep_param(cfg, "diffusion_coeff", cfg.noise.diffusion_coeff)
        V0 = _sweep_param(cfg, "visibility", cfg.measurement.visibility)
        kappa = _sweep_param(cfg, "kappa", cfg.servo.filter.kappa if cfg.servo else 1.0)
        gain = _sweep_param(cfg, "gain_mode", cfg.servo.gain_mode if cfg.servo else "unity")
        if not D > 0:
            raise ConfigError("sweeps need a positive diffusion coefficient", "sweep.diffusion_coeff")
        if kind == "surface":
            taus, mus = _grid(args, cfg, "taus"), _grid(args, cfg, "mus")
            rows = variance_surface(taus, mus, D, V0, kappa, seeds, windows, gain, args.jobs)
            extra["advantage_cells"] = sum(r["advantage"] for r in rows)
            if len(mus) >= 2:
                m, v, _ = min_over_tau(rows, "mle_var")
                extra["mle_min_over_tau_slope"] = loglog_slope(m, v)
                m, v = small_tau_variance(rows, "bayes_var")
                extra["bayes_small_tau_slope"] = loglog_slope(m, v)
        elif kind == "kappa":
            kappas, taus = _grid(args, cfg, "kappas"), _grid(args, cfg, "taus")
            if any(not 0 < k <= 10 for k in kappas):
                raise ConfigError("kappas must lie in (0, 10]", "sweep.kappas")
            rows = kappa_sweep(kappas, taus, D, cfg.measurement.flux, V0, seeds, windows, gain, args.jobs)
            extra["optimum_kappa"] = {repr(float(t)): k for t, k in kappa_optimum(rows).items()}
        else:
            fluxes = _grid(args, cfg, "fluxes")
            if len(fluxes) < 2:
                raise ConfigError("a flux sweep needs at least two fluxes", "sweep.fluxes")
            tau = _sweep_param(cfg, "tau", cfg.servo.fast_interval if cfg.servo else cfg.measurement.window)
            rows, slopes = flux_sweep(fluxes, tau, D, V0, kappa, seeds, windows, gain, args.jobs)
            extra["slopes"] = slopes
    for r in rows:
        # standard errors are NaN by construction when only one seed is run
        _check_finite([v for k, v in r.items() if not k.endswith("sem")], f"{kind} sweep output")
    resolved = cfg.to_dict()
    resolved["sweep_resolved"] = {"kind": kind, "seeds": seeds, "windows": windows}
    out = _Writer(args.out_dir, args.format)
    cols, units = SWEEP_COLUMNS[kind]
    if out.want("csv"):
        out.write(f"sweep_{kind}.csv", _csv_header(resolved) + rows_to_csv(rows, cols, units))
    if out.want("json"):
        out.write(f"sweep_{kind}.json", _dumps({"version": __version__, "config": resolved,
                                                "kind": kind, "summary": extra, "rows": rows}))
    if args.plot:
        _plot(out.out_dir / f"sweep_{kind}.svg", _draw_sweep(kind, rows))
    print(f"{kind} sweep: {len(rows)} rows")
    for k, v in sorted(extra.items()):
        print(f"  {k}: {v}")
    return EXIT_OK


def read_series_csv(path):
    """Read a ``t_us,phase_rad`` CSV into a trajectory; ``InputError`` names the bad line."""
    times, phases = [], []
    with open(path, newline="") as f:
        header_seen = False
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if not header_seen:
                names = [c.strip().split(" ")[0] for c in row]
                if names[:2] != ["t_us", "phase_rad"]:
                    raise InputError(f"line {lineno}: expected header 't_us,phase_rad', got {','.join(row)!r}")
                header_seen = True
                continue
            if len(row) != 2:
                raise InputError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                t, p = float(row[0]), float(row[1])
            except ValueError:
                raise InputError(f"line {lineno}: non-numeric value in {','.join(row)!r}") from None
            if not (math.isfinite(t) and math.isfinite(p)):
                raise InputError(f"line {lineno}: non-finite value")
            times.append(t)
            phases.append(p)
    if not header_seen:
        raise InputError("line 1: missing header 't_us,phase_rad'")
    if len(times) < 2:
        raise InputError(f"need at least 2 samples, got {len(times)}")
    t = np.array(times)
    dt = np.diff(t)
    step = float(dt[0])
    if step <= 0 or np.any(np.abs(dt - step) > 1e-6 * step):
        bad = int(np.argmax(np.abs(dt - step) > 1e-6 * step)) if step > 0 else 0
        raise InputError(f"sample {bad + 2}: times must be uniformly spaced and increasing")
    return PhaseTrajectory(step, np.array(phases) - phases[0], seed=0, metadata={"source": str(path)})


def default_taus(step, n):
    """Geometric taus from 10 steps to a tenth of the record (distinct lags only)."""
    hi = (n - 1) * step / 10
    lo = min(10 * step, hi)
    if hi < step:
        return []
    lags = np.unique(np.round(np.geomspace(lo / step, hi / step, 10)).astype(int))
    return [float(k * step) for k in lags if k >= 1]


def cmd_calibrate(args):
    if args.input is not None:
        if args.config is not None or args.preset is not None:
            raise ConfigError("give either --input or a config/preset, not both", "--input")
        cfg, _ = load_config(None, args.set, args.seed, base={"kind": "calibrate"})
        traj = read_series_csv(args.input)
        taus = cfg.calibrate.get("taus") or default_taus(traj.step_size, len(traj))
        source = {"input": Path(args.input).name, "samples": len(traj), "step_us": traj.step_size}
    else:
        cfg, _ = load_config(args.preset or args.config, args.set, args.seed, default="wiener_2e-4")
        if cfg.noise is None:
            raise ConfigError("a generator preset needs a noise section", "noise")
        step = cfg.calibrate.get("step", cfg.step)
        duration = cfg.calibrate.get("duration", cfg.duration)
        steps = int(round(duration / step))
        traj = make_trajectory(cfg.noise, cfg.seed, step, steps)
        taus = cfg.calibrate.get("taus") or default_taus(step, len(traj))
        source = {"generator": cfg.noise.to_dict(), "seed": cfg.seed, "step_us": step, "duration_us": duration}
    try:
        fit = calibrate_diffusion(traj, taus)
    except FitError as exc:
        raise InputError(f"too few usable taus for a fit ({exc})") from exc
    _check_finite([fit.exponent, fit.coeff], "fit")
    resolved = cfg.to_dict()
    doc = {"version": __version__, "config": resolved, "source": source, "fit": fit.to_dict()}
    out = _Writer(args.out_dir, args.format)
    if out.want("json"):
        out.write("calibration.json", _dumps(doc))
    if out.want("csv"):
        rows = [{"tau_us": t, "std_rad": s, "fit_rad": float(fit.sigma(t))} for t, s in zip(fit.taus, fit.stds)]
        out.write("calibration.csv", _csv_header(resolved) +
                  rows_to_csv(rows, ["tau_us", "std_rad", "fit_rad"], {"tau_us": "us", "std_rad": "rad", "fit_rad": "rad"}))
    if args.plot:
        def draw(ax):
            ax.loglog(fit.taus, fit.stds, "o", label="measured")
            ax.loglog(fit.taus, fit.sigma(fit.taus), "-", label=f"fit p={fit.exponent:.3f}")
            ax.set_xlabel("tau [us]")
            ax.set_ylabel("increment std [rad]")
            ax.legend()
        _plot(out.out_dir / "calibration.svg", draw)
    print(f"exponent {fit.exponent:.4f}, coeff {fit.coeff:.4g} rad/us^p ({math.degrees(fit.coeff):.4g} deg), "
          f"R^2 {fit.r_squared:.5f}, tau {fit.tau_range[0]:g}..{fit.tau_range[1]:g} us")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _common(p):
    p.add_argument("--config", help="config file path or bundled preset name")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value by dotted path; VALUE is parsed as JSON when possible")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--out-dir", default="out", help="directory for artifacts (default: out)")
    p.add_argument("--format", choices=("csv", "json", "both"), default="both")
    p.add_argument("--plot", action="store_true", help="also write a static SVG plot (needs matplotlib)")


def build_parser():
    parser = argparse.ArgumentParser(prog="bayesphase", description="Phase-lock servo simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop, open-loop or dual-band simulation")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="parameter sweeps")
    p.add_argument("kind", choices=("surface", "kappa", "duty", "flux"))
    _common(p)
    for name in ("taus", "mus", "kappas", "duties", "fluxes"):
        p.add_argument(f"--{name}", help=f"comma-separated {name} grid (overrides the config)")
    p.add_argument("--n-seeds", type=int, help="Monte-Carlo seeds per cell")
    p.add_argument("--windows", type=int, help="measurement windows per run")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="fit a power-law diffusion model to a phase record")
    _common(p)
    p.add_argument("--input", help="CSV with columns t_us,phase_rad")
    p.add_argument("--preset", help="generator preset name (e.g. wiener_2e-4, lab_0km)")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        # an overflow anywhere in a run is a numerical failure, not a warning
        with np.errstate(over="raise"):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FitError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
