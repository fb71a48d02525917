"""JSON run configuration with a strict schema.

Every section accepts a fixed set of keys; anything else is rejected with
the dotted path of the offending key. Angles may be given in degrees via
keys ending in ``_deg``; they are converted to radians once, at load time,
and the resolved configuration only carries radians.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .noisegen import NoiseModel, Tone
from .optics import MeasurementConfig
from .servo import Channel, DualBandConfig, ServoConfig
from .tracker import FilterConfig
from .units import rad

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "apply_override",
           "list_presets", "preset_path"]

KINDS = ("closed_loop", "open_loop", "dual_band", "calibrate")
ESTIMATOR_CHOICES = ("mle", "bayes", "both")

TOP_KEYS = {"kind", "description", "noise", "measurement", "servo", "estimator", "duration",
            "seed", "outputs", "dual_band", "sweep", "calibrate", "step"}
NOISE_KEYS = {"diffusion_coeff", "coeff_rad", "coeff_deg", "exponent", "tones", "white_background"}
TONE_KEYS = {"frequency", "amplitude", "amplitude_deg"}
MEAS_KEYS = {"flux", "window", "visibility", "dark_rate"}
SERVO_KEYS = {"fast_interval", "slow_interval", "duty_cycle", "sequence_period", "kp", "ki",
              "actuator_resolution", "actuator_resolution_deg", "probe_offset", "filter",
              "gain_mode", "filter_schedule", "spread", "lock_threshold", "lock_threshold_deg",
              "transient_fraction"}
FILTER_KEYS = {"kappa", "prior_diffusion", "prior_coeff_deg", "prior_coeff_rad", "prior_exponent"}
CHANNEL_KEYS = {"noise", "measurement", "servo"}
DUAL_KEYS = {"link", "residual", "base_visibility"}
SWEEP_KEYS = {"taus", "mus", "kappas", "duties", "fluxes", "tau", "seeds", "windows",
              "diffusion_coeff", "visibility", "kappa", "gain_mode"}
CALIBRATE_KEYS = {"taus", "step", "duration"}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _join(path, key):
    return f"{path}.{key}" if path else key


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path)
    for k in d:
        if k not in allowed:
            raise ConfigError("unknown key", f"{path}.{k}" if path else k)


def _num(d, key, path, default=None, positive=False, nonneg=False):
    if key not in d:
        if default is None:
            raise ConfigError("missing required key", _join(path, key))
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {v!r}", _join(path, key))
    if positive and not v > 0:
        raise ConfigError("must be > 0", _join(path, key))
    if nonneg and v < 0:
        raise ConfigError("must be >= 0", _join(path, key))
    return float(v)


def _angle(d, key, path, default):
    """Read ``key`` (radians) or ``key_deg`` (degrees), not both."""
    has_r, has_d = key in d, f"{key}_deg" in d
    if has_r and has_d:
        raise ConfigError(f"give either {key} or {key}_deg, not both", _join(path, key))
    if has_d:
        return rad(_num(d, f"{key}_deg", path))
    return _num(d, key, path, default)


def _wrap_errors(fn, path):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from exc


def parse_noise(d, path="noise"):
    _check_keys(d, NOISE_KEYS, path)
    given = [k for k in ("diffusion_coeff", "coeff_rad", "coeff_deg") if k in d]
    if len(given) > 1:
        raise ConfigError("give only one of diffusion_coeff, coeff_rad, coeff_deg", path)
    if "coeff_deg" in d:
        D = rad(_num(d, "coeff_deg", path, nonneg=True)) ** 2
    elif "coeff_rad" in d:
        D = _num(d, "coeff_rad", path, nonneg=True) ** 2
    else:
        D = _num(d, "diffusion_coeff", path, 0.0)
    tones = []
    for i, t in enumerate(d.get("tones", [])):
        tp = f"{path}.tones[{i}]"
        _check_keys(t, TONE_KEYS, tp)
        amp = _angle(t, "amplitude", tp, None)
        tones.append(_wrap_errors(lambda: Tone(_num(t, "frequency", tp), amp), tp))
    return _wrap_errors(lambda: NoiseModel(D, _num(d, "exponent", path, 0.5), tuple(tones),
                                           _num(d, "white_background", path, 0.0)), path)


def parse_measurement(d, path="measurement", window=None):
    _check_keys(d, MEAS_KEYS, path)
    win = _num(d, "window", path, window if window is not None else None)
    return _wrap_errors(lambda: MeasurementConfig(_num(d, "flux", path), win,
                                                  _num(d, "visibility", path, 1.0),
                                                  _num(d, "dark_rate", path, 0.0)), path)


def parse_filter(d, path):
    _check_keys(d, FILTER_KEYS, path)
    given = [k for k in ("prior_diffusion", "prior_coeff_deg", "prior_coeff_rad") if k in d]
    if len(given) > 1:
        raise ConfigError("give only one prior width key", path)
    if "prior_coeff_deg" in d:
        pd = rad(_num(d, "prior_coeff_deg", path, nonneg=True)) ** 2
    elif "prior_coeff_rad" in d:
        pd = _num(d, "prior_coeff_rad", path, nonneg=True) ** 2
    else:
        pd = _num(d, "prior_diffusion", path, 0.0)
    return _wrap_errors(lambda: FilterConfig(_num(d, "kappa", path, 1.0), pd,
                                             _num(d, "prior_exponent", path, 0.5)), path)


def _str(d, key, path, default, choices=None):
    v = d.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}", _join(path, key))
    if choices and v not in choices:
        raise ConfigError(f"must be one of {list(choices)}", _join(path, key))
    return v


def parse_servo(d, meas_dict, path="servo", meas_path="measurement"):
    _check_keys(d, SERVO_KEYS, path)
    fast = _num(d, "fast_interval", path, 50.0, positive=True)
    meas = parse_measurement(meas_dict, meas_path, window=fast)
    filt = parse_filter(d.get("filter", {}), f"{path}.filter")

    def build():
        return ServoConfig(
            measurement=meas,
            fast_interval=fast,
            slow_interval=_num(d, "slow_interval", path, min(10.0, fast), positive=True),
            duty_cycle=_num(d, "duty_cycle", path, 1.0),
            sequence_period=_num(d, "sequence_period", path, fast),
            kp=_num(d, "kp", path, 1.0),
            ki=_num(d, "ki", path, 0.0),
            actuator_resolution=_angle(d, "actuator_resolution", path, 0.0),
            probe_offset=_num(d, "probe_offset", path, 0.0),
            filter=filt,
            gain_mode=_str(d, "gain_mode", path, "unity"),
            filter_schedule=_str(d, "filter_schedule", path, "fast"),
            spread=_str(d, "spread", path, "next_measurement"),
            lock_threshold=_angle(d, "lock_threshold", path, math.pi),
            transient_fraction=_num(d, "transient_fraction", path, 0.1),
        )

    return _wrap_errors(build, path)


def parse_channel(d, path):
    _check_keys(d, CHANNEL_KEYS, path)
    for k in CHANNEL_KEYS:
        if k not in d:
            raise ConfigError("missing required key", f"{path}.{k}")
    return Channel(parse_noise(d["noise"], f"{path}.noise"),
                   parse_servo(d["servo"], d["measurement"], f"{path}.servo", f"{path}.measurement"))


@dataclass(frozen=True)
class RunConfig:
    kind: str
    noise: NoiseModel | None
    measurement: MeasurementConfig | None
    servo: ServoConfig | None
    estimator: str
    duration: float
    seed: int
    outputs: tuple = ()
    dual_band: DualBandConfig | None = None
    sweep: dict = field(default_factory=dict)
    calibrate: dict = field(default_factory=dict)
    step: float = 1.0
    description: str = ""

    @property
    def estimators(self):
        return ("mle", "bayes") if self.estimator == "both" else (self.estimator,)

    def to_dict(self):
        """Resolved configuration (radians, defaults filled in)."""
        d = {"kind": self.kind, "estimator": self.estimator, "duration": self.duration,
             "seed": self.seed, "outputs": list(self.outputs), "step": self.step,
             "description": self.description}
        if self.noise is not None:
            d["noise"] = self.noise.to_dict()
        if self.servo is not None:
            d["servo"] = self.servo.to_dict()
        elif self.measurement is not None:
            d["measurement"] = self.measurement.to_dict()
        if self.dual_band is not None:
            d["dual_band"] = self.dual_band.to_dict()
        if self.sweep:
            d["sweep"] = self.sweep
        if self.calibrate:
            d["calibrate"] = self.calibrate
        return d


def _list_of_numbers(v, path):
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError("expected a list of numbers", path)
    return [float(x) for x in v]


def _parse_sweep(d):
    _check_keys(d, SWEEP_KEYS, "sweep")
    out = {}
    for k, v in d.items():
        p = f"sweep.{k}"
        if k in ("taus", "mus", "kappas", "duties", "fluxes"):
            out[k] = _list_of_numbers(v, p)
        elif k == "gain_mode":
            out[k] = _str(d, k, "sweep", "unity", ("unity", "posterior"))
        elif k in ("seeds", "windows"):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError("expected a positive integer", p)
            out[k] = v
        else:
            out[k] = _num(d, k, "sweep")
    return out


def _parse_calibrate(d):
    _check_keys(d, CALIBRATE_KEYS, "calibrate")
    out = {}
    if "taus" in d:
        out["taus"] = _list_of_numbers(d["taus"], "calibrate.taus")
    for k in ("step", "duration"):
        if k in d:
            out[k] = _num(d, k, "calibrate", positive=True)
    return out


def parse_config(raw):
    """Validate a raw config dict and build a :class:`RunConfig`."""
    raw = copy.deepcopy(raw)
    _check_keys(raw, TOP_KEYS, "")
    kind = _str(raw, "kind", "", "closed_loop", KINDS) if "kind" in raw else "closed_loop"
    estimator = _str(raw, "estimator", "", "bayes", ESTIMATOR_CHOICES) if "estimator" in raw else "bayes"
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("expected a non-negative integer", "seed")
    outputs = raw.get("outputs", [])
    if not isinstance(outputs, list) or not all(isinstance(o, str) for o in outputs):
        raise ConfigError("expected a list of file names", "outputs")
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("expected a string", "description")

    noise = parse_noise(raw["noise"]) if "noise" in raw else None
    servo = meas = None
    if "servo" in raw:
        if "measurement" not in raw:
            raise ConfigError("a servo section needs a measurement section", "measurement")
        servo = parse_servo(raw["servo"], raw["measurement"])
        meas = servo.measurement
    elif "measurement" in raw:
        meas = parse_measurement(raw["measurement"], window=1.0)
    dual = None
    if "dual_band" in raw:
        db = raw["dual_band"]
        _check_keys(db, DUAL_KEYS, "dual_band")
        for k in ("link", "residual"):
            if k not in db:
                raise ConfigError("missing required key", f"dual_band.{k}")
        dual = _wrap_errors(lambda: DualBandConfig(parse_channel(db["link"], "dual_band.link"),
                                                   parse_channel(db["residual"], "dual_band.residual"),
                                                   _num(db, "base_visibility", "dual_band", 1.0)),
                            "dual_band")
    if kind == "closed_loop" and (noise is None or servo is None):
        raise ConfigError("closed_loop runs need noise, measurement and servo sections", "kind")
    if kind == "open_loop" and noise is None:
        raise ConfigError(f"{kind} runs need a noise section", "kind")
    if kind == "dual_band" and dual is None:
        raise ConfigError("dual_band runs need a dual_band section", "kind")
    duration = _num(raw, "duration", "", 1e5, positive=True)
    step = _num(raw, "step", "", 1.0, positive=True)
    return RunConfig(kind, noise, meas, servo, estimator, duration, seed, tuple(outputs), dual,
                     _parse_sweep(raw.get("sweep", {})), _parse_calibrate(raw.get("calibrate", {})),
                     step, description)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw, assignment):
    """Apply one ``dotted.key=value`` override in place; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r} has an empty key")
    node = raw
    for i, p in enumerate(parts[:-1]):
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError("cannot descend into a non-object", ".".join(parts[: i + 1]))
        node = nxt
    node[parts[-1]] = _parse_value(text)
    return raw


def list_presets():
    root = resources.files("bayesphase") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_path(name):
    root = resources.files("bayesphase") / "presets"
    cand = root / (name if name.endswith(".json") else f"{name}.json")
    return cand if cand.is_file() else None


def load_raw(source):
    """Read a config from a file path or a bundled preset name."""
    path = Path(source)
    if path.is_file():
        text, origin = path.read_text(), str(path)
    else:
        pp = preset_path(source)
        if pp is None:
            raise ConfigError(f"no such config file or preset: {source!r} "
                              f"(presets: {', '.join(list_presets())})")
        text, origin = pp.read_text(), f"preset:{source}"
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {origin}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    return raw


def load_config(source=None, overrides=(), seed=None, default=None, base=None):
    """Load, override and validate. Returns ``(RunConfig, raw_dict)``.

    ``source`` (a path or preset name) falls back to the preset ``default``;
    with neither, ``base`` (or an empty dict) is the starting point.
    """
    if source or default:
        raw = load_raw(source if source is not None else default)
    else:
        raw = copy.deepcopy(base) if base else {}
    for a in overrides:
        apply_override(raw, a)
    if seed is not None:
        raw["seed"] = seed
    return parse_config(raw), raw
