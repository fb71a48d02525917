import csv
import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesphase.config import load_config
from bayesphase.noisegen import NoiseModel, PhaseTrajectory
from bayesphase.optics import MeasurementConfig, tracking_snl
from bayesphase.servo import (
    Channel,
    DualBandConfig,
    ServoConfig,
    _lock_losses,
    _probe_layout,
    duty_cycle_sweep,
    make_trajectory,
    run_closed_loop,
    run_dual_band,
    run_open_loop,
)
from bayesphase.tracker import FilterConfig

WIENER = NoiseModel(2e-4)


def single_band(tau=10.0, mu=2.0, V=1.0, **kw):
    return ServoConfig(MeasurementConfig(mu, tau, V), fast_interval=tau, slow_interval=tau,
                       filter=FilterConfig(1.0), **kw)


@pytest.fixture(scope="module")
def ten_km():
    cfg, _ = load_config("link_10km")
    return cfg.dual_band


class TestServoConfig:
    def test_interval_ordering(self):
        m = MeasurementConfig(1.0, 50.0)
        with pytest.raises(ValueError):
            ServoConfig(m, fast_interval=10, slow_interval=50)
        with pytest.raises(ValueError):
            ServoConfig(m, fast_interval=50, slow_interval=10, sequence_period=40)
        with pytest.raises(ValueError):
            ServoConfig(m, fast_interval=45, slow_interval=10)
        with pytest.raises(ValueError):
            ServoConfig(m, duty_cycle=1.5)
        with pytest.raises(ValueError):
            ServoConfig(m, kp=-1)
        with pytest.raises(ValueError):
            ServoConfig(m, gain_mode="x")

    def test_defaults_and_round_trip(self):
        s = ServoConfig(MeasurementConfig(1.0, 50.0), actuator_resolution=0.01, spread="control_cycle")
        assert s.sequence_period == s.fast_interval
        assert ServoConfig.from_dict(s.to_dict()) == s

    def test_starved_flag(self, ten_km):
        res = ten_km.residual.servo
        assert res.probe_block == pytest.approx(32.5)
        assert res.starved  # 32.5 us of light per period is less than one 50 us window
        assert not replace(res, duty_cycle=0.1).starved
        assert replace(res, duty_cycle=0.0).starved

    def test_slow_schedule_shortens_window(self):
        s = ServoConfig(MeasurementConfig(1.0, 50.0), filter_schedule="slow")
        assert s.window == s.slow_interval


class TestProbeLayout:
    def test_partial_block(self, ten_km):
        s = ten_km.residual.servo
        overlap, closes = _probe_layout(s, 100)
        assert overlap[:4].tolist() == [10.0, 10.0, 10.0, 2.5]
        assert not np.any(overlap[4:50])
        assert closes[:2].tolist() == [3, 53]

    def test_continuous_probe_closes_every_window(self):
        s = ServoConfig(MeasurementConfig(1.0, 50.0), fast_interval=50, slow_interval=10)
        overlap, closes = _probe_layout(s, 50)
        assert np.all(overlap == 10.0)
        assert closes.tolist() == list(range(4, 50, 5))

    def test_offset_moves_block(self):
        s = ServoConfig(MeasurementConfig(1.0, 50.0), 50, 10, duty_cycle=0.2, sequence_period=500, probe_offset=100)
        overlap, _ = _probe_layout(s, 50)
        assert np.flatnonzero(overlap).tolist() == list(range(10, 20))


class TestOpenLoop:
    def test_no_diffusion(self):
        r = run_open_loop(NoiseModel(0.0), 1e4, 1.0, 0)
        assert r.residual_variance == 0.0

    def test_diffusion_slope(self):
        r = run_open_loop(WIENER, 1e6, 1.0, 3)
        assert r.metadata["diffusion_slope"] == pytest.approx(2e-4, rel=0.1)

    def test_composite_matches_generator(self):
        m = NoiseModel(1e-6, 0.72)
        r = run_open_loop(m, 2e5, 10.0, 4)
        tr = make_trajectory(m, 4, 10.0, 20000)
        assert np.array_equal(r.true_phase, tr.samples)
        assert r.metadata["trajectory"]["bank"] == tr.metadata["bank"]

    def test_validation(self):
        with pytest.raises(ValueError):
            run_open_loop(WIENER, 10.0, 1.0, 0)


class TestClosedLoop:
    def test_zero_noise_reaches_shot_floor(self):
        s = single_band()
        floor = 1 / (s.measurement.strength * s.measurement.window)
        for est in ("mle", "bayes"):
            r = run_closed_loop(NoiseModel(0.0), s, est, 4e4, 0)
            assert r.residual_variance <= 1.5 * floor
            assert r.lock_losses == 0

    def test_prior_assisted_beats_window_estimates(self):
        s = single_band()
        mle = run_closed_loop(WIENER, s, "mle", 4e5, 1)
        bayes = run_closed_loop(WIENER, s, "bayes", 4e5, 1)
        assert bayes.residual_variance < mle.residual_variance

    @pytest.mark.parametrize("tau", [1.0, 10.0])
    def test_within_factor_two_of_tracking_limit(self, tau):
        r = run_closed_loop(WIENER, single_band(tau), "bayes", 4e5, 2)
        snl = tracking_snl(2e-4, 2.0, 1.0)
        assert snl / 2 <= r.residual_variance <= 2 * snl

    def test_deterministic(self):
        s = single_band()
        a = run_closed_loop(WIENER, s, "bayes", 2e4, 9)
        b = run_closed_loop(WIENER, s, "bayes", 2e4, 9)
        assert a.correction.tobytes() == b.correction.tobytes()
        assert a.to_json() == b.to_json()
        assert a.series_csv() == b.series_csv()

    def test_variance_recomputable(self, ten_km):
        for ch in (ten_km.link, ten_km.residual):
            r = run_closed_loop(ch.noise, ch.servo, "bayes", 1e5, 0)
            assert r.residual_variance == pytest.approx(float(np.mean(r.steady_residual() ** 2)), rel=0, abs=1e-12)
            assert r.visibility <= ch.servo.measurement.visibility
            assert r.transient_cut == int(len(r.residual_series) * 0.1)

    @settings(max_examples=25)
    @given(st.floats(1e-3, 0.2), st.integers(0, 10_000), st.sampled_from(["mle", "bayes"]))
    def test_quantised_increments_and_accounting(self, q, seed, est):
        s = single_band(actuator_resolution=q)
        r = run_closed_loop(WIENER, s, est, 2e4, seed)
        steps = np.diff(r.correction) / q
        assert np.allclose(steps, np.round(steps), rtol=0, atol=1e-6)
        assert abs(r.metadata["applied_final"] - r.metadata["controller_output"]) <= q / 2 + 1e-12

    def test_unquantised_accounting_exact(self):
        r = run_closed_loop(WIENER, single_band(ki=0.1), "bayes", 2e4, 0)
        assert r.metadata["applied_final"] == pytest.approx(r.metadata["controller_output"], abs=1e-12)

    def test_causal(self, ten_km):
        ch = ten_km.residual
        dt = ch.servo.slow_interval
        n = 20_000
        tr = make_trajectory(ch.noise, 5, dt, n)
        cut = 7_000
        changed = tr.samples.copy()
        changed[cut:] += 1.0
        a = run_closed_loop(ch.noise, ch.servo, "bayes", n * dt, 5, trajectory=tr)
        b = run_closed_loop(ch.noise, ch.servo, "bayes", n * dt, 5,
                            trajectory=PhaseTrajectory(dt, changed, 5))
        early = a.times <= cut * dt
        assert np.array_equal(a.correction[early], b.correction[early])
        assert not np.array_equal(a.correction, b.correction)

    def test_trajectory_grid_checked(self):
        tr = make_trajectory(WIENER, 0, 1.0, 1000)
        with pytest.raises(ValueError):
            run_closed_loop(WIENER, single_band(), "bayes", 1e4, 0, trajectory=tr)

    def test_starved_run_flagged_not_raised(self, ten_km):
        ch = ten_km.residual
        r = run_closed_loop(ch.noise, replace(ch.servo, duty_cycle=0.0), "bayes", 5e4, 0)
        assert r.starved
        assert r.metadata["measurements"] == 0

    def test_bad_estimator(self):
        with pytest.raises(ValueError):
            run_closed_loop(WIENER, single_band(), "kalman", 1e4, 0)

    def test_monotone_in_duty(self, ten_km):
        ch = ten_km.residual
        means = []
        for duty in (0.001, 0.02, 0.065, 0.2, 1.0):
            s = replace(ch.servo, duty_cycle=duty)
            means.append(np.mean([run_closed_loop(ch.noise, s, "bayes", 1e5, k).residual_variance
                                  for k in range(20)]))
        assert all(a >= b for a, b in zip(means, means[1:]))

    def test_suppression_reported(self):
        r = run_closed_loop(WIENER, single_band(), "bayes", 1e5, 0)
        assert isinstance(r.metadata["suppression_db_below_500hz"], float)


class TestLockLosses:
    def test_fringe_slip_counted_once(self):
        assert _lock_losses(np.array([0.0, 0.1, 3.5, 6.3, 6.2]), math.pi) == 1

    def test_return_and_second_departure(self):
        assert _lock_losses(np.array([0.0, 4.0, 0.2, 4.0, 0.0]), math.pi) == 2

    def test_quiet_series(self):
        assert _lock_losses(np.full(10, 0.3), math.pi) == 0
        assert _lock_losses(np.array([]), math.pi) == 0


class TestDualBand:
    def test_noiseless_channels_keep_base_visibility(self, ten_km):
        quiet = DualBandConfig(replace(ten_km.link, noise=NoiseModel(0.0)),
                               replace(ten_km.residual, noise=NoiseModel(0.0)), 0.9826)
        _, _, comb = run_dual_band(quiet, 5e4, 0, "bayes")
        assert comb.visibility == 0.9826

    def test_link_servo_helps_at_long_distance(self):
        cfg, _ = load_config("link_100km")
        _, _, on = run_dual_band(cfg.dual_band, 2e5, 0, "bayes", link_enabled=True)
        _, _, off = run_dual_band(cfg.dual_band, 2e5, 0, "bayes", link_enabled=False)
        assert off.visibility < on.visibility

    def test_combined_visibility_formula(self, ten_km):
        link, res, comb = run_dual_band(ten_km, 1e5, 3, "bayes")
        v = 0.9826 * math.exp(-(link.residual_variance + res.residual_variance) / 2)
        assert comb.visibility == pytest.approx(v)
        assert comb.visibility <= 0.9826

    def test_validation(self, ten_km):
        with pytest.raises(ValueError):
            DualBandConfig(ten_km.link, ten_km.residual, 1.5)


class TestDutySweep:
    def test_full_duty_matches_continuous_run(self, ten_km):
        ch = ten_km.residual
        rows = duty_cycle_sweep(ch, [1.0], 5e4, 2, ("bayes",))
        r = run_closed_loop(ch.noise, replace(ch.servo, duty_cycle=1.0), "bayes", 5e4, 2)
        assert rows[0]["residual_variance"] == r.residual_variance
        assert rows[0]["lock_losses"] == r.lock_losses

    def test_rows_paired_and_complete(self, ten_km):
        rows = duty_cycle_sweep(ten_km, [0.02, 0.2], 5e4, 0)
        assert [(r["duty_cycle"], r["estimator"]) for r in rows] == [
            (0.02, "mle"), (0.02, "bayes"), (0.2, "mle"), (0.2, "bayes")]

    def test_validation(self, ten_km):
        with pytest.raises(ValueError):
            duty_cycle_sweep(ten_km, [], 5e4, 0)
        with pytest.raises(ValueError):
            duty_cycle_sweep(ten_km, [0.0], 5e4, 0)


class TestArtifacts:
    def test_series_csv_columns(self):
        r = run_closed_loop(WIENER, single_band(), "mle", 1e4, 0)
        rows = list(csv.reader(io.StringIO(r.series_csv())))
        assert rows[0] == ["t_us", "true_phase_rad", "correction_rad", "residual_rad", "probe_on"]
        assert len(rows) == len(r.times) + 1
        assert float(rows[5][3]) == r.residual_series[4]

    def test_json_embeds_config_and_version(self):
        from bayesphase import __version__

        r = run_closed_loop(WIENER, single_band(), "mle", 1e4, 0)
        doc = json.loads(r.to_json(config={"k": 1}))
        assert doc["version"] == __version__
        assert doc["config"] == {"k": 1}
        assert doc["result"]["lock_losses"] == r.lock_losses

    def test_channel_round_trip(self, ten_km):
        assert DualBandConfig.from_dict(ten_km.to_dict()) == ten_km
        assert Channel.from_dict(ten_km.link.to_dict()) == ten_km.link
