import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayesphase.seeding import seed_sequence, stream
from bayesphase.units import deg, hz_to_per_us, per_us_to_hz, rad, wrap

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestUnits:
    def test_degree_radian_round_trip(self):
        assert rad(180.0) == pytest.approx(math.pi)
        assert deg(math.pi / 2) == pytest.approx(90.0)

    def test_frequency_conversion(self):
        assert hz_to_per_us(1e6) == 1.0
        assert per_us_to_hz(hz_to_per_us(50.0)) == pytest.approx(50.0)

    @given(finite)
    def test_wrap_lands_in_half_open_interval(self, x):
        y = wrap(x)
        assert -math.pi < y <= math.pi
        assert math.isclose(math.cos(y), math.cos(x), abs_tol=1e-6)

    def test_wrap_keeps_pi(self):
        assert wrap(math.pi) == math.pi
        assert wrap(-math.pi) == math.pi
        assert np.all(wrap(np.array([3 * math.pi, 0.5])) == np.array([math.pi, 0.5]))


class TestStreams:
    def test_same_keys_same_draws(self):
        a = stream(3, "servo", "counts").random(5)
        b = stream(3, "servo", "counts").random(5)
        assert np.array_equal(a, b)

    def test_different_keys_differ(self):
        a = stream(3, "servo", "counts").random(5)
        b = stream(3, "noisegen", "white").random(5)
        c = stream(4, "servo", "counts").random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_integer_and_string_keys(self):
        assert seed_sequence(1, "a", 2).spawn_key[1] == 2
        with pytest.raises(ValueError):
            seed_sequence(1, -1)

    def test_independent_streams_uncorrelated(self):
        a = stream(0, "x").standard_normal(20000)
        b = stream(0, "y").standard_normal(20000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.03
