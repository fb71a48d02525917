"""Prior-assisted phase tracking and stabilisation for photon-starved interferometers."""

__version__ = "0.1.0"
