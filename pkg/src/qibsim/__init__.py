"""qibsim: simulation and rate analysis for time-multiplexed photonic
entanglement generation built around a polarization interference buffer."""

__version__ = "0.1.0"

__all__ = [
    "statevec",
    "qib",
    "protocols",
    "metrics",
    "rates",
    "montecarlo",
    "cli",
]
