"""Cooperative lane-change prediction: stereo perception, relay messaging,
Bayesian lookup-table prediction, EV speed control and a scenario simulator."""

__version__ = "0.1.0"
