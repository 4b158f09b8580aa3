"""Simulation and numerical checks for piecewise-deterministic Markov processes."""
