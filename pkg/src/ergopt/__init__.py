"""Ergodic optimization for expanding maps: sub-actions, maximizing orbits,
zero-temperature Gibbs limits and locking perturbations."""

__version__ = "0.1.0"
