"""Interlaced on-line parameter estimation toolbox.

Library + CLI for exponentially convergent on-line parameter estimation
under interval excitation, with excitation diagnostics, robustified and
disturbance-rejecting variants, a monotone nonlinear-parameterization
estimator, an input-error adaptive-control loop, a mixing-first baseline
estimator, and a deterministic scenario harness.
"""

__version__ = "0.1.0"
