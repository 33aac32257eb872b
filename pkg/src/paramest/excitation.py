"""Excitation and identifiability diagnostics for regressor traces.

A regressor is interval-exciting when its finite-window Gramian clears a
positive threshold, and identifiable when some set of samples spans the
parameter space.  The two notions coincide, which the test-suite checks on
randomized traces; this module provides both certificates plus the
contraction margin used to lower-bound the mixed scalar regressor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import DimensionError, TimeGrid, numeric_rank

#: Relative scale of the default excitation threshold per parameter.
DEFAULT_IE_THRESHOLD = 1e-6
#: Default tolerance for the rank-based identifiability scan.
DEFAULT_RANK_TOL = 1e-8


@dataclass
class RegressorTrace:
    """Sampled regressor phi on a uniform grid, continuous or discrete."""

    grid: TimeGrid
    samples: np.ndarray
    mode: str = "ct"

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.ndim != 2:
            raise DimensionError("samples must be an (n_samples, q) array")
        if self.mode not in ("ct", "dt"):
            raise ValueError("mode must be 'ct' or 'dt'")
        if not np.isfinite(self.samples).all():
            raise ValueError("regressor samples must be finite")

    @property
    def q(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass
class IeCertificate:
    """Outcome of an interval-excitation scan.

    ``level`` is the smallest Gramian eigenvalue attained at ``horizon``
    (seconds in CT, steps in DT). ``excited`` means the level cleared the
    threshold at that horizon.
    """

    excited: bool
    level: float
    horizon: float
    horizon_index: int
    threshold: float


def ie_gramian(trace: RegressorTrace, horizon_index: int) -> np.ndarray:
    """Excitation Gramian up to (and including) ``horizon_index``.

    CT traces use the trapezoidal rule on the sampling grid, DT traces the
    exact sum of outer products.
    """
    if trace.n_samples == 0:
        raise DimensionError("empty trace has no Gramian")
    if not 0 <= horizon_index < trace.n_samples:
        raise DimensionError(
            f"horizon_index {horizon_index} outside trace of {trace.n_samples} samples"
        )
    phi = trace.samples[: horizon_index + 1]
    outer = phi[:, :, None] * phi[:, None, :]
    if trace.mode == "dt":
        return outer.sum(axis=0)
    if horizon_index == 0:
        return np.zeros((trace.q, trace.q))
    w = np.full(horizon_index + 1, trace.grid.h)
    w[0] = w[-1] = 0.5 * trace.grid.h
    return np.tensordot(w, outer, axes=1)


def check_ie(trace: RegressorTrace, threshold: float | None = None) -> IeCertificate:
    """Scan horizons for the first window whose Gramian clears ``threshold``."""
    if threshold is None:
        threshold = DEFAULT_IE_THRESHOLD * trace.q
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    phi = trace.samples
    n, q = phi.shape
    gram = np.zeros((q, q))
    level = 0.0
    start = 0 if trace.mode == "dt" else 1
    if trace.mode == "dt":
        gram += np.outer(phi[0], phi[0])
        level = float(np.linalg.eigvalsh(gram)[0])
        if level >= threshold:
            return IeCertificate(True, level, 0, 0, threshold)
        start = 1
    for k in range(start, n):
        if trace.mode == "dt":
            gram += np.outer(phi[k], phi[k])
        else:
            gram += (0.5 * trace.grid.h) * (np.outer(phi[k - 1], phi[k - 1]) + np.outer(phi[k], phi[k]))
        level = float(np.linalg.eigvalsh(gram)[0])
        if level >= threshold:
            horizon = k if trace.mode == "dt" else k * trace.grid.h
            return IeCertificate(True, level, horizon, k, threshold)
    last = n - 1
    horizon = last if trace.mode == "dt" else last * trace.grid.h
    return IeCertificate(False, max(level, 0.0), horizon, last, threshold)


def check_identifiability(trace: RegressorTrace, tol: float = DEFAULT_RANK_TOL):
    """Greedy search for q samples spanning the parameter space.

    Walks the trace and keeps a sample whenever it raises the numeric rank
    of the kept set; returns (identifiable, kept sample indices).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = trace.q
    kept: list[int] = []
    cols = np.empty((q, 0))
    rank = 0
    for k in range(trace.n_samples):
        candidate = np.column_stack([cols, trace.samples[k]])
        r = numeric_rank(candidate, tol)
        if r > rank:
            kept.append(k)
            cols = candidate
            rank = r
            if rank == q:
                return True, kept
    return False, kept


def contraction_margin(gamma_bar: float, level: float, horizon: float, phi_sq_max: float) -> float:
    """Guaranteed eigenvalue margin of I - Phi once excitation is gathered.

    For a first-stage gain lower bound ``gamma_bar``, Gramian level and
    horizon from an excitation certificate, and ``phi_sq_max`` the maximum
    squared regressor norm over the window, returns
    eps = 1 - sqrt(1 - r) with r = gamma_bar*level / (1 + gamma_bar^2 *
    horizon^2 * phi_sq_max^2).  eps**q lower-bounds the mixed regressor
    magnitude after the horizon.
    """
    if min(gamma_bar, level, horizon, phi_sq_max) <= 0:
        raise ValueError("all arguments must be positive")
    ratio = gamma_bar * level / (1.0 + gamma_bar**2 * horizon**2 * phi_sq_max**2)
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"contraction ratio {ratio} outside (0, 1); bound is vacuous")
    return 1.0 - math.sqrt(1.0 - ratio)


def spectral_delta_floor(alpha: float, q: int) -> float:
    """Lower bound (1-alpha)^q on |det(I - Phi)| when ||Phi||_2 <= alpha < 1."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return (1.0 - alpha) ** q
