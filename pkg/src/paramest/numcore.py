"""Small dense linear algebra, fixed-step integration and LTI filters.

Everything in here is deliberately fixed-step and allocation-light: the
simulation harness demands bit-reproducible runs, so there is no adaptive
stepping and no randomized algorithm anywhere in this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Matrix/vector dimensions do not match the operation."""


class NumericOverflowError(ArithmeticError):
    """A state or stage evaluation became non-finite at time ``t``."""

    def __init__(self, t, message="non-finite value during integration"):
        super().__init__(f"{message} (t={t})")
        self.t = t


class RealizationError(ValueError):
    """Transfer operator cannot be realized (improper or degenerate)."""


# Adjugates below this determinant magnitude fall back to cofactors so the
# identity adj(m) @ m == det(m) * I survives at (near-)singular points.
_SINGULAR_TOL = 1e-12


def det(m: np.ndarray) -> float:
    """Determinant of a square matrix.

    Closed-form cofactor expressions are used up to 4x4 (exact zero for
    exactly rank-deficient input); larger matrices go through LAPACK's
    partially pivoted LU.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"det needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    if n == 2:
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    if n == 3:
        a, b, c = m[0]
        d, e, f = m[1]
        g, h, i = m[2]
        return float(a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g))
    if n == 4:
        s, c4 = _pair_minors(m)
        return float(
            s[0] * c4[5] - s[1] * c4[4] + s[2] * c4[3]
            + s[3] * c4[2] - s[4] * c4[1] + s[5] * c4[0]
        )
    return float(np.linalg.det(m))


def _pair_minors(m):
    """2x2 minors of the top and bottom row pairs of a 4x4 matrix."""
    s = (
        m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0],
        m[0, 0] * m[1, 2] - m[0, 2] * m[1, 0],
        m[0, 0] * m[1, 3] - m[0, 3] * m[1, 0],
        m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1],
        m[0, 1] * m[1, 3] - m[0, 3] * m[1, 1],
        m[0, 2] * m[1, 3] - m[0, 3] * m[1, 2],
    )
    c = (
        m[2, 0] * m[3, 1] - m[2, 1] * m[3, 0],
        m[2, 0] * m[3, 2] - m[2, 2] * m[3, 0],
        m[2, 0] * m[3, 3] - m[2, 3] * m[3, 0],
        m[2, 1] * m[3, 2] - m[2, 2] * m[3, 1],
        m[2, 1] * m[3, 3] - m[2, 3] * m[3, 1],
        m[2, 2] * m[3, 3] - m[2, 3] * m[3, 2],
    )
    return s, c


def adjugate(m: np.ndarray) -> np.ndarray:
    """Classical adjugate, satisfying adj(m) @ m == det(m) * I.

    The identity must hold also for singular matrices, so small sizes use
    exact cofactor formulas and larger matrices only take the fast
    det * inv shortcut when safely away from singularity.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"adjugate needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
    if n == 3:
        a, b, c = m[0]
        d, e, f = m[1]
        g, h, i = m[2]
        return np.array(
            [
                [e * i - f * h, c * h - b * i, b * f - c * e],
                [f * g - d * i, a * i - c * g, c * d - a * f],
                [d * h - e * g, b * g - a * h, a * e - b * d],
            ]
        )
    if n == 4:
        s, c = _pair_minors(m)
        out = np.empty((4, 4))
        out[0, 0] = m[1, 1] * c[5] - m[1, 2] * c[4] + m[1, 3] * c[3]
        out[0, 1] = -m[0, 1] * c[5] + m[0, 2] * c[4] - m[0, 3] * c[3]
        out[0, 2] = m[3, 1] * s[5] - m[3, 2] * s[4] + m[3, 3] * s[3]
        out[0, 3] = -m[2, 1] * s[5] + m[2, 2] * s[4] - m[2, 3] * s[3]
        out[1, 0] = -m[1, 0] * c[5] + m[1, 2] * c[2] - m[1, 3] * c[1]
        out[1, 1] = m[0, 0] * c[5] - m[0, 2] * c[2] + m[0, 3] * c[1]
        out[1, 2] = -m[3, 0] * s[5] + m[3, 2] * s[2] - m[3, 3] * s[1]
        out[1, 3] = m[2, 0] * s[5] - m[2, 2] * s[2] + m[2, 3] * s[1]
        out[2, 0] = m[1, 0] * c[4] - m[1, 1] * c[2] + m[1, 3] * c[0]
        out[2, 1] = -m[0, 0] * c[4] + m[0, 1] * c[2] - m[0, 3] * c[0]
        out[2, 2] = m[3, 0] * s[4] - m[3, 1] * s[2] + m[3, 3] * s[0]
        out[2, 3] = -m[2, 0] * s[4] + m[2, 1] * s[2] - m[2, 3] * s[0]
        out[3, 0] = -m[1, 0] * c[3] + m[1, 1] * c[1] - m[1, 2] * c[0]
        out[3, 1] = m[0, 0] * c[3] - m[0, 1] * c[1] + m[0, 2] * c[0]
        out[3, 2] = -m[3, 0] * s[3] + m[3, 1] * s[1] - m[3, 2] * s[0]
        out[3, 3] = m[2, 0] * s[3] - m[2, 1] * s[1] + m[2, 2] * s[0]
        return out
    d = det(m)
    if abs(d) >= _SINGULAR_TOL:
        return d * np.linalg.inv(m)
    return _adjugate_cofactor(m)


def _adjugate_cofactor(m):
    n = m.shape[0]
    out = np.empty((n, n))
    rows = np.arange(n)
    for i in range(n):
        ri = rows[rows != i]
        for j in range(n):
            minor = m[np.ix_(ri, rows[rows != j])]
            out[j, i] = (-1.0) ** (i + j) * det(minor)
    return out


def numeric_rank(m: np.ndarray, tol: float = 1e-9) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0
    if m.ndim == 1:
        m = m[:, None]
    sv = np.linalg.svd(m, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def rk4_step(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of x' = f(t, x)."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise NumericOverflowError(t)
    return out


@dataclass
class TimeGrid:
    """Uniform sampling grid: times t0 + k*h for k = 0..n_steps.

    n_steps == 0 denotes a zero-length run (drivers emit empty traces).
    In discrete-time scenarios ``h`` is a unit step and times are indices.
    """

    h: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid step h must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @property
    def n_samples(self) -> int:
        return self.n_steps + 1 if self.n_steps > 0 else 0

    def times(self) -> np.ndarray:
        if self.n_steps == 0:
            return np.empty(0)
        return self.t0 + self.h * np.arange(self.n_steps + 1)


class LtiFilter:
    """State-space realization x' = Ax + Bu, y = Cx + Du with owned state.

    The input of :meth:`step` is either a sample held constant across the
    RK4 stages (how sampled signals on the grid are consumed) or a callable
    of time, which is evaluated at the stage times and gives full RK4 order
    for analytic inputs.
    """

    def __init__(self, A, B, C, D, x0=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.D = np.atleast_2d(np.asarray(D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionError("B/C dimensions inconsistent with A")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DimensionError("D dimensions inconsistent with B/C")
        self.x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.t = 0.0

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def reset(self, x0=None, t0=0.0):
        self.x = np.zeros(self.n_states) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.t = t0

    def output(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.C @ self.x + self.D @ u

    def step(self, u, h: float) -> np.ndarray:
        """Advance one step; returns the output at the end of the step."""
        if callable(u):
            u_of_t = lambda t: np.atleast_1d(np.asarray(u(t), dtype=float))
        else:
            u_held = np.atleast_1d(np.asarray(u, dtype=float))
            u_of_t = lambda t: u_held
        if u_of_t(self.t).shape[0] != self.B.shape[1]:
            raise DimensionError("input dimension does not match B")
        f = lambda t, x: self.A @ x + self.B @ u_of_t(t)
        self.x = rk4_step(f, self.t, self.x, h)
        self.t += h
        return self.C @ self.x + self.D @ u_of_t(self.t)


def filter_step(filt: LtiFilter, u, h: float) -> np.ndarray:
    """Functional alias for :meth:`LtiFilter.step`."""
    return filt.step(u, h)


def run_filter(filt: LtiFilter, u_samples: np.ndarray, h: float, interp: str = "linear") -> np.ndarray:
    """Filter a sampled signal; output samples align with input samples.

    out[k] = C x(t_k) + D u[k].  Between samples the input is either held
    ("hold") or linearly interpolated ("linear"); interpolation needs the
    whole trace up front but keeps second-order accuracy.
    """
    u_samples = np.asarray(u_samples, dtype=float)
    if u_samples.ndim == 1:
        u_samples = u_samples[:, None]
    n = u_samples.shape[0]
    p = filt.C.shape[0]
    out = np.empty((n, p))
    if n == 0:
        return out
    out[0] = filt.output(u_samples[0])
    for k in range(n - 1):
        u0, u1 = u_samples[k], u_samples[k + 1]
        if interp == "linear":
            t0 = filt.t
            u_stage = lambda t: u0 + (u1 - u0) * ((t - t0) / h)
            filt.step(u_stage, h)
        else:
            filt.step(u0, h)
        out[k + 1] = filt.output(u1)
    return out


def realize_rational(numerator, denominator) -> LtiFilter:
    """Controllable-canonical realization of num(P)/den(P).

    Coefficient lists are in descending powers. The ratio must be proper;
    a strictly proper ratio gets D = 0, a biproper one gets the long
    division quotient as feedthrough.
    """
    num = np.trim_zeros(np.asarray(numerator, dtype=float), "f")
    den = np.asarray(denominator, dtype=float)
    if den.size == 0 or den[0] == 0.0:
        raise RealizationError("denominator must have a nonzero leading coefficient")
    if den.size < 2:
        raise RealizationError("denominator degree must be at least 1")
    if num.size == 0:
        num = np.zeros(1)
    if num.size > den.size:
        raise RealizationError("improper ratio: numerator degree exceeds denominator degree")
    num = num / den[0]
    den = den / den[0]
    n = den.size - 1
    if num.size == den.size:
        d0 = num[0]
        rem = num[1:] - d0 * den[1:]
    else:
        d0 = 0.0
        rem = np.concatenate([np.zeros(den.size - 1 - num.size), num])
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[1:][::-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = rem[::-1].reshape(1, n).copy()
    D = np.array([[d0]])
    return LtiFilter(A, B, C, D)


@dataclass
class SignalTrace:
    """Uniformly sampled scalar or vector time series."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.grid.n_samples:
            raise DimensionError(
                f"trace length {self.values.shape[0]} does not match grid ({self.grid.n_samples})"
            )
