"""Linear-regression-equation signal sources.

An Lre produces sampled (phi, y) pairs on a grid with y = phi' theta,
optionally with an additive scalar perturbation d.  Sources are either
direct callables, stored arrays, or a transfer-function system whose
regressor is generated by filter banks integrated jointly with the plant
(so the regression identity holds at sample times to machine precision).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import DimensionError, TimeGrid, rk4_step


@dataclass
class LreData:
    """Sampled regression data on a grid."""

    grid: TimeGrid
    mode: str
    phi: np.ndarray
    y: np.ndarray
    d: np.ndarray = None
    theta: np.ndarray = None

    def __post_init__(self):
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        n = self.grid.n_samples
        if self.phi.shape[0] != n or self.y.shape[0] != n:
            raise DimensionError("phi/y sample counts do not match the grid")
        if self.d is None:
            self.d = np.zeros(n)
        else:
            self.d = np.asarray(self.d, dtype=float)
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=float)

    @property
    def q(self) -> int:
        return self.phi.shape[1]


class CallableLre:
    """LRE built from a regressor function of time and a true parameter.

    ``disturbance`` is an optional callable d(t, phi, theta) added to y.
    """

    def __init__(self, phi_fn, theta, disturbance=None):
        self.phi_fn = phi_fn
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.disturbance = disturbance

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    def sample(self, grid: TimeGrid, mode: str = "ct") -> LreData:
        n = grid.n_samples
        phi = np.empty((n, self.q))
        y = np.empty(n)
        d = np.zeros(n)
        for k in range(n):
            t = grid.t0 + k * grid.h if mode == "ct" else k
            p = np.atleast_1d(np.asarray(self.phi_fn(t), dtype=float))
            phi[k] = p
            y[k] = p @ self.theta
            if self.disturbance is not None:
                d[k] = self.disturbance(t, p, self.theta)
        return LreData(grid, mode, phi, y + d, d, self.theta)


class ArrayLre:
    """LRE wrapping pre-recorded samples."""

    def __init__(self, phi, y, theta=None):
        self.phi = np.atleast_2d(np.asarray(phi, dtype=float))
        self.y = np.asarray(y, dtype=float)
        self.theta = None if theta is None else np.asarray(theta, dtype=float)

    @property
    def q(self) -> int:
        return self.phi.shape[1]

    def sample(self, grid: TimeGrid, mode: str = "ct") -> LreData:
        n = grid.n_samples
        if self.phi.shape[0] < n:
            raise DimensionError("stored samples shorter than requested grid")
        return LreData(grid, mode, self.phi[:n], self.y[:n], None, self.theta)


def _companion(den_desc: np.ndarray) -> np.ndarray:
    """Companion matrix whose states are [1, P, ..., P^(n-1)]/den of the input."""
    den = np.asarray(den_desc, dtype=float)
    den = den / den[0]
    n = den.size - 1
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[1:][::-1]
    return A


class TfLre:
    """Regression generated from an LTI plant driven by a known input.

    The plant num(P)/den(P) (strictly proper, monic den of degree n) is
    simulated together with two filter chains [1, P, ..., P^(n-1)]/R(P),
    one on the plant output and one on the input, giving the regressor

        phi = col(chain[y_p], chain[u_p]),   y = y_p,

    with true parameters col(r_i - a_i, b_i) for i = 0..n-1.  All blocks
    are integrated jointly so y = phi' theta holds at the samples exactly.
    """

    def __init__(self, num_desc, den_desc, filter_den_desc, input_fn):
        num = np.trim_zeros(np.asarray(num_desc, dtype=float), "f")
        den = np.asarray(den_desc, dtype=float)
        rpoly = np.asarray(filter_den_desc, dtype=float)
        if den[0] != 1.0 or rpoly[0] != 1.0:
            raise ValueError("plant and filter denominators must be monic")
        if den.size != rpoly.size:
            raise ValueError("filter polynomial degree must equal the plant order")
        if num.size >= den.size:
            raise ValueError("plant must be strictly proper")
        self.n = den.size - 1
        self.num = num
        self.den = den
        self.rpoly = rpoly
        self.input_fn = input_fn
        a_asc = den[1:][::-1]
        r_asc = rpoly[1:][::-1]
        b_asc = np.zeros(self.n)
        b_asc[: num.size] = num[::-1]
        self.theta = np.concatenate([r_asc - a_asc, b_asc])
        self._Ap = _companion(den)
        self._Cp = b_asc.copy()
        self._Ar = _companion(rpoly)

    @property
    def q(self) -> int:
        return 2 * self.n

    def _field(self, t, x):
        n = self.n
        xp, xry, xru = x[:n], x[n : 2 * n], x[2 * n :]
        u = self.input_fn(t)
        yp = self._Cp @ xp
        dxp = self._Ap @ xp
        dxp[-1] += u
        dxry = self._Ar @ xry
        dxry[-1] += yp
        dxru = self._Ar @ xru
        dxru[-1] += u
        return np.concatenate([dxp, dxry, dxru])

    def sample(self, grid: TimeGrid, mode: str = "ct") -> LreData:
        if mode != "ct":
            raise ValueError("transfer-function regressions are continuous-time")
        n_samp = grid.n_samples
        phi = np.empty((n_samp, self.q))
        y = np.empty(n_samp)
        x = np.zeros(3 * self.n)
        for k in range(n_samp):
            phi[k] = x[self.n :]
            y[k] = self._Cp @ x[: self.n]
            if k < n_samp - 1:
                x = rk4_step(self._field, grid.t0 + k * grid.h, x, grid.h)
        return LreData(grid, mode, phi, y, None, self.theta)


class PerturbedLre:
    """Adds a scalar additive perturbation to a base LRE's output."""

    def __init__(self, base, disturbance):
        self.base = base
        self.disturbance = disturbance

    @property
    def q(self) -> int:
        return self.base.q

    @property
    def theta(self):
        return getattr(self.base, "theta", None)

    def sample(self, grid: TimeGrid, mode: str = "ct") -> LreData:
        data = self.base.sample(grid, mode)
        n = grid.n_samples
        d = np.zeros(n)
        for k in range(n):
            t = grid.t0 + k * grid.h if mode == "ct" else k
            d[k] = self.disturbance(t, data.phi[k], data.theta)
        return LreData(grid, mode, data.phi, data.y + d, data.d + d, data.theta)
