"""Interlaced two-stage on-line parameter estimator (CT and DT).

Stage one is a gradient estimator theta_g together with the fundamental
matrix Phi of its error dynamics; the pair is algebraically mixed into q
decoupled scalar regressions with common scalar regressor

    Delta = det(I - Phi),   Y = adj(I - Phi) (theta_g - Phi theta_g0),

on which stage two runs a scalar gradient/least-mean-squares update per
parameter.  Estimation error converges exponentially whenever the raw
regressor is interval-exciting.

The module also provides the equivalent single-input q-output extension
operator view of the same construction, used as a cross-check oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import NumericOverflowError, TimeGrid, adjugate, det
from .lre import LreData


def _as_gain_fn(gamma_g):
    if callable(gamma_g):
        return gamma_g
    value = float(gamma_g)
    if value <= 0:
        raise ValueError("gamma_g must be positive")
    return lambda t: value


@dataclass
class InterlacedConfig:
    """Gains and initial estimates for the interlaced estimator."""

    q: int
    gamma: float
    gamma_g: object = 1.0
    theta_g0: np.ndarray = None
    theta0: np.ndarray = None
    mode: str = "ct"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mode not in ("ct", "dt"):
            raise ValueError("mode must be 'ct' or 'dt'")
        self.theta_g0 = (
            np.zeros(self.q) if self.theta_g0 is None else np.asarray(self.theta_g0, dtype=float)
        )
        self.theta0 = (
            np.zeros(self.q) if self.theta0 is None else np.asarray(self.theta0, dtype=float)
        )
        if self.theta_g0.shape != (self.q,) or self.theta0.shape != (self.q,):
            raise ValueError("initial estimates must be q-vectors")
        self.gain_fn = _as_gain_fn(self.gamma_g)


def mixed_quantities(theta_g, Phi, theta_g0):
    """Derived mixing quantities (D, Delta, Y) of a first-stage state."""
    D = np.eye(Phi.shape[0]) - Phi
    Delta = det(D)
    Y = adjugate(D) @ (theta_g - Phi @ theta_g0)
    return D, Delta, Y


@dataclass
class InterlacedState:
    """First-stage estimate, fundamental matrix, second-stage estimate."""

    theta_g: np.ndarray
    Phi: np.ndarray
    theta: np.ndarray
    D_mat: np.ndarray = field(default=None, repr=False)
    Delta: float = 0.0
    Y: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, cfg: InterlacedConfig) -> "InterlacedState":
        state = cls(cfg.theta_g0.copy(), np.eye(cfg.q), cfg.theta0.copy())
        state.refresh_derived(cfg.theta_g0)
        return state

    def refresh_derived(self, theta_g0):
        self.D_mat, self.Delta, self.Y = mixed_quantities(self.theta_g, self.Phi, theta_g0)


def _pack(theta_g, Phi, theta):
    return np.concatenate([theta_g, Phi.ravel(), theta])


def _unpack(z, q):
    return z[:q], z[q : q + q * q].reshape(q, q), z[q + q * q :]


def _ct_field(z, t, phi, y, cfg):
    q = cfg.q
    gg = cfg.gain_fn(t)
    theta_g, Phi, theta = _unpack(z, q)
    err = y - phi @ theta_g
    d_theta_g = gg * err * phi
    d_Phi = -gg * np.outer(phi, phi @ Phi)
    _, Delta, Y = mixed_quantities(theta_g, Phi, cfg.theta_g0)
    d_theta = cfg.gamma * Delta * (Y - Delta * theta)
    return np.concatenate([d_theta_g, d_Phi.ravel(), d_theta])


def step_ct(state: InterlacedState, phi, y: float, t: float, h: float, cfg: InterlacedConfig) -> InterlacedState:
    """One RK4 step of the coupled CT estimator with (phi, y) held.

    The mixing quantities Delta and Y are recomputed at every stage
    evaluation; they are algebraic functions of the state, not states.
    """
    if cfg.mode != "ct":
        raise ValueError("step_ct requires a CT config")
    phi = np.asarray(phi, dtype=float)
    z = _pack(state.theta_g, state.Phi, state.theta)
    with np.errstate(invalid="ignore", over="ignore"):
        k1 = _ct_field(z, t, phi, y, cfg)
        k2 = _ct_field(z + 0.5 * h * k1, t + 0.5 * h, phi, y, cfg)
        k3 = _ct_field(z + 0.5 * h * k2, t + 0.5 * h, phi, y, cfg)
        k4 = _ct_field(z + h * k3, t + h, phi, y, cfg)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(z).all():
        raise NumericOverflowError(t)
    theta_g, Phi, theta = _unpack(z, cfg.q)
    new = InterlacedState(theta_g.copy(), Phi.copy(), theta.copy())
    new.refresh_derived(cfg.theta_g0)
    return new


def step_dt(state: InterlacedState, phi, y: float, k: int, cfg: InterlacedConfig) -> InterlacedState:
    """One synchronous DT update.

    Stage one is a normalized gradient with gain 1/(gamma_g + |phi|^2);
    stage two contracts each scalar error by gamma/(gamma + Delta^2) using
    the mixing quantities of the current state.
    """
    if cfg.mode != "dt":
        raise ValueError("step_dt requires a DT config")
    phi = np.asarray(phi, dtype=float)
    gg = cfg.gain_fn(k)
    if gg <= 0:
        raise ValueError("gamma_g must be positive")
    denom = gg + phi @ phi
    _, Delta, Y = mixed_quantities(state.theta_g, state.Phi, cfg.theta_g0)
    theta = state.theta + Delta * (Y - Delta * state.theta) / (cfg.gamma + Delta**2)
    theta_g = state.theta_g + phi * (y - phi @ state.theta_g) / denom
    Phi = state.Phi - np.outer(phi, phi @ state.Phi) / denom
    if not (np.isfinite(theta_g).all() and np.isfinite(Phi).all() and np.isfinite(theta).all()):
        raise NumericOverflowError(k)
    new = InterlacedState(theta_g, Phi, theta)
    new.refresh_derived(cfg.theta_g0)
    return new


@dataclass
class OperatorState:
    """State of the single-input q-output extension operator.

    Zero initial conditions; after synchronized stepping, x_y equals
    theta_g - Phi theta_g0 and the columns of x_phi reproduce I - Phi.
    """

    x_y: np.ndarray
    x_phi: np.ndarray

    @classmethod
    def initial(cls, q: int) -> "OperatorState":
        return cls(np.zeros(q), np.zeros((q, q)))


def _operator_field(xy, xphi, t, phi, y, cfg):
    gg = cfg.gain_fn(t)
    d_xy = gg * phi * (y - phi @ xy)
    d_xphi = -gg * np.outer(phi, phi @ xphi) + gg * np.outer(phi, phi)
    return d_xy, d_xphi


def operator_step(opstate: OperatorState, phi, y: float, t_or_k, h: float, cfg: InterlacedConfig) -> OperatorState:
    """Advance the extension operator with the same gains and stepping."""
    phi = np.asarray(phi, dtype=float)
    if cfg.mode == "ct":
        t = t_or_k
        xy, xphi = opstate.x_y, opstate.x_phi
        k1 = _operator_field(xy, xphi, t, phi, y, cfg)
        k2 = _operator_field(xy + 0.5 * h * k1[0], xphi + 0.5 * h * k1[1], t + 0.5 * h, phi, y, cfg)
        k3 = _operator_field(xy + 0.5 * h * k2[0], xphi + 0.5 * h * k2[1], t + 0.5 * h, phi, y, cfg)
        k4 = _operator_field(xy + h * k3[0], xphi + h * k3[1], t + h, phi, y, cfg)
        new_xy = xy + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        new_xphi = xphi + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    else:
        gg = cfg.gain_fn(t_or_k)
        denom = gg + phi @ phi
        new_xy = opstate.x_y + phi * (y - phi @ opstate.x_y) / denom
        new_xphi = opstate.x_phi - np.outer(phi, phi @ opstate.x_phi) / denom + np.outer(phi, phi) / denom
    if not (np.isfinite(new_xy).all() and np.isfinite(new_xphi).all()):
        raise NumericOverflowError(t_or_k)
    return OperatorState(new_xy, new_xphi)


@dataclass
class EstimatorRun:
    """Whole-trajectory traces of an estimator run."""

    grid: TimeGrid
    mode: str
    t: np.ndarray
    theta_g: np.ndarray
    theta: np.ndarray
    Delta: np.ndarray
    Y: np.ndarray
    Phi: np.ndarray = None
    theta_true: np.ndarray = None
    err_norm: np.ndarray = None
    diverged: bool = False
    blow_time: float = None

    @property
    def n_recorded(self) -> int:
        return self.t.shape[0]


def run_estimator(data, cfg: InterlacedConfig, grid: TimeGrid = None, record_phi: bool = True) -> EstimatorRun:
    """Step the estimator across a grid of samples and record traces.

    ``data`` is an LreData or any source with a ``sample(grid, mode)``
    method.  Divergence is reported (not raised) with the finite prefix of
    the traces retained.
    """
    if not isinstance(data, LreData):
        data = data.sample(grid, cfg.mode)
    grid = data.grid
    n = grid.n_samples
    q = cfg.q
    t_axis = grid.times() if cfg.mode == "ct" else np.arange(n, dtype=float)
    theta_g = np.empty((n, q))
    theta = np.empty((n, q))
    Delta = np.empty(n)
    Y = np.empty((n, q))
    Phi = np.empty((n, q, q)) if record_phi else None
    state = InterlacedState.initial(cfg)
    diverged = False
    blow_time = None
    recorded = 0
    for k in range(n):
        theta_g[k] = state.theta_g
        theta[k] = state.theta
        Delta[k] = state.Delta
        Y[k] = state.Y
        if record_phi:
            Phi[k] = state.Phi
        recorded = k + 1
        if k == n - 1:
            break
        try:
            if cfg.mode == "ct":
                state = step_ct(state, data.phi[k], data.y[k], grid.t0 + k * grid.h, grid.h, cfg)
            else:
                state = step_dt(state, data.phi[k], data.y[k], k, cfg)
        except NumericOverflowError as exc:
            diverged = True
            blow_time = exc.t
            break
    sl = slice(0, recorded)
    run = EstimatorRun(
        grid=grid,
        mode=cfg.mode,
        t=t_axis[sl],
        theta_g=theta_g[sl],
        theta=theta[sl],
        Delta=Delta[sl],
        Y=Y[sl],
        Phi=Phi[sl] if record_phi else None,
        theta_true=data.theta,
        diverged=diverged,
        blow_time=blow_time,
    )
    if data.theta is not None:
        run.err_norm = np.linalg.norm(run.theta - data.theta, axis=1)
    return run
