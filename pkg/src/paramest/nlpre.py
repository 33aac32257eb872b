"""Estimation for separable, strongly monotone nonlinear parameterizations.

Handles regressions y = phi' S(theta) where S maps q unknowns to p >= q
outputs and is strongly P-monotone for a known q x p matrix P.  The same
two-stage construction as the linear estimator applies, with the second
stage descending through S; the P-monotonicity gives an exponential decay
certificate for the squared error that :func:`lyapunov_decrement` checks
numerically.  Monotonicity itself is certified by sampling plus Jacobian
spectral checks over a user-declared box.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import NumericOverflowError, TimeGrid
from .lre import LreData
from .interlaced import mixed_quantities


@dataclass
class MonotoneMap:
    """Separable parameterization S with its monotonizing matrix P.

    evaluate: theta (q,) -> (p,);  jacobian: theta -> (p, q);
    P: (q, p); rho: claimed monotonicity constant.
    """

    q: int
    p: int
    evaluate: object
    jacobian: object
    P: np.ndarray
    rho: float

    def __post_init__(self):
        if self.p < self.q:
            raise ValueError("map must not reduce dimension (p >= q)")
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (self.q, self.p):
            raise ValueError("P must be q x p")
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def identity_map(q: int) -> MonotoneMap:
    return MonotoneMap(q, q, lambda th: np.asarray(th, float).copy(), lambda th: np.eye(q), np.eye(q), 1.0)


def overparam_sinusoid_map() -> MonotoneMap:
    """Map behind the sinusoid-rejection regression.

    Unknowns (theta, 1/omega^2) produce the overparameterized vector
    (theta, theta/omega^2, 1/omega^2); picking the first and last entries
    makes P grad(S) the identity, so the map is strongly P-monotone with
    rho = 1 everywhere.
    """
    def ev(th):
        t1, t2 = th
        return np.array([t1, t1 * t2, t2])

    def jac(th):
        t1, t2 = th
        return np.array([[1.0, 0.0], [t2, t1], [0.0, 1.0]])

    P = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    return MonotoneMap(2, 3, ev, jac, P, 1.0)


def check_p_monotone(m: MonotoneMap, box_low, box_high, n_samples: int = 10000, seed: int = 0):
    """Sample-based certificate of strong P-monotonicity over a box.

    Draws random pairs (a, b), measures the monotonicity quotient
    (a-b)' P [S(a)-S(b)] / |a-b|^2, and additionally requires the
    symmetrized P grad(S) to have smallest eigenvalue >= 2 rho at sampled
    points.  Returns (passes, measured minimum quotient).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    lo = np.broadcast_to(np.asarray(box_low, float), (m.q,))
    hi = np.broadcast_to(np.asarray(box_high, float), (m.q,))
    rng = np.random.default_rng(seed)
    rho_hat = np.inf
    jac_ok = True
    for _ in range(n_samples):
        a = lo + (hi - lo) * rng.random(m.q)
        b = lo + (hi - lo) * rng.random(m.q)
        dd = a - b
        n2 = dd @ dd
        if n2 == 0.0:
            continue
        quotient = dd @ (m.P @ (m.evaluate(a) - m.evaluate(b))) / n2
        rho_hat = min(rho_hat, quotient)
        sym = m.P @ m.jacobian(a)
        lam_min = np.linalg.eigvalsh(sym + sym.T)[0]
        if lam_min < 2.0 * m.rho - 1e-12:
            jac_ok = False
    passes = bool(jac_ok and rho_hat >= m.rho - 1e-12)
    return passes, float(rho_hat)


@dataclass
class NlpreConfig:
    """Gains and initial estimates for the nonlinear estimator."""

    map: MonotoneMap
    gamma: float
    gamma_g: object = 1.0
    theta_g0: np.ndarray = None
    theta0: np.ndarray = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        p, q = self.map.p, self.map.q
        self.theta_g0 = np.zeros(p) if self.theta_g0 is None else np.asarray(self.theta_g0, float)
        self.theta0 = np.zeros(q) if self.theta0 is None else np.asarray(self.theta0, float)
        if self.theta_g0.shape != (p,) or self.theta0.shape != (q,):
            raise ValueError("theta_g0 must be a p-vector and theta0 a q-vector")
        self.gain_fn = self.gamma_g if callable(self.gamma_g) else (lambda t, v=float(self.gamma_g): v)


@dataclass
class NlpreState:
    theta_g: np.ndarray
    Phi: np.ndarray
    theta: np.ndarray
    Delta: float = 0.0
    Y: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, cfg: NlpreConfig) -> "NlpreState":
        st = cls(cfg.theta_g0.copy(), np.eye(cfg.map.p), cfg.theta0.copy())
        _, st.Delta, st.Y = mixed_quantities(st.theta_g, st.Phi, cfg.theta_g0)
        return st


def _field(z, t, phi, y, cfg, mid_delta_sink=None):
    p, q = cfg.map.p, cfg.map.q
    gg = cfg.gain_fn(t)
    theta_g = z[:p]
    Phi = z[p : p + p * p].reshape(p, p)
    theta = z[p + p * p :]
    d_theta_g = gg * (y - phi @ theta_g) * phi
    d_Phi = -gg * np.outer(phi, phi @ Phi)
    _, Delta, Y = mixed_quantities(theta_g, Phi, cfg.theta_g0)
    if mid_delta_sink is not None:
        mid_delta_sink.append(Delta)
    d_theta = cfg.gamma * Delta * (cfg.map.P @ (Y - Delta * cfg.map.evaluate(theta)))
    return np.concatenate([d_theta_g, d_Phi.ravel(), d_theta])


def nlpre_step(state: NlpreState, phi, y: float, t: float, h: float, cfg: NlpreConfig) -> NlpreState:
    """One RK4 step of the nonlinear-parameterization estimator (CT)."""
    phi = np.asarray(phi, dtype=float)
    z = np.concatenate([state.theta_g, state.Phi.ravel(), state.theta])
    with np.errstate(invalid="ignore", over="ignore"):
        k1 = _field(z, t, phi, y, cfg)
        k2 = _field(z + 0.5 * h * k1, t + 0.5 * h, phi, y, cfg)
        k3 = _field(z + 0.5 * h * k2, t + 0.5 * h, phi, y, cfg)
        k4 = _field(z + h * k3, t + h, phi, y, cfg)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.isfinite(z).all():
        raise NumericOverflowError(t)
    p = cfg.map.p
    new = NlpreState(z[:p].copy(), z[p : p + p * p].reshape(p, p).copy(), z[p + p * p :].copy())
    _, new.Delta, new.Y = mixed_quantities(new.theta_g, new.Phi, cfg.theta_g0)
    return new


@dataclass
class NlpreRun:
    grid: TimeGrid
    t: np.ndarray
    theta_g: np.ndarray
    theta: np.ndarray
    Delta: np.ndarray
    delta_mid: np.ndarray
    theta_true: np.ndarray = None
    err_norm: np.ndarray = None
    diverged: bool = False
    blow_time: float = None

    @property
    def n_recorded(self) -> int:
        return self.t.shape[0]


def run_nlpre(data, cfg: NlpreConfig, grid: TimeGrid = None, theta_true=None) -> NlpreRun:
    """Drive the nonlinear estimator across a sampled regression.

    ``delta_mid[k]`` records the mixed regressor at the RK4 midpoint of
    step k, letting decrement checks use high-order quadrature.
    ``theta_true`` are the q physical unknowns (the regression's own theta
    attribute holds the p-dimensional S(theta) image, which differs).
    """
    if not isinstance(data, LreData):
        data = data.sample(grid, "ct")
    grid = data.grid
    n = grid.n_samples
    p, q = cfg.map.p, cfg.map.q
    theta_g = np.empty((n, p))
    theta = np.empty((n, q))
    Delta = np.empty(n)
    delta_mid = np.zeros(max(n - 1, 0))
    state = NlpreState.initial(cfg)
    diverged = False
    blow = None
    recorded = 0
    for k in range(n):
        theta_g[k] = state.theta_g
        theta[k] = state.theta
        Delta[k] = state.Delta
        recorded = k + 1
        if k == n - 1:
            break
        t = grid.t0 + k * grid.h
        try:
            sink = []
            z = np.concatenate([state.theta_g, state.Phi.ravel(), state.theta])
            h = grid.h
            with np.errstate(invalid="ignore", over="ignore"):
                k1 = _field(z, t, data.phi[k], data.y[k], cfg)
                k2 = _field(z + 0.5 * h * k1, t + 0.5 * h, data.phi[k], data.y[k], cfg, sink)
                k3 = _field(z + 0.5 * h * k2, t + 0.5 * h, data.phi[k], data.y[k], cfg, sink)
                k4 = _field(z + h * k3, t + h, data.phi[k], data.y[k], cfg)
                z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.isfinite(z).all():
                raise NumericOverflowError(t)
            delta_mid[k] = 0.5 * (sink[0] + sink[1])
            state = NlpreState(z[:p].copy(), z[p : p + p * p].reshape(p, p).copy(), z[p + p * p :].copy())
            _, state.Delta, state.Y = mixed_quantities(state.theta_g, state.Phi, cfg.theta_g0)
        except NumericOverflowError as exc:
            diverged = True
            blow = exc.t
            break
    sl = slice(0, recorded)
    run = NlpreRun(
        grid=grid,
        t=(grid.times())[sl],
        theta_g=theta_g[sl],
        theta=theta[sl],
        Delta=Delta[sl],
        delta_mid=delta_mid[: max(recorded - 1, 0)],
        theta_true=None if theta_true is None else np.asarray(theta_true, float),
        diverged=diverged,
        blow_time=blow,
    )
    if run.theta_true is not None:
        run.err_norm = np.linalg.norm(run.theta - run.theta_true, axis=1)
    return run


def recover_frequency(theta2: float, guard: float = 1e-9) -> float:
    """Frequency from its estimated inverse square, guarded near zero."""
    if theta2 <= guard:
        return float("nan")
    return 1.0 / np.sqrt(theta2)


def lyapunov_decrement(theta_err, Delta, rho, gamma, h, tol=1e-6, delta_mid=None):
    """Check the integrated squared-error decrement along a run.

    With U = |err|^2 / 2, verifies U(t_{k+1}) <= exp(-2 rho gamma I_k) U(t_k)
    per step, I_k the integral of Delta^2 over the step (Simpson when
    midpoint samples are given, trapezoid otherwise).  The tolerance is
    relative to max(1, U).  Returns (holds, worst slack).
    """
    err = np.atleast_2d(np.asarray(theta_err, float))
    if err.shape[0] == 1 and err.shape[1] > 1:
        err = err.T
    U = 0.5 * np.sum(err * err, axis=1)
    Delta = np.asarray(Delta, float)
    d2 = Delta**2
    if delta_mid is not None:
        mid2 = np.asarray(delta_mid, float) ** 2
        integrals = (h / 6.0) * (d2[:-1] + 4.0 * mid2 + d2[1:])
    else:
        integrals = (h / 2.0) * (d2[:-1] + d2[1:])
    bound = np.exp(-2.0 * rho * gamma * integrals) * U[:-1]
    slack = bound - U[1:]
    scale = np.maximum(1.0, U[:-1])
    worst = float(np.min(slack / scale)) if slack.size else 0.0
    return bool(worst >= -tol), worst
