"""Input-error model reference adaptive control for SISO LTI plants.

The plant input is parameterized through filtered regressors so that the
ideal controller gains satisfy a linear regression between the filtered
input and the regressor bank; running the interlaced estimator on that
regression needs no knowledge of the sign (or size) of the plant's
high-frequency gain.  The certainty-equivalence loop, the filter banks
with their degenerate first-order forms, and the classic unmodeled
dynamics robustness benchmark all live here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import TimeGrid, rk4_step
from .interlaced import InterlacedConfig, mixed_quantities

#: Any signal magnitude beyond this is reported as divergence.
DIVERGENCE_LIMIT = 1e6


def hurwitz(coeffs_desc, margin: float = 1e-9) -> bool:
    """All roots strictly in the open left half plane."""
    c = np.trim_zeros(np.asarray(coeffs_desc, dtype=float), "f")
    if c.size <= 1:
        return True  # constant polynomial has no roots
    return bool(np.all(np.roots(c).real < -margin))


def _companion_chain(den_desc):
    """Companion A whose states realize [1, P, ..., P^(n-1)]/den of the input."""
    den = np.asarray(den_desc, dtype=float)
    den = den / den[0]
    n = den.size - 1
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[1:][::-1]
    return A


class _Chain:
    """State chain of [1, P, ..., P^(n-1)]/den applied to a scalar input."""

    def __init__(self, den_desc):
        self.A = _companion_chain(den_desc)
        self.n = self.A.shape[0]
        self.x = np.zeros(self.n)

    def step(self, u: float, h: float):
        def fld(t, x):
            dx = self.A @ x
            dx[-1] += u
            return dx

        self.x = rk4_step(fld, 0.0, self.x, h)

    def reset(self):
        self.x = np.zeros(self.n)


@dataclass
class Plant:
    """SISO plant kp N(P) / D(P), optionally cascaded with unmodeled dynamics.

    ``num_desc`` carries kp times the monic N; ``den_desc`` is the monic D.
    The unmodeled cascade is a proper rational (num, den) pair in series
    with the nominal plant.
    """

    num_desc: np.ndarray
    den_desc: np.ndarray
    unmodeled: tuple = None

    def __post_init__(self):
        self.num_desc = np.trim_zeros(np.asarray(self.num_desc, dtype=float), "f")
        self.den_desc = np.asarray(self.den_desc, dtype=float)
        if self.den_desc[0] != 1.0:
            raise ValueError("plant denominator must be monic")
        if self.num_desc.size >= self.den_desc.size:
            raise ValueError("plant must have relative degree at least 1")
        self.kp = self.num_desc[0]
        if not hurwitz(self.num_desc / self.kp):
            raise ValueError("plant numerator must be Hurwitz")

    @property
    def n_p(self) -> int:
        return self.den_desc.size - 1

    @property
    def m_p(self) -> int:
        return self.num_desc.size - 1


class PlantSim:
    """Joint state-space simulation of the plant and its cascade."""

    def __init__(self, plant: Plant):
        self.plant = plant
        self._A = _companion_chain(plant.den_desc)
        n = self._A.shape[0]
        b_asc = np.zeros(n)
        b_asc[: plant.num_desc.size] = plant.num_desc[::-1]
        self._C = b_asc
        self.x = np.zeros(n)
        if plant.unmodeled is not None:
            cnum, cden = plant.unmodeled
            cnum = np.trim_zeros(np.asarray(cnum, dtype=float), "f")
            cden = np.asarray(cden, dtype=float)
            if cnum.size > cden.size:
                raise ValueError("unmodeled cascade must be proper")
            self._Ac = _companion_chain(cden)
            m = self._Ac.shape[0]
            casc_asc = np.zeros(m)
            casc_asc[: cnum.size] = (cnum / cden[0])[::-1]
            self._Cc = casc_asc
            self.xc = np.zeros(m)
        else:
            self._Ac = None
            self.xc = None

    def output(self) -> float:
        return float(self._C @ self.x)

    def step(self, u_p: float, h: float) -> float:
        """Advance one step with held input; returns the new output."""
        if self._Ac is None:
            def fld(t, x):
                dx = self._A @ x
                dx[-1] += u_p
                return dx

            self.x = rk4_step(fld, 0.0, self.x, h)
        else:
            n = self.x.size

            def fld(t, z):
                xc, x = z[:self.xc.size], z[self.xc.size:]
                dxc = self._Ac @ xc
                dxc[-1] += u_p
                v = self._Cc @ xc  # cascade output feeds the nominal plant
                dx = self._A @ x
                dx[-1] += v
                return np.concatenate([dxc, dx])

            z = rk4_step(fld, 0.0, np.concatenate([self.xc, self.x]), h)
            self.xc, self.x = z[: self.xc.size], z[self.xc.size :]
        return self.output()

    def state_magnitude(self) -> float:
        m = float(np.max(np.abs(self.x))) if self.x.size else 0.0
        if self.xc is not None and self.xc.size:
            m = max(m, float(np.max(np.abs(self.xc))))
        return m


def plant_step(sim: PlantSim, u_p: float, h: float) -> float:
    """Functional alias for :meth:`PlantSim.step`."""
    return sim.step(u_p, h)


@dataclass
class ReferenceModel:
    """Reference dynamics k_m / D_m(P) driven by a bounded reference."""

    k_m: float
    dm_desc: np.ndarray
    reference: object

    def __post_init__(self):
        self.dm_desc = np.asarray(self.dm_desc, dtype=float)
        if not hurwitz(self.dm_desc):
            raise ValueError("reference denominator must be Hurwitz")


class MracFilters:
    """Regressor filter banks for the control and estimation regressions.

    The control regressor stacks the input and output derivative chains
    through 1/lambda(P) followed by the raw output and reference; the
    estimation regressor passes the first 2 n_p - 1 control entries
    through 1/D_m(P) and appends the output scaled by 1/k_m.  For n_p = 1
    the derivative chains are empty and lambda(P) = 1.
    """

    def __init__(self, lambda_desc, model: ReferenceModel, n_p: int):
        self.n_p = n_p
        self.model = model
        self.lambda_desc = np.asarray(lambda_desc, dtype=float)
        if self.lambda_desc.size != n_p:
            raise ValueError("lambda polynomial must have degree n_p - 1")
        if self.lambda_desc[0] != 1.0:
            raise ValueError("lambda polynomial must be monic")
        if not hurwitz(self.lambda_desc):
            raise ValueError("lambda polynomial must be Hurwitz")
        if n_p > 1:
            self.chain_u = _Chain(self.lambda_desc)
            self.chain_y = _Chain(self.lambda_desc)
        else:
            self.chain_u = self.chain_y = None
        dn = np.convolve(model.dm_desc, self.lambda_desc)
        self.chain_nu = _Chain(dn)
        self.chain_ny = _Chain(dn)
        self._lam_asc = self.lambda_desc[::-1]

    @property
    def dimension(self) -> int:
        return 2 * self.n_p

    def phi_pe(self, y_p: float, r: float) -> np.ndarray:
        parts = []
        if self.n_p > 1:
            parts.append(self.chain_u.x[: self.n_p - 1])
            parts.append(self.chain_y.x[: self.n_p - 1])
        parts.append([y_p, r])
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def phi_ie(self, y_p: float) -> np.ndarray:
        parts = []
        if self.n_p > 1:
            parts.append(self.chain_nu.x[: self.n_p - 1])
            parts.append(self.chain_ny.x[: self.n_p - 1])
        parts.append([self._lam_asc @ self.chain_ny.x[: self.n_p]])
        parts.append([y_p / self.model.k_m])
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def u_ie(self) -> float:
        return float(self._lam_asc @ self.chain_nu.x[: self.n_p])

    def step(self, u_p: float, y_p: float, h: float):
        if self.n_p > 1:
            self.chain_u.step(u_p, h)
            self.chain_y.step(y_p, h)
        self.chain_nu.step(u_p, h)
        self.chain_ny.step(y_p, h)

    def state_magnitude(self) -> float:
        mags = [np.max(np.abs(c.x)) if c.n else 0.0 for c in
                ([self.chain_u, self.chain_y] if self.n_p > 1 else []) + [self.chain_nu, self.chain_ny]]
        return float(max(mags)) if mags else 0.0


def ideal_first_order_gains(plant: Plant, model: ReferenceModel):
    """Model-matching controller gains for a first-order plant.

    Returns (reference gain, output gain) = (k_m/k_p, (a - d_m)/k_p) for
    plant k_p/(P+a) and model k_m/(P+d_m); in the regressor ordering
    (y_p, r) the ideal parameter vector is (output gain, reference gain).
    """
    if plant.n_p != 1 or plant.m_p != 0:
        raise ValueError("model matching implemented for first-order plants only")
    a = plant.den_desc[1]
    d_m = model.dm_desc[1]
    r_gain = model.k_m / plant.kp
    y_gain = (a - d_m) / plant.kp
    return r_gain, y_gain


@dataclass
class MracRun:
    """Closed-loop traces; on divergence the finite prefix is retained."""

    grid: TimeGrid
    t: np.ndarray
    y_p: np.ndarray
    y_m: np.ndarray
    u_p: np.ndarray
    e_T: np.ndarray
    theta: np.ndarray
    Delta: np.ndarray
    phi_ie: np.ndarray = None
    u_ie: np.ndarray = None
    theta_ideal: np.ndarray = None
    err_norm: np.ndarray = None
    diverged: bool = False
    blow_time: float = None
    sup_signal: float = 0.0

    @property
    def n_recorded(self) -> int:
        return self.t.shape[0]


class _ClosedLoop:
    """Joint ODE of plant, reference, filter banks and estimator.

    State layout: [cascade?, plant, reference, lambda chains?, two
    1/(D_m lambda) chains, theta_g, Phi (flattened), theta].  The control
    is re-evaluated at every RK4 stage so the loop is a faithful CT
    simulation rather than a sampled-data one.
    """

    def __init__(self, plant, model, lambda_desc, cfg, pin_theta=None):
        self.plant = plant
        self.model = model
        self.cfg = cfg
        self.pin_theta = None if pin_theta is None else np.asarray(pin_theta, dtype=float)
        n_p = plant.n_p
        self.n_p = n_p
        lam = np.asarray(lambda_desc, dtype=float)
        if lam.size != n_p or lam[0] != 1.0 or not hurwitz(lam):
            raise ValueError("lambda polynomial must be monic Hurwitz of degree n_p - 1")
        if not hurwitz(model.dm_desc):
            raise ValueError("reference denominator must be Hurwitz")
        self._lam_asc = lam[::-1]
        self.A_p = _companion_chain(plant.den_desc)
        b_asc = np.zeros(n_p)
        b_asc[: plant.num_desc.size] = plant.num_desc[::-1]
        self.C_p = b_asc
        if plant.unmodeled is not None:
            cnum = np.trim_zeros(np.asarray(plant.unmodeled[0], dtype=float), "f")
            cden = np.asarray(plant.unmodeled[1], dtype=float)
            self.A_c = _companion_chain(cden)
            casc = np.zeros(self.A_c.shape[0])
            casc[: cnum.size] = (cnum / cden[0])[::-1]
            self.C_c = casc
            n_c = self.A_c.shape[0]
        else:
            self.A_c = None
            n_c = 0
        self.A_m = _companion_chain(model.dm_desc)
        n_m = self.A_m.shape[0]
        self.A_lam = _companion_chain(lam) if n_p > 1 else None
        n_lam = n_p - 1
        self.A_n = _companion_chain(np.convolve(model.dm_desc, lam))
        n_n = self.A_n.shape[0]
        q = cfg.q
        sizes = [n_c, n_p, n_m, n_lam, n_lam, n_n, n_n, q, q * q, q]
        offs = np.cumsum([0] + sizes)
        self.sl = [slice(offs[i], offs[i + 1]) for i in range(len(sizes))]
        self.n_states = offs[-1]
        self._eye_q = np.eye(q)

    def initial_state(self):
        z = np.zeros(self.n_states)
        z[self.sl[7]] = self.cfg.theta_g0
        z[self.sl[8]] = self._eye_q.ravel()
        z[self.sl[9]] = self.cfg.theta0
        return z

    def outputs(self, t, z):
        (s_c, s_p, s_m, s_lu, s_ly, s_nu, s_ny, s_tg, s_ph, s_th) = self.sl
        y_p = float(self.C_p @ z[s_p])
        y_m = float(self.model.k_m * z[s_m][0])
        r = float(self.model.reference(t))
        if self.n_p > 1:
            phi_pe = np.concatenate([z[s_lu][: self.n_p - 1], z[s_ly][: self.n_p - 1], [y_p, r]])
            phi_ie = np.concatenate(
                [z[s_nu][: self.n_p - 1], z[s_ny][: self.n_p - 1],
                 [self._lam_asc @ z[s_ny][: self.n_p]], [y_p / self.model.k_m]]
            )
        else:
            phi_pe = np.array([y_p, r])
            phi_ie = np.array([float(self._lam_asc @ z[s_ny][: self.n_p]), y_p / self.model.k_m])
        u_ie = float(self._lam_asc @ z[s_nu][: self.n_p])
        theta_ctl = self.pin_theta if self.pin_theta is not None else z[s_th]
        u_p = float(theta_ctl @ phi_pe)
        return y_p, y_m, r, u_p, phi_pe, phi_ie, u_ie

    def field(self, t, z):
        (s_c, s_p, s_m, s_lu, s_ly, s_nu, s_ny, s_tg, s_ph, s_th) = self.sl
        y_p, y_m, r, u_p, phi_pe, phi_ie, u_ie = self.outputs(t, z)
        dz = np.empty_like(z)
        if self.A_c is not None:
            xc = z[s_c]
            dxc = self.A_c @ xc
            dxc[-1] += u_p
            dz[s_c] = dxc
            plant_in = float(self.C_c @ xc)
        else:
            plant_in = u_p
        dxp = self.A_p @ z[s_p]
        dxp[-1] += plant_in
        dz[s_p] = dxp
        dxm = self.A_m @ z[s_m]
        dxm[-1] += r
        dz[s_m] = dxm
        if self.n_p > 1:
            dlu = self.A_lam @ z[s_lu]
            dlu[-1] += u_p
            dz[s_lu] = dlu
            dly = self.A_lam @ z[s_ly]
            dly[-1] += y_p
            dz[s_ly] = dly
        dnu = self.A_n @ z[s_nu]
        dnu[-1] += u_p
        dz[s_nu] = dnu
        dny = self.A_n @ z[s_ny]
        dny[-1] += y_p
        dz[s_ny] = dny
        gg = self.cfg.gain_fn(t)
        theta_g = z[s_tg]
        Phi = z[s_ph].reshape(self.cfg.q, self.cfg.q)
        theta = z[s_th]
        dz[s_tg] = gg * (u_ie - phi_ie @ theta_g) * phi_ie
        dz[s_ph] = (-gg * np.outer(phi_ie, phi_ie @ Phi)).ravel()
        _, Delta, Y = mixed_quantities(theta_g, Phi, self.cfg.theta_g0)
        dz[s_th] = self.cfg.gamma * Delta * (Y - Delta * theta)
        return dz


def mrac_closed_loop(
    plant: Plant,
    model: ReferenceModel,
    lambda_desc,
    cfg: InterlacedConfig,
    grid: TimeGrid,
    theta_ideal=None,
    pin_theta=None,
) -> MracRun:
    """Certainty-equivalence adaptive loop.

    The control comes from the current gain estimates and the control
    regressor while the estimator adapts on the filtered input-error
    regression; plant, filters and estimator advance as one jointly
    integrated system.  ``pin_theta`` freezes the controller gains (no
    certainty equivalence), used for ideal-gain sanity checks.
    Divergence (any signal beyond 1e6) is flagged, never raised.
    """
    loop = _ClosedLoop(plant, model, lambda_desc, cfg, pin_theta)
    n = grid.n_samples
    h = grid.h
    t_axis = grid.times()
    y_p_tr = np.empty(n)
    y_m_tr = np.empty(n)
    u_p_tr = np.empty(n)
    theta_tr = np.empty((n, cfg.q))
    delta_tr = np.empty(n)
    phi_ie_tr = np.empty((n, cfg.q))
    u_ie_tr = np.empty(n)
    diverged = False
    blow = None
    sup_signal = 0.0
    recorded = 0
    z = loop.initial_state()
    for k in range(n):
        t = t_axis[k] if n else 0.0
        y_p, y_m, r, u_p, phi_pe, phi_ie, u_ie = loop.outputs(t, z)
        y_p_tr[k] = y_p
        y_m_tr[k] = y_m
        u_p_tr[k] = u_p
        phi_ie_tr[k] = phi_ie
        u_ie_tr[k] = u_ie
        theta_tr[k] = z[loop.sl[9]]
        _, delta_tr[k], _ = mixed_quantities(
            z[loop.sl[7]], z[loop.sl[8]].reshape(cfg.q, cfg.q), cfg.theta_g0
        )
        recorded = k + 1
        magnitude = max(abs(y_p), abs(u_p), float(np.max(np.abs(z))))
        sup_signal = max(sup_signal, magnitude)
        if magnitude > DIVERGENCE_LIMIT:
            diverged = True
            blow = t
            break
        if k == n - 1:
            break
        with np.errstate(invalid="ignore", over="ignore"):
            k1 = loop.field(t, z)
            k2 = loop.field(t + 0.5 * h, z + 0.5 * h * k1)
            k3 = loop.field(t + 0.5 * h, z + 0.5 * h * k2)
            k4 = loop.field(t + h, z + h * k3)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(z).all():
            diverged = True
            blow = t
            break
    sl = slice(0, recorded)
    run = MracRun(
        grid=grid,
        t=t_axis[sl],
        y_p=y_p_tr[sl],
        y_m=y_m_tr[sl],
        u_p=u_p_tr[sl],
        e_T=y_p_tr[sl] - y_m_tr[sl],
        theta=theta_tr[sl],
        Delta=delta_tr[sl],
        phi_ie=phi_ie_tr[sl],
        u_ie=u_ie_tr[sl],
        theta_ideal=None if theta_ideal is None else np.asarray(theta_ideal, dtype=float),
        diverged=diverged,
        blow_time=blow,
        sup_signal=sup_signal,
    )
    if run.theta_ideal is not None:
        run.err_norm = np.linalg.norm(run.theta - run.theta_ideal, axis=1)
    return run
