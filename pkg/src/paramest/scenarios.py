"""Scenario-driven experiment harness.

Scenario files are TOML (sections of key = value pairs), one experiment
per file: a signal source or closed loop, an estimator with gains and
initial conditions, a time grid and an output selection.  Runs are
deterministic; repeated runs of one scenario produce byte-identical CSV.
"""
from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .numcore import TimeGrid
from .lre import CallableLre, TfLre, PerturbedLre
from .excitation import RegressorTrace, check_ie
from .interlaced import InterlacedConfig, run_estimator
from .robust import Disturbance, RobustGainSchedule, run_rejection
from .nlpre import NlpreConfig, overparam_sinusoid_map, run_nlpre
from .mrac import Plant, ReferenceModel, mrac_closed_loop
from .baseline import DgConfig, run_dg


class ScenarioError(ValueError):
    """Malformed or invalid scenario description."""


def _signal(name, params, where):
    """Build a named deterministic scalar signal of time."""
    p = dict(params or {})
    try:
        if name == "constant":
            v = float(p.pop("value"))
            fn = lambda t: v
        elif name == "sinusoid":
            a, w, ph = float(p.pop("amp")), float(p.pop("omega")), float(p.pop("phase", 0.0))
            fn = lambda t: a * math.sin(w * t + ph)
        elif name == "sin_offset":
            off = float(p.pop("offset"))
            a, w, ph = float(p.pop("amp")), float(p.pop("omega")), float(p.pop("phase", 0.0))
            fn = lambda t: off + a * math.sin(w * t + ph)
        elif name == "exp_sum":
            c1, a1 = float(p.pop("c1")), float(p.pop("a1"))
            c2, a2 = float(p.pop("c2", 0.0)), float(p.pop("a2", 0.0))
            fn = lambda t: c1 * math.exp(a1 * t) + c2 * math.exp(a2 * t)
        elif name == "pulse":
            a = float(p.pop("amp"))
            t_on, t_off = float(p.pop("t_on", 0.0)), float(p.pop("t_off"))
            fn = lambda t: a if t_on <= t <= t_off else 0.0
        elif name == "rational_decay":
            a, b = float(p.pop("amp")), float(p.pop("b"))
            fn = lambda t: a / (b + t * t)
        elif name == "damped_cosine":
            a, d, w = float(p.pop("amp")), float(p.pop("decay")), float(p.pop("omega"))
            fn = lambda t: a * math.exp(-d * t) * math.cos(w * t)
        else:
            raise ScenarioError(f"{where}: unknown signal {name!r}")
    except KeyError as exc:
        raise ScenarioError(f"{where}: signal {name!r} missing parameter {exc.args[0]!r}") from None
    if p:
        raise ScenarioError(f"{where}: signal {name!r} got unexpected parameters {sorted(p)}")
    return fn


def _require(table, key, where, kind=None):
    if key not in table:
        raise ScenarioError(f"{where}.{key} is required")
    value = table[key]
    if kind is not None and not isinstance(value, kind):
        raise ScenarioError(f"{where}.{key} has the wrong type")
    return value


def _positive(value, where):
    value = float(value)
    if value <= 0:
        raise ScenarioError(f"{where} must be positive")
    return value


@dataclass
class Scenario:
    """Validated experiment description."""

    name: str
    family: str
    mode: str
    grid: TimeGrid
    system: dict
    estimator: dict
    traces: list
    csv_name: str
    theta_true: np.ndarray = None
    raw: dict = field(default=None, repr=False)


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario file's contents."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ScenarioError(f"scenario parse error: {exc}") from None
    if not doc:
        raise ScenarioError("scenario parse error: empty file")
    meta = _require(doc, "scenario", "file", dict)
    name = _require(meta, "name", "scenario", str)
    family = meta.get("family", name)
    mode = meta.get("mode", "ct")
    if mode not in ("ct", "dt"):
        raise ScenarioError("scenario.mode must be 'ct' or 'dt'")
    gtab = _require(doc, "grid", "file", dict)
    if mode == "ct":
        h = _positive(gtab.get("h", 1e-3), "grid.h")
        t_end = float(_require(gtab, "t_end", "grid"))
        if t_end < 0:
            raise ScenarioError("grid.t_end must be non-negative")
        n_steps = int(round(t_end / h))
    else:
        h = 1.0
        n_steps = int(_require(gtab, "n_steps", "grid"))
        if n_steps < 0:
            raise ScenarioError("grid.n_steps must be non-negative")
    grid = TimeGrid(h=h, n_steps=n_steps)
    system = _require(doc, "system", "file", dict)
    kind = _require(system, "kind", "system", str)
    if kind not in ("transfer_function", "lre", "mrac", "rejection"):
        raise ScenarioError(f"system.kind {kind!r} is not supported")
    estimator = _require(doc, "estimator", "file", dict)
    est_kind = _require(estimator, "kind", "estimator", str)
    if est_kind not in ("interlaced", "baseline", "nlpre"):
        raise ScenarioError(f"estimator.kind {est_kind!r} is not supported")
    for gain in ("gamma", "gamma_g", "kappa", "g", "k", "lam"):
        if gain in estimator and isinstance(estimator[gain], (int, float)):
            _positive(estimator[gain], f"estimator.{gain}")
    outputs = doc.get("outputs", {})
    traces = outputs.get("traces", [])
    csv_name = outputs.get("csv", f"{name}.csv")
    scenario = Scenario(
        name=name, family=family, mode=mode, grid=grid,
        system=system, estimator=estimator, traces=list(traces),
        csv_name=csv_name, raw=doc,
    )
    # building the source validates dimensions and Hurwitz requirements
    _build_source(scenario)
    return scenario


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IOError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario(text)


def _gamma_g_entry(estimator):
    if "gamma_g_schedule" in estimator:
        tab = estimator["gamma_g_schedule"]
        return RobustGainSchedule(
            c=_positive(_require(tab, "c", "estimator.gamma_g_schedule"), "estimator.gamma_g_schedule.c"),
            b=_positive(_require(tab, "b", "estimator.gamma_g_schedule"), "estimator.gamma_g_schedule.b"),
            form=tab.get("form", "ct"),
        )
    return _positive(estimator.get("gamma_g", 1.0), "estimator.gamma_g")


def _build_source(sc: Scenario):
    """Construct the signal source / loop objects for a scenario."""
    sy = sc.system
    kind = sy["kind"]
    if kind == "transfer_function":
        input_fn = _signal(
            _require(sy, "input", "system", str), sy.get("input_params"), "system.input"
        )
        try:
            lre = TfLre(
                _require(sy, "num", "system", list),
                _require(sy, "den", "system", list),
                _require(sy, "filter_den", "system", list),
                input_fn,
            )
        except ValueError as exc:
            raise ScenarioError(f"system: {exc}") from None
        sc.theta_true = lre.theta
        return lre
    if kind == "lre":
        theta = np.asarray(_require(sy, "theta", "system", list), dtype=float)
        entries = _require(sy, "phi", "system", list)
        if len(entries) != theta.size:
            raise ScenarioError("system.phi length must match system.theta")
        fns = [
            _signal(_require(e, "signal", f"system.phi[{i}]", str),
                    {k: v for k, v in e.items() if k != "signal"}, f"system.phi[{i}]")
            for i, e in enumerate(entries)
        ]
        phi_fn = lambda t: np.array([f(t) for f in fns])
        disturbance = None
        if "disturbance" in sy:
            d = sy["disturbance"]
            try:
                disturbance = Disturbance(
                    kind=_require(d, "kind", "system.disturbance", str),
                    amplitude=float(_require(d, "amplitude", "system.disturbance")),
                    omega=float(d.get("omega", 1.0)),
                    phase=float(d.get("phase", 0.0)),
                    direction=d.get("direction"),
                )
            except ValueError as exc:
                raise ScenarioError(f"system.disturbance: {exc}") from None
        sc.theta_true = theta
        lre = CallableLre(phi_fn, theta)
        return PerturbedLre(lre, disturbance) if disturbance is not None else lre
    if kind == "mrac":
        try:
            unmodeled = None
            if "unmodeled_num" in sy or "unmodeled_den" in sy:
                unmodeled = (
                    _require(sy, "unmodeled_num", "system", list),
                    _require(sy, "unmodeled_den", "system", list),
                )
            plant = Plant(
                _require(sy, "plant_num", "system", list),
                _require(sy, "plant_den", "system", list),
                unmodeled=unmodeled,
            )
            reference = _signal(
                _require(sy, "reference", "system", str),
                sy.get("reference_params"), "system.reference",
            )
            model = ReferenceModel(
                float(_require(sy, "model_km", "system")),
                _require(sy, "model_den", "system", list),
                reference,
            )
        except ValueError as exc:
            raise ScenarioError(f"system: {exc}") from None
        lam = sy.get("lambda", [1.0])
        from .mrac import hurwitz

        if len(lam) != plant.n_p or lam[0] != 1.0 or not hurwitz(lam):
            raise ScenarioError("system.lambda must be monic Hurwitz of degree n_p - 1")
        return plant, model, lam
    # rejection: perturbed scalar mixed regression filtered into a clean one
    try:
        excitation = _signal(
            _require(sy, "excitation", "system", str),
            sy.get("excitation_params"), "system.excitation",
        )
    except ScenarioError:
        raise
    theta = float(_require(sy, "theta", "system"))
    amp = float(_require(sy, "disturbance_amp", "system"))
    omega = _positive(_require(sy, "disturbance_omega", "system"), "system.disturbance_omega")
    phase = float(sy.get("disturbance_phase", 0.0))
    lam = _positive(sy.get("lam", 1.0), "system.lam")
    sc.theta_true = np.array([theta, 1.0 / omega**2])
    y_fn = lambda t: excitation(t) * theta + amp * math.sin(omega * t + phase)
    return excitation, y_fn, lam


@dataclass
class RunReport:
    """Summary metrics of one scenario run."""

    name: str
    family: str
    final_err: float = float("nan")
    sup_err: float = float("nan")
    t_conv: float = float("nan")
    delta_min_after_tc: float = float("nan")
    tail_max_err: float = float("nan")
    sup_signal: float = float("nan")
    diverged: bool = False
    wall_seconds: float = 0.0
    csv_path: str = None
    label: str = ""

    def row(self):
        return {
            "name": self.name,
            "family": self.family,
            "label": self.label,
            "final_err": self.final_err,
            "sup_err": self.sup_err,
            "t_conv": self.t_conv,
            "delta_min_after_tc": self.delta_min_after_tc,
            "tail_max_err": self.tail_max_err,
            "diverged": self.diverged,
        }


def _convergence_time(t, err, threshold):
    """Earliest time from which the error stays below the threshold."""
    if err is None or err.size == 0:
        return float("nan")
    above = np.nonzero(err >= threshold)[0]
    if above.size == 0:
        return float(t[0])
    last = above[-1]
    if last + 1 >= err.size:
        return float("nan")
    return float(t[last + 1])


def _err_metrics(report, t, err_norm, theta_true):
    if err_norm is None or err_norm.size == 0:
        return
    report.final_err = float(err_norm[-1])
    report.sup_err = float(np.max(err_norm))
    scale = np.linalg.norm(theta_true) if theta_true is not None else 1.0
    report.t_conv = _convergence_time(t, err_norm, 0.01 * max(scale, 1e-30))
    tail = max(1, int(0.2 * err_norm.size))
    report.tail_max_err = float(np.max(err_norm[-tail:]))


def _delta_summary(report, phi_samples, grid, mode, delta):
    """Smallest mixed-regressor magnitude after the excitation horizon."""
    if phi_samples is None or phi_samples.shape[0] < 2 or delta is None:
        return
    trace = RegressorTrace(grid, phi_samples, mode)
    cert = check_ie(trace)
    start = cert.horizon_index + 1 if mode == "dt" else cert.horizon_index
    if cert.excited and start < delta.size:
        report.delta_min_after_tc = float(np.min(np.abs(delta[start:])))


def run_scenario(sc: Scenario, out_dir=None, csv=True):
    """Run one scenario deterministically; returns (report, columns).

    ``columns`` is the ordered mapping of trace name to array that also
    lands in the CSV.  On numeric divergence the report is flagged and
    the finite prefix of the traces is retained.
    """
    t0 = time.perf_counter()
    source = _build_source(sc)
    est = sc.estimator
    report = RunReport(name=sc.name, family=sc.family, label=sc.name)
    kind = sc.system["kind"]
    if kind == "mrac":
        plant, model, lam = source
        cfg = InterlacedConfig(
            q=2 * plant.n_p,
            gamma=_positive(_require(est, "gamma", "estimator"), "estimator.gamma"),
            gamma_g=_gamma_g_entry(est),
            theta_g0=est.get("theta_g0"),
            theta0=est.get("theta0"),
        )
        theta_ideal = est.get("theta_ideal")
        run = mrac_closed_loop(plant, model, lam, cfg, sc.grid, theta_ideal=theta_ideal)
        columns = {"time": run.t, "y_p": run.y_p, "y_m": run.y_m, "e_T": run.e_T, "u_p": run.u_p}
        for i in range(cfg.q):
            columns[f"theta_hat_{i+1}"] = run.theta[:, i]
        columns["delta"] = run.Delta
        if run.err_norm is not None:
            columns["err_norm"] = run.err_norm
            _err_metrics(report, run.t, run.err_norm, run.theta_ideal)
        if run.phi_ie is not None and run.n_recorded == sc.grid.n_samples:
            _delta_summary(report, run.phi_ie, sc.grid, "ct", run.Delta)
        report.sup_signal = run.sup_signal
        report.diverged = run.diverged
    elif kind == "rejection":
        excitation, y_fn, lam = source
        rej = run_rejection(y_fn, excitation, lam, sc.grid)
        cfg = NlpreConfig(
            overparam_sinusoid_map(),
            gamma=_positive(_require(est, "gamma", "estimator"), "estimator.gamma"),
            gamma_g=_gamma_g_entry(est),
            theta_g0=est.get("theta_g0"),
            theta0=est.get("theta0"),
        )
        run = run_nlpre(rej.as_lre_data(), cfg, theta_true=sc.theta_true)
        columns = {"time": run.t, "lre_output": rej.output[: run.n_recorded]}
        for i in range(3):
            columns[f"regressor_{i+1}"] = rej.regressor[: run.n_recorded, i]
        for i in range(2):
            columns[f"theta_hat_{i+1}"] = run.theta[:, i]
        with np.errstate(invalid="ignore", divide="ignore"):
            columns["omega_hat"] = np.where(
                run.theta[:, 1] > 1e-9, 1.0 / np.sqrt(np.abs(run.theta[:, 1])), np.nan
            )
        columns["delta"] = run.Delta
        columns["err_norm"] = run.err_norm
        _err_metrics(report, run.t, run.err_norm, sc.theta_true)
        _delta_summary(report, rej.regressor[: run.n_recorded], sc.grid, "ct", run.Delta)
        report.diverged = run.diverged
    elif est["kind"] == "baseline":
        cfg = DgConfig(
            q=sc.theta_true.size,
            lam=_positive(est.get("lam", 1.0), "estimator.lam"),
            g=_positive(est.get("g", 1.0), "estimator.g"),
            k=_positive(est.get("k", 0.4), "estimator.k"),
            beta=float(est.get("beta", 0.8)),
            kappa=_positive(est.get("kappa", 10.0), "estimator.kappa"),
        )
        data = source.sample(sc.grid, sc.mode)
        run = run_dg(data, cfg, theta0=est.get("theta0"))
        columns = {"time": run.t}
        for i in range(cfg.q):
            columns[f"theta_hat_{i+1}"] = run.theta[:, i]
        columns["delta_bar"] = run.Delta_bar
        columns["new_regressor"] = run.Phi_bar[:, 1]
        if run.err_norm is not None:
            columns["err_norm"] = run.err_norm
            _err_metrics(report, run.t, run.err_norm, data.theta)
        report.diverged = run.diverged
    else:
        cfg = InterlacedConfig(
            q=sc.theta_true.size,
            gamma=_positive(_require(est, "gamma", "estimator"), "estimator.gamma"),
            gamma_g=_gamma_g_entry(est),
            theta_g0=est.get("theta_g0"),
            theta0=est.get("theta0"),
            mode=sc.mode,
        )
        data = source.sample(sc.grid, sc.mode)
        run = run_estimator(data, cfg)
        columns = {"time": run.t}
        for i in range(cfg.q):
            columns[f"theta_g_hat_{i+1}"] = run.theta_g[:, i]
        for i in range(cfg.q):
            columns[f"theta_hat_{i+1}"] = run.theta[:, i]
        columns["delta"] = run.Delta
        if run.err_norm is not None:
            columns["err_norm"] = run.err_norm
            _err_metrics(report, run.t, run.err_norm, data.theta)
        _delta_summary(report, data.phi[: run.n_recorded], sc.grid, sc.mode, run.Delta)
        report.diverged = run.diverged
    if sc.traces:
        missing = [name for name in sc.traces if name not in columns and name != "time"]
        if missing:
            raise ScenarioError(f"outputs.traces: unknown trace names {missing}")
        columns = {"time": columns["time"], **{k: columns[k] for k in sc.traces if k != "time"}}
    report.wall_seconds = time.perf_counter() - t0
    if csv and out_dir is not None:
        report.csv_path = write_csv(columns, out_dir, sc.csv_name)
        write_plot_script(list(columns), out_dir, sc.csv_name)
    return report, columns


def write_csv(columns, out_dir, filename):
    """Full-precision CSV with LF endings and deterministic column order."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    n = arrays[0].shape[0] if arrays else 0
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(names) + "\n")
            for i in range(n):
                fh.write(",".join(f"{a[i]:.17g}" for a in arrays) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write CSV {path}: {exc}") from exc
    return path


def write_plot_script(column_names, out_dir, csv_name):
    """Plot-ready companion script describing the CSV columns (no graphics
    dependency; consumers run it through gnuplot or read it as docs)."""
    import os

    stem = csv_name[:-4] if csv_name.endswith(".csv") else csv_name
    path = os.path.join(out_dir, f"{stem}.gp")
    lines = [
        f"# columns of {csv_name}: " + ", ".join(column_names),
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'time'",
        "plot " + ", ".join(
            f"'{csv_name}' using 1:{i + 2} with lines" for i in range(len(column_names) - 1)
        ),
    ]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def compare_runs(reports_a, reports_b=None):
    """Side-by-side comparison table of one or two report families.

    All reports must share one scenario family.  Returns (header, rows)
    where each row is a list of formatted values; use
    :func:`format_comparison` for plain text and :func:`comparison_csv`
    for machine-readable output.
    """
    reports_a = list(reports_a)
    reports_b = list(reports_b) if reports_b else []
    if not reports_a:
        raise ValueError("nothing to compare")
    families = {r.family for r in reports_a + reports_b}
    if len(families) != 1:
        raise ValueError(f"mismatched scenario families: {sorted(families)}")
    header = ["label", "final_err", "sup_err", "t_conv", "tail_max_err", "diverged"]
    rows = []
    for r in reports_a + reports_b:
        rows.append([r.label, r.final_err, r.sup_err, r.t_conv, r.tail_max_err, r.diverged])
    return header, rows


def format_comparison(header, rows):
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    widths = [max(len(h), max((len(fmt(r[i])) for r in rows), default=0)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(fmt(v).ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def comparison_csv(header, rows, out_dir, filename):
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    def fmt(v):
        return f"{v:.17g}" if isinstance(v, float) else str(v)

    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")
    return path
