"""Large-time ratio experiments, scenario configs and CSV emission.

Each experiment produces a series over a time (or spectral-parameter) grid
whose entries come from exhaustion-converged kernel evaluations; entries
whose underlying limit did not certify are excluded, never interpolated.
Extrapolated limits are tagged with the fitted model so that no fit is
mistaken for a theorem.
"""

from __future__ import annotations

import configparser
import csv
import enum
import os
from dataclasses import dataclass, field

import numpy as np

from .criticality import (
    Classification,
    CriticalityReport,
    classify,
    critical_coupling,
    lambda0,
    lambda0_log_estimate,
    perturbation_integrals,
)
from .domains import DomainFixture, fixture as resolve_fixture
from .errors import (
    HeatLabError,
    InconclusiveError,
    NumericalError,
    ValidationError,
)
from .kernels import HeatKernelEvaluator, LimitStatus
from .operators import EllipticOperator, Potential, add_potential, assemble, shift
from .series import (
    fit_exponential_rate,
    fit_loglog_slope,
    fit_power_tail,
    geometric_grid,
)

DEFAULT_T_GRID = geometric_grid(1.0, 400.0, 40)


class SeriesStatus(enum.Enum):
    CONVERGED_TO = "converged-to"
    VANISHING_LIKE = "vanishing-like"
    NON_MONOTONE = "non-monotone"
    INCONCLUSIVE = "inconclusive"


@dataclass
class RatioSeries:
    """A sampled large-time series with its extrapolation and verdict.

    ``t`` is the series parameter (time for kernel ratios, the spectral
    offset for the resolvent route); every value carries the exhaustion
    level at which the underlying kernels were certified.
    """

    t: np.ndarray
    values: np.ndarray
    levels: list
    status: SeriesStatus
    extrapolated_limit: float
    limit_model: str
    trend_power: float = float("nan")
    trend_width: float = float("nan")
    predicted_limit: float | None = None
    exponential_like: bool = False
    excluded: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def rows(self, param="t"):
        return [{param: tt, "level": lv, "value": vv}
                for tt, lv, vv in zip(self.t, self.levels, self.values)]

    def summary(self):
        lines = [
            f"status: {self.status.value}",
            f"extrapolated_limit: {self.extrapolated_limit:.10g}",
            f"limit_model: {self.limit_model}",
            f"points: {len(self.t)} (excluded {len(self.excluded)})",
        ]
        if np.isfinite(self.trend_power):
            lines.append(f"trend_power: {self.trend_power:.6g}")
        if self.predicted_limit is not None:
            lines.append(f"predicted_limit: {self.predicted_limit:.10g}")
        if self.exponential_like:
            lines.append("exponential_decay: yes")
        for k, v in self.extras.items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def _decide_series(t, values, levels, predicted=None, excluded=None):
    """Classify a computed series and fit its limit."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    excluded = excluded or []
    if t.size < 5:
        return RatioSeries(t, v, levels, SeriesStatus.INCONCLUSIVE,
                           float(v[-1]) if v.size else float("nan"),
                           "too few converged points", predicted_limit=predicted,
                           excluded=excluded)
    tail = t >= t[-1] / 10.0
    if tail.sum() < 5:
        tail = np.zeros_like(t, dtype=bool)
        tail[-5:] = True
    tv, vv = t[tail], v[tail]
    a, b, p, resid = fit_power_tail(tv, vv)
    scale = max(np.max(np.abs(vv)), 1e-300)

    decreasing = bool(np.all(np.diff(vv) <= 1e-12 * scale))
    increasing = bool(np.all(np.diff(vv) >= -1e-12 * scale))
    if decreasing and vv[-1] < 0.5 * vv[0] and np.all(vv > 0.0):
        slope, width, _ = fit_loglog_slope(t, v, decades=1.0)
        rate, exp_resid = fit_exponential_rate(tv, vv)
        lv = np.log(vv)
        ll_fit = np.polyfit(np.log(tv), lv, 1)
        ll_resid = float(np.sqrt(np.mean((np.polyval(ll_fit, np.log(tv)) - lv) ** 2)))
        exponential = exp_resid < 0.3 * max(ll_resid, 1e-15) and rate > 0.0
        model = f"exp(-{rate:.6g} t)" if exponential else f"t^{slope:.4g} (log-log fit)"
        return RatioSeries(t, v, levels, SeriesStatus.VANISHING_LIKE, 0.0, model,
                           trend_power=slope, trend_width=width,
                           predicted_limit=predicted, exponential_like=exponential,
                           excluded=excluded)
    rel_range = (vv.max() - vv.min()) / scale
    if rel_range < 0.25 or (increasing or decreasing):
        # settled (or settling monotonically): a + b t^-p fit supplies the limit
        return RatioSeries(t, v, levels, SeriesStatus.CONVERGED_TO, float(a),
                           f"a+b*t^-{p:g} fit (rms {resid:.2g})",
                           trend_power=-p, predicted_limit=predicted, excluded=excluded)
    sign_changes = np.sum(np.diff(np.sign(np.diff(vv))) != 0)
    if sign_changes >= 2:
        return RatioSeries(t, v, levels, SeriesStatus.NON_MONOTONE, float(v[-1]),
                           "oscillating tail", predicted_limit=predicted, excluded=excluded)
    return RatioSeries(t, v, levels, SeriesStatus.INCONCLUSIVE, float(a),
                       "tail not settled", predicted_limit=predicted, excluded=excluded)


def _converged_kernel(ev, x, y, t, tol=None):
    r = ev.heat_kernel(x, y, t, tol=tol)
    if not r.converged:
        return None
    return r


def theorem_limit_series(op: EllipticOperator, exhaustion, x, y, t_grid=None,
                         evaluator=None, report: CriticalityReport = None,
                         heat_tol=None) -> RatioSeries:
    """Series e^(lambda0 t) k(x, y, t): limit phi(x) phi*(y)/mass when the
    shifted operator is positive-critical, 0 otherwise."""
    ev = evaluator or HeatKernelEvaluator(op, exhaustion)
    if report is None:
        report = classify(op, exhaustion, evaluator=ev, green_tol=heat_tol)
    lam0 = report.lambda0.value
    t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(list(t_grid), dtype=float)
    ts, vals, levels, excluded = [], [], [], []
    for t in t_grid:
        r = _converged_kernel(ev, x, y, t, tol=heat_tol)
        if r is None or r.value <= 0.0:
            excluded.append(float(t))
            continue
        # exp(lam0 t) k can overflow pointwise even though the product is finite
        vals.append(float(np.exp(lam0 * t + np.log(r.value))))
        ts.append(float(t))
        levels.append(r.level)
    predicted = 0.0
    if report.classification is Classification.POSITIVE_CRITICAL:
        predicted = (report.ground_state[int(x)] * report.adjoint_ground_state[int(y)]
                     / report.mass.value)
    series = _decide_series(ts, vals, levels, predicted=predicted, excluded=excluded)
    series.extras["lambda0"] = f"{lam0:.12g}"
    series.extras["classification"] = report.label
    return series


def resolvent_limit(op: EllipticOperator, exhaustion, x, y, lambda_deltas=None,
                    evaluator=None, report: CriticalityReport = None,
                    green_tol=None) -> RatioSeries:
    """Series (lambda0 - lambda) G_{P-lambda}(x, y) for lambda approaching
    lambda0 from below; its limit matches the large-time kernel limit."""
    if report is None:
        report = classify(op, exhaustion, green_tol=green_tol)
    lam0 = report.lambda0.value
    if lambda_deltas is None:
        lambda_deltas = geometric_grid(0.5, 0.01, 10)
    deltas = np.asarray(sorted(lambda_deltas, reverse=True), dtype=float)
    if np.any(deltas <= 0.0):
        raise ValidationError("lambda grid must approach lambda0 strictly from below")
    ds, vals, levels = [], [], []
    excluded = []
    for delta in deltas:
        lam = lam0 - delta
        shifted = shift(op, lam)
        ev = HeatKernelEvaluator(shifted, exhaustion)
        g = ev.green(x, y, tol=green_tol)
        if g.diverging:
            raise NumericalError(
                f"green limit diverged at lambda={lam:g} below lambda0: "
                "the lambda0 estimate is off")
        if not g.converged:
            excluded.append(float(delta))
            continue
        ds.append(float(delta))
        vals.append(float(delta * g.value))
        levels.append(g.level)
    if len(vals) < 3:
        return RatioSeries(np.asarray(ds), np.asarray(vals), levels,
                           SeriesStatus.INCONCLUSIVE,
                           vals[-1] if vals else float("nan"),
                           "too few converged spectral points", excluded=excluded)
    # extrapolate delta -> 0: fit a + b delta^p via the power-tail fit in 1/delta
    inv = 1.0 / np.asarray(ds)
    a, bcoef, p, resid = fit_power_tail(inv, np.asarray(vals))
    predicted = 0.0
    if report.classification is Classification.POSITIVE_CRITICAL:
        predicted = (report.ground_state[int(x)] * report.adjoint_ground_state[int(y)]
                     / report.mass.value)
    series = RatioSeries(np.asarray(ds), np.asarray(vals), levels,
                         SeriesStatus.CONVERGED_TO, float(a),
                         f"a+b*delta^{p:g} fit (rms {resid:.2g})",
                         predicted_limit=predicted, excluded=excluded)
    series.extras["lambda0"] = f"{lam0:.12g}"
    series.extras["error_estimate"] = f"{max(resid, abs(bcoef) * ds[-1] ** p * 0.1):.3g}"
    return series


def time_shift_ratio_series(op: EllipticOperator, exhaustion, x, y, tau,
                            t_grid=None, evaluator=None, lam0=None,
                            heat_tol=None) -> RatioSeries:
    """Series k(x, y, t+tau)/k(x, y, t) for tau < 0; the limit is e^(-lambda0 tau)
    for symmetric operators (asserted only there; reported otherwise)."""
    tau = float(tau)
    if tau >= 0.0:
        raise ValidationError("tau must be negative")
    ev = evaluator or HeatKernelEvaluator(op, exhaustion)
    t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(list(t_grid), dtype=float)
    if t_grid.min() <= -tau:
        raise ValidationError("t grid must start above |tau|")
    ts, vals, levels, excluded = [], [], [], []
    for t in t_grid:
        r_num = _converged_kernel(ev, x, y, t + tau, tol=heat_tol)
        r_den = _converged_kernel(ev, x, y, t, tol=heat_tol)
        if r_num is None or r_den is None or r_den.value <= 0.0:
            excluded.append(float(t))
            continue
        ts.append(float(t))
        vals.append(r_num.value / r_den.value)
        levels.append(max(r_num.level, r_den.level))
    predicted = None
    if lam0 is None and op.symmetric:
        lam0 = lambda0(op, exhaustion, evaluator=ev).value
    if lam0 is not None:
        predicted = float(np.exp(-lam0 * tau))
    series = _decide_series(ts, vals, levels, predicted=predicted, excluded=excluded)
    series.extras["tau"] = f"{tau:g}"
    if not op.symmetric:
        series.extras["note"] = ("nonsymmetric operator: the e^(-lambda0 tau) limit "
                                 "presupposes the large-time ratio hypothesis; reported, not asserted")
    return series


def davies_ratio_series(op: EllipticOperator, exhaustion, x, y, x0, y0,
                        t_grid=None, evaluator=None, report=None,
                        heat_tol=None) -> RatioSeries:
    """Series k(x, y, t)/k(x0, y0, t); for symmetric critical operators the
    limit is the ground-state ratio phi(x) phi*(y)/(phi(x0) phi*(y0))."""
    ev = evaluator or HeatKernelEvaluator(op, exhaustion)
    t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(list(t_grid), dtype=float)
    ts, vals, levels, excluded = [], [], [], []
    for t in t_grid:
        r_num = _converged_kernel(ev, x, y, t, tol=heat_tol)
        r_den = _converged_kernel(ev, x0, y0, t, tol=heat_tol)
        if r_num is None or r_den is None or r_den.value <= 0.0:
            excluded.append(float(t))
            continue
        ts.append(float(t))
        vals.append(r_num.value / r_den.value)
        levels.append(max(r_num.level, r_den.level))
    predicted = None
    if report is not None and report.ground_state is not None and op.symmetric:
        predicted = (report.ground_state[int(x)] * report.adjoint_ground_state[int(y)]
                     / (report.ground_state[int(x0)] * report.adjoint_ground_state[int(y0)]))
    return _decide_series(ts, vals, levels, predicted=predicted, excluded=excluded)


def conjecture_ratio_series(op_plus: EllipticOperator, op_zero: EllipticOperator,
                            exhaustion, x, y, t_grid=None, y1=None, probe_xs=None,
                            evaluators=None, reports=None, heat_tol=None) -> RatioSeries:
    """Series k_{P+}(x, y, t)/k_{P0}(x, y, t) for subcritical P+ against critical P0.

    Also estimates the empirical domination constant C and onset times T(x)
    at the reference vertex y1: the sup over probe vertices of the ratio past
    its observed peak.
    """
    if reports is None:
        rep_zero = classify(op_zero, exhaustion)
        rep_plus = classify(op_plus, exhaustion)
    else:
        rep_plus, rep_zero = reports
    if rep_zero.classification is Classification.SUBCRITICAL:
        raise ValidationError("the reference operator must be critical")
    if rep_plus.classification is not Classification.SUBCRITICAL:
        raise ValidationError("the perturbed operator must be subcritical")
    ev_plus, ev_zero = evaluators or (HeatKernelEvaluator(op_plus, exhaustion),
                                      HeatKernelEvaluator(op_zero, exhaustion))
    t_grid = DEFAULT_T_GRID if t_grid is None else np.asarray(list(t_grid), dtype=float)
    ts, vals, levels, excluded = [], [], [], []
    for t in t_grid:
        r_num = _converged_kernel(ev_plus, x, y, t, tol=heat_tol)
        r_den = _converged_kernel(ev_zero, x, y, t, tol=heat_tol)
        if r_num is None or r_den is None or r_den.value <= 0.0:
            excluded.append(float(t))
            continue
        ts.append(float(t))
        vals.append(r_num.value / r_den.value)
        levels.append(max(r_num.level, r_den.level))
    series = _decide_series(ts, vals, levels, predicted=0.0, excluded=excluded)
    series.extras["lambda_plus"] = f"{rep_plus.lambda0.value:.10g}"

    y1 = int(y) if y1 is None else int(y1)
    probe_xs = [int(x)] if probe_xs is None else [int(v) for v in probe_xs]
    c_emp, onsets = 0.0, {}
    for xv in probe_xs:
        rx = []
        for t in ts:
            num = _converged_kernel(ev_plus, xv, y1, t, tol=heat_tol)
            den = _converged_kernel(ev_zero, xv, y1, t, tol=heat_tol)
            rx.append(num.value / den.value if num and den and den.value > 0.0 else np.nan)
        rx = np.asarray(rx)
        ok = ~np.isnan(rx)
        if not np.any(ok):
            continue
        peak = int(np.nanargmax(rx))
        onsets[xv] = float(ts[peak])
        c_emp = max(c_emp, float(np.nanmax(rx[peak:])))
    series.extras["domination_constant"] = f"{c_emp:.10g}"
    series.extras["onset_times"] = ",".join(f"{xv}:{tv:g}" for xv, tv in sorted(onsets.items()))
    return series


# ---------------------------------------------------------------------------
# scenario configs, CSV emission and the run driver

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (np.floating,)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, fieldnames, rows):
    """ASCII CSV, header row, 17 significant digits, LF line endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(k, "")) if isinstance(row, dict) else _fmt(row[i])
                             for i, k in enumerate(fieldnames)])


EXPERIMENT_KINDS = (
    "classify", "heat", "green", "lambda0", "lambda0_log", "theorem_limit",
    "resolvent", "time_shift", "davies", "conjecture", "coupling",
    "perturb_integrals",
)


@dataclass
class ScenarioConfig:
    """Validated contents of a scenario file."""

    fixture_name: str
    ambient_size: int | None
    kind: str
    constant: float
    potential_file: str | None
    coupling: float
    pert_constant: float | None
    pert_file: str | None
    pert_indicator: list
    pert_value: float
    pert_coupling: float
    x: int
    y: int
    x0: int | None
    y0: int | None
    y1: int | None
    t: float
    tau: float
    t_grid: np.ndarray | None
    lambda_deltas: np.ndarray | None
    heat_tol: float | None
    green_tol: float | None
    bracket: tuple
    pert_kind: str
    seed: int
    out_dir: str
    prefix: str

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ValidationError(f"cannot read config file {path!r}")
        return cls.from_parser(parser, path)

    @classmethod
    def from_parser(cls, parser, path="<config>"):
        def bad(section, key, msg):
            return ValidationError(f"{path}: [{section}] {key}: {msg}")

        if "fixture" not in parser or not parser["fixture"].get("name"):
            raise ValidationError(f"{path}: missing [fixture] name")
        fx = parser["fixture"]
        op_sec = parser["operator"] if "operator" in parser else {}
        pert = parser["perturbation"] if "perturbation" in parser else {}
        if "experiment" not in parser or not parser["experiment"].get("kind"):
            raise ValidationError(f"{path}: missing [experiment] kind")
        exp = parser["experiment"]
        out = parser["output"] if "output" in parser else {}

        kind = exp.get("kind").strip()
        if kind not in EXPERIMENT_KINDS:
            raise bad("experiment", "kind", f"unknown kind {kind!r}; one of {EXPERIMENT_KINDS}")

        def get_float(sec, key, default=None, name="experiment"):
            raw = sec.get(key)
            if raw is None or raw == "":
                return default
            try:
                return float(raw)
            except ValueError:
                raise bad(name, key, f"not a number: {raw!r}") from None

        def get_int(sec, key, default=None, name="experiment"):
            raw = sec.get(key)
            if raw is None or raw == "":
                return default
            try:
                return int(raw)
            except ValueError:
                raise bad(name, key, f"not an integer: {raw!r}") from None

        def parse_grid(raw, key):
            if raw is None or raw.strip() == "":
                return None
            raw = raw.strip()
            if raw.startswith("geometric:"):
                parts = raw.split(":")[1:]
                if len(parts) != 3:
                    raise bad("experiment", key, "expected geometric:start:stop:n")
                try:
                    grid = geometric_grid(float(parts[0]), float(parts[1]), int(parts[2]))
                except ValueError:
                    raise bad("experiment", key, f"bad geometric spec {raw!r}") from None
            else:
                try:
                    grid = np.asarray([float(v) for v in raw.replace(",", " ").split()])
                except ValueError:
                    raise bad("experiment", key, f"cannot parse grid {raw!r}") from None
            if grid.size == 0:
                raise bad("experiment", key, "grid is empty")
            if np.any(np.diff(grid) <= 0.0):
                raise bad("experiment", key, "grid must be strictly increasing")
            return grid

        indicator_raw = pert.get("indicator", "") if hasattr(pert, "get") else ""
        indicator = []
        if indicator_raw.strip():
            try:
                indicator = [int(v) for v in indicator_raw.replace(",", " ").split()]
            except ValueError:
                raise bad("perturbation", "indicator", f"bad vertex list {indicator_raw!r}") from None

        bracket_raw = exp.get("bracket", "0 8")
        try:
            b_lo, b_hi = [float(v) for v in bracket_raw.replace(",", " ").split()]
        except ValueError:
            raise bad("experiment", "bracket", f"expected two numbers, got {bracket_raw!r}") from None

        pert_kind = exp.get("perturbation_kind", "semismall").strip()

        return cls(
            fixture_name=fx.get("name").strip(),
            ambient_size=get_int(fx, "ambient_size", None, "fixture"),
            kind=kind,
            constant=get_float(op_sec, "constant", 0.0, "operator"),
            potential_file=(op_sec.get("potential_file") or None) if hasattr(op_sec, "get") else None,
            coupling=get_float(op_sec, "coupling", 1.0, "operator"),
            pert_constant=get_float(pert, "constant", None, "perturbation"),
            pert_file=(pert.get("potential_file") or None) if hasattr(pert, "get") else None,
            pert_indicator=indicator,
            pert_value=get_float(pert, "value", 1.0, "perturbation"),
            pert_coupling=get_float(pert, "coupling", 1.0, "perturbation"),
            x=get_int(exp, "x", 0),
            y=get_int(exp, "y", 0),
            x0=get_int(exp, "x0", None),
            y0=get_int(exp, "y0", None),
            y1=get_int(exp, "y1", None),
            t=get_float(exp, "t", 1.0),
            tau=get_float(exp, "tau", -1.0),
            t_grid=parse_grid(exp.get("t_grid"), "t_grid"),
            lambda_deltas=parse_grid(exp.get("lambda_deltas"), "lambda_deltas"),
            heat_tol=get_float(exp, "heat_tol", None),
            green_tol=get_float(exp, "green_tol", None),
            bracket=(b_lo, b_hi),
            pert_kind=pert_kind,
            seed=get_int(exp, "seed", 0),
            out_dir=out.get("dir", "out") if hasattr(out, "get") else "out",
            prefix=out.get("prefix", "") if hasattr(out, "get") else "",
        )

    def build_fixture(self) -> DomainFixture:
        return resolve_fixture(self.fixture_name, ambient_size=self.ambient_size)

    def build_operator(self, fixture: DomainFixture) -> EllipticOperator:
        op = assemble(fixture.domain)
        if self.potential_file:
            pot = Potential.from_file(fixture.domain, self.potential_file)
            op = add_potential(op, pot, self.coupling)
        if self.constant:
            op = add_potential(op, Potential.constant(fixture.domain, self.constant))
        return op

    def build_perturbation(self, fixture: DomainFixture) -> Potential | None:
        parts = []
        if self.pert_file:
            parts.append(Potential.from_file(fixture.domain, self.pert_file).values)
        if self.pert_indicator:
            parts.append(Potential.indicator(fixture.domain, self.pert_indicator,
                                             self.pert_value).values)
        if self.pert_constant is not None:
            parts.append(np.full(fixture.domain.n_vertices, self.pert_constant))
        if not parts:
            return None
        return Potential(fixture.domain, sum(parts))


@dataclass
class ScenarioResult:
    exit_status: int
    summary: str
    csv_paths: list


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Execute the configured experiment; write CSV artifacts and a summary.

    Deterministic given the config.  Exit status: 0 success, 3 when a limit
    or series is inconclusive (hard errors raise and are mapped by the CLI).
    """
    fixture = config.build_fixture()
    op = config.build_operator(fixture)
    exhaustion = fixture.exhaustion
    os.makedirs(config.out_dir, exist_ok=True)
    base = os.path.join(config.out_dir, (config.prefix + config.kind).replace("/", "_"))
    csv_paths = []
    status = 0
    lines = [f"fixture: {fixture.name}", f"experiment: {config.kind}"]

    def emit(name, fieldnames, rows):
        path = f"{base}_{name}.csv" if name else f"{base}.csv"
        write_csv(path, fieldnames, rows)
        csv_paths.append(path)

    if config.kind == "classify":
        report = classify(op, exhaustion, green_tol=config.green_tol)
        lines.append(report.to_text().rstrip())
        emit("diagnostics", ["level", "lambda0_j", "green_j", "mass_j"],
             report.diagnostic_rows())
    elif config.kind == "heat":
        ev = HeatKernelEvaluator(op, exhaustion)
        r = ev.heat_kernel(config.x, config.y, config.t, tol=config.heat_tol)
        lines += [f"value: {r.value:.17g}", f"status: {r.status.value}",
                  f"level: {r.level}", f"model: {r.model}"]
        emit("history", ["level", "value"], [{"level": j, "value": v} for j, v in r.history])
        status = 3 if r.status is LimitStatus.INCONCLUSIVE else 0
    elif config.kind == "green":
        ev = HeatKernelEvaluator(op, exhaustion)
        r = ev.green(config.x, config.y, tol=config.green_tol)
        lines += [f"value: {r.value:.17g}", f"status: {r.status.value}",
                  f"level: {r.level}", f"model: {r.model}"]
        emit("history", ["level", "value"], [{"level": j, "value": v} for j, v in r.history])
        status = 3 if r.status is LimitStatus.INCONCLUSIVE else 0
    elif config.kind == "lambda0":
        lam = lambda0(op, exhaustion)
        lines += [f"lambda0: {lam.value:.17g}", f"error_estimate: {lam.error:.3g}"]
        emit("history", ["level", "lambda0_j"],
             [{"level": j, "lambda0_j": v} for j, v in lam.history])
    elif config.kind == "lambda0_log":
        ev = HeatKernelEvaluator(op, exhaustion)
        grid = config.t_grid if config.t_grid is not None else geometric_grid(5.0, 200.0, 12)
        est = lambda0_log_estimate(ev, config.x, config.y, grid, tol=config.heat_tol)
        lines += [f"lambda0_estimate: {est.estimate:.12g}",
                  f"fit: a={est.fit[0]:.6g} b={est.fit[1]:.6g} c={est.fit[2]:.6g} rms={est.fit[3]:.3g}"]
        emit("series", ["t", "value"], est.rows())
    elif config.kind in ("theorem_limit", "time_shift", "davies", "conjecture", "resolvent"):
        series = _run_series_experiment(config, fixture, op)
        lines.append(series.summary().rstrip())
        param = "lambda_delta" if config.kind == "resolvent" else "t"
        emit("series", [param, "level", "value"], series.rows(param=param))
        status = 3 if series.status is SeriesStatus.INCONCLUSIVE else 0
    elif config.kind == "coupling":
        pot = config.build_perturbation(fixture)
        if pot is None:
            raise ValidationError("coupling experiment needs a [perturbation] section")
        res = critical_coupling(op, pot, exhaustion, bracket=config.bracket,
                                green_tol=config.green_tol)
        lines += [f"alpha0: {res.alpha0:.12g}",
                  f"bracket: {res.bracket[0]:.12g} {res.bracket[1]:.12g}",
                  f"oracle_alpha0: {'' if res.oracle_alpha0 is None else format(res.oracle_alpha0, '.12g')}",
                  f"oracle_agrees: {res.agree}"]
        if res.finding:
            lines.append(f"finding: {res.finding}")
        emit("history", ["alpha", "critical_side"],
             [{"alpha": a, "critical_side": int(s)} for a, s in res.history])
    elif config.kind == "perturb_integrals":
        pot = config.build_perturbation(fixture)
        if pot is None:
            raise ValidationError("perturbation integrals need a [perturbation] section")
        res = perturbation_integrals(op, pot, exhaustion, x0=config.x0,
                                     kind=config.pert_kind, seed=config.seed)
        lines += [f"kind: {res.kind}", f"verdict_decreasing_to_zero: {res.verdict}",
                  f"fitted_decay: {res.fitted_decay:.6g}"]
        emit("series", ["level", "s_j"], res.rows())
    else:  # pragma: no cover - guarded by config validation
        raise ValidationError(f"unhandled experiment kind {config.kind!r}")

    summary = "\n".join(lines) + "\n"
    with open(f"{base}_summary.txt", "w", newline="") as fh:
        fh.write(summary)
    return ScenarioResult(status, summary, csv_paths)


def _run_series_experiment(config: ScenarioConfig, fixture, op) -> RatioSeries:
    exhaustion = fixture.exhaustion
    if config.kind == "theorem_limit":
        return theorem_limit_series(op, exhaustion, config.x, config.y,
                                    t_grid=config.t_grid, heat_tol=config.heat_tol)
    if config.kind == "resolvent":
        return resolvent_limit(op, exhaustion, config.x, config.y,
                               lambda_deltas=config.lambda_deltas,
                               green_tol=config.green_tol)
    if config.kind == "time_shift":
        return time_shift_ratio_series(op, exhaustion, config.x, config.y, config.tau,
                                       t_grid=config.t_grid, heat_tol=config.heat_tol)
    if config.kind == "davies":
        x0 = config.x0 if config.x0 is not None else config.x
        y0 = config.y0 if config.y0 is not None else config.y
        report = classify(op, exhaustion, green_tol=config.green_tol) if op.symmetric else None
        return davies_ratio_series(op, exhaustion, config.x, config.y, x0, y0,
                                   t_grid=config.t_grid, report=report,
                                   heat_tol=config.heat_tol)
    if config.kind == "conjecture":
        pot = config.build_perturbation(fixture)
        if pot is None:
            raise ValidationError("conjecture experiment needs a [perturbation] section")
        op_plus = add_potential(op, pot, config.pert_coupling)
        return conjecture_ratio_series(op_plus, op, exhaustion, config.x, config.y,
                                       t_grid=config.t_grid, y1=config.y1,
                                       heat_tol=config.heat_tol)
    raise ValidationError(f"unhandled series kind {config.kind!r}")
