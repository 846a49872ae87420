"""Principal eigenvalues, ground states, criticality classification and couplings.

The classification dichotomy is decided by the exhaustion limit of the Green
values: convergence means subcritical, divergence means critical.  Critical
operators are split into positive- and null-critical by the convergence of
the mass series sum phi(x) phi*(x) mu(x) over the exhaustion, where phi and
phi* are the ground states of the operator and its adjoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .domains import Exhaustion
from .errors import (
    InconclusiveError,
    NegativeLambda0Error,
    NoSignChangeError,
    NumericalError,
    ValidationError,
)
from .kernels import (
    GREEN_TOL,
    HeatKernelEvaluator,
    LimitResult,
    LimitStatus,
    factorize,
    sequence_limit,
)
from .operators import EllipticOperator, Potential, add_potential, adjoint
from .series import fit_log_time_formula, neville_extrapolate


class Classification(enum.Enum):
    SUBCRITICAL = "subcritical"
    NULL_CRITICAL = "null-critical"
    POSITIVE_CRITICAL = "positive-critical"


@dataclass
class Lambda0Result:
    """Generalized principal eigenvalue estimate with its level history."""

    value: float
    error: float
    history: list  # (level, lambda0(S_j))

    def __repr__(self):
        return f"Lambda0Result({self.value!r} +- {self.error:.2e}, levels={len(self.history)})"


def default_reference_pair(exhaustion: Exhaustion):
    """Reference vertices (x0, y0): first vertex of S_1 and a neighbor of it."""
    first = exhaustion[0]
    x0 = int(first.labels[0])
    domain = exhaustion.domain
    i0 = domain.index[x0]
    adj = domain.weights + domain.weights.T
    neighbors = adj[i0].nonzero()[1]
    if neighbors.size == 0:
        return x0, x0  # single-vertex domain
    for j in range(len(exhaustion)):
        level = exhaustion[j]
        for nb in neighbors:
            y0 = int(domain.labels[nb])
            if y0 in level and x0 in level:
                return x0, y0
    return x0, x0


def lambda0(op: EllipticOperator, exhaustion: Exhaustion, tol=1e-10,
            evaluator: HeatKernelEvaluator = None) -> Lambda0Result:
    """Limit of the principal Dirichlet eigenvalues along the exhaustion.

    The level sequence is nonincreasing; the limit is Aitken-extrapolated and
    reported with the last raw increment as a (conservative) error estimate.
    """
    ev = evaluator or HeatKernelEvaluator(op, exhaustion)
    tol = float(tol)
    history = []
    values = []
    sizes = []
    exact_final = (not op.domain.truncated) and (
        exhaustion[ev.last_usable_level()].size == op.domain.n_vertices
    )
    for j in ev.usable_levels():
        lam = ev.principal_eigenvalue(j)
        if values and lam > values[-1] + 1e-9 * max(1.0, abs(values[-1])):
            raise NumericalError(
                f"principal eigenvalue increased along the exhaustion at level {j}"
            )
        history.append((j, lam))
        values.append(lam)
        sizes.append(exhaustion[j].size)
        if len(values) >= 3:
            m = min(5, len(values))
            h = 1.0 / np.asarray(sizes[-m:], dtype=float)
            extrap, err = neville_extrapolate(h, values[-m:])
            if err <= tol * max(1.0, abs(extrap)):
                return Lambda0Result(extrap, abs(values[-2] - values[-1]), history)
    if exact_final:
        return Lambda0Result(values[-1], 0.0, history)
    if len(values) == 1:
        return Lambda0Result(values[-1], float("inf"), history)
    d_last = abs(values[-2] - values[-1])
    increments = np.diff(np.asarray(values))
    shrinking = len(values) < 3 or abs(increments[-1]) <= abs(increments[-2]) * (1.0 + 1e-3)
    if not shrinking and d_last > tol * max(1.0, abs(values[-1])):
        raise NumericalError("principal eigenvalue increments are not shrinking; no convergence")
    m = min(5, len(values))
    h = 1.0 / np.asarray(sizes[-m:], dtype=float)
    extrap, _ = neville_extrapolate(h, values[-m:])
    return Lambda0Result(extrap, d_last, history)


def ground_state(evaluator: HeatKernelEvaluator, x0=None, max_points=5):
    """Exhaustion limit of principal Dirichlet eigenfunctions, normalized at x0.

    Per-vertex polynomial extrapolation in 1/|S_j| over the last levels that
    contain the vertex.  Returns (x0, dict vertex -> phi(vertex)).
    """
    ex = evaluator.exhaustion
    if x0 is None:
        x0 = int(ex[0].labels[0])
    levels = evaluator.usable_levels()
    per_level = {}
    sizes = {}
    for j in levels:
        _, phi = evaluator.ground_state_level(j, x0)
        per_level[j] = dict(zip((int(v) for v in ex[j].labels), phi))
        sizes[j] = ex[j].size
    out = {}
    for x in (int(v) for v in ex[levels[-1]].labels):
        seq = [(sizes[j], per_level[j][x]) for j in levels if x in per_level[j]]
        seq = seq[-max_points:]
        if len(seq) == 1:
            out[x] = seq[0][1]
            continue
        h = [1.0 / s for s, _ in seq]
        vals = [v for _, v in seq]
        value, _ = neville_extrapolate(h, vals)
        out[x] = value
    out[int(x0)] = 1.0
    return int(x0), out


@dataclass
class CriticalityReport:
    """Classification of an operator with the limits that justify it."""

    classification: Classification
    lambda0: Lambda0Result
    green_limit: LimitResult
    x0: int
    y0: int
    ground_state: dict | None = None
    adjoint_ground_state: dict | None = None
    mass: LimitResult | None = None
    notes: list = field(default_factory=list)

    @property
    def label(self):
        return self.classification.value

    def to_text(self):
        lines = [
            f"classification: {self.classification.value}",
            f"lambda0: {self.lambda0.value:.12g}",
            f"lambda0_error: {self.lambda0.error:.3g}",
            f"green_status: {self.green_limit.status.value}",
            f"green_value: {self.green_limit.value:.12g}",
            f"reference_x0: {self.x0}",
            f"reference_y0: {self.y0}",
        ]
        if self.mass is not None:
            lines.append(f"mass_status: {self.mass.status.value}")
            if self.mass.converged:
                lines.append(f"mass: {self.mass.value:.12g}")
        if self.ground_state is not None:
            lines.append(f"ground_state_vertices: {len(self.ground_state)}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"

    def diagnostic_rows(self):
        """Per-level rows (level, lambda0_j, green_j, mass_j) for CSV export."""
        lam = dict(self.lambda0.history)
        grn = dict(self.green_limit.history)
        mss = dict(self.mass.history) if self.mass is not None else {}
        rows = []
        for j in sorted(set(lam) | set(grn) | set(mss)):
            rows.append({
                "level": j,
                "lambda0_j": lam.get(j, ""),
                "green_j": grn.get(j, ""),
                "mass_j": mss.get(j, ""),
            })
        return rows


def classify(op: EllipticOperator, exhaustion: Exhaustion, tol=1e-6, x0=None, y0=None,
             evaluator: HeatKernelEvaluator = None, green_tol=None) -> CriticalityReport:
    """Subcritical / positive-critical / null-critical classification.

    Raises NegativeLambda0Error when lambda0 < -tol (standing assumption of
    the theory) and InconclusiveError when a deciding limit cannot be
    certified within the ambient truncation.
    """
    ev = evaluator or HeatKernelEvaluator(op, exhaustion)
    lam = lambda0(op, exhaustion, evaluator=ev)
    if lam.value < -float(tol):
        raise NegativeLambda0Error(lam.value)
    if x0 is None or y0 is None:
        x0_d, y0_d = default_reference_pair(exhaustion)
        x0 = x0_d if x0 is None else int(x0)
        y0 = y0_d if y0 is None else int(y0)
    green = ev.green(x0, y0, tol=green_tol)
    if green.status is LimitStatus.INCONCLUSIVE:
        raise InconclusiveError(f"green limit inconclusive: {green.evidence}")

    if green.converged:
        return CriticalityReport(Classification.SUBCRITICAL, lam, green, x0, y0)

    # critical: ground states and the mass series decide the subdivision
    _, phi = ground_state(ev, x0)
    if op.symmetric:
        phi_star = dict(phi)
    else:
        ev_star = HeatKernelEvaluator(adjoint(op), exhaustion,
                                      heat_tol=ev.heat_tol, green_tol=ev.green_tol)
        _, phi_star = ground_state(ev_star, x0)
    sums, sizes, levels = [], [], []
    domain = op.domain
    usable = ev.usable_levels()
    finite = (not domain.truncated) and exhaustion[usable[-1]].size == domain.n_vertices
    # on ambient truncations, the outermost level's new vertices appear in too
    # few levels for their phi extrapolation to be trusted; the mass series
    # stops one level short there (a finite domain is summed exactly instead)
    mass_levels = usable if finite or len(usable) == 1 else usable[:-1]
    for j in mass_levels:
        labels = exhaustion[j].labels
        total = sum(phi[int(x)] * phi_star[int(x)] * domain.mu[domain.index[int(x)]]
                    for x in labels)
        sums.append(total)
        sizes.append(exhaustion[j].size)
        levels.append(j)
    mass = sequence_limit(sums, sizes, tol=ev.green_tol, levels=levels,
                          exact_final=finite)
    if mass.status is LimitStatus.INCONCLUSIVE:
        raise InconclusiveError(f"mass series inconclusive: {mass.evidence}")
    kind = Classification.POSITIVE_CRITICAL if mass.converged else Classification.NULL_CRITICAL
    return CriticalityReport(kind, lam, green, x0, y0, phi, phi_star, mass)


@dataclass
class LogEigenvalueSeries:
    """The series (t, -log k(x,y,t)/t) and its fitted large-time limit."""

    t: np.ndarray
    values: np.ndarray
    estimate: float
    fit: tuple  # (a, b, c, rms) for a + b log t / t + c / t

    def rows(self):
        return [{"t": tt, "value": vv} for tt, vv in zip(self.t, self.values)]


def lambda0_log_estimate(evaluator: HeatKernelEvaluator, x, y, t_grid,
                         tol=None) -> LogEigenvalueSeries:
    """Estimate lambda0 from the decay rate -log k(x, y, t)/t along t_grid."""
    t_grid = np.asarray(list(t_grid), dtype=float)
    if t_grid.size < 3 or np.any(np.diff(t_grid) <= 0.0):
        raise ValidationError("t_grid must be increasing with at least 3 points")
    vals = []
    for t in t_grid:
        r = evaluator.heat_kernel(x, y, t, tol=tol)
        if not r.converged:
            raise InconclusiveError(f"kernel limit inconclusive at t={t:g}")
        if r.value <= 0.0:
            raise NumericalError(f"nonpositive kernel value at t={t:g}")
        vals.append(-np.log(r.value) / t)
    vals = np.asarray(vals)
    a, b, c, rms = fit_log_time_formula(t_grid, vals)
    return LogEigenvalueSeries(t_grid, vals, a, (a, b, c, rms))


@dataclass
class CouplingResult:
    """Critical coupling from bisection, cross-checked against the spectral oracle."""

    alpha0: float
    bracket: tuple
    oracle_alpha0: float | None
    agree: bool
    finding: str | None
    history: list  # (alpha, is_critical_side)


def birman_schwinger_alpha0(op: EllipticOperator, potential: Potential,
                            evaluator: HeatKernelEvaluator, green_tol=None):
    """Oracle coupling: alpha0 = 1/rho with rho the largest positive eigenvalue
    of the matrix -G(x, z) V(z) mu(z) on the support of V.

    For a pure attractive V = -W this is 1/rho(W^(1/2) G W^(1/2)).
    """
    support = potential.support
    if not support:
        raise ValidationError("potential has empty support; no coupling to find")
    domain = op.domain
    n = len(support)
    g = np.empty((n, n))
    for b, y in enumerate(support):
        for a, x in enumerate(support):
            r = evaluator.green(x, y, tol=green_tol)
            if not r.converged:
                raise InconclusiveError(f"green limit inconclusive at ({x}, {y})")
            g[a, b] = r.value
    v_vals = np.array([potential.values[domain.index[x]] for x in support])
    mu_vals = np.array([domain.mu[domain.index[x]] for x in support])
    m = -g * (v_vals * mu_vals)[None, :]
    eigs = np.linalg.eigvals(m)
    real_pos = eigs.real[(np.abs(eigs.imag) <= 1e-9 * np.abs(eigs.real) + 1e-12)
                         & (eigs.real > 0.0)]
    if real_pos.size == 0:
        return None
    return float(1.0 / real_pos.max())


def critical_coupling(op: EllipticOperator, potential: Potential, exhaustion: Exhaustion,
                      bracket=(0.0, 8.0), tol=1e-4, green_tol=None,
                      oracle_rel_tol=1e-3) -> CouplingResult:
    """Coupling alpha0 at which P + alpha V stops being subcritical.

    Bisection on the Green-limit dichotomy, to bracket width < ``tol``; the
    result is cross-checked against the Birman-Schwinger style oracle and a
    disagreement beyond ``oracle_rel_tol`` is reported as a finding.
    """
    if not np.any(potential.negative_part > 0.0):
        raise ValidationError("potential must have a nonzero attractive part")
    if np.count_nonzero(potential.values) > exhaustion[len(exhaustion) - 1].size:
        raise ValidationError("potential support exceeds the exhaustion")
    x0, y0 = default_reference_pair(exhaustion)
    base_ev = HeatKernelEvaluator(op, exhaustion)
    base_green = base_ev.green(x0, y0, tol=green_tol)
    if not base_green.converged:
        raise ValidationError("base operator is not subcritical (green limit did not converge)")

    history = []

    def critical_side(alpha):
        if alpha == 0.0:
            history.append((0.0, False))
            return False
        pa = add_potential(op, potential, alpha)
        ev = HeatKernelEvaluator(pa, exhaustion)
        g = ev.green(x0, y0, tol=green_tol)
        if g.status is LimitStatus.INCONCLUSIVE:
            raise InconclusiveError(
                f"green limit inconclusive at alpha={alpha:g}: {g.evidence}")
        side = g.diverging
        history.append((alpha, side))
        return side

    lo, hi = float(bracket[0]), float(bracket[1])
    if lo >= hi:
        raise ValidationError("bracket must satisfy lo < hi")
    if critical_side(lo) or not critical_side(hi):
        raise NoSignChangeError(
            f"bracket ({lo:g}, {hi:g}) does not straddle the subcritical/critical transition")
    resolution_note = None
    while hi - lo >= float(tol):
        mid = 0.5 * (lo + hi)
        try:
            side = critical_side(mid)
        except InconclusiveError as exc:
            # divergence was not established at this coupling; count the point
            # as subcritical but record that the ambient limits the resolution
            resolution_note = f"resolution limited by the ambient truncation near alpha={mid:g}"
            side = False
        if side:
            hi = mid
        else:
            lo = mid
    alpha0 = 0.5 * (lo + hi)

    oracle = birman_schwinger_alpha0(op, potential, base_ev, green_tol=green_tol)
    finding = resolution_note
    agree = False
    if oracle is None:
        finding = "spectral oracle produced no positive eigenvalue"
    else:
        rel = abs(alpha0 - oracle) / abs(oracle)
        agree = rel <= oracle_rel_tol
        if not agree:
            disagreement = (f"bisection alpha0={alpha0:.8g} and oracle alpha0={oracle:.8g} "
                            f"disagree by {rel:.2e} relative")
            finding = f"{finding}; {disagreement}" if finding else disagreement
    return CouplingResult(alpha0, (lo, hi), oracle, agree, finding, history)


@dataclass
class PerturbationIntegralSeries:
    """Exterior Green-triple integrals s_j per level for small/semismall tests."""

    kind: str
    levels: list
    values: list
    verdict: bool
    fitted_decay: float
    x0: int

    def rows(self):
        return [{"level": j, "s_j": v} for j, v in zip(self.levels, self.values)]


def perturbation_integrals(op: EllipticOperator, potential: Potential,
                           exhaustion: Exhaustion, x0=None, kind="semismall",
                           x_sample_cap=48, seed=0,
                           evaluator: HeatKernelEvaluator = None) -> PerturbationIntegralSeries:
    """Levelwise integrals sup_y int_{M_j*} G(x0,z)|V(z)|G(z,y)/G(x0,y) dmu(z).

    kind 'semismall' keeps x fixed at x0; kind 'small' takes the sup over a
    (seeded) sample of exterior x as well.  Green values come from the final
    usable exhaustion level, the desk-scale surrogate of the full domain.
    """
    if kind not in ("small", "semismall"):
        raise ValidationError(f"unknown perturbation kind: {kind!r}")
    ev = evaluator or HeatKernelEvaluator(op, exhaustion)
    if x0 is None:
        x0 = int(exhaustion[0].labels[0])
    xr, yr = default_reference_pair(exhaustion)
    base_green = ev.green(xr, yr, tol=1e-6)  # qualitative subcriticality check
    if not base_green.converged:
        raise ValidationError(
            "operator is not subcritical: its Green limit did not converge")
    top = ev.last_usable_level()
    sub = exhaustion[top]
    fac = ev.factor(top)
    n = sub.size
    mu = sub.mu
    absv_local = np.abs(potential.values[sub.positions])

    ix0 = sub.local_of(x0)
    g_x0 = fac.green_row(ix0)  # G(x0, .) on the level

    rng = np.random.default_rng(seed)
    levels, values = [], []
    for j in ev.usable_levels():
        if j == top:
            break
        inside = set(int(v) for v in exhaustion[j].labels)
        ext_mask = np.array([int(v) not in inside for v in sub.labels])
        if not np.any(ext_mask):
            continue
        ext_idx = np.flatnonzero(ext_mask)

        def level_value(ix, g_row):
            a = np.zeros(n)
            a[ext_idx] = g_row[ext_idx] * absv_local[ext_idx] * mu[ext_idx]
            if not np.any(a):
                return 0.0
            lu, shift = fac._splu()
            numer = lu.solve(a, trans="T")  # sum_z a_z G(z, y)
            denom = g_row[ext_idx]
            good = denom > 0.0
            if not np.any(good):
                raise NumericalError("green denominators vanished on the exterior")
            return float(np.max(numer[ext_idx][good] / denom[good]))

        if kind == "semismall":
            s_j = level_value(ix0, g_x0)
        else:
            if ext_idx.size <= x_sample_cap:
                xs = ext_idx
            else:
                xs = np.sort(rng.choice(ext_idx, size=x_sample_cap, replace=False))
            # the reference point is always sampled, so the small-kind sup
            # dominates the semismall value at every level by construction
            s_j = level_value(ix0, g_x0)
            for ix in xs:
                s_j = max(s_j, level_value(ix, fac.green_row(int(ix))))
        levels.append(j)
        values.append(s_j)
    if not levels:
        raise ValidationError("ambient truncation too small: no nonempty exterior levels")

    vals = np.asarray(values)
    decreasing = bool(np.all(np.diff(vals) <= np.maximum(1e-12 * vals[:-1], 1e-300)))
    positive = vals[vals > 0.0]
    if positive.size >= 2:
        jj = np.asarray([j for j, v in zip(levels, values) if v > 0.0], dtype=float)
        slope = float(np.polyfit(jj, np.log(positive), 1)[0])
    else:
        slope = float("-inf") if decreasing else 0.0
    verdict = decreasing and (vals[-1] == 0.0 or slope < 0.0)
    return PerturbationIntegralSeries(kind, levels, values, verdict, slope, int(x0))


def ground_state_green_comparison(op_alpha: EllipticOperator, phi, y0, region,
                                  exhaustion: Exhaustion, green_tol=None,
                                  evaluator: HeatKernelEvaluator = None):
    """Comparability constants (c_low, c_high) of phi against G(., y0) on a region.

    The region must avoid the first exhaustion level (the comparison is a
    near-infinity statement).  Rejects operators without a converging Green
    limit, e.g. the critical member of a family.
    """
    region = [int(x) for x in region]
    if not region:
        raise ValidationError("empty comparison region")
    first = set(int(v) for v in exhaustion[0].labels)
    if any(x in first for x in region):
        raise ValidationError("comparison region must exclude the first exhaustion level")
    ev = evaluator or HeatKernelEvaluator(op_alpha, exhaustion)
    ratios = []
    for x in region:
        g = ev.green(x, int(y0), tol=green_tol)
        if g.diverging:
            raise NumericalError(
                "green limit diverges: the operator is critical and admits no Green function")
        if not g.converged:
            raise InconclusiveError(f"green limit inconclusive at x={x}")
        if g.value <= 0.0:
            raise NumericalError(f"nonpositive green value at x={x}")
        phi_x = phi[x] if not callable(phi) else phi(x)
        ratios.append(phi_x / g.value)
    return float(min(ratios)), float(max(ratios))


def edge_weight_domination(op1: EllipticOperator, op0: EllipticOperator, u1, u0):
    """Smallest C with u1+(x)^2 w1(x,y) <= C u0(x)^2 w0(x,y) over all edges.

    With u1 = u0 = 1 this compares the edge weights themselves.  Fails when a
    denominator vanishes where the numerator does not.
    """
    d1, d0 = op1.domain, op0.domain
    if d1.n_vertices != d0.n_vertices or not np.array_equal(d1.labels, d0.labels):
        raise ValidationError("operators must share the vertex set")

    def as_vec(domain, u):
        if isinstance(u, dict):
            vec = np.zeros(domain.n_vertices)
            for x, v in u.items():
                vec[domain.index[int(x)]] = float(v)
            return vec
        return np.asarray(u, dtype=float)

    v1 = np.maximum(as_vec(d1, u1), 0.0)
    v0 = as_vec(d0, u0)
    w1 = op1.weights.tocoo()
    w0 = op0.weights.tocsr()
    c_best = 0.0
    seen = set()
    for i, j, w in zip(w1.row, w1.col, w1.data):
        seen.add((int(i), int(j)))
        num = v1[i] ** 2 * w
        den = v0[i] ** 2 * w0[i, j]
        if den == 0.0:
            if num > 0.0:
                raise NumericalError(
                    f"denominator vanishes on edge ({int(d1.labels[i])}, {int(d1.labels[j])}) "
                    "where the numerator does not")
            continue
        c_best = max(c_best, num / den)
    return float(c_best)
