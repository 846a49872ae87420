"""Dirichlet heat kernels and Green functions on subdomains and their exhaustion limits.

Kernels are densities with respect to the measure:

    k(x, y, t) = [exp(-t K_S)](x, y) / mu(y),      G(x, y) = [K_S^-1](x, y) / mu(y),

where K_S is the Dirichlet restriction (principal submatrix) of the action
matrix.  All linear algebra runs on the measure form A_S = diag(mu) K_S,
whose entries stay bounded even when jump rates 1/mu span hundreds of orders
of magnitude.  Symmetric operators are factorized once per exhaustion level;
two spectral routes are used depending on scaling:

* direct route: full eigendecomposition of H = diag(mu)^(-1/2) A_S diag(mu)^(-1/2);
* inverse route: eigendecomposition of B = diag(mu)^(1/2) A_S^(-1) diag(mu)^(1/2)
  when H is too badly scaled to represent.  B has the same eigenvectors and
  reciprocal eigenvalues, and resolves exactly the small eigenvalues that
  matter for t > 0.

Nonsymmetric restrictions use dense scaling-and-squaring matrix exponentials.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domains import Exhaustion, IndexedSubdomain
from .errors import NumericalError, ValidationError
from .operators import EllipticOperator
from .series import increments_decreasing, neville_extrapolate

#: restrictions whose jump rates exceed this use the inverse spectral route
WELL_SCALED_RATE = 1e8

HEAT_TOL = 1e-9
GREEN_TOL = 1e-8
DIVERGENCE_CAP = 1e12


class LimitStatus(enum.Enum):
    CONVERGED = "converged"
    DIVERGING = "diverging"
    INCONCLUSIVE = "inconclusive"


@dataclass
class LimitResult:
    """Outcome of an exhaustion limit: value, status and per-level history."""

    value: float
    status: LimitStatus
    level: int | None
    history: list = field(default_factory=list)
    model: str = "raw"
    error_estimate: float = float("nan")
    evidence: str = ""

    @property
    def converged(self):
        return self.status is LimitStatus.CONVERGED

    @property
    def diverging(self):
        return self.status is LimitStatus.DIVERGING

    def __repr__(self):
        return (
            f"LimitResult({self.value!r}, {self.status.value}, level={self.level}, "
            f"model={self.model!r})"
        )


def _clamped(values, scale):
    """Zero out negative round-off noise below the spectral noise floor."""
    floor = 1e-13 * scale
    out = np.asarray(values, dtype=float)
    noise = np.abs(out) <= floor
    return np.where(noise, np.maximum(out, 0.0), out)


def _trend_diverging(values, sizes, tol):
    """Increments nondecreasing over >= 3 consecutive levels.

    Increments are normalized by the logarithmic level-size growth so that a
    final partial level (smaller growth factor than the doubling default)
    does not mask genuine divergence.
    """
    if len(values) < 4:
        return False
    v = np.asarray(values[-4:], dtype=float)
    s = np.asarray(sizes[-4:], dtype=float)
    inc = np.abs(np.diff(v))
    if not np.all(inc > tol * max(abs(v[-1]), 1e-300)):
        return False
    log_growth = np.log(s[1:] / s[:-1])
    if np.any(log_growth < 0.05):
        ninc = inc
    else:
        ninc = inc / log_growth
    return bool(np.all(ninc[1:] >= ninc[:-1] * (1.0 - 1e-3)))


class _FactorBase:
    """State shared by the symmetric and nonsymmetric per-level factors."""

    def __init__(self, op: EllipticOperator, sub: IndexedSubdomain):
        self.op = op
        self.sub = sub
        self.mu = op.mu[sub.positions]
        self._a_s = op.measure_matrix()[sub.positions][:, sub.positions].tocsc()
        self._lock = threading.RLock()
        self._lu = None
        self._lu_shift = 0.0
        self._principal = None
        self._green_cols = {}

    _symmetric_lu = False

    def _splu(self):
        """LU of A_S, falling back to a measure-shifted matrix when singular.

        Symmetric factors use diagonal pivoting in symmetric mode, so the signs
        of the U diagonal carry the inertia of A_S (Sylvester).
        """
        if self._lu is None:
            with self._lock:
                if self._lu is None:
                    kwargs = {}
                    if self._symmetric_lu:
                        kwargs = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                      options=dict(SymmetricMode=True))
                    try:
                        self._lu = spla.splu(self._a_s, **kwargs)
                    except RuntimeError:
                        self._lu_shift = 1.0
                        self._lu = spla.splu((self._a_s + sp.diags(self.mu)).tocsc(), **kwargs)
        return self._lu, self._lu_shift

    def is_positive_definite(self):
        """Positivity of the restricted principal eigenvalue."""
        if self._symmetric_lu:
            lu, shift = self._splu()
            if shift != 0.0:
                return False
            return bool(np.all(lu.U.diagonal() > 0.0))
        return self.lambda_min_estimate() > 0.0

    def _shifted_lu(self, sigma):
        mat = self._a_s if sigma == 0.0 else (self._a_s - sigma * sp.diags(self.mu)).tocsc()
        return spla.splu(mat)

    def _rayleigh(self, v):
        return float(v @ (self._a_s @ v)) / float(v @ (self.mu * v))

    def principal_pair(self):
        """(lambda0(S), phi) of the restriction via shifted inverse power iteration.

        The shift sigma = min D deflates the constant part of the potential:
        A - sigma D_mu is an M-matrix (lambda0(S) > min D strictly), so the
        iteration always targets the principal (Perron) mode, for symmetric
        and nonsymmetric restrictions alike.  A few Rayleigh-shift refinements
        polish the eigenvalue to machine accuracy.
        """
        if self._principal is None:
            sigma = float(np.min(self.op.potential[self.sub.positions]))
            try:
                lu = self._shifted_lu(sigma)
            except RuntimeError:
                sigma -= 1.0
                lu = self._shifted_lu(sigma)
            n = self.sub.size
            v = np.ones(n) / np.sqrt(n)
            theta_old = None
            theta = self._rayleigh(v)
            for _ in range(500):
                w = lu.solve(self.mu * v)
                nrm = float(np.linalg.norm(w))
                if nrm == 0.0 or not np.isfinite(nrm):
                    raise NumericalError("inverse power iteration broke down")
                v = w / nrm
                theta = self._rayleigh(v)
                if theta_old is not None and abs(theta - theta_old) <= 1e-14 * max(1.0, abs(theta)):
                    break
                theta_old = theta
            for _ in range(4):  # Rayleigh-shift refinement, cubic near the fixed point
                try:
                    lu_r = self._shifted_lu(theta)
                except RuntimeError:
                    break  # theta hit the eigenvalue exactly
                w = lu_r.solve(self.mu * v)
                nrm = float(np.linalg.norm(w))
                if nrm == 0.0 or not np.isfinite(nrm):
                    break
                v = w / nrm
                theta_new = self._rayleigh(v)
                done = abs(theta_new - theta) <= 1e-15 * max(1.0, abs(theta_new))
                theta = theta_new
                if done:
                    break
            if v.sum() < 0.0:
                v = -v
            positive = bool(v.min() >= -1e-10 * max(v.max(), 1e-300))
            with self._lock:
                if self._principal is None:
                    self._principal = (theta, v, positive)
        return self._principal

    def lambda_min_estimate(self):
        """Principal eigenvalue of the restriction (negative when supercritical)."""
        return self.principal_pair()[0]

    def ground_vector(self):
        theta, v, positive = self.principal_pair()
        if not positive:
            raise NumericalError("principal eigenfunction is not one-signed; restriction is supercritical")
        return theta, v

    def green(self, ix, iy):
        return float(self.green_column(iy)[ix])

    def green_column(self, iy):
        """Column y of [K_S^-1]/mu(y), i.e. G(. , y) = A_S^-1 e_y."""
        col = self._green_cols.get(iy)
        if col is not None:
            return col
        if not self.is_positive_definite():
            raise NumericalError(
                "restricted principal eigenvalue is not positive; no finite Green function"
            )
        lu, shift = self._splu()
        if shift != 0.0:
            raise NumericalError("singular Dirichlet restriction; no finite Green function")
        e = np.zeros(self.sub.size)
        e[iy] = 1.0
        col = lu.solve(e)
        with self._lock:
            self._green_cols[iy] = col
        return col

    def green_row(self, ix):
        """Row x of the Green matrix: solves with the transposed measure form."""
        if not self.is_positive_definite():
            raise NumericalError(
                "restricted principal eigenvalue is not positive; no finite Green function"
            )
        e = np.zeros(self.sub.size)
        e[ix] = 1.0
        lu, shift = self._splu()
        if shift != 0.0:
            raise NumericalError("singular Dirichlet restriction; no finite Green function")
        return lu.solve(e, trans="T")


class SymmetricFactor(_FactorBase):
    """Per-level spectral factorization of a symmetric restricted operator."""

    _symmetric_lu = True

    def __init__(self, op, sub):
        super().__init__(op, sub)
        self.sqrt_mu = np.sqrt(self.mu)
        self._spectral = None

    def _build_spectral(self):
        with np.errstate(over="ignore", invalid="ignore"):
            rates = np.abs(np.asarray(self._a_s.diagonal()).ravel()) / self.mu
        max_rate = float(np.max(rates)) if rates.size else 0.0
        if np.isfinite(max_rate) and max_rate <= WELL_SCALED_RATE:
            h = (self._a_s.toarray() / self.sqrt_mu[:, None]) / self.sqrt_mu[None, :]
            lam, vecs = sla.eigh(h)
            route = "direct"
        else:
            lu, shift = self._splu()
            rhs = np.diag(self.sqrt_mu)
            binv = lu.solve(rhs)
            b = binv * self.sqrt_mu[:, None]
            b = (b + b.T) / 2.0
            nu, vecs = sla.eigh(b)
            with np.errstate(divide="ignore"):
                lam = np.where(nu > 0.0, 1.0 / np.maximum(nu, 1e-300), np.inf)
            lam = lam - shift
            order = np.argsort(lam)
            lam, vecs = lam[order], vecs[:, order]
            route = "inverse"
        return lam, vecs, route

    def spectral(self):
        if self._spectral is None:
            with self._lock:
                if self._spectral is None:
                    self._spectral = self._build_spectral()
        return self._spectral

    @property
    def route(self):
        return self.spectral()[2]

    @property
    def lambda_min(self):
        return float(self.spectral()[0][0])

    def lambda_min_estimate(self):
        if self._spectral is not None:
            return self.lambda_min
        return super().lambda_min_estimate()

    def _decay(self, t):
        lam = self.spectral()[0]
        with np.errstate(over="ignore"):
            d = np.exp(-lam * t)
        return np.where(np.isfinite(d), d, 0.0)

    def kernel(self, ix, iy, t):
        if t == 0.0:
            return (1.0 / self.mu[iy]) if ix == iy else 0.0
        vecs = self.spectral()[1]
        decay = self._decay(t)
        val = float(np.dot(vecs[ix] * decay, vecs[iy]))
        val /= self.sqrt_mu[ix] * self.sqrt_mu[iy]
        diag_x = float(np.dot(vecs[ix] ** 2, decay)) / self.mu[ix]
        diag_y = float(np.dot(vecs[iy] ** 2, decay)) / self.mu[iy]
        scale = np.sqrt(max(diag_x, 0.0) * max(diag_y, 0.0)) + 1e-300
        return float(_clamped(val, scale))

    def kernel_matrix(self, t):
        if t == 0.0:
            return np.diag(1.0 / self.mu)
        vecs = self.spectral()[1]
        decay = self._decay(t)
        m = (vecs * decay) @ vecs.T
        m = m / self.sqrt_mu[:, None] / self.sqrt_mu[None, :]
        diag = np.maximum(np.diag(m), 0.0)
        scale = np.sqrt(np.outer(diag, diag)) + 1e-300
        return _clamped(m, scale)

    def apply_semigroup(self, t, vec):
        """exp(-t K_S) @ vec via the spectral factorization."""
        vecs = self.spectral()[1]
        w = vecs.T @ (vec * self.sqrt_mu)
        return (vecs @ (self._decay(t) * w)) / self.sqrt_mu


class NonsymmetricFactor(_FactorBase):
    """Dense matrix-exponential evaluations for a nonsymmetric restriction."""

    def __init__(self, op, sub):
        super().__init__(op, sub)
        self.k_dense = op.action_matrix_dense(sub)
        self._expm_cache = {}
        self.route = "expm"

    def _expm(self, t):
        m = self._expm_cache.get(t)
        if m is None:
            with self._lock:
                m = self._expm_cache.get(t)
                if m is None:
                    m = sla.expm(-t * self.k_dense)
                    self._expm_cache[t] = m
        return m

    def kernel(self, ix, iy, t):
        if t == 0.0:
            return (1.0 / self.mu[iy]) if ix == iy else 0.0
        return float(self._expm(t)[ix, iy] / self.mu[iy])

    def kernel_matrix(self, t):
        if t == 0.0:
            return np.diag(1.0 / self.mu)
        return self._expm(t) / self.mu[None, :]

    def apply_semigroup(self, t, vec):
        return self._expm(t) @ vec

    @property
    def lambda_min(self):
        return self.principal_pair()[0]


def factorize(op: EllipticOperator, sub: IndexedSubdomain):
    if op.symmetric:
        return SymmetricFactor(op, sub)
    return NonsymmetricFactor(op, sub)


def heat_kernel_finite(op: EllipticOperator, sub: IndexedSubdomain, x, y, t,
                       factor=None) -> float:
    """Dirichlet heat kernel k(x, y, t) on a fixed subdomain."""
    if t < 0.0:
        raise ValidationError("time must be nonnegative")
    fac = factor if factor is not None else factorize(op, sub)
    return fac.kernel(sub.local_of(x), sub.local_of(y), float(t))


def heat_matrix_finite(op: EllipticOperator, sub: IndexedSubdomain, t, factor=None):
    """All-pairs kernel matrix on the subdomain, in its local indexing."""
    if t < 0.0:
        raise ValidationError("time must be nonnegative")
    fac = factor if factor is not None else factorize(op, sub)
    return fac.kernel_matrix(float(t))


def green_finite(op: EllipticOperator, sub: IndexedSubdomain, x, y, factor=None) -> float:
    """Dirichlet Green value G(x, y) = [K_S^-1](x, y)/mu(y) on a fixed subdomain."""
    fac = factor if factor is not None else factorize(op, sub)
    return fac.green(sub.local_of(x), sub.local_of(y))


def principal_dirichlet_eigenvalue(op: EllipticOperator, sub: IndexedSubdomain) -> float:
    """Principal eigenvalue of the Dirichlet restriction of ``op`` to ``sub``."""
    return factorize(op, sub).principal_pair()[0]


def sequence_limit(values, sizes, tol, cap=DIVERGENCE_CAP, accelerate=True,
                   levels=None, exact_final=False) -> LimitResult:
    """Classify a fully computed per-level sequence with the LimitResult rules.

    Used for plain series over exhaustion levels (partial sums and the like)
    where lazy evaluation buys nothing.  ``exact_final`` marks sequences whose
    last value exhausts a genuinely finite domain and is therefore exact.
    """
    values = [float(v) for v in values]
    sizes = list(sizes)
    levels = list(levels) if levels is not None else list(range(len(values)))
    history = list(zip(levels, values))
    for i, v in enumerate(values):
        if abs(v) > cap:
            return LimitResult(v, LimitStatus.DIVERGING, levels[i], history[: i + 1],
                               evidence=f"value exceeded divergence cap {cap:g}")
        if i >= 2:
            scale = max(abs(v), 1e-300)
            if (abs(values[i] - values[i - 1]) / scale < tol
                    and abs(values[i - 1] - values[i - 2]) / scale < tol):
                return LimitResult(v, LimitStatus.CONVERGED, levels[i], history[: i + 1],
                                   error_estimate=abs(values[i] - values[i - 1]))
    v = values[-1]
    if _trend_diverging(values, sizes, tol):
        return LimitResult(v, LimitStatus.DIVERGING, levels[-1], history,
                           evidence="increments nondecreasing over 3 consecutive levels")
    if exact_final:
        return LimitResult(v, LimitStatus.CONVERGED, levels[-1], history,
                           model="exact", error_estimate=0.0)
    if accelerate and len(values) >= 4 and increments_decreasing(values[-6:]):
        m = min(6, len(values))
        h = 1.0 / np.asarray(sizes[-m:], dtype=float)
        value, err = neville_extrapolate(h, values[-m:])
        if err <= tol * max(abs(value), 1e-300):
            return LimitResult(value, LimitStatus.CONVERGED, levels[-1], history,
                               model=f"neville({m})", error_estimate=err)
        return LimitResult(value, LimitStatus.INCONCLUSIVE, levels[-1], history,
                           model=f"neville({m})", error_estimate=err,
                           evidence="sequence exhausted before convergence")
    return LimitResult(v, LimitStatus.INCONCLUSIVE, levels[-1], history,
                       evidence="sequence exhausted before convergence")


class HeatKernelEvaluator:
    """Exhaustion-driven kernel and Green evaluations with a per-level factor cache."""

    def __init__(self, op: EllipticOperator, exhaustion: Exhaustion,
                 heat_tol=HEAT_TOL, green_tol=GREEN_TOL, divergence_cap=DIVERGENCE_CAP):
        if exhaustion.domain is not op.domain:
            raise ValidationError("exhaustion and operator refer to different domains")
        self.op = op
        self.exhaustion = exhaustion
        self.heat_tol = float(heat_tol)
        self.green_tol = float(green_tol)
        self.divergence_cap = float(divergence_cap)
        self._factors = {}
        self._lock = threading.Lock()
        self._usable = self._usable_levels()

    def _usable_levels(self):
        levels = list(range(len(self.exhaustion)))
        if self.op.domain.truncated:
            # a closed (absorption-free) top level of an ambient truncation is
            # a reflecting box, not a Dirichlet approximant; skip it
            levels = [j for j in levels
                      if self.exhaustion[j].size < self.op.domain.n_vertices
                      or self.exhaustion[j].has_absorption()]
        if not levels:
            raise ValidationError("exhaustion has no usable Dirichlet levels")
        return levels

    def factor(self, j):
        fac = self._factors.get(j)
        if fac is None:
            with self._lock:
                fac = self._factors.get(j)
                if fac is None:
                    fac = factorize(self.op, self.exhaustion[j])
                    self._factors[j] = fac
        return fac

    def level(self, j) -> IndexedSubdomain:
        return self.exhaustion[j]

    def usable_levels(self):
        return list(self._usable)

    def last_usable_level(self):
        return self._usable[-1]

    def heat_finite(self, j, x, y, t):
        sub = self.exhaustion[j]
        return self.factor(j).kernel(sub.local_of(x), sub.local_of(y), float(t))

    def green_finite_level(self, j, x, y):
        sub = self.exhaustion[j]
        return self.factor(j).green(sub.local_of(x), sub.local_of(y))

    def principal_eigenvalue(self, j):
        return self.factor(j).principal_pair()[0]

    def ground_state_level(self, j, x0=None):
        """Principal Dirichlet eigenpair at level j, eigenfunction normalized at x0."""
        sub = self.exhaustion[j]
        lam, phi = self.factor(j).ground_vector()
        if x0 is None:
            x0 = int(sub.labels[0])
        ref = phi[sub.local_of(x0)]
        if ref <= 0.0:
            raise NumericalError(f"ground state vanishes at reference vertex {x0}")
        return lam, phi / ref

    def _exhaustion_limit(self, per_level, start, tol, accelerate=True,
                          trend_divergence=True):
        """Drive per-level values to a LimitResult (converged/diverging/inconclusive).

        ``trend_divergence`` enables the increments-nondecreasing verdict;
        it applies to Green-type limits whose dichotomy is finite-vs-infinite,
        not to heat values at fixed t (those are bounded and merely report
        Inconclusive when the ambient truncation is too small).
        """
        history = []
        values = []
        sizes = []
        exact_final = (not self.op.domain.truncated) and (
            self.exhaustion[self._usable[-1]].size == self.op.domain.n_vertices
        )
        for j in self._usable:
            if j < start:
                continue
            try:
                v = float(per_level(j))
            except NumericalError as exc:
                # a nonpositive restriction inside the exhaustion is divergence
                # evidence: the limit blows up before this level
                return LimitResult(
                    float("inf"), LimitStatus.DIVERGING, j, history,
                    evidence=f"restriction failure at level {j}: {exc}",
                )
            history.append((j, v))
            values.append(v)
            sizes.append(self.exhaustion[j].size)
            if abs(v) > self.divergence_cap:
                return LimitResult(v, LimitStatus.DIVERGING, j, history,
                                   evidence=f"value exceeded divergence cap {self.divergence_cap:g}")
            if len(values) >= 3:
                scale = max(abs(v), 1e-300)
                i1 = abs(values[-1] - values[-2]) / scale
                i2 = abs(values[-2] - values[-3]) / scale
                if i1 < tol and i2 < tol:
                    return LimitResult(v, LimitStatus.CONVERGED, j, history,
                                       error_estimate=abs(values[-1] - values[-2]))
        # tolerance unmet within the ambient truncation: decide from the tail
        v = values[-1] if values else float("nan")
        if trend_divergence and _trend_diverging(values, sizes, tol):
            return LimitResult(v, LimitStatus.DIVERGING, history[-1][0], history,
                               evidence="increments nondecreasing over 3 consecutive levels")
        if exact_final and values:
            # a genuinely finite domain is exhausted exactly by its full set
            return LimitResult(v, LimitStatus.CONVERGED, history[-1][0], history,
                               model="exact", error_estimate=0.0)
        if accelerate and len(values) >= 4 and increments_decreasing(values[-6:]):
            m = min(6, len(values))
            h = 1.0 / np.asarray(sizes[-m:], dtype=float)
            value, err = neville_extrapolate(h, values[-m:])
            if err <= tol * max(abs(value), 1e-300):
                return LimitResult(value, LimitStatus.CONVERGED, history[-1][0], history,
                                   model=f"neville({m})", error_estimate=err)
            return LimitResult(value, LimitStatus.INCONCLUSIVE, history[-1][0], history,
                               model=f"neville({m})", error_estimate=err,
                               evidence="ambient truncation exhausted before convergence")
        return LimitResult(v, LimitStatus.INCONCLUSIVE,
                           history[-1][0] if history else None, history,
                           evidence="ambient truncation exhausted before convergence")

    def heat_kernel(self, x, y, t, tol=None, accelerate=True) -> LimitResult:
        """Exhaustion limit of the Dirichlet heat kernels at (x, y, t)."""
        t = float(t)
        if t < 0.0:
            raise ValidationError("time must be nonnegative")
        start = self.exhaustion.first_level_containing(x, y)
        if t == 0.0:
            v = (1.0 / self.op.mu[self.op.domain.index[int(y)]]) if int(x) == int(y) else 0.0
            return LimitResult(v, LimitStatus.CONVERGED, start, [(start, v)], model="delta")
        tol = self.heat_tol if tol is None else float(tol)
        return self._exhaustion_limit(lambda j: self.heat_finite(j, x, y, t),
                                      start, tol, accelerate, trend_divergence=False)

    def green(self, x, y, tol=None, accelerate=True) -> LimitResult:
        """Exhaustion limit of the Dirichlet Green values at (x, y).

        Convergence of this limit is subcriticality; divergence is criticality.
        """
        start = self.exhaustion.first_level_containing(x, y)
        tol = self.green_tol if tol is None else float(tol)
        return self._exhaustion_limit(lambda j: self.green_finite_level(j, x, y),
                                      start, tol, accelerate)
