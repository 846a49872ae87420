"""The discrete elliptic operator P, its adjoint, shifts and potentials.

The operator acts on vertex functions as

    (P u)(x) = (1/mu(x)) * sum_y w(x, y) (u(x) - u(y)) + D(x) u(x),

so its action matrix K has K(x, x) = (1/mu(x)) sum_y w(x, y) + D(x) and
K(x, y) = -w(x, y)/mu(x) off the diagonal.  Asymmetric edge weights carry
the first-order (drift) terms; the potential D carries the zeroth order.

Internally most computations use the measure form A = diag(mu) K, whose
entries stay O(max w + max |D mu|) even when 1/mu is astronomically large;
the raw K matrix is only materialized where it is well scaled.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .domains import WeightedDomain, IndexedSubdomain
from .errors import ValidationError


class Potential:
    """Vertex potential V with positive/negative parts V = V+ - V-."""

    def __init__(self, domain: WeightedDomain, values):
        self.domain = domain
        if isinstance(values, dict):
            vec = np.zeros(domain.n_vertices)
            for x, v in values.items():
                try:
                    vec[domain.index[int(x)]] = float(v)
                except KeyError as exc:
                    raise ValidationError(f"potential references unknown vertex {x}") from exc
        else:
            vec = np.asarray(values, dtype=float)
            if vec.shape != (domain.n_vertices,):
                raise ValidationError("potential length does not match the domain")
        self.values = vec

    @classmethod
    def zero(cls, domain):
        return cls(domain, np.zeros(domain.n_vertices))

    @classmethod
    def constant(cls, domain, c):
        return cls(domain, np.full(domain.n_vertices, float(c)))

    @classmethod
    def indicator(cls, domain, vertices, value=1.0):
        return cls(domain, {x: value for x in vertices})

    @classmethod
    def from_file(cls, domain, path):
        """Load `x V(x)` lines; unlisted vertices get 0."""
        values = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected `x V(x)`, got {raw.strip()!r}")
                values[int(parts[0])] = float(parts[1])
        return cls(domain, values)

    @property
    def support(self):
        return [int(x) for x in self.domain.labels[self.values != 0.0]]

    @property
    def positive_part(self):
        return np.maximum(self.values, 0.0)

    @property
    def negative_part(self):
        return np.maximum(-self.values, 0.0)

    def __neg__(self):
        return Potential(self.domain, -self.values)

    def __mul__(self, scalar):
        return Potential(self.domain, self.values * float(scalar))

    __rmul__ = __mul__


class EllipticOperator:
    """Discrete divergence-form operator plus potential on a weighted domain."""

    def __init__(self, domain: WeightedDomain, potential=None, _weights=None):
        self.domain = domain
        self.weights = domain.weights if _weights is None else _weights
        if potential is None:
            self.potential = np.zeros(domain.n_vertices)
        elif isinstance(potential, Potential):
            if potential.domain is not domain and potential.domain.n_vertices != domain.n_vertices:
                raise ValidationError("potential and domain dimensions differ")
            self.potential = potential.values.copy()
        else:
            vec = np.asarray(potential, dtype=float)
            if vec.shape != (domain.n_vertices,):
                raise ValidationError("potential length does not match the domain")
            self.potential = vec.copy()
        sym = self.weights - self.weights.T
        self.symmetric = bool(abs(sym).max() == 0.0) if sym.nnz else True
        self._measure_matrix = None
        self._adjoint_source = None

    @property
    def mu(self):
        return self.domain.mu

    def measure_matrix(self):
        """A = diag(mu) K: off-diagonal -w(x, y), diagonal sum_y w(x, y) + D(x) mu(x)."""
        if self._measure_matrix is None:
            w = self.weights
            row_sums = np.asarray(w.sum(axis=1)).ravel()
            diag = row_sums + self.potential * self.mu
            self._measure_matrix = (sp.diags(diag) - w).tocsc()
        return self._measure_matrix

    def action_matrix_dense(self, subdomain: IndexedSubdomain = None):
        """Dense K (or its Dirichlet principal submatrix on ``subdomain``)."""
        a = self.measure_matrix()
        if subdomain is not None:
            pos = subdomain.positions
            a = a[pos][:, pos]
            mu = self.mu[pos]
        else:
            mu = self.mu
        with np.errstate(over="raise"):
            inv_mu = 1.0 / mu
        return np.asarray((sp.diags(inv_mu) @ a).todense())

    def apply(self, u):
        """(P u) for a full-domain vector u."""
        u = np.asarray(u, dtype=float)
        return (self.measure_matrix() @ u) / self.mu

    def max_rate(self):
        """max over x of K(x, x); gauges the scaling of the action matrix."""
        a = self.measure_matrix()
        with np.errstate(over="ignore"):
            return float(np.max(np.abs(a.diagonal()) / self.mu))

    def with_potential(self, potential):
        return EllipticOperator(self.domain, potential, _weights=self.weights)

    def __eq__(self, other):
        if not isinstance(other, EllipticOperator):
            return NotImplemented
        return (
            self.domain is other.domain
            and np.array_equal(self.potential, other.potential)
            and (self.weights != other.weights).nnz == 0
        )


def assemble(domain: WeightedDomain, potential=None) -> EllipticOperator:
    """Assemble the operator with action (Pu)(x) = (1/mu) sum w (u(x)-u(y)) + D u."""
    return EllipticOperator(domain, potential)


def adjoint(op: EllipticOperator) -> EllipticOperator:
    """Formal adjoint in the mu-weighted inner product: K* = diag(mu)^-1 K^T diag(mu).

    Realized as the operator with transposed edge weights and the potential
    adjusted by the (outflow - inflow)/mu imbalance, so the adjoint is again
    an operator of the same divergence form.  For symmetric operators the
    adjoint equals the operator entrywise.
    """
    if op.symmetric:
        return EllipticOperator(op.domain, op.potential, _weights=op.weights)
    if op._adjoint_source is not None:
        return op._adjoint_source  # exact involution
    w_t = op.weights.T.tocsr()
    out_flow = np.asarray(op.weights.sum(axis=1)).ravel()
    in_flow = np.asarray(w_t.sum(axis=1)).ravel()
    d_star = op.potential + (out_flow - in_flow) / op.mu
    result = EllipticOperator(op.domain, d_star, _weights=w_t)
    result._adjoint_source = op
    return result


def shift(op: EllipticOperator, lam) -> EllipticOperator:
    """P - lam: potential D - lam; heat kernels pick up the factor e^(lam t)."""
    return EllipticOperator(op.domain, op.potential - float(lam), _weights=op.weights)


def add_potential(op: EllipticOperator, potential, coupling=1.0) -> EllipticOperator:
    """P + coupling * V."""
    if isinstance(potential, Potential):
        vec = potential.values
    else:
        vec = np.asarray(potential, dtype=float)
    return EllipticOperator(op.domain, op.potential + float(coupling) * vec, _weights=op.weights)


def quadratic_form(op: EllipticOperator, u) -> float:
    """Q[u] = sum_edges w (u(x)-u(y))^2 + sum_x D u^2 mu for symmetric P.

    ``u`` may be a full vector or a dict of finitely many nonzero values.
    Equals the mu-weighted inner product <Pu, u>.
    """
    if not op.symmetric:
        raise ValidationError("quadratic form is only defined for symmetric operators")
    if isinstance(u, dict):
        vec = np.zeros(op.domain.n_vertices)
        for x, v in u.items():
            vec[op.domain.index[int(x)]] = float(v)
    else:
        vec = np.asarray(u, dtype=float)
    w = op.weights.tocoo()
    diffs = 0.0
    for i, j, wij in zip(w.row, w.col, w.data):
        if i < j:  # each unordered edge once; w symmetric here
            diffs += wij * (vec[i] - vec[j]) ** 2
    return float(diffs + np.sum(op.potential * vec**2 * op.mu))


def inner_product(op_or_domain, u, v) -> float:
    """mu-weighted inner product <u, v>."""
    mu = op_or_domain.mu if hasattr(op_or_domain, "mu") else op_or_domain
    return float(np.sum(np.asarray(u) * np.asarray(v) * mu))


class OperatorFamily:
    """One-parameter family P_alpha = base + alpha * V."""

    def __init__(self, base: EllipticOperator, perturbation: Potential, coupling_range=(0.0, 1.0)):
        self.base = base
        self.perturbation = perturbation
        self.coupling_range = (float(coupling_range[0]), float(coupling_range[1]))

    def member(self, alpha) -> EllipticOperator:
        return add_potential(self.base, self.perturbation, alpha)

    def __call__(self, alpha):
        return self.member(alpha)
