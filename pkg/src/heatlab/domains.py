"""Weighted discrete domains, exhaustions and the fixture library.

A domain is a connected graph with a positive vertex measure ``mu`` and
nonnegative directed edge weights ``w``.  Infinite model domains (the 1-d
lattice, the radial half-line) are represented by a large ambient truncation
marked ``truncated=True``; every infinite-domain quantity is then a limit
along an exhaustion of finite subsets lying inside the truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

#: smallest measure value stored for analytically decaying measures; far
#: sites below this are dynamically instantaneous either way, and staying
#: well above the subnormal range keeps LAPACK out of denormal slow paths
MEASURE_FLOOR = 1e-200

DEFAULT_AMBIENT_1D = 4001  # vertices of the 1-d ambient truncation
DEFAULT_RADIAL_POINTS = 1000


class WeightedDomain:
    """Finite vertex set with measure mu(x) > 0 and weights w(x, y) >= 0.

    Parameters
    ----------
    vertices : sequence of int
        Vertex labels; order fixes the internal indexing.
    measure : mapping or array
        Positive measure per vertex.
    edge_weights : mapping (x, y) -> float
        Nonnegative weight per directed edge; absent pairs are 0.
    truncated : bool
        True when the domain is an ambient truncation of an infinite model
        domain, in which case exhausting it without convergence is reported
        as inconclusive rather than exact.
    """

    def __init__(self, vertices, measure, edge_weights, truncated=False, name=""):
        self.labels = np.asarray(list(vertices), dtype=np.int64)
        if self.labels.size == 0:
            raise ValidationError("domain needs at least one vertex")
        if len(set(self.labels.tolist())) != self.labels.size:
            raise ValidationError("duplicate vertex labels")
        self.index = {int(x): i for i, x in enumerate(self.labels)}
        n = self.labels.size

        if isinstance(measure, dict):
            mu = np.array([measure[int(x)] for x in self.labels], dtype=float)
        else:
            mu = np.asarray(measure, dtype=float)
            if mu.shape != (n,):
                raise ValidationError("measure length does not match vertex count")
        if not np.all(mu > 0.0):
            raise ValidationError("measure must be positive on every vertex")
        self.mu = mu

        rows, cols, vals = [], [], []
        for (x, y), w in edge_weights.items():
            if w < 0.0:
                raise ValidationError(f"negative edge weight at ({x}, {y})")
            if x == y:
                if w != 0.0:
                    raise ValidationError(f"nonzero loop weight at vertex {x}")
                continue
            if w == 0.0:
                continue
            try:
                i, j = self.index[int(x)], self.index[int(y)]
            except KeyError as exc:
                raise ValidationError(f"edge ({x}, {y}) references unknown vertex") from exc
            rows.append(i)
            cols.append(j)
            vals.append(float(w))
        self.weights = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.weights.sum_duplicates()

        sym = self.weights - self.weights.T
        self.symmetric = bool(abs(sym).max() == 0.0) if sym.nnz else True
        self.truncated = bool(truncated)
        self.name = name

        if n > 1 and not self._connected(np.arange(n)):
            raise ValidationError("support graph is not connected")

    @property
    def n_vertices(self):
        return int(self.labels.size)

    def measure_of(self, x):
        return float(self.mu[self.index[int(x)]])

    def weight(self, x, y):
        return float(self.weights[self.index[int(x)], self.index[int(y)]])

    def total_measure(self, subset=None):
        if subset is None:
            return float(self.mu.sum())
        pos = [self.index[int(x)] for x in subset]
        return float(self.mu[pos].sum())

    def _undirected_adjacency(self):
        u = self.weights + self.weights.T
        u.data[:] = 1.0
        return u.tocsr()

    def _connected(self, positions):
        """True iff the undirected support graph restricted to ``positions`` is connected."""
        positions = np.asarray(positions, dtype=np.intp)
        if positions.size == 0:
            return False
        if positions.size == 1:
            return True
        adj = self._undirected_adjacency()[positions][:, positions]
        n_comp = sp.csgraph.connected_components(adj, directed=False, return_labels=False)
        return n_comp == 1

    def __repr__(self):
        return f"WeightedDomain({self.name or 'unnamed'}, n={self.n_vertices})"


class IndexedSubdomain:
    """A connected vertex subset with a bijective local indexing.

    Operators restricted to the subset impose Dirichlet (absorbing)
    conditions outside of it: the restricted action matrix is the principal
    submatrix of the full one, so edges leaving the subset become pure
    absorption.
    """

    def __init__(self, domain: WeightedDomain, subset):
        labels = sorted({int(x) for x in subset}, key=lambda x: domain.index.get(x, -1))
        if not labels:
            raise ValidationError("empty subset")
        missing = [x for x in labels if x not in domain.index]
        if missing:
            raise ValidationError(f"subset vertices not in domain: {missing[:5]}")
        self.domain = domain
        self.positions = np.array([domain.index[x] for x in labels], dtype=np.intp)
        order = np.argsort(self.positions)
        self.positions = self.positions[order]
        self.labels = domain.labels[self.positions]
        self.local = {int(x): i for i, x in enumerate(self.labels)}
        if not domain._connected(self.positions):
            raise ValidationError("subset is not connected in the support graph")

    @property
    def size(self):
        return int(self.labels.size)

    @property
    def mu(self):
        return self.domain.mu[self.positions]

    def has_absorption(self):
        """True iff some edge of a subset vertex leaves the subset."""
        w = self.domain.weights
        full_out = np.asarray(w.sum(axis=1)).ravel()[self.positions]
        inner_out = np.asarray(
            w[self.positions][:, self.positions].sum(axis=1)
        ).ravel()
        return bool(np.any(full_out - inner_out > 0.0))

    def local_of(self, x):
        try:
            return self.local[int(x)]
        except KeyError as exc:
            raise ValidationError(f"vertex {x} is outside the subdomain") from exc

    def __contains__(self, x):
        return int(x) in self.local

    def __repr__(self):
        return f"IndexedSubdomain(n={self.size})"


def restrict(domain: WeightedDomain, subset) -> IndexedSubdomain:
    """Dirichlet restriction of ``domain`` to ``subset`` (absorbing exterior)."""
    return IndexedSubdomain(domain, subset)


class Exhaustion:
    """Strictly increasing sequence of finite connected vertex subsets."""

    def __init__(self, domain: WeightedDomain, subsets):
        self.domain = domain
        self.levels = []
        previous = None
        for j, subset in enumerate(subsets):
            sub = IndexedSubdomain(domain, subset)
            if previous is not None:
                prev_set = set(previous.labels.tolist())
                cur_set = set(sub.labels.tolist())
                if not prev_set < cur_set:
                    raise ValidationError(f"exhaustion level {j + 1} does not strictly contain level {j}")
            self.levels.append(sub)
            previous = sub
        if not self.levels:
            raise ValidationError("exhaustion needs at least one level")

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, j) -> IndexedSubdomain:
        return self.levels[j]

    def __iter__(self):
        return iter(self.levels)

    def first_level_containing(self, *vertices):
        for j, level in enumerate(self.levels):
            if all(int(x) in level for x in vertices):
                return j
        raise ValidationError(f"vertices {vertices} are not all contained in any exhaustion level")

    def exterior(self, j):
        """Vertices of the ambient truncation outside level ``j``."""
        inside = set(self.levels[j].labels.tolist())
        return [int(x) for x in self.domain.labels if int(x) not in inside]


@dataclass
class DomainFixture:
    """A named domain with its exhaustion and the analytic facts it realizes."""

    name: str
    domain: WeightedDomain
    exhaustion: Exhaustion
    documented_facts: str = ""
    caveats: list = field(default_factory=list)

    def __repr__(self):
        return f"DomainFixture({self.name!r}, n={self.domain.n_vertices}, levels={len(self.exhaustion)})"


def _doubling_radii(max_radius, penultimate=None):
    """Doubling radii capped at max_radius; optionally force a given
    second-to-last radius (the deepest strictly interior level)."""
    radii = []
    r = 1
    stop = penultimate if penultimate is not None else max_radius
    while r < stop:
        radii.append(r)
        r *= 2
    radii.append(stop)
    if penultimate is not None and max_radius > penultimate:
        radii.append(max_radius)
    return sorted(set(radii))


def _linear_radii(max_radius, levels):
    radii = sorted({max(1, int(np.ceil(max_radius * j / levels))) for j in range(1, levels + 1)})
    return radii


def build_lattice_1d(n_half, measure_rule="unit", q=None, conductance=1.0,
                     growth="geometric", levels=None) -> DomainFixture:
    """1-d lattice truncation on {-n_half, ..., n_half} with nearest-neighbor edges.

    ``measure_rule`` is 'unit' (mu = 1) or 'geometric' (mu(n) = q^|n|, 0 < q < 1).
    The exhaustion consists of centered intervals whose radius doubles per
    level by default ('geometric' growth) and ends at the full truncation.
    """
    n_half = int(n_half)
    if n_half < 2:
        raise ValidationError("n_half must be >= 2: the exhaustion needs at least two levels")
    if conductance <= 0:
        raise ValidationError("conductance must be positive")
    if measure_rule == "unit":
        if q is not None:
            raise ValidationError("q is only meaningful for the geometric measure rule")
        name = "lat1"
    elif measure_rule == "geometric":
        if q is None or not (0.0 < q < 1.0):
            raise ValidationError("geometric measure rule needs 0 < q < 1")
        name = f"lat1_geo({q:g})"
    else:
        raise ValidationError(f"unknown measure rule: {measure_rule!r}")

    vertices = list(range(-n_half, n_half + 1))
    if measure_rule == "unit":
        measure = {n: 1.0 for n in vertices}
    else:
        measure = {n: max(q ** abs(n), MEASURE_FLOOR) for n in vertices}
    edges = {}
    for n in range(-n_half, n_half):
        edges[(n, n + 1)] = float(conductance)
        edges[(n + 1, n)] = float(conductance)
    domain = WeightedDomain(vertices, measure, edges, truncated=True, name=name)

    if growth == "geometric":
        # deepest Dirichlet level at n_half - 1; the full truncation is the
        # formal top level (closed, so kernel limits never certify on it)
        radii = _doubling_radii(n_half, penultimate=max(n_half - 1, 1))
    elif growth == "linear":
        radii = _linear_radii(n_half, levels or n_half)
    else:
        raise ValidationError(f"unknown exhaustion growth: {growth!r}")
    exhaustion = Exhaustion(domain, [range(-r, r + 1) for r in radii])

    facts = (
        f"nearest-neighbor lattice, conductance {conductance:g}, measure {measure_rule}"
        + (f" q={q:g}" if q else "")
    )
    return DomainFixture(name, domain, exhaustion, facts)


def build_radial(dimension_d, n_points=DEFAULT_RADIAL_POINTS, step_h=1.0,
                 growth="geometric", levels=None) -> DomainFixture:
    """Discrete radial half-line analog of the Laplacian on R^d.

    Vertices sit at r_i = i*h for i = 1..n_points with cell measure
    mu(i) = r_i^(d-1) * h and conductances w(i, i+1) = ((r_i + r_{i+1})/2)^(d-1) / h.
    The outer end is absorbing through a ghost boundary vertex at
    r = (n_points+1)*h; the inner end is free (no edge below r = h), which is
    the faithful analog of the origin being polar: the chain is then
    transient for d >= 3 and recurrent for d <= 2.
    """
    d = int(dimension_d)
    n = int(n_points)
    h = float(step_h)
    if d < 2:
        raise ValidationError("dimension must be >= 2")
    if h <= 0:
        raise ValidationError("step must be positive")
    if n < 10:
        raise ValidationError("n_points must be >= 10")

    vertices = list(range(1, n + 2))  # n+1 is the absorbing ghost ring
    measure = {i: (i * h) ** (d - 1) * h for i in vertices}
    edges = {}
    for i in range(1, n + 1):
        w = ((i * h + (i + 1) * h) / 2.0) ** (d - 1) / h
        edges[(i, i + 1)] = w
        edges[(i + 1, i)] = w
    name = f"rad({d})"
    domain = WeightedDomain(vertices, measure, edges, truncated=True, name=name)

    if growth == "geometric":
        radii = _doubling_radii(n)
        radii = [r for r in radii if r >= 2] or [n]
    elif growth == "linear":
        radii = _linear_radii(n, levels or 10)
    else:
        raise ValidationError(f"unknown exhaustion growth: {growth!r}")
    exhaustion = Exhaustion(domain, [range(1, r + 1) for r in radii])

    facts = f"radial reduction of R^{d}, h={h:g}, outer Dirichlet ghost at i={n + 1}"
    return DomainFixture(name, domain, exhaustion, facts)


def single_vertex_domain(d_value=0.0, mu=1.0, name="point"):
    """One-vertex closed domain; handy for scalar closed forms."""
    domain = WeightedDomain([0], {0: mu}, {}, truncated=False, name=name)
    exhaustion = Exhaustion(domain, [[0]])
    return DomainFixture(name, domain, exhaustion, f"single vertex, mu={mu:g}")


def closed_path_domain(n_vertices, conductance=1.0, mu=1.0, name="closed_path"):
    """Closed finite path (no absorbing exterior); conserves mass when D = 0."""
    vertices = list(range(n_vertices))
    measure = {x: mu for x in vertices}
    edges = {}
    for x in range(n_vertices - 1):
        edges[(x, x + 1)] = conductance
        edges[(x + 1, x)] = conductance
    domain = WeightedDomain(vertices, measure, edges, truncated=False, name=name)
    exhaustion = Exhaustion(domain, [vertices])
    return DomainFixture(name, domain, exhaustion, "closed path, reflecting ends")


def load_edge_list(path, truncated=False, name=None):
    """Read a domain from a text file: `x y w` per directed edge, `x mu` per vertex.

    Lines with three tokens are edges, lines with two tokens are vertex
    measures; blank lines and `#` comments are ignored.  Every vertex must
    carry a measure line.
    """
    measures = {}
    edges = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if len(parts) == 2:
                    measures[int(parts[0])] = float(parts[1])
                elif len(parts) == 3:
                    edges[(int(parts[0]), int(parts[1]))] = float(parts[2])
                else:
                    raise ValueError
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: cannot parse {raw.strip()!r}") from exc
    if not measures:
        raise ValidationError(f"{path}: no vertex measure lines found")
    for (x, y) in edges:
        if x not in measures or y not in measures:
            raise ValidationError(f"{path}: edge ({x}, {y}) references vertex without a measure line")
    domain = WeightedDomain(sorted(measures), measures, edges,
                            truncated=truncated, name=name or str(path))
    return domain


def ball_exhaustion(domain: WeightedDomain, center=None, growth="geometric"):
    """Exhaustion by breadth-first balls around ``center`` with doubling radius."""
    if center is None:
        center = int(domain.labels[0])
    adj = domain._undirected_adjacency()
    dist = sp.csgraph.shortest_path(adj, method="D", unweighted=True,
                                    indices=domain.index[int(center)])
    dist = np.asarray(dist).ravel()
    max_r = int(dist[np.isfinite(dist)].max())
    if max_r == 0:
        radii = [0]
    elif growth == "geometric":
        radii = _doubling_radii(max_r)
    else:
        radii = _linear_radii(max_r, max_r)
    subsets = []
    seen = None
    for r in radii:
        ball = domain.labels[dist <= r].tolist()
        if seen is not None and len(ball) == len(seen):
            continue
        subsets.append(ball)
        seen = ball
    return Exhaustion(domain, subsets)


def fixture(spec, ambient_size=None) -> DomainFixture:
    """Resolve a fixture name such as 'lat1', 'lat1_geo(0.5)', 'rad(3)' or a file path.

    ``ambient_size`` overrides the vertex count of the ambient truncation
    (number of vertices for 1-d lattices, number of interior points for the
    radial family).
    """
    spec = str(spec).strip()
    if spec == "lat1":
        n_half = (int(ambient_size) - 1) // 2 if ambient_size else (DEFAULT_AMBIENT_1D - 1) // 2
        return build_lattice_1d(n_half, "unit")
    if spec.startswith("lat1_geo(") and spec.endswith(")"):
        try:
            q = float(spec[len("lat1_geo("):-1])
        except ValueError as exc:
            raise ValidationError(f"cannot parse fixture {spec!r}") from exc
        n_half = (int(ambient_size) - 1) // 2 if ambient_size else (DEFAULT_AMBIENT_1D - 1) // 2
        return build_lattice_1d(n_half, "geometric", q=q)
    if spec.startswith("rad(") and spec.endswith(")"):
        try:
            d = int(spec[len("rad("):-1])
        except ValueError as exc:
            raise ValidationError(f"cannot parse fixture {spec!r}") from exc
        n = int(ambient_size) if ambient_size else DEFAULT_RADIAL_POINTS
        return build_radial(d, n_points=n)
    import os

    if os.path.exists(spec):
        domain = load_edge_list(spec)
        return DomainFixture(spec, domain, ball_exhaustion(domain), f"edge list file {spec}")
    raise ValidationError(f"unknown fixture: {spec!r}")
