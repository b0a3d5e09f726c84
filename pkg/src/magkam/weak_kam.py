"""Mañé potential, weak KAM functions and discrete Mather/Aubry/Mañé sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from . import _kernels
from .critical import ActionGraph, DiscreteClosedMeasure
from .flow import integrate
from .lagrangian import MagneticLagrangian, eval_lagrangian, torus_delta


class NegativeCycle(RuntimeError):
    """The supplied k is below the critical value of the graph."""


class NonConvergence(RuntimeError):
    pass


class InconsistentAlpha(ValueError):
    pass


@dataclass(frozen=True)
class PotentialTable:
    source: int
    phi: np.ndarray
    k: float
    pred: np.ndarray = field(repr=False)

    def __getitem__(self, y):
        return self.phi[y]

    def path_to(self, y: int) -> np.ndarray:
        """Edges of a cheapest walk from the source to ``y``."""
        out, v = [], int(y)
        for _ in range(len(self.phi) + 1):
            e = int(self.pred[v])
            out.append(e)
            v = int(self._src[e])
            if v == self.source and len(out) > 0:
                break
        return np.array(out[::-1])

    def to_csv(self, n: int) -> str:
        """Φ(source, ·) as an ``n`` x ``n`` grid, row ``i`` at ``x1 = i/n``."""
        grid = self.phi.reshape(n, n)
        return "\n".join(",".join(f"{v:.12g}" for v in row) for row in grid) + "\n"


def mane_potential(graph: ActionGraph, alpha: float, source: int,
                   tiny: float = 1e-13) -> PotentialTable:
    """Cheapest nonempty walks out of ``source`` with costs ``w + alpha τ``."""
    dist, pred, ok = _kernels.shortest_paths(graph.src, graph.dst, graph.cost(alpha), graph.V,
                                             int(source), tiny, graph.V + 1)
    if not ok:
        raise NegativeCycle(f"k={alpha!r} is below the critical value")
    table = PotentialTable(int(source), dist, float(alpha), pred)
    object.__setattr__(table, "_src", graph.src)
    return table


def potential_matrix(graph: ActionGraph, alpha: float, sources) -> np.ndarray:
    """Rows ``Φ(source, ·)`` for each source."""
    return np.stack([mane_potential(graph, alpha, s).phi for s in sources])


def pseudo_metric(graph: ActionGraph, alpha: float, x: int, y: int) -> float:
    return float(mane_potential(graph, alpha, x).phi[y] + mane_potential(graph, alpha, y).phi[x])


def hausdorff(A: np.ndarray, B: np.ndarray, one_sided: bool = False) -> float:
    """Hausdorff distance of point sets in ``T² x R²`` (torus metric on the first two axes)."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if len(A) == 0:
        return 0.0
    if len(B) == 0:
        return float("inf")

    def directed(P, Q):
        best = np.full(len(P), np.inf)
        for lo in range(0, len(Q), 2048):
            q = Q[lo:lo + 2048]
            dx = torus_delta(P[:, None, :2], q[None, :, :2])
            d2 = (dx * dx).sum(-1)
            if P.shape[1] > 2:
                dv = P[:, None, 2:] - q[None, :, 2:]
                d2 = d2 + (dv * dv).sum(-1)
            best = np.minimum(best, d2.min(1))
        return float(np.sqrt(best.max()))

    d = directed(A, B)
    return d if one_sided else max(d, directed(B, A))


@dataclass(frozen=True)
class CalibratedSubgraph:
    u: np.ndarray
    alpha: float
    reduced: np.ndarray  # u(x) + w + alpha τ - u(y) per edge
    tight: np.ndarray  # edge ids with reduced cost <= tol_tight
    scc_labels: np.ndarray
    cyclic_sccs: np.ndarray
    residual: float
    sweeps: int
    tol_tight: float

    @property
    def cyclic_nodes(self) -> np.ndarray:
        return np.flatnonzero(np.isin(self.scc_labels, self.cyclic_sccs))


def default_tol_tight(graph: ActionGraph) -> float:
    # a few orders above the LP / fixed-point precision, far below any edge cost scale
    return 1e-7 * max(1.0, float(np.abs(graph.w).max()))


def bellman_residual(graph: ActionGraph, alpha: float, u: np.ndarray) -> float:
    Tu = _kernels.min_plus(graph.src, graph.dst, graph.cost(alpha), u, graph.V)
    return float(np.abs(Tu - u).max())


def lax_oleinik(graph: ActionGraph, alpha: float, u: np.ndarray) -> np.ndarray:
    return _kernels.min_plus(graph.src, graph.dst, graph.cost(alpha), np.asarray(u, float),
                             graph.V)


def lax_oleinik_fixed_point(graph: ActionGraph, alpha: float, u0=None,
                            max_sweeps: int = 200000, tol_fix: float = 1e-11,
                            tol_tight: float | None = None) -> CalibratedSubgraph:
    """Iterate the min-plus operator to a fixed point and extract the tight subgraph.

    The plain iteration can cycle when the critical graph is periodic, so
    each sweep averages ``u`` with its image (same fixed points, non-expansive).
    """
    cost = graph.cost(alpha)
    u = np.zeros(graph.V) if u0 is None else np.array(u0, dtype=float)
    res = np.inf
    for sweep in range(1, max_sweeps + 1):
        Tu = _kernels.min_plus(graph.src, graph.dst, cost, u, graph.V)
        res = float(np.abs(Tu - u).max())
        if res < tol_fix:
            u = Tu
            break
        u = 0.5 * (u + Tu)
        u -= u.min()
    else:
        raise NonConvergence(f"Lax-Oleinik residual {res:.3e} after {max_sweeps} sweeps")
    return calibrate(graph, alpha, u, res, sweep, tol_tight)


def calibrate(graph: ActionGraph, alpha: float, u: np.ndarray, residual: float = 0.0,
              sweeps: int = 0, tol_tight: float | None = None) -> CalibratedSubgraph:
    if tol_tight is None:
        tol_tight = default_tol_tight(graph)
    reduced = u[graph.src] + graph.cost(alpha) - u[graph.dst]
    tight = np.flatnonzero(reduced <= tol_tight)
    A = sp.csr_matrix((np.ones(len(tight)), (graph.src[tight], graph.dst[tight])),
                      shape=(graph.V, graph.V))
    _, labels = connected_components(A, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=labels.max() + 1)
    cyclic = sizes > 1
    loops = tight[graph.src[tight] == graph.dst[tight]]
    cyclic[labels[graph.src[loops]]] = True
    return CalibratedSubgraph(u, float(alpha), reduced, tight, labels,
                              np.flatnonzero(cyclic), residual, sweeps, float(tol_tight))


def _reach(n_nodes: int, src, dst, seeds) -> np.ndarray:
    A = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n_nodes, n_nodes))
    seen = np.zeros(n_nodes, bool)
    seen[seeds] = True
    frontier = seen.copy()
    while frontier.any():
        nxt = (A.T @ frontier.astype(float)) > 0
        frontier = nxt & ~seen
        seen |= nxt
    return seen


def _min_matrix(src, dst, val, V) -> sp.csr_matrix:
    """Sparse adjacency keeping the cheapest of parallel edges.

    A tiny floor keeps zero-cost edges as explicit entries.
    """
    key = src.astype(np.int64) * V + dst
    order = np.lexsort((val, key))
    key, val = key[order], val[order]
    first = np.concatenate([[True], key[1:] != key[:-1]])
    key, val = key[first], np.maximum(val[first], 0.0) + 1e-300
    return sp.csr_matrix((val, (key // V, key % V)), shape=(V, V))


def default_tol_static(graph: ActionGraph) -> float:
    """Pseudo-distance below which two discrete static classes are identified.

    Moving one cell at the slowest discrete speed costs about
    ``(1/n)^2 / (2 τ_max)`` each way; classes closer than a few such moves
    cannot be told apart on the grid.
    """
    return 4.0 / (graph.n ** 2 * graph.max_steps * graph.h)


@dataclass(frozen=True)
class StaticGroups:
    labels: np.ndarray  # group id per node, -1 off the Aubry set
    count: int
    delta: np.ndarray  # pseudo-distance between SCC representatives (inf if above the limit)


def static_groups(graph: ActionGraph, calibrated: CalibratedSubgraph,
                  tol_static: float | None = None) -> StaticGroups:
    """Cyclic SCCs joined when their pseudo-distance ``δ`` is at most ``tol_static``.

    ``δ(a, b) = R(a, b) + R(b, a)`` with ``R`` the reduced-cost distance; the
    weak KAM function cancels from the sum.
    """
    if tol_static is None:
        tol_static = default_tol_static(graph)
    cyc = calibrated.cyclic_sccs
    lab = calibrated.scc_labels
    V = graph.V
    reps = np.array([np.flatnonzero(lab == k)[0] for k in cyc], dtype=int)
    R = _min_matrix(graph.src, graph.dst, calibrated.reduced, V)
    D = dijkstra(R, indices=reps, limit=tol_static * (1 + 1e-9))
    D[np.arange(len(reps)), reps] = 0.0
    delta = D[:, reps] + D[:, reps].T
    parent = np.arange(len(reps))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(delta <= tol_static)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(reps))])
    _, gid = np.unique(roots, return_inverse=True)
    node_group = np.full(V, -1)
    scc_to_group = dict(zip(cyc.tolist(), gid.tolist()))
    on = np.isin(lab, cyc)
    node_group[on] = [scc_to_group[k] for k in lab[on]]
    return StaticGroups(node_group, int(gid.max()) + 1 if len(gid) else 0, delta)


def heteroclinic_edges(graph: ActionGraph, calibrated: CalibratedSubgraph,
                       groups: StaticGroups, tol_tight: float | None = None) -> np.ndarray:
    """Edges on cheapest connections from one static group to another.

    For each group ``G`` the potential ``Φ(G, ·)`` is rebuilt from reduced
    costs; an edge is kept when it is calibrated by that potential, starts on
    a path out of ``G`` and leads into a different group.
    """
    if tol_tight is None:
        tol_tight = calibrated.tol_tight
    if groups.count < 2:
        return np.zeros(0, dtype=int)
    V = graph.V
    r = calibrated.reduced
    R = _min_matrix(graph.src, graph.dst, r, V)
    out = []
    for g in range(groups.count):
        members = np.flatnonzero(groups.labels == g)
        dist = dijkstra(R, indices=members, min_only=True)
        ok = np.isfinite(dist[graph.src]) & np.isfinite(dist[graph.dst])
        slack = np.full(graph.E, np.inf)
        slack[ok] = dist[graph.src[ok]] + r[ok] - dist[graph.dst[ok]]
        tight = np.flatnonzero(slack <= tol_tight)
        src, dst = graph.src[tight], graph.dst[tight]
        others = np.flatnonzero((groups.labels >= 0) & (groups.labels != g))
        fwd = _reach(V, src, dst, members)
        bwd = _reach(V, dst, src, others)
        # stop at the first arrival: edges leaving another group belong to that group
        leave_other = np.isin(src, others)
        out.append(tight[fwd[src] & bwd[dst] & ~leave_other])
    return np.unique(np.concatenate(out))


@dataclass(frozen=True)
class DiscreteSets:
    mather_nodes: np.ndarray
    aubry_nodes: np.ndarray
    mane_edges: np.ndarray
    aubry_edges: np.ndarray  # tight edges inside cyclic SCCs
    graph: ActionGraph = field(repr=False)
    alpha: float = 0.0
    groups: StaticGroups = field(default=None, repr=False)
    measure: DiscreteClosedMeasure = field(default=None, repr=False)

    @property
    def mane_nodes(self) -> np.ndarray:
        g = self.graph
        return np.unique(np.concatenate([g.src[self.mane_edges], g.dst[self.mane_edges]]))

    @property
    def excess_edges(self) -> int:
        return int(len(self.mane_edges) - len(self.aubry_edges))

    def mane_points(self) -> np.ndarray:
        """Mañé edges as points ``(x1, x2, v1, v2)`` at their source node."""
        g = self.graph
        return np.hstack([g.coords(g.src[self.mane_edges]), g.velocity(self.mane_edges)])

    def mather_points(self) -> np.ndarray:
        return self.graph.coords(self.mather_nodes)

    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.graph.velocity(self.mane_edges), axis=1)

    def rows(self):
        """``(x1, x2, v1, v2, tag)`` rows; node tags carry the velocity of a tight out-edge."""
        g = self.graph
        vel = {}
        for e in self.aubry_edges:
            vel.setdefault(int(g.src[e]), g.velocity([e])[0])
        out = []
        for tag, nodes in (("mather", self.mather_nodes), ("aubry", self.aubry_nodes)):
            for x in nodes:
                v = vel.get(int(x), (np.nan, np.nan))
                out.append((*g.coords([x])[0], *v, tag))
        for p in self.mane_points():
            out.append((*p, "mane"))
        return out

    def to_csv(self) -> str:
        lines = ["x1,x2,v1,v2,tag"]
        lines += [f"{a:.10g},{b:.10g},{c:.10g},{d:.10g},{t}" for a, b, c, d, t in self.rows()]
        return "\n".join(lines) + "\n"


def extract_sets(graph: ActionGraph, alpha: float, calibrated: CalibratedSubgraph,
                 lp_measure: DiscreteClosedMeasure, lp_alpha: float | None = None,
                 support_thresh: float = 1e-7, tol_static: float | None = None) -> DiscreteSets:
    """Mather nodes from the LP, Aubry nodes from tight cycles, Mañé edges.

    Mañé edges are the tight edges of ``calibrated`` on Aubry-to-Aubry paths
    together with the cheapest connections between distinct static groups.
    """
    if abs(calibrated.alpha - alpha) > 1e-6 or (lp_alpha is not None
                                                 and abs(lp_alpha - alpha) > 1e-6):
        raise InconsistentAlpha("critical values disagree between inputs")
    mather = lp_measure.support_nodes(support_thresh)
    aubry = calibrated.cyclic_nodes
    tight = calibrated.tight
    src, dst = graph.src[tight], graph.dst[tight]
    fwd = _reach(graph.V, src, dst, aubry)
    bwd = _reach(graph.V, dst, src, aubry)
    mane = tight[fwd[src] & bwd[dst]]
    lab = calibrated.scc_labels
    inside = np.isin(lab[src], calibrated.cyclic_sccs) & (lab[src] == lab[dst])
    groups = static_groups(graph, calibrated, tol_static)
    mane = np.union1d(mane, heteroclinic_edges(graph, calibrated, groups))
    return DiscreteSets(mather, aubry, mane, tight[inside], graph, float(alpha), groups,
                        lp_measure)


def aubry_by_delta(graph: ActionGraph, alpha: float, tol: float) -> np.ndarray:
    """Nodes with ``δ(x, x) = 2 Φ(x, x) <= tol`` (one potential per node)."""
    return np.array([x for x in range(graph.V)
                     if 2.0 * mane_potential(graph, alpha, x).phi[x] <= tol], dtype=int)


@dataclass(frozen=True)
class SemistaticReport:
    action: float
    potential: float
    defect: float
    start_node: int
    end_node: int
    snap_error: float


def semistatic_orbit_check(L: MagneticLagrangian, x, v, graph: ActionGraph, alpha: float,
                           T: float, h: float = 1e-3) -> SemistaticReport:
    """Continuous action of the orbit through ``(x, v)`` against the discrete potential.

    The orbit is integrated for time ``T``; its ``c``-shifted action plus
    ``alpha T`` is compared with ``Φ`` between the grid nodes nearest its
    endpoints.  ``defect = action - Φ``.
    """
    seg = integrate(L, x, v, T, h)
    xs, vs = seg.positions, seg.velocities
    lag = eval_lagrangian(L, xs, vs) - vs @ graph.c + alpha
    action = float(np.sum(0.5 * (lag[1:] + lag[:-1])) * seg.h)
    n = graph.n

    def snap(p):
        idx = np.round(np.mod(p, 1.0) * n).astype(int) % n
        return int(idx[0] * n + idx[1]), float(np.linalg.norm(torus_delta(p, idx / n)))

    a, ea = snap(xs[0])
    b, eb = snap(xs[-1])
    phi = float(mane_potential(graph, alpha, a).phi[b])
    return SemistaticReport(action, phi, action - phi, a, b, max(ea, eb))
