"""Discrete action graphs and Mañé's critical value α(c).

Nodes are the grid points ``(i/n, j/n)`` of the torus, numbered ``i*n + j``.
An edge from ``x`` to ``x + d/n`` lasting ``t`` base steps carries the
midpoint-rule action of the straight segment,

    w = τ L(m, d/(nτ)) - c·d/n,      τ = t h,

so that the k-augmented action of a cycle is ``sum(w) + k sum(τ)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import _kernels
from .lagrangian import CohomologyClass, MagneticLagrangian, TrigOneForm


class GraphError(ValueError):
    pass


def default_v_cap(c) -> float:
    c = np.asarray(c, dtype=float)
    return 3.0 * math.sqrt(2.0 * (1.0 + float(c @ c)))


def stencil(n: int, h: float, v_cap: float, max_steps: int = 2) -> np.ndarray:
    """Integer offsets ``(d1, d2, t)`` reachable at speed <= v_cap in ``t`` steps.

    An offset with ``gcd(d1, d2, t) > 1`` duplicates the velocity of a shorter
    edge and is left out.  Displacements stay strictly inside half a period.
    """
    out = []
    for t in range(1, max_steps + 1):
        r = min(v_cap * t * h, 0.5 - 0.5 / n) * n
        R = int(math.floor(r + 1e-12))
        for d1 in range(-R, R + 1):
            for d2 in range(-R, R + 1):
                if d1 * d1 + d2 * d2 > r * r + 1e-9:
                    continue
                if math.gcd(math.gcd(abs(d1), abs(d2)), t) != 1:
                    continue
                out.append((d1, d2, t))
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class ActionGraph:
    n: int
    h: float
    v_cap: float
    c: np.ndarray
    offsets: np.ndarray  # (S, 3) ints: d1, d2, steps
    src: np.ndarray  # (E,) edge arrays, offset-major: e = s * V + node
    dst: np.ndarray
    w: np.ndarray
    steps: np.ndarray
    lagrangian: MagneticLagrangian = field(repr=False, compare=False, default=None)

    @property
    def V(self) -> int:
        return self.n * self.n

    @property
    def E(self) -> int:
        return self.src.shape[0]

    @property
    def tau(self) -> np.ndarray:
        return self.steps * self.h

    @property
    def max_steps(self) -> int:
        return int(self.offsets[:, 2].max())

    def coords(self, nodes=None) -> np.ndarray:
        idx = np.arange(self.V) if nodes is None else np.asarray(nodes)
        return np.stack([idx // self.n, idx % self.n], axis=-1) / self.n

    def displacement(self, edges=None) -> np.ndarray:
        e = np.arange(self.E) if edges is None else np.asarray(edges)
        return self.offsets[e // self.V, :2] / self.n

    def velocity(self, edges=None) -> np.ndarray:
        e = np.arange(self.E) if edges is None else np.asarray(edges)
        return self.displacement(e) / self.tau[e, None]

    def midpoint(self, edges=None) -> np.ndarray:
        e = np.arange(self.E) if edges is None else np.asarray(edges)
        return np.mod(self.coords(self.src[e]) + 0.5 * self.displacement(e), 1.0)

    def cost(self, k: float) -> np.ndarray:
        return self.w + k * self.tau

    def self_loops(self) -> np.ndarray:
        s = np.flatnonzero((self.offsets == [0, 0, 1]).all(axis=1))[0]
        return np.arange(s * self.V, (s + 1) * self.V)

    def with_extra_form(self, form: TrigOneForm) -> "ActionGraph":
        """Same edges with ``∫ form`` (midpoint rule) added to every cost."""
        extra = _segment_form_integral(form, self.n, self.offsets)
        L = self.lagrangian.with_form(form) if self.lagrangian is not None else None
        return ActionGraph(self.n, self.h, self.v_cap, self.c, self.offsets, self.src,
                           self.dst, self.w + extra.reshape(-1), self.steps, L)

    def cycle_ratio(self, edges) -> float:
        """``-sum(w)/sum(τ)`` of a closed walk, i.e. the k at which it costs zero."""
        edges = np.asarray(edges)
        return float(-self.w[edges].sum() / self.tau[edges].sum())

    def is_strongly_connected(self) -> bool:
        A = sp.csr_matrix((np.ones(self.E), (self.src, self.dst)), shape=(self.V, self.V))
        ncomp, _ = sp.csgraph.connected_components(A, directed=True, connection="strong")
        return ncomp == 1

    def to_csv(self) -> str:
        rows = ["x_idx,y_idx,w,h"]
        rows += [f"{a},{b},{c:.17g},{t:.17g}"
                 for a, b, c, t in zip(self.src, self.dst, self.w, self.tau)]
        return "\n".join(rows) + "\n"


def _half_grid_values(form: TrigOneForm, n: int):
    # a, b on the (2n x 2n) grid that contains every segment midpoint
    m = 2 * n
    if m > 2 * form.max_freq:
        return form.a.on_grid(m), form.b.on_grid(m)
    g = np.arange(m) / m
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    return form.a(pts), form.b(pts)


def _segment_form_integral(form: TrigOneForm, n: int, offsets) -> np.ndarray:
    """Midpoint rule for ``∫ form`` along each offset from each node, shape (S, V)."""
    A, B = _half_grid_values(form, n)
    i = np.arange(n)
    out = np.empty((len(offsets), n * n))
    for s, (d1, d2, _) in enumerate(offsets):
        I = (2 * i[:, None] + d1) % (2 * n)
        J = (2 * i[None, :] + d2) % (2 * n)
        out[s] = ((A[I, J] * d1 + B[I, J] * d2) / n).reshape(-1)
    return out


def build_action_graph(L: MagneticLagrangian, c=CohomologyClass(), n: int = 32,
                       h: float = 0.05, v_cap: float | None = None,
                       max_steps: int = 2) -> ActionGraph:
    """Discretize ``∫ L - c(γ') dt`` on straight grid segments.

    ``max_steps`` is the longest edge duration in units of ``h``; with
    ``max_steps=1`` every edge lasts exactly ``h``.
    """
    c = np.asarray(c, dtype=float)
    if v_cap is None:
        v_cap = default_v_cap(c)
    if n < 8:
        raise GraphError("n must be >= 8")
    if h <= 0 or v_cap <= 0:
        raise GraphError("h and v_cap must be positive")
    if v_cap * h >= 0.5:
        raise GraphError("v_cap*h must stay below 0.5 (edges inside the injectivity radius)")
    if v_cap * h * n < 1.0:
        raise GraphError("v_cap*h*n < 1: no edge reaches a neighbouring node")
    offsets = stencil(n, h, v_cap, max_steps)
    V = n * n
    d = offsets[:, :2].astype(float) / n
    tau = offsets[:, 2] * h
    kinetic = (d * d).sum(1) / (2.0 * tau) - d @ c
    w = kinetic[:, None] + _segment_form_integral(L.base_form, n, offsets)
    node = np.arange(V)
    i, j = node // n, node % n
    src = np.tile(node, len(offsets))
    dst = (((i[None, :] + offsets[:, 0, None]) % n) * n
           + (j[None, :] + offsets[:, 1, None]) % n).reshape(-1)
    steps = np.repeat(offsets[:, 2], V)
    return ActionGraph(n, float(h), float(v_cap), c, offsets, src, dst, w.reshape(-1),
                       steps, L)


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    cycle: np.ndarray  # edge ids of an optimal cycle
    iterations: int
    bracket: tuple

    def __float__(self):
        return self.alpha


def find_negative_cycle(graph: ActionGraph, k: float, tiny: float = 1e-13):
    """Edges of a cycle with ``sum(w + k τ) < 0``, or None."""
    cyc, _ = _kernels.negative_cycle(graph.src, graph.dst, graph.cost(k), graph.V,
                                     tiny, graph.V + 1)
    if len(cyc) == 0:
        return None
    if cyc[0] < 0:
        raise RuntimeError("Bellman-Ford failed to isolate a negative cycle")
    return cyc


def alpha_bisection(graph: ActionGraph, tol: float = 1e-9) -> AlphaResult:
    """Smallest k with no negative cycle, by bisection with negative-cycle detection.

    Each negative cycle found at a trial k lifts the lower bracket to that
    cycle's own zero-cost level, so the bracket closes on an actual cycle.
    """
    loops = graph.self_loops()
    lo, best = 0.0, loops[:1]
    hi = float(np.max(-graph.w / graph.tau))
    hi = max(hi, 0.0)
    it = 0
    while True:
        it += 1
        cyc = find_negative_cycle(graph, lo)
        if cyc is None:
            break
        lo, best = graph.cycle_ratio(cyc), cyc
        if hi - lo <= tol:
            continue
        mid = 0.5 * (lo + hi)
        cyc = find_negative_cycle(graph, mid)
        if cyc is None:
            hi = mid
        else:
            lo, best = graph.cycle_ratio(cyc), cyc
    return AlphaResult(lo, np.asarray(best), it, (lo, max(hi, lo)))


def alpha_karp(graph: ActionGraph) -> float:
    """Karp's minimum-mean recursion generalised to integer edge durations."""
    lam = _kernels.karp_min_ratio(graph.src, graph.dst, graph.w, graph.steps, graph.V,
                                  graph.max_steps)
    return float(-lam / graph.h)


def alpha_negative_cycle(graph: ActionGraph, method: str = "bisection") -> float:
    if method == "bisection":
        return alpha_bisection(graph).alpha
    if method == "karp":
        return alpha_karp(graph)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class DiscreteClosedMeasure:
    """Edge weights with ``sum(weight * τ) = 1`` and balanced flow at every node."""

    weights: np.ndarray
    graph: ActionGraph = field(repr=False)

    def support(self, thresh: float = 1e-9) -> np.ndarray:
        return np.flatnonzero(self.weights > thresh)

    def support_nodes(self, thresh: float = 1e-9) -> np.ndarray:
        return np.unique(self.graph.src[self.support(thresh)])

    def imbalance(self) -> np.ndarray:
        g = self.graph
        return (np.bincount(g.src, self.weights, g.V) - np.bincount(g.dst, self.weights, g.V))

    def total_time(self) -> float:
        return float(self.weights @ self.graph.tau)

    def action(self) -> float:
        return float(self.weights @ self.graph.w)


def _lp_restricted(graph: ActionGraph, idx: np.ndarray, tol: float):
    V, E = graph.V, len(idx)
    e = np.arange(E)
    A = sp.csr_matrix((np.concatenate([np.ones(E), -np.ones(E), graph.tau[idx]]),
                       (np.concatenate([graph.src[idx], graph.dst[idx], np.full(E, V)]),
                        np.concatenate([e, e, e]))), shape=(V + 1, E))
    b = np.zeros(V + 1)
    b[V] = 1.0
    res = linprog(graph.w[idx], A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": tol,
                           "dual_feasibility_tolerance": tol})
    if res.status != 0:
        raise RuntimeError(f"LP failed ({res.message}); the graph is malformed")
    return res


def alpha_lp(graph: ActionGraph, tol: float = 1e-10,
             max_rounds: int = 50) -> tuple[float, DiscreteClosedMeasure]:
    """``-min sum(w μ)`` over closed measures with unit total time.

    Solved by column generation: the LP runs on a growing subset of edges
    (initially the one-cell moves) and every edge is priced with the
    restricted problem's own duals.  It stops when no edge has negative
    reduced cost, which certifies optimality on the full graph.
    """
    near = np.flatnonzero(np.abs(graph.offsets[:, :2]).max(axis=1) <= 1)
    idx = (near[:, None] * graph.V + np.arange(graph.V)[None, :]).reshape(-1)
    for _ in range(max_rounds):
        res = _lp_restricted(graph, idx, tol)
        y = res.eqlin.marginals
        reduced = graph.w - (y[graph.src] - y[graph.dst] + y[graph.V] * graph.tau)
        neg = np.flatnonzero(reduced < -10 * tol)
        if len(neg) == 0:
            mu = np.zeros(graph.E)
            mu[idx] = np.clip(res.x, 0.0, None)
            return float(-res.fun), DiscreteClosedMeasure(mu, graph)
        k = min(len(neg), max(2 * graph.V, len(idx)))
        idx = np.union1d(idx, neg[np.argsort(reduced[neg], kind="stable")[:k]])
    raise RuntimeError("column generation did not terminate")


# ---------------------------------------------------------------- α-function

@dataclass(frozen=True)
class AlphaScan:
    classes: np.ndarray  # (k, 2)
    alpha: np.ndarray
    alpha_lp: np.ndarray
    convexity_violations: list  # (i, j, excess) for midpoint triples found in the list
    ray_ratios: dict  # direction -> [(t, alpha/t)]

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.alpha - self.alpha_lp)

    def to_csv(self) -> str:
        rows = ["c1,c2,alpha_cycle,alpha_lp,gap"]
        rows += [f"{c[0]:.12g},{c[1]:.12g},{a:.12f},{b:.12f},{abs(a - b):.3e}"
                 for c, a, b in zip(self.classes, self.alpha, self.alpha_lp)]
        return "\n".join(rows) + "\n"


def alpha_function_scan(L: MagneticLagrangian, c_list, grid: dict, tol: float = 1e-9,
                        disc_tol: float = 0.0, lp: bool = True) -> AlphaScan:
    """α̂ on a list of classes with convexity and growth diagnostics.

    ``grid`` holds keyword arguments of :func:`build_action_graph`.  Midpoint
    convexity is tested on every triple ``(c, c', (c+c')/2)`` present in
    the list; ``ray_ratios`` groups classes along rays from the origin.
    """
    cs = np.asarray(c_list, float).reshape(-1, 2)
    if len(cs) == 0:
        raise ValueError("empty class list")
    al, lpv = [], []
    for c in cs:
        kw = dict(grid)
        if kw.get("v_cap") is None:
            # the default cap grows with |c|; keep edges inside the chart
            kw["v_cap"] = min(default_v_cap(c), 0.49 / kw.get("h", 0.05))
        g = build_action_graph(L, CohomologyClass(*c), **kw)
        a = alpha_bisection(g, tol).alpha
        al.append(a)
        lpv.append(alpha_lp(g)[0] if lp else a)
    al, lpv = np.array(al), np.array(lpv)
    key = {tuple(np.round(c, 12)): i for i, c in enumerate(cs)}
    viol = []
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            m = key.get(tuple(np.round(0.5 * (cs[i] + cs[j]), 12)))
            if m is None:
                continue
            excess = al[m] - 0.5 * (al[i] + al[j])
            if excess > 2 * disc_tol:
                viol.append((i, j, float(excess)))
    rays = {}
    for c, a in zip(cs, al):
        t = float(np.hypot(*c))
        if t == 0:
            continue
        d = tuple(float(x) for x in np.round(c / t, 9))
        rays.setdefault(d, []).append((t, float(a) / t))
    for d in rays:
        rays[d].sort()
    return AlphaScan(cs, al, lpv, viol, rays)


# ---------------------------------------------------------------- continuity in the form

@dataclass(frozen=True)
class ContinuityRow:
    index: int
    eps: float
    alpha_n: float
    gap: float  # α̂_n - α̂
    bound: float  # ε_n α̂_n + ε_n B
    sym_bound: float  # ε_n (α̂ + B) / (1 - ε_n), bound on |gap| for ε_n < 1

    @property
    def satisfied(self) -> bool:
        return self.gap <= self.bound

    @property
    def sym_satisfied(self) -> bool:
        return abs(self.gap) <= self.sym_bound


@dataclass(frozen=True)
class ContinuityReport:
    alpha: float
    B: float
    rows: list

    def to_csv(self) -> str:
        out = ["n,eps_n,alpha_n,gap,bound,bound_satisfied"]
        out += [f"{r.index},{r.eps:.12g},{r.alpha_n:.12f},{r.gap:.6e},{r.bound:.6e},"
                f"{str(r.satisfied).lower()}" for r in self.rows]
        return "\n".join(out) + "\n"


def field_distance(w1: TrigOneForm, w2: TrigOneForm, grid_n: int = 128) -> float:
    """``sup_x |X1(x) - X2(x)|`` for the vector fields of two forms (grid sup)."""
    g = np.arange(grid_n) / grid_n
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    d = (w1 - w2).field(pts)
    return float(np.sqrt((d * d).sum(-1)).max())


def continuity_modulus_check(L: MagneticLagrangian, forms, c, grid: dict, indices=None,
                             B: float = 0.5, tol: float = 1e-9) -> ContinuityReport:
    """α̂ along ``L + ξ_n`` compared with the modulus ``ε_n α̂_n + ε_n B``.

    ``L`` carries the limit form ``ξ``; ``forms`` are the ``ξ_n``, and
    ``ε_n`` is their field distance to ``ξ``.  ``B = 1/2`` is the smallest
    constant with ``|v|^2/2 >= |v| - B``.
    """
    forms = list(forms)
    eps = [field_distance(f, L.base_form) for f in forms]
    if len(eps) > 1 and (np.diff(eps) > 1e-12).any():
        raise ValueError("form sequence is not converging: field distances increase")
    c = CohomologyClass(*np.asarray(c, float))
    alpha = alpha_bisection(build_action_graph(L, c, **grid), tol).alpha
    idx = list(range(1, len(forms) + 1)) if indices is None else list(indices)
    rows = []
    for k, f, e in zip(idx, forms, eps):
        Ln = MagneticLagrangian(f)
        an = alpha_bisection(build_action_graph(Ln, c, **grid), tol).alpha
        sym = e * (alpha + B) / (1.0 - e) if e < 1 else math.inf
        rows.append(ContinuityRow(int(k), e, an, an - alpha, e * an + e * B, sym))
    return ContinuityReport(alpha, B, rows)
