"""Perturbations that vanish on the Mather set and push up the action elsewhere.

The perturbing form is ``η_x(v) = λ(x) <X(x), v>``: ``X`` extends the
velocities of the Aubry set to the whole torus and ``λ >= 0`` is a bump
that vanishes on the (projected) Mather set.  For a magnetic Lagrangian
``L_v(x, X) - L_v(x, 0) = X``, so this is the general construction
specialised to our model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .critical import ActionGraph, alpha_bisection, alpha_lp, build_action_graph
from .lagrangian import CohomologyClass, MagneticLagrangian, TrigOneForm, TrigPoly, torus_delta
from .weak_kam import DiscreteSets, extract_sets, hausdorff, lax_oleinik_fixed_point


class EmptyAubrySet(ValueError):
    pass


class BoundViolation(RuntimeError):
    def __init__(self, msg, witness):
        super().__init__(msg)
        self.witness = witness


class ProjectionError(ValueError):
    pass


def _grid_points(n: int) -> np.ndarray:
    g = np.arange(n) / n
    return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)


def _nearest(points: np.ndarray, targets: np.ndarray, chunk: int = 4096):
    """Index of, and torus distance to, the nearest target for each point."""
    idx = np.empty(len(points), dtype=int)
    dist = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        d = torus_delta(points[lo:lo + chunk, None, :], targets[None, :, :])
        d2 = (d * d).sum(-1)
        idx[lo:lo + chunk] = d2.argmin(1)
        dist[lo:lo + chunk] = np.sqrt(d2.min(1))
    return idx, dist


_SHIFTS = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], float)


def segment_distance(points: np.ndarray, starts: np.ndarray, disp: np.ndarray,
                     chunk: int = 2048) -> np.ndarray:
    """Torus distance from each point to the nearest of the segments ``start + s disp``."""
    points = np.asarray(points, float).reshape(-1, 2)
    out = np.empty(len(points))
    dd = (disp * disp).sum(1)
    dd = np.where(dd > 0, dd, 1.0)
    for lo in range(0, len(points), chunk):
        r0 = torus_delta(starts[None, :, :], points[lo:lo + chunk, None, :])
        best = np.full(r0.shape[:2], np.inf)
        # long segments can be closest through a neighbouring lattice image
        for shift in _SHIFTS:
            r = r0 + shift
            s = np.clip((r * disp[None]).sum(-1) / dd, 0.0, 1.0)
            q = r - s[..., None] * disp[None]
            np.minimum(best, (q * q).sum(-1), out=best)
        out[lo:lo + chunk] = np.sqrt(best.min(1))
    return out


# ---------------------------------------------------------------- Aubry lift

@dataclass(frozen=True)
class AubryLiftField:
    field: TrigOneForm  # (a, b) read as the vector field X
    sigma: float
    delta_approx: float
    aubry_points: np.ndarray
    aubry_velocity: np.ndarray

    def __call__(self, x):
        return self.field.field(x)

    def sup_norm(self, grid_n: int = 128) -> float:
        X = self(_grid_points(grid_n))
        return float(np.sqrt((X * X).sum(-1)).max())


def aubry_velocities(sets: DiscreteSets):
    """Aubry nodes with the mean velocity of their tight cycle edges."""
    g = sets.graph
    e = sets.aubry_edges
    nodes = np.unique(g.src[e])
    vel = g.velocity(e)
    v = np.stack([np.bincount(np.searchsorted(nodes, g.src[e]), vel[:, i], len(nodes))
                  for i in range(2)], axis=1)
    v /= np.bincount(np.searchsorted(nodes, g.src[e]), minlength=len(nodes))[:, None]
    return nodes, v


def build_aubry_lift(sets: DiscreteSets, sigma: float, n_freq: int | None = None) -> AubryLiftField:
    """Nearest-Aubry-node velocities, smoothed by a periodic Gaussian of width ``sigma``."""
    if len(sets.aubry_nodes) == 0 or len(sets.aubry_edges) == 0:
        raise EmptyAubrySet("no Aubry nodes to lift")
    g = sets.graph
    n = g.n
    if n_freq is None:
        n_freq = n // 2 - 1
    nodes, vel = aubry_velocities(sets)
    pts = g.coords(nodes)
    grid = _grid_points(n).reshape(-1, 2)
    near, _ = _nearest(grid, pts)
    raw = vel[near].reshape(n, n, 2)
    # positive periodized kernel, so smoothed samples are convex averages
    r = np.minimum(np.arange(n), n - np.arange(n)) / n
    ker = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma ** 2))
    damp = np.fft.fft2(ker / ker.sum())
    smooth = [np.real(np.fft.ifft2(np.fft.fft2(raw[..., i]) * damp)) for i in range(2)]
    X = TrigOneForm(TrigPoly.from_grid(smooth[0], n_freq), TrigPoly.from_grid(smooth[1], n_freq))
    err = X.field(pts) - vel
    delta = float(np.sqrt((err * err).sum(1)).max())
    return AubryLiftField(X, float(sigma), delta, pts, vel)


def constant_lift(v, points=np.zeros((1, 2))) -> AubryLiftField:
    """A constant field, e.g. the exact lift of a straight-line Aubry set."""
    v = np.asarray(v, float)
    X = TrigOneForm.constant(*v)
    return AubryLiftField(X, 0.0, 0.0, np.asarray(points, float), np.tile(v, (len(points), 1)))


# ---------------------------------------------------------------- lower bound on <X, v>

@dataclass(frozen=True)
class Lemma1Report:
    K: float
    worst_margin: float
    witness: tuple
    r_U: float
    r_V: float
    largest_r_U: float
    samples: int

    def to_dict(self):
        return {"K": self.K, "worst_margin": self.worst_margin, "r_U": self.r_U,
                "r_V": self.r_V, "largest_r_U": self.largest_r_U, "samples": self.samples}


def lemma1_constant(alpha: float, e0: float = 0.0) -> float:
    return (alpha - e0) / 4.0


def verify_lemma1_bound(L: MagneticLagrangian, c, alpha: float, X: AubryLiftField,
                        r_U: float, r_V: float | None = None, samples: int = 20000,
                        seed: int = 0, raise_on_violation: bool = True) -> Lemma1Report:
    """Check ``<X(x), v> >= K = alpha/4`` on a tube around the Aubry set.

    The tube is ``{d(x, Aubry) < r_U} x {|v - v_aubry| < r_V}`` around the
    lifted Aubry set in TM, with ``v_aubry`` the velocity of the sampled base point.  For the
    magnetic model ``(L_v(x, X) - L_v(x, 0))(v) = <X, v>`` exactly.
    """
    if not alpha > 0:
        raise ValueError("needs alpha > e0 = 0")
    K = lemma1_constant(alpha)
    if r_V is None:
        r_V = np.sqrt(2.0 * alpha) / 2.0
    rng = np.random.default_rng(seed)
    pick = rng.integers(len(X.aubry_points), size=samples)
    base = X.aubry_points[pick]
    rad = r_U * np.sqrt(rng.random(samples))
    ang = 2 * np.pi * rng.random(samples)
    x = np.mod(base + rad[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1), 1.0)
    Xx = X(x)
    rv = r_V * np.sqrt(rng.random(samples))
    av = 2 * np.pi * rng.random(samples)
    v = X.aubry_velocity[pick] + rv[:, None] * np.stack([np.cos(av), np.sin(av)], 1)
    margin = (Xx * v).sum(1) - K
    _, dist = _nearest(x, X.aubry_points)
    order = np.argsort(dist, kind="stable")
    bad = np.flatnonzero(margin[order] < 0)
    largest = float(r_U) if len(bad) == 0 else float(dist[order][bad[0]])
    i = int(np.argmin(margin))
    witness = (x[i].tolist(), v[i].tolist())
    report = Lemma1Report(K, float(margin[i]), witness, float(r_U), float(r_V), largest, samples)
    if raise_on_violation and margin[i] < 0:
        raise BoundViolation(f"<X, v> < K at x={witness[0]}, v={witness[1]}", witness)
    return report


# ---------------------------------------------------------------- bump and form

def bump_profile(s, profile: str = "quadratic"):
    """Shape on ``s = d / B``, zero for ``s >= 1``, peak value 1."""
    s = np.asarray(s, float)
    inside = s < 1.0
    t = np.where(inside, s, 0.0)
    if profile == "quadratic":
        # s^2 (1 - s^2)^3 peaks at s^2 = 1/4 with value 27/256
        val = (256.0 / 27.0) * t * t * (1.0 - t * t) ** 3
    elif profile == "sine":
        val = np.sin(np.pi * t) ** 2
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return np.where(inside, val, 0.0)


def profile_curvature(profile: str, B_radius: float) -> float:
    """Second derivative in ``d`` of the peak-1 shape at ``d = 0``."""
    if profile == "quadratic":
        return 2.0 * 256.0 / 27.0 / B_radius ** 2
    if profile == "sine":
        return 2.0 * np.pi ** 2 / B_radius ** 2
    raise ValueError(profile)


@dataclass(frozen=True)
class PerturbationForm:
    epsilon: float
    profile: str
    B_radius: float
    lift: AubryLiftField = field(repr=False)
    starts: np.ndarray = field(repr=False)  # Mather segments
    disp: np.ndarray = field(repr=False)
    form: TrigOneForm = field(repr=False)
    projection_error: float = 0.0
    grid_n: int = 64
    n_freq: int = 16
    weight: TrigPoly | None = field(default=None, repr=False)

    def lam(self, x):
        x = np.asarray(x, float)
        d = segment_distance(x.reshape(-1, 2), self.starts, self.disp).reshape(x.shape[:-1])
        lam = 0.5 * self.epsilon * bump_profile(d / self.B_radius, self.profile)
        return lam if self.weight is None else lam * self.weight(x)

    def __call__(self, x, v):
        """Exact (unprojected) ``λ(x) <X(x), v>``."""
        return self.lam(x) * (self.lift(x) * np.asarray(v, float)).sum(-1)

    @property
    def f_on_set(self) -> float:
        """Lower bound of ``f`` in ``∂²λ/∂d² = ε f`` on the Mather set."""
        f = 0.5 * profile_curvature(self.profile, self.B_radius)
        if self.weight is None:
            return f
        s = np.linspace(0.0, 1.0, 65)
        pts = self.starts[:, None, :] + s[None, :, None] * self.disp[:, None, :]
        return f * float(self.weight(pts).min())

    def scaled(self, epsilon: float) -> "PerturbationForm":
        r = epsilon / self.epsilon if self.epsilon else 0.0
        return PerturbationForm(float(epsilon), self.profile, self.B_radius, self.lift,
                                self.starts, self.disp, self.form * r, self.projection_error,
                                self.grid_n, self.n_freq, self.weight)

    def sidecar(self, K: float | None = None, margins: dict | None = None) -> str:
        return json.dumps({"epsilon": self.epsilon, "B_radius": self.B_radius,
                           "profile": self.profile, "delta_approx": self.lift.delta_approx,
                           "projection_error": self.projection_error, "K": K,
                           "margins": margins or {}}, sort_keys=True)


def mather_segments(sets: DiscreteSets, thresh: float = 1e-7):
    """Straight segments of the LP-optimal edges."""
    g = sets.graph
    if sets.measure is not None:
        e = sets.measure.support(thresh)
    else:
        e = sets.aubry_edges[np.isin(g.src[sets.aubry_edges], sets.mather_nodes)]
    return g.coords(g.src[e]), g.displacement(e)


def build_perturbation(sets_or_segments, X: AubryLiftField, epsilon: float,
                       profile: str = "quadratic", B_radius: float = 0.25,
                       n_freq: int = 16, grid_n: int = 64,
                       max_error: float = 0.05, weight: TrigPoly | None = None) -> PerturbationForm:
    """``η = λ <X, ·>`` with ``λ = (ε/2) bump(d(x, Mather)/B)``, projected to a trig form.

    ``sets_or_segments`` is either a :class:`DiscreteSets` or a pair
    ``(starts, displacements)`` describing the curve ``λ`` vanishes on.
    An optional positive ``weight`` multiplies ``λ``; it breaks the
    symmetry along the set without moving the zero set.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if isinstance(sets_or_segments, DiscreteSets):
        starts, disp = mather_segments(sets_or_segments)
        cell = 1.0 / sets_or_segments.graph.n
        if B_radius <= cell:
            raise ValueError("B_radius must exceed the grid spacing")
    else:
        starts, disp = (np.asarray(a, float) for a in sets_or_segments)
    if epsilon == 0:
        return PerturbationForm(0.0, profile, float(B_radius), X, starts, disp,
                                TrigOneForm.zero(), 0.0, grid_n, n_freq, weight)
    pts = _grid_points(grid_n)
    d = segment_distance(pts.reshape(-1, 2), starts, disp).reshape(grid_n, grid_n)
    lam = 0.5 * bump_profile(d / B_radius, profile)  # unit epsilon
    if weight is not None:
        wv = weight(pts)
        if wv.min() <= 0:
            raise ValueError("weight must be positive")
        lam = lam * wv
    W = lam[..., None] * X(pts)
    comps = [TrigPoly.from_grid(W[..., i], n_freq) for i in range(2)]
    form = TrigOneForm(comps[0], comps[1])
    resid = form.field(pts) - W
    norm = float(np.sqrt((W * W).sum()))
    err = float(np.sqrt((resid * resid).sum()) / norm) if norm > 0 else 0.0
    if err > max_error:
        raise ProjectionError(f"relative L2 projection error {err:.3f} exceeds {max_error}")
    return PerturbationForm(float(epsilon), profile, float(B_radius), X, starts, disp,
                            form * epsilon, err, grid_n, n_freq, weight)


# ---------------------------------------------------------------- collapse

@dataclass(frozen=True)
class SetsRun:
    graph: ActionGraph
    alpha: float
    alpha_lp: float
    sets: DiscreteSets


def compute_sets(L: MagneticLagrangian, c, grid: dict, extra: TrigOneForm | None = None,
                 tol_tight: float | None = None, tol_static: float | None = None) -> SetsRun:
    """α, Lax-Oleinik calibration and discrete sets for ``L + extra - c``."""
    g = build_action_graph(L, c, **grid)
    if extra is not None and not extra.is_zero():
        g = g.with_extra_form(extra)
    a = alpha_bisection(g).alpha
    la, mu = alpha_lp(g)
    cal = lax_oleinik_fixed_point(g, a, tol_tight=tol_tight)
    S = extract_sets(g, a, cal, mu, la, tol_static=tol_static)
    return SetsRun(g, a, la, S)


@dataclass(frozen=True)
class CollapseReport:
    epsilon: float
    alpha_before: float
    alpha_after: float
    mather_hausdorff: float
    excess_before: int
    excess_after: int
    aubry_before: int
    aubry_after: int
    mane_before: int
    mane_after: int
    path_added_cost: float
    path_lambda_time: float
    K: float

    @property
    def excess_reduction(self) -> float:
        if self.excess_before == 0:
            return 0.0
        return 1.0 - self.excess_after / self.excess_before

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["excess_reduction"] = self.excess_reduction
        return d


def verify_collapse(L: MagneticLagrangian, c, pert: PerturbationForm, grid: dict,
                    base: SetsRun | None = None, tol_tight: float | None = None) -> CollapseReport:
    """Recompute α and the discrete sets for ``L + η`` and compare with ``L``.

    The action-gap entry adds up the perturbation's cost along the
    unperturbed Mañé edges that are not Aubry edges, next to the realized
    ``∫ λ dt`` along them (the proof bounds the former below by ``K`` times
    the latter).
    """
    if base is None:
        base = compute_sets(L, c, grid, tol_tight=tol_tight)
    new = base if pert.form.is_zero() else compute_sets(L, c, grid, pert.form, tol_tight)
    S0, S1 = base.sets, new.sets
    g = base.graph
    d = hausdorff(g.coords(S1.mather_nodes), g.coords(S0.mather_nodes))
    extra_edges = np.setdiff1d(S0.mane_edges, S0.aubry_edges)
    added = new.graph.w[extra_edges] - g.w[extra_edges] if new is not base else np.zeros(0)
    lam_time = float(np.sum(pert.lam(g.midpoint(extra_edges)) * g.tau[extra_edges])) \
        if len(extra_edges) else 0.0
    return CollapseReport(pert.epsilon, base.alpha, new.alpha, float(d), S0.excess_edges,
                          S1.excess_edges, len(S0.aubry_nodes), len(S1.aubry_nodes),
                          len(S0.mane_edges), len(S1.mane_edges), float(np.sum(added)), lam_time,
                          lemma1_constant(base.alpha))


@dataclass(frozen=True)
class USCRow:
    epsilon: float
    distance: float  # sup over the perturbed Mañé set of the distance to the unperturbed one
    reverse: float  # the other direction, reported only
    alpha: float
    mather: float = 0.0  # Hausdorff displacement of the Mather nodes


def usc_sweep(L: MagneticLagrangian, c, pert: PerturbationForm, eps_list, grid: dict,
              base: SetsRun | None = None, tol_tight: float | None = None) -> list[USCRow]:
    """One-sided Hausdorff distance in ``TM`` from ``Ñ(L + ε pert)`` to ``Ñ(L)``."""
    if base is None:
        base = compute_sets(L, c, grid, tol_tight=tol_tight)
    P0 = base.sets.mane_points()
    M0 = base.sets.mather_points()
    rows = []
    for eps in eps_list:
        p = pert.scaled(eps)
        run = base if eps == 0 else compute_sets(L, c, grid, p.form, tol_tight)
        P = run.sets.mane_points()
        rows.append(USCRow(float(eps), hausdorff(P, P0, one_sided=True),
                           hausdorff(P0, P, one_sided=True), run.alpha,
                           hausdorff(run.sets.mather_points(), M0)))
    return rows
