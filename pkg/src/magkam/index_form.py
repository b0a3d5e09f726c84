"""Index form (second variation of the action) along periodic orbits.

For variations ``ξ, ζ`` vanishing at both ends,

    I(ξ, ζ) = ∫ ξ'·L_vv ζ' + ξ'·L_vx ζ + ξ·L_xv ζ' + ξ·L_xx ζ dt,

with ``L_vx[i, j] = ∂²L/∂v_i∂x_j``.  Fields are continuous and piecewise
linear in time on nodes that coincide with orbit samples, so each
integrand is smooth on every node interval and the trapezoid rule on the
orbit samples is second-order accurate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .flow import (Classification, PeriodicOrbit, classify_hyperbolicity, find_periodic_orbit,
                   invariant_manifold_slices, ManifoldEscape, NonConvergence)
from .lagrangian import MagneticLagrangian, eval_lagrangian, eval_partials
from .perturbation import PerturbationForm


class DimensionMismatch(ValueError):
    pass


class ProfileMismatch(ValueError):
    pass


@dataclass(frozen=True)
class OrbitFieldBasis:
    orbit: PeriodicOrbit = field(repr=False)
    node_idx: np.ndarray  # sample indices of the nodes, first 0 and last N

    @property
    def times(self) -> np.ndarray:
        return self.orbit.segment.t[self.node_idx]

    @property
    def m(self) -> int:
        return len(self.node_idx) - 1

    @property
    def size(self) -> int:
        return 2 * (self.m - 1)

    def normal(self, t_idx=None) -> np.ndarray:
        """Unit normal ``N = J γ'/|γ'|`` at samples."""
        v = self.orbit.segment.velocities if t_idx is None else self.orbit.segment.velocities[t_idx]
        n = np.stack([-v[..., 1], v[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def transverse(self, w, t_idx=None) -> np.ndarray:
        """``π_N w`` as a scalar (coordinate along the unit normal)."""
        return (np.asarray(w) * self.normal(t_idx)).sum(-1)

    def field(self, k: int) -> np.ndarray:
        """Node values of the ``k``-th hat field: node ``k // 2 + 1``, direction ``k % 2``."""
        vals = np.zeros((self.m + 1, 2))
        vals[k // 2 + 1, k % 2] = 1.0
        return vals

    def fields(self):
        return [self.field(k) for k in range(self.size)]

    def unit_transverse(self, first: int, last: int) -> np.ndarray:
        """Field equal to the unit normal on nodes ``first..last`` and zero at the ends."""
        if not 1 <= first <= last <= self.m - 1:
            raise ValueError("plateau must lie strictly inside the orbit")
        vals = np.zeros((self.m + 1, 2))
        vals[first:last + 1] = self.normal(self.node_idx[first:last + 1])
        return vals

    def tangent_field(self, k: int) -> np.ndarray:
        vals = np.zeros((self.m + 1, 2))
        v = self.orbit.segment.velocities[self.node_idx[k]]
        vals[k] = v / np.linalg.norm(v)
        return vals

    def sample(self, vals):
        """Values and time derivatives of a node field at every orbit sample.

        Derivatives are returned per node interval as ``(m, 2)`` slopes;
        values as ``(N+1, 2)``.
        """
        vals = np.asarray(vals, float)
        if vals.shape != (self.m + 1, 2):
            raise DimensionMismatch(f"expected node values of shape {(self.m + 1, 2)}")
        if np.any(vals[0] != 0) or np.any(vals[-1] != 0):
            raise DimensionMismatch("fields must vanish at both ends")
        t = self.orbit.segment.t
        tn = self.times
        xi = np.stack([np.interp(t, tn, vals[:, i]) for i in range(2)], axis=-1)
        slopes = np.diff(vals, axis=0) / np.diff(tn)[:, None]
        return xi, slopes

    def dwell_time(self, vals, level: float = 0.5) -> float:
        """Time during which ``|π_N ξ| > level`` (trapezoid on the samples)."""
        xi, _ = self.sample(vals)
        on = (np.abs(self.transverse(xi)) > level).astype(float)
        dt = np.diff(self.orbit.segment.t)
        return float(np.sum(0.5 * (on[1:] + on[:-1]) * dt))


def make_basis(orbit: PeriodicOrbit, m: int = 32) -> OrbitFieldBasis:
    N = len(orbit.segment.t) - 1
    if m > N:
        raise ValueError("more nodes than orbit samples")
    idx = np.unique(np.round(np.linspace(0, N, m + 1)).astype(int))
    return OrbitFieldBasis(orbit, idx)


def _intervals(basis: OrbitFieldBasis):
    for j in range(basis.m):
        yield j, slice(basis.node_idx[j], basis.node_idx[j + 1] + 1)


def index_form(L: MagneticLagrangian, basis: OrbitFieldBasis, xi, zeta) -> float:
    seg = basis.orbit.segment
    P = eval_partials(L, seg.positions, seg.velocities)
    a, da = basis.sample(xi)
    b, db = basis.sample(zeta)
    total = 0.0
    for j, sl in _intervals(basis):
        A, B = a[sl], b[sl]
        dA, dB = da[j], db[j]
        f = (np.einsum("i,nij,j->n", dA, P.L_vv[sl], dB)
             + np.einsum("i,nij,nj->n", dA, P.L_vx[sl], B)
             + np.einsum("ni,nij,j->n", A, np.swapaxes(P.L_vx[sl], -1, -2), dB)
             + np.einsum("ni,nij,nj->n", A, P.L_xx[sl], B))
        total += np.trapezoid(f, seg.t[sl])
    return float(total)


def index_matrix(L: MagneticLagrangian, basis: OrbitFieldBasis, fields=None) -> np.ndarray:
    fields = basis.fields() if fields is None else fields
    k = len(fields)
    M = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            M[i, j] = M[j, i] = index_form(L, basis, fields[i], fields[j])
    return M


def action(L: MagneticLagrangian, basis: OrbitFieldBasis, xi=None, delta: float = 0.0) -> float:
    """Action of ``γ + δ ξ`` with the same quadrature as :func:`index_form`."""
    seg = basis.orbit.segment
    x, v = seg.lift, seg.velocities
    if xi is not None:
        a, da = basis.sample(xi)
        x = x + delta * a
    total = 0.0
    for j, sl in _intervals(basis):
        vv = v[sl] if xi is None else v[sl] + delta * da[j]
        total += np.trapezoid(eval_lagrangian(L, x[sl], vv), seg.t[sl])
    return float(total)


@dataclass(frozen=True)
class SecondVariationReport:
    index_value: float
    second_difference: float
    gap: float
    first_variation: float
    delta: float


def second_variation_consistency(L: MagneticLagrangian, basis: OrbitFieldBasis, xi,
                                 delta: float = 1e-3) -> SecondVariationReport:
    A0 = action(L, basis)
    Ap = action(L, basis, xi, delta)
    Am = action(L, basis, xi, -delta)
    second = (Ap + Am - 2.0 * A0) / delta ** 2
    first = (Ap - Am) / (2.0 * delta)
    I = index_form(L, basis, xi, xi)
    return SecondVariationReport(I, float(second), abs(I - second), float(first), delta)


@dataclass(frozen=True)
class IndexGapReport:
    gaps: np.ndarray  # Ĩ(ξ, ξ) - I(ξ, ξ) per basis field
    test_gap: float
    test_dwell: float
    epsilon: float
    K: float
    f_on_orbit: float
    min_speed_projection: float  # min over the orbit of <X(γ), γ'>

    @property
    def test_bound(self) -> float:
        return self.epsilon * self.K * self.test_dwell

    def to_dict(self):
        return {"basis_size": int(len(self.gaps)), "gaps": [float(g) for g in self.gaps],
                "test_gap": self.test_gap, "lambda_time": self.test_dwell, "K": self.K,
                "epsilon": self.epsilon, "f_on_orbit": self.f_on_orbit,
                "min_X_dot_velocity": self.min_speed_projection}


def perturbed_index_gap(L: MagneticLagrangian, pert: PerturbationForm, basis: OrbitFieldBasis,
                        K: float, plateau=None) -> IndexGapReport:
    """``Ĩ(ξ, ξ) - I(ξ, ξ)`` for every basis field and for a unit-transverse test field."""
    if pert.profile != "quadratic":
        raise ProfileMismatch("the index gap needs the quadratic transverse profile")
    Lp = L.with_form(pert.form)
    gaps = np.array([index_form(Lp, basis, f, f) - index_form(L, basis, f, f)
                     for f in basis.fields()])
    if plateau is None:
        plateau = (2, basis.m - 2)
    test = basis.unit_transverse(*plateau)
    tg = index_form(Lp, basis, test, test) - index_form(L, basis, test, test)
    seg = basis.orbit.segment
    proj = float((pert.lift(seg.positions) * seg.velocities).sum(-1).min())
    return IndexGapReport(gaps, float(tg), basis.dwell_time(test), pert.epsilon, float(K),
                          pert.f_on_set, proj)


@dataclass(frozen=True)
class CrossCheckRow:
    epsilon: float
    kind: str
    multipliers: list
    exponents: list
    period: float
    min_gap: float
    predicted_hyperbolic: bool
    crossings: int = 0
    min_angle: float | None = None
    primary_angle: float | None = None  # first crossing along the unstable branch
    transversal: bool | None = None
    note: str = ""

    @property
    def agrees(self) -> bool:
        return self.predicted_hyperbolic == (self.kind == "hyperbolic")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["agrees"] = self.agrees
        return d


def hyperbolicity_cross_check(L: MagneticLagrangian, pert: PerturbationForm, orbit: PeriodicOrbit,
                              eps_list, K: float, m: int = 32, tol_spec: float = 1e-3,
                              manifolds: bool = False, arc_length: float = 0.05,
                              n_points: int = 24, angle_tol: float = 1e-2) -> list[CrossCheckRow]:
    """Monodromy classification of the re-converged orbit as ``ε`` scans.

    The index prediction is "hyperbolic" when every transverse basis gap is
    positive, i.e. the perturbation strictly stiffens the second variation
    in the normal direction.
    """
    rows = []
    h = orbit.segment.h
    for eps in eps_list:
        p = pert.scaled(eps)
        Lp = L.with_form(p.form)
        try:
            o = find_periodic_orbit(Lp, (orbit.x0, orbit.v0), section=orbit.section.axis, h=h)
        except NonConvergence as exc:
            rows.append(CrossCheckRow(float(eps), "lost", [], [], float("nan"), float("nan"),
                                      eps > 0, note=str(exc)))
            continue
        cls = classify_hyperbolicity(o.monodromy, tol_spec)
        basis = make_basis(o, m)
        N = basis.normal(basis.node_idx)
        gaps = []
        for j in range(1, basis.m):
            vals = np.zeros((basis.m + 1, 2))
            vals[j] = N[j]
            gaps.append(index_form(Lp, basis, vals, vals) - index_form(L, basis, vals, vals))
        min_gap = float(np.min(gaps))
        row = dict(epsilon=float(eps), kind=cls.kind,
                   multipliers=[complex(z) for z in cls.multipliers],
                   exponents=[float(e) for e in cls.exponents(o.period)], period=o.period,
                   min_gap=min_gap, predicted_hyperbolic=bool(min_gap > 0))
        if manifolds and cls.kind == "hyperbolic":
            try:
                ms = invariant_manifold_slices(Lp, o, arc_length, n_points, angle_tol=angle_tol)
                row.update(crossings=int(len(ms.angles)),
                           min_angle=float(ms.angles.min()) if len(ms.angles) else None,
                           primary_angle=float(ms.angles[0]) if len(ms.angles) else None,
                           transversal=ms.transversal if len(ms.angles) else None)
            except ManifoldEscape as exc:
                row.update(note=str(exc))
        rows.append(CrossCheckRow(**row))
    return rows


def report_json(gap: IndexGapReport, rows: list[CrossCheckRow], header: dict | None = None) -> str:
    out = dict(header or {})
    out.update(gap.to_dict())
    out["floquet"] = [{"epsilon": r.epsilon, "exponents": r.exponents, "kind": r.kind}
                      for r in rows]
    out["classification"] = rows[-1].kind if rows else None
    return json.dumps(out, sort_keys=True, default=str)
