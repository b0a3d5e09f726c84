"""Euler-Lagrange (magnetic) flow, periodic orbits and monodromy.

For ``L = |v|^2/2 + η`` the equations of motion are ``x' = v`` and
``v' = ω(x) (v2, -v1)`` with ``ω = ∂1 b - ∂2 a``.  Only ``ω`` enters, so
adding a closed form to ``η`` leaves every trajectory unchanged.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .lagrangian import TWO_PI, MagneticLagrangian, TrigOneForm, eval_partials, torus_delta


class VelocityCapExceeded(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


class DegenerateSection(ValueError):
    pass


class ManifoldEscape(RuntimeError):
    pass


def _curl_terms(form: TrigOneForm):
    """Flat term list ``(freqs, cos, sin)`` of the scalar field ``∂1 b - ∂2 a``."""
    a, b = form.a, form.b
    kb, ka = b.freqs.astype(float), a.freqs.astype(float)
    # ∂1 of c cos + s sin is 2πk1 (s cos - c sin)
    freqs = np.vstack([kb, ka]) if len(ka) + len(kb) else np.zeros((0, 2))
    cos = np.concatenate([TWO_PI * kb[:, 0] * b.sin, -TWO_PI * ka[:, 1] * a.sin])
    sin = np.concatenate([-TWO_PI * kb[:, 0] * b.cos, TWO_PI * ka[:, 1] * a.cos])
    return np.ascontiguousarray(freqs, dtype=float), cos, sin


def el_vector_field(L: MagneticLagrangian, x, v):
    """``(x', v')`` of the Euler-Lagrange flow."""
    v = np.asarray(v, dtype=float)
    w = L.base_form.curl(x)
    return v.copy(), np.stack([w * v[..., 1], -w * v[..., 0]], axis=-1)


def el_vector_field_generic(L: MagneticLagrangian, x, v):
    """Same field from ``L_vv^{-1} (L_x - L_vx v)`` using the closed-form partials.

    Here ``L_vx v`` is the total derivative ``d/dt L_v`` minus its ``v'`` part,
    i.e. ``(∂L_v/∂x) v``.
    """
    P = eval_partials(L, x, v)
    rhs = P.L_x - np.einsum("...ij,...j->...i", P.L_vx, np.asarray(v, dtype=float))
    return np.asarray(v, dtype=float), np.linalg.solve(P.L_vv, rhs[..., None])[..., 0]


@dataclass(frozen=True)
class OrbitSegment:
    h: float
    t: np.ndarray
    states: np.ndarray  # (N+1, 4): lifted x1, x2, then v1, v2

    @property
    def lift(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def positions(self) -> np.ndarray:
        return np.mod(self.states[:, :2], 1.0)

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 2:]

    @property
    def energy(self) -> np.ndarray:
        v = self.velocities
        return 0.5 * (v * v).sum(1)

    @property
    def energy_drift(self) -> float:
        """Largest energy deviation per unit time."""
        T = max(float(self.t[-1] - self.t[0]), 1e-300)
        return float(np.abs(self.energy - self.energy[0]).max() / T)

    def end(self):
        return self.positions[-1], self.velocities[-1]

    def to_csv(self, header: str = "") -> str:
        rows = [header] if header else []
        rows.append("t,x1,x2,v1,v2,E")
        for t, (x1, x2), (v1, v2), E in zip(self.t, self.positions, self.velocities, self.energy):
            rows.append(f"{t:.17g},{x1:.17g},{x2:.17g},{v1:.17g},{v2:.17g},{E:.17g}")
        return "\n".join(rows) + "\n"


def _run(L, y0, h, steps, with_var=False, v_cap=math.inf):
    kf, cc, cs = _curl_terms(L.base_form)
    return _kernels.rk4(kf, cc, cs, np.asarray(y0, dtype=float), float(h), int(steps),
                        with_var, float(v_cap))


def integrate(L: MagneticLagrangian, x0, v0, T: float, h: float,
              v_cap: float = math.inf) -> OrbitSegment:
    """Classical RK4 with the step shrunk so that ``T`` is a whole number of steps."""
    if not (T > 0 and h > 0):
        raise ValueError("T and h must be positive")
    steps = max(1, math.ceil(T / h - 1e-9))
    he = T / steps
    y0 = np.concatenate([np.asarray(x0, float), np.asarray(v0, float)])
    traj, _, ok = _run(L, y0, he, steps, v_cap=v_cap)
    if not ok:
        raise VelocityCapExceeded(f"|v| exceeded {v_cap} at t={he * (len(traj) - 1):.6g}")
    return OrbitSegment(he, he * np.arange(steps + 1), traj)


def _flow_state(L, y, dt):
    _, y1, _ = _run(L, y, dt, 1)
    return y1


# ---------------------------------------------------------------- sections

@dataclass(frozen=True)
class Section:
    """The circle ``x[axis] = level (mod 1)`` crossed in direction ``sign``."""

    axis: int
    level: float
    sign: int

    @property
    def other(self) -> int:
        return 1 - self.axis

    def chart(self, y) -> np.ndarray:
        """Section coordinates ``(other coordinate, velocity angle)``."""
        return np.array([y[self.other], math.atan2(y[3], y[2])])

    def state(self, p, speed: float) -> np.ndarray:
        y = np.empty(4)
        y[self.axis] = self.level
        y[self.other] = p[0]
        y[2], y[3] = speed * math.cos(p[1]), speed * math.sin(p[1])
        return y


def choose_section(x, v, axis: int | None = None) -> Section:
    x, v = np.asarray(x, float), np.asarray(v, float)
    speed = float(np.hypot(*v))
    if speed <= 0:
        raise ValueError("seed must have positive energy")
    if axis is None:
        axis = 0 if abs(v[0]) >= abs(v[1]) else 1
    if abs(v[axis]) < 1e-6 * speed:
        raise DegenerateSection(f"flow is tangent to x{axis + 1} = const at the seed")
    return Section(axis, float(x[axis]), 1 if v[axis] > 0 else -1)


def first_return(L: MagneticLagrangian, sec: Section, y0, h: float, t_max: float,
                 backward: bool = False):
    """Next crossing of ``sec`` along the orbit of ``y0``: (state, time).

    The crossing time is located inside the last step by root finding on a
    partial RK4 step, so it is accurate to the integrator order.
    """
    y = np.asarray(y0, dtype=float).copy()
    dt = -h if backward else h
    sign = -sec.sign if backward else sec.sign
    t = 0.0
    chunk = max(64, int(1.0 / h))
    ax = sec.axis
    while abs(t) < t_max:
        traj, _, _ = _run(L, y, dt, chunk)
        u = traj[:, ax] - sec.level
        if sign > 0:
            lev = np.floor(u)
            hit = np.flatnonzero(lev[1:] > lev[:-1])
        else:
            lev = np.ceil(u)
            hit = np.flatnonzero(lev[1:] < lev[:-1])
        if len(hit):
            i = int(hit[0])
            target = sec.level + lev[i + 1]
            ys = traj[i].copy()

            def g(s):
                return _flow_state(L, ys, s)[ax] - target

            s = brentq(g, 0.0, dt, xtol=1e-15) if dt > 0 else -brentq(
                lambda r: g(-r), 0.0, -dt, xtol=1e-15)
            y_hit = _flow_state(L, ys, s) if s != 0 else ys.copy()
            return y_hit, t + i * dt + s
        y = traj[-1].copy()
        t += chunk * dt
    raise NonConvergence(f"no return to the section within t={t_max}")


def return_map(L, sec: Section, p, speed: float, h: float, t_max: float,
               backward: bool = False):
    """Poincaré map in section coordinates, with the lift shift and return time."""
    y0 = sec.state(p, speed)
    y1, T = first_return(L, sec, y0, h, t_max, backward)
    q = sec.chart(y1)
    q_wrapped = np.array([y1[sec.other] % 1.0, q[1]])
    return q_wrapped, T, y1


def _chart_residual(q, p):
    d = np.asarray(q, float) - np.asarray(p, float)
    d[0] -= round(d[0])
    d[1] = (d[1] + math.pi) % TWO_PI - math.pi
    return d


@dataclass(frozen=True)
class PeriodicOrbit:
    period: float
    segment: OrbitSegment
    closure_residual: float
    monodromy: np.ndarray
    section: Section
    iterations: int = 0
    lagrangian: MagneticLagrangian = field(default=None, repr=False, compare=False)

    @property
    def x0(self) -> np.ndarray:
        return self.segment.positions[0]

    @property
    def v0(self) -> np.ndarray:
        return self.segment.velocities[0]

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.v0))

    def monodromy_json(self) -> str:
        return json.dumps({"period": self.period,
                           "monodromy": [float(a) for a in self.monodromy.reshape(-1)]})


def find_periodic_orbit(L: MagneticLagrangian, seed, section=None, max_iter: int = 30,
                        tol_orbit: float = 1e-9, h: float = 1e-3, t_max: float | None = None,
                        fd_step: float = 1e-6) -> PeriodicOrbit:
    """Newton shooting on the first-return map of a coordinate section.

    ``seed`` is ``(x, v)``.  The unknowns are the free coordinate on the
    section and the velocity angle; the speed is held at the seed's.  The
    linear solves use least squares, which copes with the continuous
    symmetries of integrable examples.
    """
    x, v = (np.asarray(s, float) for s in seed)
    speed = float(np.hypot(*v))
    if speed <= 0:
        raise ValueError("seed must have positive energy")
    sec = section if isinstance(section, Section) else choose_section(x, v, section)
    if t_max is None:
        t_max = 50.0 / speed
    p = sec.chart(np.concatenate([x, v]))
    p[0] %= 1.0
    res_norm = np.inf
    for it in range(1, max_iter + 1):
        q, T, _ = return_map(L, sec, p, speed, h, t_max)
        r = _chart_residual(q, p)
        res_norm = float(np.linalg.norm(r))
        if res_norm <= tol_orbit:
            break
        J = np.empty((2, 2))
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = fd_step
            qp, _, _ = return_map(L, sec, p + dp, speed, h, t_max)
            qm, _, _ = return_map(L, sec, p - dp, speed, h, t_max)
            J[:, j] = (_chart_residual(qp, p + dp) - _chart_residual(qm, p - dp)) / (2 * fd_step)
        step = np.linalg.lstsq(J, -r, rcond=1e-8)[0]
        p = p + step
        p[0] %= 1.0
    else:
        raise NonConvergence(f"shooting residual {res_norm:.3e} after {max_iter} iterations")
    y0 = sec.state(p, speed)
    orbit = _close(L, sec, y0, T, h, it)
    if orbit.closure_residual > max(tol_orbit, 1e-12) * 10:
        raise NonConvergence(f"closure residual {orbit.closure_residual:.3e}")
    return orbit


def _close(L, sec, y0, T, h, iterations=0) -> PeriodicOrbit:
    seg = integrate(L, y0[:2], y0[2:], T, h)
    d = torus_delta(seg.lift[0], seg.lift[-1])
    dv = seg.velocities[-1] - seg.velocities[0]
    resid = float(np.sqrt(d @ d + dv @ dv))
    M = _monodromy(L, y0, T, h)
    return PeriodicOrbit(float(T), seg, resid, M, sec, iterations, L)


def periodic_orbit_from_state(L: MagneticLagrangian, x0, v0, T: float, h: float = 1e-3,
                              axis: int | None = None) -> PeriodicOrbit:
    """Wrap a known closed orbit (no shooting)."""
    sec = choose_section(x0, v0, axis)
    return _close(L, sec, np.concatenate([np.asarray(x0, float), np.asarray(v0, float)]), T, h)


def _monodromy(L, y0, T, h):
    steps = max(1, math.ceil(T / h - 1e-9))
    Y = np.concatenate([np.asarray(y0, float)[:4], np.eye(4).reshape(-1)])
    _, yT, _ = _run(L, Y, T / steps, steps, with_var=True)
    return yT[4:].reshape(4, 4)


def monodromy(L: MagneticLagrangian, orbit: PeriodicOrbit, h: float | None = None) -> np.ndarray:
    """Linearized period map on ``(δx, δv)`` from the variational equations."""
    y0 = np.concatenate([orbit.segment.lift[0], orbit.v0])
    return _monodromy(L, y0, orbit.period, orbit.segment.h if h is None else h)


# ---------------------------------------------------------------- spectra

@dataclass(frozen=True)
class Classification:
    kind: str  # "hyperbolic" | "elliptic" | "degenerate"
    multipliers: np.ndarray
    nontrivial: np.ndarray
    trivial_ok: bool

    def exponents(self, T: float) -> np.ndarray:
        return np.log(np.abs(self.nontrivial)) / T


def classify_hyperbolicity(M, tol_spec: float = 1e-3) -> Classification:
    mu = np.linalg.eigvals(np.asarray(M, float))
    order = np.argsort(np.abs(mu - 1.0), kind="stable")
    trivial, rest = mu[order[:2]], mu[order[2:]]
    trivial_ok = bool(np.all(np.abs(trivial - 1.0) <= tol_spec))
    mod = np.abs(rest)
    if not trivial_ok:
        kind = "degenerate"
    elif mod.max() > 1.0 + tol_spec:
        kind = "hyperbolic"
    elif np.all(np.abs(mod - 1.0) <= tol_spec) and np.all(np.abs(rest.imag) > tol_spec):
        kind = "elliptic"
    else:
        kind = "degenerate"
    return Classification(kind, mu, rest, trivial_ok)


def symplectic_defect(M) -> tuple[float, float]:
    """``(|det M - 1|, spectrum asymmetry)``; the latter compares ``μ`` with ``1/μ``."""
    M = np.asarray(M, float)
    mu = np.linalg.eigvals(M)
    inv = 1.0 / mu
    asym = max(float(np.min(np.abs(inv - m) / max(1.0, abs(m)))) for m in mu)
    return abs(float(np.linalg.det(M)) - 1.0), asym


def symplectic_char_defect(M) -> float:
    """Palindromic defect of the characteristic polynomial (``μ ↦ 1/μ`` symmetry)."""
    c = np.poly(np.asarray(M, float)).real
    return float(np.abs(c - c[::-1]).max())


# ---------------------------------------------------------------- manifolds

@dataclass(frozen=True)
class ManifoldSlices:
    fixed_point: np.ndarray  # section coordinates
    multipliers: tuple
    unstable: np.ndarray  # polylines in section coordinates
    stable: np.ndarray
    crossings: np.ndarray  # (k, 2)
    angles: np.ndarray  # radians in (0, π/2]
    transversal: bool


def _section_jacobian(L, sec, p, speed, h, t_max, fd=1e-6):
    J = np.empty((2, 2))
    for j in range(2):
        dp = np.zeros(2)
        dp[j] = fd
        qp, _, _ = return_map(L, sec, p + dp, speed, h, t_max)
        qm, _, _ = return_map(L, sec, p - dp, speed, h, t_max)
        J[:, j] = _chart_residual(qp, qm) / (2 * fd)
    return J


def _grow(L, sec, p, speed, direction, mu, arc_length, n_points, h, t_max, backward,
          seed_size, max_iter=60):
    # fundamental domain [s, s·|mu|^m) along the eigendirection, pushed forward by
    # the m-th iterate; m = 2 keeps a flipping (negative) multiplier on one side.
    # Points are kept in the lift (unwrapped against their own previous iterate).
    m = 1 if mu > 0 else 2
    base = seed_size * np.power(abs(mu), np.linspace(0.0, m, n_points, endpoint=False))
    cur = p + base[:, None] * direction
    curve = [cur]
    for _ in range(max_iter):
        nxt = []
        for q in cur:
            for _ in range(m):
                try:
                    r, _, _ = return_map(L, sec, q, speed, h, t_max, backward)
                except (NonConvergence, VelocityCapExceeded) as exc:
                    raise ManifoldEscape(f"no return to the section: {exc}") from exc
                q = q + _chart_residual(r, q)
            nxt.append(q)
        cur = np.array(nxt)
        curve.append(cur)
        poly = np.vstack(curve)
        if np.linalg.norm(np.diff(poly, axis=0), axis=1).sum() >= arc_length:
            return poly
    raise ManifoldEscape(f"arc length {arc_length} not reached in {max_iter} iterates")


_CHART_PERIOD = np.array([1.0, 2.0 * math.pi])


def _segment_crossings(A, B, exclude, r_min):
    """Transverse intersections of polylines ``A`` and ``B`` with their angles."""
    a0, da = A[:-1, None, :], np.diff(A, axis=0)[:, None, :]
    b0, db = B[None, :-1, :], np.diff(B, axis=0)[None, :, :]
    den = da[..., 0] * db[..., 1] - da[..., 1] * db[..., 0]
    w = b0 - a0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[..., 0] * db[..., 1] - w[..., 1] * db[..., 0]) / den
        t = (w[..., 0] * da[..., 1] - w[..., 1] * da[..., 0]) / den
    hit = (den != 0) & (s >= 0) & (s < 1) & (t >= 0) & (t < 1)
    ii, jj = np.nonzero(hit)
    x = A[ii] + s[ii, jj, None] * np.diff(A, axis=0)[ii]
    d = np.linalg.norm(x[:, None, :] - np.asarray(exclude)[None], axis=-1).min(1) if len(x) else x
    keep = d >= r_min if len(x) else np.zeros(0, bool)
    ua, ub = np.diff(A, axis=0)[ii[keep]], np.diff(B, axis=0)[jj[keep]]
    cosang = np.abs((ua * ub).sum(1)) / (np.linalg.norm(ua, axis=1) * np.linalg.norm(ub, axis=1))
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(A, axis=0), axis=1))])
    along = arc[ii[keep]] + s[ii[keep], jj[keep]] * np.linalg.norm(ua, axis=1)
    return x[keep], np.arccos(np.minimum(1.0, cosang)), along


def invariant_manifold_slices(L: MagneticLagrangian, orbit: PeriodicOrbit, arc_length: float,
                              n_points: int = 40, h: float | None = None,
                              angle_tol: float = 1e-2, seed_size: float = 1e-5,
                              tol_spec: float = 1e-3) -> ManifoldSlices:
    """Stable and unstable curves of the section map through the orbit's fixed point.

    Branches on both sides of the fixed point are grown to ``arc_length``
    in the lifted section coordinates (free coordinate, velocity angle).
    Crossings away from the fixed point and its lattice translates are
    reported with their angles, so homoclinics winding around the torus count.
    """
    cls = classify_hyperbolicity(orbit.monodromy, tol_spec)
    if cls.kind != "hyperbolic":
        raise ValueError(f"orbit is {cls.kind}, not hyperbolic")
    h = orbit.segment.h if h is None else h
    sec = orbit.section
    p = sec.chart(np.concatenate([orbit.x0, orbit.v0]))
    t_max = 4.0 * orbit.period + 1.0
    J = _section_jacobian(L, sec, p, orbit.speed, h, t_max)
    lam, vec = np.linalg.eig(J)
    lam, vec = lam.real, vec.real
    iu, is_ = int(np.argmax(np.abs(lam))), int(np.argmin(np.abs(lam)))
    mu_u, mu_s = lam[iu], lam[is_]
    eu, es = vec[:, iu] / np.linalg.norm(vec[:, iu]), vec[:, is_] / np.linalg.norm(vec[:, is_])
    grow_u, grow_s = mu_u, 1.0 / mu_s
    U, S = [], []
    for sgn in (1.0, -1.0):
        U.append(_grow(L, sec, p, orbit.speed, sgn * eu, grow_u, arc_length, n_points, h, t_max,
                       False, seed_size))
        S.append(_grow(L, sec, p, orbit.speed, sgn * es, grow_s, arc_length, n_points, h, t_max,
                       True, seed_size))
    shifts = np.array([(i, j) for i in (-2, -1, 0, 1, 2) for j in (-1, 0, 1)]) * _CHART_PERIOD
    fixed = p + shifts
    pts, ang, arc = [np.zeros((0, 2))], [np.zeros(0)], [np.zeros(0)]
    r_min = 50 * seed_size
    for u in U:
        for s_ in S:
            for sh in shifts:
                c, a, t = _segment_crossings(u, s_ + sh, fixed, r_min)
                pts.append(c)
                ang.append(a)
                arc.append(t)
    arc = np.concatenate(arc)
    order = np.argsort(arc, kind="stable")  # primary homoclinic crossings first
    pts, ang = np.vstack(pts)[order], np.concatenate(ang)[order]
    return ManifoldSlices(p, (float(mu_u), float(mu_s)), np.vstack(U), np.vstack(S), pts, ang,
                          bool(len(ang) > 0 and np.all(ang > angle_tol)))

