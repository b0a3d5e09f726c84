"""Exact magnetic Lagrangians on the flat 2-torus.

A Lagrangian here is ``L(x, v) = |v|^2 / 2 + a(x) v1 + b(x) v2`` where the
1-form ``a dx1 + b dx2`` is a finite trigonometric polynomial.  Points on the
torus are arrays whose last axis has length 2 and whose coordinates are read
modulo 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(x):
    """Reduce coordinates into [0, 1)."""
    return np.mod(x, 1.0)


def torus_delta(x, y):
    """Minimal-length representative of ``y - x`` on the unit torus."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return d - np.round(d)


def torus_distance(x, y):
    return np.linalg.norm(torus_delta(x, y), axis=-1)


def torus_midpoint(x, y):
    return wrap(np.asarray(x, dtype=float) + 0.5 * torus_delta(x, y))


@dataclass(frozen=True)
class TorusPoint:
    x1: float
    x2: float

    def __post_init__(self):
        object.__setattr__(self, "x1", float(self.x1) % 1.0)
        object.__setattr__(self, "x2", float(self.x2) % 1.0)

    def __array__(self, dtype=None, copy=None):
        return np.array([self.x1, self.x2], dtype=dtype)

    def __add__(self, other):
        v = np.asarray(other, dtype=float)
        return TorusPoint(self.x1 + v[0], self.x2 + v[1])

    def distance(self, other) -> float:
        return float(torus_distance(np.asarray(self), np.asarray(other)))


@dataclass(frozen=True)
class TangentVec:
    v1: float
    v2: float

    def __array__(self, dtype=None, copy=None):
        return np.array([self.v1, self.v2], dtype=dtype)

    @property
    def norm(self) -> float:
        return math.hypot(self.v1, self.v2)


@dataclass(frozen=True)
class CohomologyClass:
    """Harmonic representative ``c1 dx1 + c2 dx2``."""

    c1: float = 0.0
    c2: float = 0.0

    def __array__(self, dtype=None, copy=None):
        return np.array([self.c1, self.c2], dtype=dtype)

    def as_form(self) -> "TrigOneForm":
        return TrigOneForm.constant(self.c1, self.c2)


def _phase_shift(order):
    # d^n/dθ^n cos θ = cos(θ + nπ/2), same for sin
    return order * np.pi / 2.0


@dataclass(frozen=True)
class TrigPoly:
    """Real trigonometric polynomial ``sum c cos(2π k·x) + s sin(2π k·x)``.

    Frequencies are stored in a canonical half plane so each term appears
    once; ``k = (0, 0)`` carries the constant term in ``cos``.
    """

    freqs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    cos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sin: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.int64).reshape(-1, 2)
        c = np.asarray(self.cos, dtype=float).reshape(-1)
        s = np.asarray(self.sin, dtype=float).reshape(-1)
        if not (len(freqs) == len(c) == len(s)):
            raise ValueError("freqs, cos and sin must have equal length")
        # canonical half plane: k1 > 0, or k1 == 0 and k2 >= 0
        flip = (freqs[:, 0] < 0) | ((freqs[:, 0] == 0) & (freqs[:, 1] < 0))
        freqs = np.where(flip[:, None], -freqs, freqs)
        s = np.where(flip, -s, s)
        s = np.where((freqs == 0).all(axis=1), 0.0, s)
        if len(freqs):
            keys, inv = np.unique(freqs, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            c = np.bincount(inv, weights=c, minlength=len(keys))
            s = np.bincount(inv, weights=s, minlength=len(keys))
            keep = (c != 0.0) | (s != 0.0)
            freqs, c, s = keys[keep], c[keep], s[keep]
        for name, val in (("freqs", freqs), ("cos", c), ("sin", s)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def from_terms(cls, terms) -> "TrigPoly":
        arr = np.asarray(terms, dtype=float).reshape(-1, 4)
        return cls(arr[:, :2].round().astype(np.int64), arr[:, 2], arr[:, 3])

    def terms(self) -> list[list[float]]:
        return [[int(k[0]), int(k[1]), float(c), float(s)]
                for k, c, s in zip(self.freqs, self.cos, self.sin)]

    @property
    def max_freq(self) -> int:
        return int(np.abs(self.freqs).max()) if len(self.freqs) else 0

    def __len__(self):
        return len(self.freqs)

    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        return TrigPoly(np.vstack([self.freqs, other.freqs]),
                        np.concatenate([self.cos, other.cos]),
                        np.concatenate([self.sin, other.sin]))

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar: float) -> "TrigPoly":
        return TrigPoly(self.freqs, self.cos * scalar, self.sin * scalar)

    __rmul__ = __mul__

    def deriv(self, x, p: int = 0, q: int = 0):
        """``∂1^p ∂2^q`` of the polynomial at points ``x`` (shape (..., 2))."""
        x = np.asarray(x, dtype=float)
        if len(self.freqs) == 0:
            return np.zeros(x.shape[:-1])
        k = self.freqs.astype(float)
        theta = TWO_PI * (x @ k.T) + _phase_shift(p + q)
        scale = (TWO_PI * k[:, 0]) ** p * (TWO_PI * k[:, 1]) ** q
        return np.cos(theta) @ (self.cos * scale) + np.sin(theta) @ (self.sin * scale)

    def __call__(self, x):
        return self.deriv(x)

    def grad(self, x):
        return np.stack([self.deriv(x, 1, 0), self.deriv(x, 0, 1)], axis=-1)

    def hess(self, x):
        h11, h12, h22 = self.deriv(x, 2, 0), self.deriv(x, 1, 1), self.deriv(x, 0, 2)
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    def spectrum(self, n: int) -> np.ndarray:
        """Complex FFT coefficient grid of shape (n, n), ``n > 2 * max_freq``."""
        if n <= 2 * self.max_freq:
            raise ValueError(f"grid size {n} aliases frequency {self.max_freq}")
        F = np.zeros((n, n), dtype=complex)
        for (k1, k2), c, s in zip(self.freqs, self.cos, self.sin):
            if k1 == 0 and k2 == 0:
                F[0, 0] += c
                continue
            z = 0.5 * (c - 1j * s)
            F[k1 % n, k2 % n] += z
            F[-k1 % n, -k2 % n] += np.conj(z)
        return F

    def on_grid(self, n: int, p: int = 0, q: int = 0) -> np.ndarray:
        """Values of ``∂1^p ∂2^q`` on the grid ``x = (i/n, j/n)``, indexed [i, j]."""
        F = self.spectrum(n)
        k = np.fft.fftfreq(n, d=1.0 / n)
        mult = (1j * TWO_PI * k[:, None]) ** p * (1j * TWO_PI * k[None, :]) ** q
        return np.real(np.fft.ifft2(F * mult) * n * n)

    @classmethod
    def from_grid(cls, samples: np.ndarray, n_freq: int, drop: float = 1e-14) -> "TrigPoly":
        """Least-squares projection of grid samples onto frequencies ``|k|_inf <= n_freq``.

        Coefficients smaller than ``drop`` times the largest one are discarded.
        """
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if samples.shape != (n, n) or n <= 2 * n_freq:
            raise ValueError("need square samples with n > 2 * n_freq")
        F = np.fft.fft2(samples) / (n * n)
        freqs, cs, ss = [], [], []
        for k1 in range(0, n_freq + 1):
            for k2 in range(-n_freq, n_freq + 1):
                if k1 == 0 and k2 < 0:
                    continue
                z = F[k1 % n, k2 % n]
                if k1 == 0 and k2 == 0:
                    freqs.append((0, 0)); cs.append(z.real); ss.append(0.0)
                else:
                    freqs.append((k1, k2)); cs.append(2 * z.real); ss.append(-2 * z.imag)
        cs, ss = np.array(cs), np.array(ss)
        big = max(np.abs(cs).max(), np.abs(ss).max())
        keep = (np.abs(cs) > drop * big) | (np.abs(ss) > drop * big)
        return cls(np.array(freqs)[keep], cs[keep], ss[keep])

    def is_zero(self) -> bool:
        return len(self.freqs) == 0


@dataclass(frozen=True)
class TrigOneForm:
    """The 1-form ``a(x) dx1 + b(x) dx2``; its dual vector field is ``(a, b)``."""

    a: TrigPoly = field(default_factory=TrigPoly)
    b: TrigPoly = field(default_factory=TrigPoly)

    @classmethod
    def zero(cls) -> "TrigOneForm":
        return cls()

    @classmethod
    def constant(cls, c1: float, c2: float) -> "TrigOneForm":
        return cls(TrigPoly([[0, 0]], [c1], [0.0]), TrigPoly([[0, 0]], [c2], [0.0]))

    @classmethod
    def from_terms(cls, a_terms=(), b_terms=()) -> "TrigOneForm":
        return cls(TrigPoly.from_terms(a_terms), TrigPoly.from_terms(b_terms))

    @property
    def max_freq(self) -> int:
        return max(self.a.max_freq, self.b.max_freq)

    def __add__(self, other: "TrigOneForm") -> "TrigOneForm":
        return TrigOneForm(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "TrigOneForm") -> "TrigOneForm":
        return TrigOneForm(self.a - other.a, self.b - other.b)

    def __mul__(self, scalar: float) -> "TrigOneForm":
        return TrigOneForm(self.a * scalar, self.b * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def field(self, x):
        """Dual vector field ``(a(x), b(x))``."""
        return np.stack([self.a(x), self.b(x)], axis=-1)

    def jacobian(self, x):
        """Rows are ``∇a`` and ``∇b``."""
        return np.stack([self.a.grad(x), self.b.grad(x)], axis=-2)

    def __call__(self, x, v):
        return np.sum(self.field(x) * np.asarray(v, dtype=float), axis=-1)

    def curl(self, x):
        """Scalar magnetic field ``∂1 b - ∂2 a``."""
        return self.b.deriv(x, 1, 0) - self.a.deriv(x, 0, 1)

    def curl_grad(self, x):
        return np.stack([self.b.deriv(x, 2, 0) - self.a.deriv(x, 1, 1),
                         self.b.deriv(x, 1, 1) - self.a.deriv(x, 0, 2)], axis=-1)

    def curl_on_grid(self, n: int) -> np.ndarray:
        return self.b.on_grid(n, 1, 0) - self.a.on_grid(n, 0, 1)

    def is_closed(self, grid_n: int = 64, tol: float = 1e-12) -> bool:
        n = max(grid_n, 2 * self.max_freq + 2)
        return float(np.abs(self.curl_on_grid(n)).max()) <= tol

    def to_json(self) -> dict:
        return {"a": self.a.terms(), "b": self.b.terms()}

    @classmethod
    def from_json(cls, obj) -> "TrigOneForm":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text())
        return cls.from_terms(obj.get("a", []), obj.get("b", []))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def is_zero(self) -> bool:
        return self.a.is_zero() and self.b.is_zero()


@dataclass(frozen=True)
class MagneticLagrangian:
    """``L(x, v) = |v|^2/2 + η_x(v)`` with ``η`` the base form."""

    base_form: TrigOneForm = field(default_factory=TrigOneForm)

    def with_form(self, extra: TrigOneForm) -> "MagneticLagrangian":
        return MagneticLagrangian(self.base_form + extra)

    def __call__(self, x, v):
        return eval_lagrangian(self, x, v)


def eval_lagrangian(L: MagneticLagrangian, x, v):
    v = np.asarray(v, dtype=float)
    return 0.5 * np.sum(v * v, axis=-1) + L.base_form(x, v)


def eval_energy(L: MagneticLagrangian, x, v):
    # L_v(v) - L: the linear term cancels exactly
    v = np.asarray(v, dtype=float)
    return 0.5 * np.sum(v * v, axis=-1)


def compute_e0(L: MagneticLagrangian, grid_n: int) -> float:
    """``-min_x L(x, 0)`` over an ``grid_n`` x ``grid_n`` grid."""
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    g = np.arange(grid_n) / grid_n
    xs = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = eval_lagrangian(L, xs, np.zeros_like(xs))
    return float(-vals.min()) + 0.0


@dataclass(frozen=True)
class Partials:
    L_v: np.ndarray
    L_x: np.ndarray
    L_vv: np.ndarray
    L_vx: np.ndarray
    L_xx: np.ndarray


def eval_partials(L: MagneticLagrangian, x, v) -> Partials:
    """Closed-form partial derivatives at a single point or a batch.

    ``L_vx[..., i, j] = ∂²L/∂v_i∂x_j``; ``L_xv`` is its transpose.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    form = L.base_form
    A = form.field(x)
    J = form.jacobian(x)
    L_x = np.einsum("...ij,...i->...j", J, v)
    L_xx = form.a.hess(x) * v[..., 0, None, None] + form.b.hess(x) * v[..., 1, None, None]
    L_vv = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
    return Partials(L_v=v + A, L_x=L_x, L_vv=L_vv, L_vx=J, L_xx=L_xx)


def _order_sups(form: TrigOneForm, k_max: int, grid_n: int) -> np.ndarray:
    # sup over x and over multi-indices of a fixed order of |∂^α X(x)|
    n = max(grid_n, 2 * form.max_freq + 2)
    Fa, Fb = form.a.spectrum(n), form.b.spectrum(n)
    freq = 1j * TWO_PI * np.fft.fftfreq(n, d=1.0 / n)
    sups = np.zeros(k_max + 1)
    for order in range(k_max + 1):
        for p in range(order + 1):
            mult = freq[:, None] ** p * freq[None, :] ** (order - p)
            da = np.real(np.fft.ifft2(Fa * mult)) * n * n
            db = np.real(np.fft.ifft2(Fb * mult)) * n * n
            sups[order] = max(sups[order], float(np.sqrt(da * da + db * db).max()))
    return sups


def ck_norm(form: TrigOneForm, k: int, grid_n: int = 256) -> float:
    """C^k norm of the dual vector field, by sampling every derivative up to order k."""
    return float(_order_sups(form, k, grid_n).max())


@dataclass(frozen=True)
class GammaDistance:
    value: float
    tail_bound: float

    def __float__(self):
        return self.value


def gamma_metric(w1: TrigOneForm, w2: TrigOneForm, k_max: int = 8,
                 grid_n: int = 256) -> GammaDistance:
    """Truncated ``sum_k arctan(|w1 - w2|_k) / 2^k`` with its tail bound."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    norms = np.maximum.accumulate(_order_sups(w1 - w2, k_max, grid_n))
    value = float(np.sum(np.arctan(norms) / 2.0 ** np.arange(k_max + 1)))
    return GammaDistance(value, math.pi / 2.0 ** (k_max + 1))
