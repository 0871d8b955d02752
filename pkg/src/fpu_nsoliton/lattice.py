"""Lattice states, interaction potentials and the Hamiltonian structure.

A state is u = (r, p) on a finite window of sites; everything outside
the window is zero. The equations of motion are

    dr/dt (n) = p(n+1) - p(n),     dp/dt (n) = V'(r(n)) - V'(r(n-1)),

i.e. du/dt = J H'(u) with H = sum p^2/2 + V(r) and
J = [[0, e^d - 1], [1 - e^-d, 0]] built from the shift e^d f(n) = f(n+1).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, PotentialOverflowError, WindowError

TAIL_TOL = 1e-14
LOG_CLAMP = 700.0

# kernel codes understood by the compiled integrator
KIND_PYTHON = -1
KIND_POLY = 0
KIND_TODA = 1


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LatticeField:
    """Pair (r, p) on the sites window_lo .. window_lo + len(r) - 1."""

    window_lo: int
    r: np.ndarray
    p: np.ndarray
    decaying: bool = False
    tail_tol: float = TAIL_TOL

    def __post_init__(self):
        r, p = _readonly(self.r), _readonly(self.p)
        if r.ndim != 1 or r.shape != p.shape:
            raise ValueError("r and p must be 1-d arrays of equal length")
        if r.size == 0:
            raise WindowError("empty window", required_width=1)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise ValueError("field entries must be finite")
        object.__setattr__(self, "window_lo", int(self.window_lo))
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)
        if self.decaying and self.edge_size() > self.tail_tol:
            raise ValueError(
                f"field flagged decaying but edge size {self.edge_size():.3e} "
                f"exceeds tail_tol {self.tail_tol:.1e}")

    # construction helpers
    @classmethod
    def zeros(cls, lo, hi):
        m = int(hi) - int(lo) + 1
        return cls(lo, np.zeros(m), np.zeros(m))

    @classmethod
    def from_arrays(cls, n, r, p):
        n = np.asarray(n)
        if n.size and np.any(np.diff(n) != 1):
            raise ValueError("site indices must be consecutive")
        return cls(int(n[0]), r, p)

    @property
    def window_hi(self):
        return self.window_lo + self.r.size - 1

    @property
    def size(self):
        return self.r.size

    @property
    def n(self):
        return np.arange(self.window_lo, self.window_hi + 1)

    def edge_size(self):
        return max(abs(self.r[0]) + abs(self.p[0]),
                   abs(self.r[-1]) + abs(self.p[-1]))

    def is_decaying(self, tail_tol=TAIL_TOL):
        return self.edge_size() <= tail_tol

    def same_window(self, other):
        return self.window_lo == other.window_lo and self.size == other.size

    def on_window(self, lo, hi):
        """Restrict or zero-pad onto the window [lo, hi]."""
        out_r = np.zeros(hi - lo + 1)
        out_p = np.zeros(hi - lo + 1)
        a, b = max(lo, self.window_lo), min(hi, self.window_hi)
        if a <= b:
            out_r[a - lo:b - lo + 1] = self.r[a - self.window_lo:b - self.window_lo + 1]
            out_p[a - lo:b - lo + 1] = self.p[a - self.window_lo:b - self.window_lo + 1]
        return LatticeField(lo, out_r, out_p)

    def shift(self, m):
        """Translate by an integer number of sites: returns u(. - m)."""
        return LatticeField(self.window_lo + int(m), self.r, self.p)

    def with_arrays(self, r, p):
        return LatticeField(self.window_lo, r, p)

    # vector space structure
    def _check(self, other):
        if not isinstance(other, LatticeField):
            return NotImplemented
        if not self.same_window(other):
            raise WindowError("fields live on different windows; use on_window first")
        return True

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return LatticeField(self.window_lo, self.r + other.r, self.p + other.p)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return LatticeField(self.window_lo, self.r - other.r, self.p - other.p)

    def __mul__(self, s):
        return LatticeField(self.window_lo, s * self.r, s * self.p)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def norm(self):
        return math.sqrt(float(np.dot(self.r, self.r) + np.dot(self.p, self.p)))

    def sums(self):
        """(<r, 1>, <p, 1>)."""
        return float(np.sum(self.r)), float(np.sum(self.p))

    # io
    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "r", "p"])
            for n, r, p in zip(self.n, self.r, self.p):
                w.writerow([int(n), f"{r:.16e}", f"{p:.16e}"])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls.from_arrays(data[:, 0].astype(int), data[:, 1], data[:, 2])


def distance(u, v):
    """l2 distance, zero-padding both fields onto the union of windows."""
    lo = min(u.window_lo, v.window_lo)
    hi = max(u.window_hi, v.window_hi)
    return (u.on_window(lo, hi) - v.on_window(lo, hi)).norm()


# ---------------------------------------------------------------------------
# potentials

@dataclass(frozen=True, eq=False)
class Potential:
    """Nearest-neighbour interaction V with its first two derivatives.

    ``kind`` and ``kernel_params`` let the compiled stepper evaluate V'
    without calling back into Python; user-supplied potentials use
    KIND_PYTHON and go through the slower numpy path.
    """

    name: str
    V: Callable
    dV: Callable
    d2V: Callable
    params: dict = field(default_factory=dict)
    kind: int = KIND_PYTHON
    kernel_params: tuple = (0.0, 0.0)
    convex_interval: tuple = (-math.inf, math.inf)
    h1: bool = True
    factory: tuple = ()

    def __reduce__(self):
        # built-ins are rebuilt from their factory so they can cross process boundaries
        if not self.factory:
            raise TypeError(f"potential {self.name!r} built from callables cannot be pickled")
        return (_rebuild_potential, self.factory)

    def eval(self, r):
        return self.V(r), self.dV(r), self.d2V(r)


def potential_eval(pot, r):
    """Return (V, V', V'') at r."""
    if not np.all(np.isfinite(r)):
        raise ValueError("strain must be finite")
    return pot.eval(r)


def alpha_fpu(alpha=1.0 / 36.0):
    """V(r) = r^2/2 + alpha r^3; alpha = 1/36 gives V'''(0) = 1/6."""
    def V(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * r * r + alpha * r ** 3

    def dV(r):
        r = np.asarray(r, dtype=float)
        return r + 3.0 * alpha * r * r

    def d2V(r):
        r = np.asarray(r, dtype=float)
        return 1.0 + 6.0 * alpha * r

    lo = -1.0 / (6.0 * alpha) if alpha > 0 else -math.inf
    return Potential("alpha-fpu", V, dV, d2V, {"alpha": alpha}, KIND_POLY,
                     (3.0 * alpha, 0.0), (lo, math.inf), h1=abs(6 * alpha - 1 / 6) < 1e-12,
                     factory=("alpha_fpu", (alpha,)))


def harmonic():
    """V(r) = r^2/2. Linear lattice; does not satisfy the cubic normalization."""
    pot = alpha_fpu(0.0)
    return Potential("harmonic", pot.V, pot.dV, pot.d2V, {}, KIND_POLY, (0.0, 0.0), h1=False,
                     factory=("harmonic", ()))


def toda(a=36.0, b=1.0 / 6.0):
    """V(r) = a (exp(b r) - 1 - b r). (a, b) = (36, 1/6) is the normalized case."""
    def _arg(r):
        x = b * np.asarray(r, dtype=float)
        if np.any(x > LOG_CLAMP):
            raise PotentialOverflowError(
                f"Toda potential overflows at r = {np.max(r):.4g}; non-physical strain")
        return x

    def V(r):
        x = _arg(r)
        return a * (np.expm1(x) - x)

    def dV(r):
        return a * b * np.expm1(_arg(r))

    def d2V(r):
        return a * b * b * np.exp(_arg(r))

    return Potential("toda", V, dV, d2V, {"a": a, "b": b}, KIND_TODA, (a * b, b),
                     h1=abs(a * b * b - 1) < 1e-12 and abs(a * b ** 3 - 1 / 6) < 1e-12,
                     factory=("toda", (a, b)))


def custom_potential(name, V, dV, d2V, convex_interval=(-math.inf, math.inf)):
    return Potential(name, V, dV, d2V, {}, KIND_PYTHON, (0.0, 0.0), convex_interval,
                     h1=check_h1_values(V, dV, d2V)["ok"])


def check_h1_values(V, dV, d2V, tol=1e-10, step=1e-4):
    z = np.array([0.0])
    v0, d0, dd0 = float(V(z)[0]), float(dV(z)[0]), float(d2V(z)[0])
    d3 = float((d2V(np.array([step]))[0] - d2V(np.array([-step]))[0]) / (2 * step))
    dev = {"V(0)": abs(v0), "V'(0)": abs(d0), "V''(0)-1": abs(dd0 - 1.0),
           "V'''(0)-1/6": abs(d3 - 1.0 / 6.0)}
    return {"ok": all(x <= tol for x in dev.values()), "deviations": dev}


def check_h1(pot, tol=1e-10, step=1e-4):
    """Normalization check V(0)=V'(0)=0, V''(0)=1, V'''(0)=1/6.

    V''' is taken by central differences of V'' with the given step.
    """
    return check_h1_values(pot.V, pot.dV, pot.d2V, tol, step)


def _rebuild_potential(name, args):
    return {"toda": toda, "alpha_fpu": alpha_fpu, "harmonic": harmonic}[name](*args)


def potential_from_name(name):
    table = {"toda": toda, "alpha-fpu": alpha_fpu, "alpha_fpu": alpha_fpu,
             "fpu": alpha_fpu, "harmonic": harmonic}
    try:
        return table[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(table)}") from None


# ---------------------------------------------------------------------------
# Hamiltonian structure

def pairing(f, g):
    """l2 pairing <f, g> = sum f_r g_r + f_p g_p over the common sites."""
    a, b = max(f.window_lo, g.window_lo), min(f.window_hi, g.window_hi)
    if a > b:
        return 0.0
    fs = slice(a - f.window_lo, b - f.window_lo + 1)
    gs = slice(a - g.window_lo, b - g.window_lo + 1)
    return float(np.dot(f.r[fs], g.r[gs]) + np.dot(f.p[fs], g.p[gs]))


def hamiltonian(u, pot):
    return float(0.5 * np.dot(u.p, u.p) + np.sum(pot.V(u.r)))


def grad_h(u, pot):
    return LatticeField(u.window_lo, pot.dV(u.r), u.p)


def _fwd_diff(x):
    # x(n+1) - x(n) with a zero ghost cell past the right edge
    d = np.empty_like(x)
    d[:-1] = x[1:] - x[:-1]
    d[-1] = -x[-1]
    return d


def _bwd_diff(x):
    # x(n) - x(n-1) with a zero ghost cell before the left edge
    d = np.empty_like(x)
    d[0] = x[0]
    d[1:] = x[1:] - x[:-1]
    return d


def apply_j(f):
    return LatticeField(f.window_lo, _fwd_diff(f.p), _bwd_diff(f.r))


def _suffix_sum(x, start):
    # s(n) = sum_{k >= start} x(n + k) for start in {0, 1}
    s = np.cumsum(x[::-1])[::-1]
    if start == 0:
        return s
    out = np.zeros_like(s)
    out[:-1] = s[1:]
    return out


def apply_j_inverse(f, weight=None, tail_tol=TAIL_TOL, rtol=1e-8):
    """Bounded inverse of J on fields decaying towards +infinity.

    r-part(n) = -sum_{k>=1} f_p(n+k),  p-part(n) = -sum_{k>=0} f_r(n+k).
    Sums stop at the right window edge. Returns (field, bound) where bound
    estimates the neglected tail. Raises DivergenceError when the input
    is visibly nonzero at the right edge (optionally after weighting).
    """
    edge = abs(f.r[-1]) + abs(f.p[-1])
    if weight is not None:
        edge *= float(np.exp(weight.log_weight(np.array([f.window_hi]))).max())
    scale = max(np.max(np.abs(f.r)), np.max(np.abs(f.p)), 1e-300)
    if edge > tail_tol and edge > rtol * scale:
        raise DivergenceError(
            f"input does not decay towards +inf: edge size {edge:.3e} "
            f"(sup {scale:.3e}); enlarge the window to the right")
    out = LatticeField(f.window_lo, -_suffix_sum(f.p, 1), -_suffix_sum(f.r, 0))
    bound = f.size * max(edge, tail_tol)
    return out, bound


def vector_field(u, pot):
    """JH'(u): (p(n+1) - p(n), V'(r(n)) - V'(r(n-1)))."""
    return apply_j(grad_h(u, pot))


# ---------------------------------------------------------------------------
# weighted norms

_MODES = ("growing", "decaying", "two-sided", "two-sided-growing")
_AGG = ("l2", "l1", "linf")


@dataclass(frozen=True)
class WeightSpec:
    """Exponential weight exp(+-a(n - x)) or exp(-+a|n - x|).

    ``center`` is a number, a sequence of numbers, or a callable t -> x
    (or t -> sequence). Several centers are combined by ``combine``:
    'sum' of the per-center norms (W-type) or their 'min' (dual W*-type).
    """

    a: float
    center: object = 0.0
    mode: str = "two-sided"
    aggregation: str = "l2"
    combine: str = "sum"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("weight exponent a must be positive")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if self.aggregation not in _AGG:
            raise ValueError(f"aggregation must be one of {_AGG}")
        if self.combine not in ("sum", "min"):
            raise ValueError("combine must be 'sum' or 'min'")

    def centers(self, t=None):
        c = self.center(t) if callable(self.center) else self.center
        return np.atleast_1d(np.asarray(c, dtype=float))

    def log_weight(self, n, t=None):
        """Array (n_centers, len(n)) of clamped log weights."""
        d = np.asarray(n, dtype=float)[None, :] - self.centers(t)[:, None]
        if self.mode == "growing":
            lw = self.a * d
        elif self.mode == "decaying":
            lw = -self.a * d
        elif self.mode == "two-sided":
            lw = -self.a * np.abs(d)
        else:
            lw = self.a * np.abs(d)
        return np.clip(lw, -LOG_CLAMP, LOG_CLAMP)


def weighted_norm(f, w, t=None):
    wt = np.exp(w.log_weight(f.n, t))
    ar, ap = np.abs(f.r)[None, :], np.abs(f.p)[None, :]
    if w.aggregation == "l2":
        # scaled to survive weights near exp(700)
        m = np.maximum(np.max(wt * np.maximum(ar, ap), axis=1), 1e-300)[:, None]
        vals = m[:, 0] * np.sqrt(np.sum((wt * ar / m) ** 2 + (wt * ap / m) ** 2, axis=1))
    elif w.aggregation == "l1":
        vals = np.sum(wt * (ar + ap), axis=1)
    else:
        vals = np.max(wt * np.maximum(ar, ap), axis=1)
    return float(vals.sum() if w.combine == "sum" else vals.min())


def x_weight(a, center):
    """||e^{-a(. - x)} u||: small to the right of x."""
    return WeightSpec(a, center, "decaying")


def x_star_weight(a, center):
    return WeightSpec(a, center, "growing")


def w_weight(a, centers, aggregation="l2"):
    return WeightSpec(a, tuple(np.atleast_1d(centers)), "two-sided", aggregation, "sum")


def w_star_weight(a, centers, aggregation="l2"):
    return WeightSpec(a, tuple(np.atleast_1d(centers)), "two-sided-growing", aggregation, "min")


def required_window(centers, margin):
    lo = int(math.floor(min(centers) - margin))
    hi = int(math.ceil(max(centers) + margin))
    return lo, hi
