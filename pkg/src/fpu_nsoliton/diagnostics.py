"""Monitors and measurements built on lattice states and trajectories."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .integrator import linear_step_segment
from .lattice import (LatticeField, WeightSpec, hamiltonian, weighted_norm, w_weight,
                      x_star_weight, x_weight)

R2_RELIABLE = 0.8


@dataclass(frozen=True)
class FitResult:
    """Least-squares fit log y = intercept + slope * x."""

    slope: float
    intercept: float
    r2: float
    n_points: int

    @property
    def reliable(self):
        return self.r2 >= R2_RELIABLE

    def as_dict(self):
        d = asdict(self)
        d["reliable"] = self.reliable
        return d


def fit_exponential(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0):
        raise ValueError("need at least two positive samples")
    if np.ptp(x) == 0:
        raise ValueError("abscissae are all equal; no rate can be fitted")
    res = stats.linregress(x, np.log(y))
    r2 = float(res.rvalue ** 2) if x.size > 2 else 1.0
    return FitResult(float(res.slope), float(res.intercept), r2, int(x.size))


def local_slopes(x, y):
    """Finite-difference slopes of log y between consecutive samples."""
    x = np.asarray(x, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    return np.diff(ly) / np.diff(x)


# ---------------------------------------------------------------------------
# virial functional

@dataclass(frozen=True)
class VirialWeight:
    """psi(t, x) = 1 - tanh(a (x - x_i(t))), decreasing from 2 to 0."""

    a: float
    center: object = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("steepness a must be positive")

    def x(self, t):
        return float(self.center(t)) if callable(self.center) else float(self.center)

    def psi(self, n, t=0.0):
        return 1.0 - np.tanh(self.a * (np.asarray(n, dtype=float) - self.x(t)))


def virial_energy(v, w, t=0.0):
    """sum_n psi(t, n) (r(n)^2 + p(n)^2)."""
    return float(np.sum(w.psi(v.n, t) * (v.r ** 2 + v.p ** 2)))


def virial_energy_summed(v, weights, t=0.0):
    """Sum of the single-centre functionals over several centres."""
    return float(sum(virial_energy(v, w, t) for w in weights))


# ---------------------------------------------------------------------------
# residual curves from a modulation track

def residual_curves(tr, schedule, a=None, min_points=4):
    """Norms of the remainder at each snapshot and their fits against d(t)."""
    if a is None:
        a = schedule.params.k[0] * schedule.params.eps
    d = np.asarray(schedule.d(tr.times), dtype=float)
    table = {"t": tr.times, "d": d, "l2": tr.l2_residual, "W": tr.w_residual,
             "X_star": tr.x_star_residual}
    fits = {}
    # a single wave has d = inf and nothing to fit against
    if tr.times.size >= min_points and np.all(np.isfinite(d)) and np.ptp(d) > 0:
        for key in ("l2", "W", "X_star"):
            y = table[key]
            if np.all(y > 0):
                fits[key] = fit_exponential(d, y)
        for i in range(tr.N):
            dc = np.abs(tr.c[:, i] - schedule.params.speeds[i])
            if np.all(dc > 0):
                fits[f"c_{i + 1}"] = fit_exponential(d, dc)
    return table, fits


def write_table(path, table):
    keys = list(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in zip(*[table[k] for k in keys]):
            w.writerow([f"{float(v):.16e}" for v in row])


# ---------------------------------------------------------------------------
# interaction of two waves

def interaction_size(prof1, prof2, sep, tails=True):
    """(l1, l_inf) size of u_{c1}(.) u_{c2}(. - sep), r and p parts summed.

    With ``tails`` the profiles continue as exact exponentials outside
    their resolved core, so the law stays measurable below round-off.
    """
    half = 0.5 * max(prof1.box, prof2.box)
    lo = int(math.floor(min(0.0, sep) - half))
    hi = int(math.ceil(max(0.0, sep) + half))
    n = np.arange(lo, hi + 1)
    if tails:
        r1, p1 = prof1.sample_with_tails(n, 0.0)
        r2, p2 = prof2.sample_with_tails(n, sep)
    else:
        r1, p1 = prof1.sample(n, 0.0)
        r2, p2 = prof2.sample(n, sep)
    l1 = float(np.sum(np.abs(r1 * r2)) + np.sum(np.abs(p1 * p2)))
    linf = float(max(np.max(np.abs(r1 * r2)), np.max(np.abs(p1 * p2))))
    return l1, linf


# ---------------------------------------------------------------------------
# linearized decay in weighted norms

@dataclass(frozen=True, eq=False)
class DecayResult:
    times: np.ndarray
    norms: np.ndarray
    fit: FitResult | None
    bound: float | None = None

    @property
    def rate(self):
        return self.fit.slope if self.fit else math.nan


def _maybe_fit(x, y):
    # no rate for fewer than two points or a vanishing signal
    if x.size < 2 or np.any(y <= 0):
        return None
    return fit_exponential(x, y)


def free_bound(a, c):
    """Exponent ca - 2 sinh(a/2) of the free weighted semigroup for t <= 0."""
    return c * a - 2.0 * math.sinh(a / 2.0)


def free_weighted_decay(seed, a, c, duration, dt=0.02, n_obs=41, fit_window=(0.25, 1.0)):
    """Evolve the free lattice backward from t = 0 and fit the exponent of
    ||exp(-a(n - c t)) w(t)||.

    The fit uses times t in [-fit_window[1] D, -fit_window[0] D] with D
    the duration; the returned ``bound`` is ca - 2 sinh(a/2).
    """
    pad = int(math.ceil(duration * 1.05)) + 50
    lo, hi = seed.window_lo - pad, seed.window_hi + pad
    w = seed.on_window(lo, hi)
    ones = np.ones(w.size)
    times = -np.linspace(0.0, duration, n_obs)
    norms = [weighted_norm(w, WeightSpec(a, 0.0, "decaying"))]
    for t0, t1 in zip(times, times[1:]):
        w = linear_step_segment(w, ones, ones, t1 - t0, dt)
        norms.append(weighted_norm(w, WeightSpec(a, c * t1, "decaying")))
    norms = np.array(norms)
    sel = (times <= -fit_window[0] * duration) & (times >= -fit_window[1] * duration)
    fit = _maybe_fit(times[sel], norms[sel])
    return DecayResult(times, norms, fit, free_bound(a, c))


def linearized_decay(background, seed, a, params, family, center_index=-1, fit_from=None,
                     project=True):
    """Backward linearized evolution around a background trajectory.

    ``background`` must be a Trajectory with decreasing times (as produced
    by a backward run) or increasing times (it is then reversed). w solves
    dw/dt = J H''(U(t)) w with V''(U_r) interpolated linearly between
    snapshots; at each snapshot w is projected onto the orthogonal
    complement of the wave tangents at (c_{i,+}, x_{i,+}(t)) and its norm
    ||exp(-a(n - x_k(t))) w|| is recorded.
    """
    from .modulation import project_out

    times = np.asarray(background.times, dtype=float)
    states = list(background.states)
    if times[-1] > times[0]:
        times, states = times[::-1], states[::-1]
    pot = family.pot
    lo, hi = states[0].window_lo, states[0].window_hi
    cs = list(params.speeds)
    w = seed.on_window(lo, hi)
    if project:
        w = project_out(w, cs, params.x_plus(times[0]), family, params.eps)
    dt = abs(background.dt) if abs(background.dt) <= 0.05 else 0.02
    norms = [weighted_norm(w, x_weight(a, params.x_plus(times[0])[center_index]))]
    g_prev = pot.d2V(states[0].r)
    for k in range(1, times.size):
        g_next = pot.d2V(states[k].r)
        w = linear_step_segment(w, g_prev, g_next, times[k] - times[k - 1], dt)
        if project:
            w = project_out(w, cs, params.x_plus(times[k]), family, params.eps)
        norms.append(weighted_norm(w, x_weight(a, params.x_plus(times[k])[center_index])))
        g_prev = g_next
    norms = np.array(norms)
    sel = np.ones(times.size, bool) if fit_from is None else times <= fit_from
    fit = _maybe_fit(times[sel], norms[sel])
    return DecayResult(times, norms, fit, None)
