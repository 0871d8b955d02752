"""Asymptotic N-soliton states by backward shooting.

For terminal times n the lattice is solved backward from
u^n(n) = sum_i u_{c_i}(. - x_i(n)), x_i(t) = c_i t + gamma_i, down to a
fixed time T. As n grows the states u^n(T) form a Cauchy sequence in l2;
the limit is the state that converges to the prescribed sum of
solitary waves as t -> +infinity.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import FitResult, fit_exponential
from .errors import ConfigError, FPUError, WindowError
from .integrator import integrate
from .lattice import LatticeField, distance, w_weight, weighted_norm
from .profiles import ProfileFamily, WaveProfile, kappa_of_c, speed

DEFAULT_DT = 0.01
DEFAULT_SCHEME = "yoshida4"


@dataclass(frozen=True)
class SolitonParameters:
    """Small parameter eps, ordered wavenumbers k and asymptotic phases gamma."""

    eps: float
    k: tuple
    gamma: tuple = ()
    eps0: float = 0.2
    L0: float = 10.0

    def __post_init__(self):
        k = tuple(float(v) for v in np.atleast_1d(self.k))
        g = tuple(float(v) for v in np.atleast_1d(self.gamma)) if len(np.atleast_1d(self.gamma)) else (0.0,) * len(k)
        if not k:
            raise ConfigError("at least one wavenumber is required")
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ConfigError("k must be strictly increasing")
        if k[0] <= 0:
            raise ConfigError("k must be positive")
        if len(g) != len(k):
            raise ConfigError("gamma must have one entry per wavenumber")
        if not 0 < self.eps <= self.eps0:
            raise ConfigError(f"eps must lie in (0, {self.eps0}]")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "gamma", g)

    @property
    def N(self):
        return len(self.k)

    @property
    def speeds(self):
        return tuple(speed(ki, self.eps) for ki in self.k)

    @property
    def kappas(self):
        return tuple(kappa_of_c(c) for c in self.speeds)

    def x_plus(self, t):
        return np.array([c * t + g for c, g in zip(self.speeds, self.gamma)])

    def separations(self, t):
        return np.diff(self.x_plus(t))

    def separation_ok(self, t):
        return bool(np.all(self.separations(t) >= self.L0 / self.eps))

    def shifted(self, delta):
        return replace(self, gamma=tuple(g + delta for g in self.gamma))

    @property
    def margin(self):
        """Window margin 40/(k_1 eps) around the waves."""
        return 40.0 / (self.k[0] * self.eps)


@dataclass(frozen=True)
class SeparationSchedule:
    """d(t) = sigma eps^2 (t - T) + L/eps and h(t) = min_j gap_j(t)."""

    params: SolitonParameters
    T: float
    L: float | None = None

    def __post_init__(self):
        if self.L is None:
            h = self.h(self.T)
            object.__setattr__(self, "L", self.params.eps * h if math.isfinite(h) else math.inf)

    @property
    def sigma(self):
        p = self.params
        if p.N < 2:
            return 0.0
        return 0.5 * min(np.diff(p.speeds)) / p.eps ** 2

    def d(self, t):
        e = self.params.eps
        return self.sigma * e * e * (np.asarray(t, dtype=float) - self.T) + self.L / e

    def h(self, t):
        p = self.params
        if p.N < 2:
            return math.inf if np.isscalar(t) else np.full(np.shape(t), math.inf)
        t = np.asarray(t, dtype=float)
        gaps = [(p.speeds[j] - p.speeds[j - 1]) * t + p.gamma[j] - p.gamma[j - 1]
                for j in range(1, p.N)]
        return np.min(np.array(gaps), axis=0)


def default_schedule(params, T, count=8, dn=None, dt=DEFAULT_DT):
    """Terminal times T + j dn. By default dn = 0.4/(k_1 sigma eps^3).

    That spacing makes consecutive Cauchy increments shrink by roughly
    e^-1.5, so several points are visible before round-off.
    """
    sched = SeparationSchedule(params, T)
    if dn is None:
        if params.N < 2:
            dn = 50.0
        else:
            dn = 0.4 / (params.k[0] * sched.sigma * params.eps ** 3)
    dn = max(dt, round(dn / dt) * dt)
    return [T + j * dn for j in range(1, count + 1)]


def construction_window(params, T, n_max, margin=None):
    m = params.margin if margin is None else margin
    xt, xn = params.x_plus(T), params.x_plus(n_max)
    lo = int(math.floor(min(xt.min(), xn.min()) - m))
    hi = int(math.ceil(max(xt.max(), xn.max()) + m))
    return lo, hi


def _profile_list(params, profiles):
    if isinstance(profiles, ProfileFamily):
        return [profiles.profile(c) for c in params.speeds]
    profs = list(profiles)
    if len(profs) != params.N:
        raise ValueError("one profile per soliton is required")
    for c, pr in zip(params.speeds, profs):
        if abs(pr.c - c) > 1e-13 * c:
            raise ValueError(f"profile speed {pr.c} does not match c = {c}")
    return profs


def soliton_sum(params, profiles, t, lo, hi):
    """U(t) = sum_i u_{c_i}(. - x_i(t)) on [lo, hi]."""
    profs = _profile_list(params, profiles)
    n = np.arange(lo, hi + 1)
    r = np.zeros(n.size)
    p = np.zeros(n.size)
    for pr, x in zip(profs, params.x_plus(t)):
        a, b = pr.sample(n, x)
        r += a
        p += b
    return LatticeField(lo, r, p)


def terminal_data(params, profiles, n, window):
    lo, hi = window
    xs = params.x_plus(n)
    m = params.margin
    if xs.min() - lo < m or hi - xs.max() < m:
        need = int(math.ceil(xs.max() - xs.min() + 2 * m)) + 1
        raise WindowError(f"window [{lo}, {hi}] too small: need width >= {need} sites "
                          f"covering [{xs.min() - m:.1f}, {xs.max() + m:.1f}]", need)
    return soliton_sum(params, profiles, n, lo, hi)


@dataclass(frozen=True, eq=False)
class ShootingRun:
    n: float
    T: float
    terminal: LatticeField
    trajectory: object
    times: np.ndarray
    l2_residual: np.ndarray
    w_residual: np.ndarray

    @property
    def final(self):
        return self.trajectory.state_at(self.T)


def shoot_backward(params, profiles, n, T, dt=DEFAULT_DT, window=None, observe_at=None,
                   scheme=DEFAULT_SCHEME):
    """Solve from t = n down to t = T starting from the terminal sum."""
    if not T < n:
        raise ValueError("terminal time n must exceed T")
    window = window or construction_window(params, T, n)
    u_n = terminal_data(params, profiles, n, window)
    obs = sorted(set([n, T] + list(observe_at or [])), reverse=True)
    traj = integrate(u_n, profiles_pot(profiles, params), n, T, dt, obs, scheme)
    a = params.k[0] * params.eps
    l2, wr = [], []
    for t, s in zip(traj.times, traj.states):
        U = soliton_sum(params, profiles, t, s.window_lo, s.window_hi)
        l2.append((s - U).norm())
        wr.append(weighted_norm(s - U, w_weight(a, params.x_plus(t))))
    return ShootingRun(n, T, u_n, traj, traj.times, np.array(l2), np.array(wr))


def profiles_pot(profiles, params=None):
    """Potential the profiles were solved for."""
    if isinstance(profiles, ProfileFamily):
        return profiles.pot
    return list(profiles)[0].pot


def _final_state(args):
    params, profs, n, T, dt, window, scheme = args
    run = shoot_backward(params, profs, n, T, dt, window, None, scheme)
    return run.final, run.trajectory.max_drift


@dataclass(frozen=True, eq=False)
class CauchyReport:
    n: tuple
    d_n: tuple
    deltas: tuple
    fit_d: FitResult | None
    fit_n: FitResult | None
    strictly_decreasing: bool
    converging: bool
    stopped_early: bool
    final_delta: float
    max_energy_drift: float
    separation_ok: bool
    failure: str = ""
    finals: tuple = ()

    def rows(self):
        return [(n, d, dl) for n, d, dl in zip(self.n, self.d_n, self.deltas)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "d_n", "l2_diff"])
            for n, d, dl in self.rows():
                w.writerow([f"{n:.16e}", f"{d:.16e}", f"{dl:.16e}"])

    def summary(self):
        f = lambda fit: fit.as_dict() if fit else None
        return {"n": list(self.n), "d_n": list(self.d_n), "deltas": list(self.deltas),
                "fit_vs_d": f(self.fit_d), "fit_vs_n": f(self.fit_n),
                "strictly_decreasing": self.strictly_decreasing, "converging": self.converging,
                "stopped_early": self.stopped_early, "final_delta": self.final_delta,
                "max_energy_drift": self.max_energy_drift, "separation_ok": self.separation_ok,
                "failure": self.failure}


def construct_limit(params, profiles, T, n_schedule, tol=1e-5, dt=DEFAULT_DT, window=None,
                    scheme=DEFAULT_SCHEME, workers=1, stop_early=True, fit_points=4):
    """Shoot from every terminal time and monitor the Cauchy increments.

    delta_j = ||u^{n_{j+1}}(T) - u^{n_j}(T)||; each delta_j is paired with
    d(n_j). Rates come from log-linear fits on the last ``fit_points``
    increments.
    """
    ns = [float(v) for v in n_schedule]
    if len(ns) < 4:
        raise ValueError("n_schedule needs at least 4 terminal times")
    if any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] <= T:
        raise ValueError("n_schedule must be increasing and above T")
    window = window or construction_window(params, T, ns[-1])
    profs = _profile_list(params, profiles)
    sched = SeparationSchedule(params, T)
    jobs = [(params, profs, n, T, dt, window, scheme) for n in ns]
    finals, drifts = [], []
    deltas = []
    stopped = False
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for fin, dr in ex.map(_final_state, jobs):
                finals.append(fin)
                drifts.append(dr)
        deltas = [distance(b, a) for a, b in zip(finals, finals[1:])]
    else:
        for job in jobs:
            fin, dr = _final_state(job)
            finals.append(fin)
            drifts.append(dr)
            if len(finals) > 1:
                deltas.append(distance(finals[-1], finals[-2]))
                if stop_early and deltas[-1] < tol and len(finals) < len(ns):
                    stopped = True
                    break
    used = ns[:len(finals)]
    d_n = [float(sched.d(n)) for n in used[:-1]]
    fit_d = fit_n = None
    if len(deltas) >= 2 and all(dl > 0 for dl in deltas):
        k = min(fit_points, len(deltas))
        if np.all(np.isfinite(d_n[-k:])) and np.ptp(d_n[-k:]) > 0:
            fit_d = fit_exponential(d_n[-k:], deltas[-k:])
        fit_n = fit_exponential(used[:-1][-k:], deltas[-k:])
    strictly = all(b < a for a, b in zip(deltas, deltas[1:]))
    bad = [j for j in range(1, len(deltas)) if deltas[j] > 3 * deltas[j - 1] and deltas[j] > tol]
    failure = ""
    if bad:
        failure = (f"Cauchy increments grow beyond factor-3 noise at n = "
                   f"{[used[j] for j in bad]}; construction not converging at these parameters")
    return finals[-1], CauchyReport(tuple(used), tuple(d_n), tuple(deltas), fit_d, fit_n,
                                    strictly, not bad, stopped,
                                    deltas[-1] if deltas else math.nan,
                                    float(max(drifts)), params.separation_ok(T), failure,
                                    tuple(finals))


@dataclass(frozen=True, eq=False)
class ForwardReport:
    times: np.ndarray
    h: np.ndarray
    error: np.ndarray
    fit: FitResult | None
    e_T: float
    growing: bool
    trajectory: object = None

    @property
    def beta(self):
        return -self.fit.slope if self.fit else math.nan

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "h_t", "l2_err"])
            for t, h, e in zip(self.times, self.h, self.error):
                w.writerow([f"{t:.16e}", f"{h:.16e}", f"{e:.16e}"])


def validate_forward(limit, params, profiles, T, horizon, dt=DEFAULT_DT, n_obs=41,
                     scheme=DEFAULT_SCHEME, fit_from=None, keep_trajectory=False):
    """Evolve the limit forward and fit log e(t) against eps h(t).

    e(t) = ||u(t) - sum_i u_{c_i}(. - c_i t - gamma_i)||; the fitted slope
    is -beta. Points with t < fit_from are excluded from the fit.
    """
    lo = limit.window_lo
    hi = max(limit.window_hi, construction_window(params, T, T + horizon)[1])
    u0 = limit.on_window(lo, hi)
    times = T + np.linspace(0.0, horizon, n_obs)
    times = T + np.round((times - T) / dt) * dt
    traj = integrate(u0, profiles_pot(profiles, params), T, T + horizon, dt, list(times), scheme)
    sched = SeparationSchedule(params, T)
    err = np.array([(s - soliton_sum(params, profiles, t, lo, hi)).norm()
                    for t, s in zip(traj.times, traj.states)])
    hs = np.asarray(sched.h(traj.times), dtype=float)
    fit = None
    if params.N >= 2:
        sel = traj.times >= (T if fit_from is None else fit_from)
        if sel.sum() >= 4:
            fit = fit_exponential(params.eps * hs[sel], err[sel])
    growing = bool(err[-1] > err[0]) if params.N >= 2 else False
    return ForwardReport(traj.times, hs, err, fit, float(err[0]), growing,
                         traj if keep_trajectory else None)


def write_summary(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, FitResult):
        return o.as_dict()
    raise TypeError(type(o))
