"""Explicit symplectic time stepping of du/dt = J H'(u).

The two rows of J H'(u) are split: a kick updates p from V'(r), a drift
updates r from p. Kick-drift-kick (leapfrog) is second order and time
reversible. 'yoshida4' composes three leapfrog substeps with the
triple-jump weights, giving a fourth-order scheme that is still
symmetric and symplectic; it is much cheaper per unit accuracy on long
runs. Consecutive half kicks are merged, so V' is evaluated once per
drift.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numba
import numpy as np

from .errors import BlowUpError
from .lattice import KIND_POLY, KIND_PYTHON, KIND_TODA, LatticeField, hamiltonian

DT_MAX = 0.05
BLOWUP = 1e6
CHECK_EVERY = 2000

_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = 1.0 - 2.0 * _W1

SCHEMES = {
    "leapfrog": (np.array([0.5, 0.5]), np.array([1.0])),
    "yoshida4": (np.array([0.5 * _W1, 0.5 * (_W1 + _W0), 0.5 * (_W0 + _W1), 0.5 * _W1]),
                 np.array([_W1, _W0, _W1])),
}
ORDER = {"leapfrog": 2, "yoshida4": 4}


def _coefs(scheme):
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None


@numba.njit(cache=True)
def _dv(x, kind, pa, pb):
    if kind == 0:
        return x + pa * x * x
    return pa * math.expm1(pb * x)


@numba.njit(cache=True)
def _kick(p, f, h):
    p[0] += h * f[0]
    for i in range(1, p.size):
        p[i] += h * (f[i] - f[i - 1])


@numba.njit(cache=True)
def _drift(r, p, h):
    n = r.size
    for i in range(n - 1):
        r[i] += h * (p[i + 1] - p[i])
    r[n - 1] -= h * p[n - 1]


@numba.njit(cache=True)
def _force(r, f, kind, pa, pb):
    for i in range(r.size):
        f[i] = _dv(r[i], kind, pa, pb)


@numba.njit(cache=True)
def _run_kernel(r, p, dt, nsteps, kind, pa, pb, kc, dc):
    # in place; kicks at step boundaries are merged
    f = np.empty_like(r)
    _force(r, f, kind, pa, pb)
    m = dc.size
    if nsteps <= 0:
        return
    _kick(p, f, kc[0] * dt)
    for s in range(nsteps):
        for j in range(m):
            _drift(r, p, dc[j] * dt)
            _force(r, f, kind, pa, pb)
            if j < m - 1:
                _kick(p, f, kc[j + 1] * dt)
            elif s < nsteps - 1:
                _kick(p, f, (kc[m] + kc[0]) * dt)
            else:
                _kick(p, f, kc[m] * dt)


def _run_numpy(r, p, dt, nsteps, dV, kc, dc):
    def kick(h):
        f = dV(r)
        p[0] += h * f[0]
        p[1:] += h * (f[1:] - f[:-1])

    def drift(h):
        r[:-1] += h * (p[1:] - p[:-1])
        r[-1] -= h * p[-1]

    for _ in range(nsteps):
        kick(kc[0] * dt)
        for j in range(dc.size):
            drift(dc[j] * dt)
            kick(kc[j + 1] * dt)


def _advance(r, p, pot, dt, nsteps, scheme):
    kc, dc = _coefs(scheme)
    if pot.kind in (KIND_POLY, KIND_TODA):
        pa, pb = pot.kernel_params
        _run_kernel(r, p, float(dt), int(nsteps), int(pot.kind), float(pa), float(pb), kc, dc)
    elif pot.kind == KIND_PYTHON:
        _run_numpy(r, p, dt, nsteps, pot.dV, kc, dc)
    else:
        raise ValueError(f"unsupported potential kind {pot.kind}")


def _healthy(r, p):
    with np.errstate(invalid="ignore"):
        return bool(np.all(np.isfinite(r)) and np.all(np.isfinite(p))
                    and np.max(np.abs(r)) <= BLOWUP and np.max(np.abs(p)) <= BLOWUP)


def step(u, pot, dt, scheme="leapfrog", dt_max=DT_MAX):
    """One splitting step of signed size dt."""
    if abs(dt) > dt_max:
        raise ValueError(f"|dt| = {abs(dt)} exceeds dt_max = {dt_max}")
    r, p = np.array(u.r), np.array(u.p)
    with np.errstate(over="ignore", invalid="ignore"):
        _advance(r, p, pot, dt, 1, scheme)
    if not _healthy(r, p):
        raise BlowUpError("non-finite or exploding state after one step", u, None)
    return LatticeField(u.window_lo, r, p)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Snapshots of a run together with energy and relative drift."""

    times: np.ndarray
    states: tuple
    energy: np.ndarray
    dt: float
    scheme: str = "leapfrog"
    drift_tol: float = 1e-8

    @property
    def drift(self):
        h0 = self.energy[0]
        return np.abs(self.energy - h0) / max(abs(h0), 1.0)

    @property
    def max_drift(self):
        return float(self.drift.max())

    @property
    def drift_warning(self):
        return self.max_drift > self.drift_tol

    @property
    def final(self):
        return self.states[-1]

    def state_at(self, t, atol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t = {t}")
        return self.states[i]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "energy", "drift"])
            for t, e, d in zip(self.times, self.energy, self.drift):
                w.writerow([f"{t:.16e}", f"{e:.16e}", f"{d:.16e}"])

    def write_states(self, directory, prefix="state"):
        os.makedirs(directory, exist_ok=True)
        paths = []
        for k, s in enumerate(self.states):
            path = os.path.join(directory, f"{prefix}_{k:04d}.csv")
            s.to_csv(path)
            paths.append(path)
        return paths


def _grid_index(t, t0, h, what):
    k = round((t - t0) / h)
    if abs(t0 + k * h - t) > 1e-9 * max(1.0, abs(t - t0)):
        raise ValueError(f"{what} {t} is not on the step grid t0 + k*dt")
    return int(k)


def integrate(u0, pot, t0, t1, dt, observe_at=None, scheme="leapfrog",
              drift_tol=1e-8, dt_max=DT_MAX, check_every=CHECK_EVERY):
    """Integrate from t0 to t1 (either direction) with step |dt|.

    Snapshots are taken at ``observe_at`` (default: t0 and t1); each time
    must lie on the grid t0 + k*dt and inside [min(t0,t1), max(t0,t1)].
    """
    dt = abs(float(dt))
    if dt == 0 or dt > dt_max:
        raise ValueError(f"dt must lie in (0, {dt_max}]")
    span = t1 - t0
    h = math.copysign(dt, span) if span != 0 else dt
    nsteps = _grid_index(t1, t0, h, "end time")
    if observe_at is None:
        observe_at = [t0, t1]
    lo, hi = min(t0, t1), max(t0, t1)
    ks = set()
    for t in observe_at:
        if t < lo - 1e-12 * max(1, abs(lo)) or t > hi + 1e-12 * max(1, abs(hi)):
            raise ValueError(f"observation time {t} outside [{lo}, {hi}]")
        ks.add(_grid_index(t, t0, h, "observation time"))
    ks = sorted(ks)

    r, p = np.array(u0.r), np.array(u0.p)
    good_r, good_p, good_k = r.copy(), p.copy(), 0
    times, states, energy = [], [], []
    k = 0
    for target in ks:
        while k < target:
            m = min(check_every, target - k)
            with np.errstate(over="ignore", invalid="ignore"):
                _advance(r, p, pot, h, m, scheme)
            k += m
            if not _healthy(r, p):
                last = LatticeField(u0.window_lo, good_r, good_p)
                raise BlowUpError(
                    f"blow-up between t = {t0 + good_k * h:.6g} and t = {t0 + k * h:.6g}",
                    last, t0 + good_k * h)
            good_r[:], good_p[:], good_k = r, p, k
        s = LatticeField(u0.window_lo, r, p)
        times.append(t0 + target * h)
        states.append(s)
        energy.append(hamiltonian(s, pot))
    return Trajectory(np.array(times), tuple(states), np.array(energy), h, scheme, drift_tol)


def evolve(u0, pot, duration, dt, scheme="leapfrog"):
    """Final state after integrating for a signed duration."""
    return integrate(u0, pot, 0.0, duration, dt, [duration], scheme).final


# ---------------------------------------------------------------------------
# linearized flow dw/dt = J H''(U(t)) w

@numba.njit(cache=True)
def _linear_kernel(r, p, dt, nsteps, g0, g1):
    # leapfrog with coefficient g(t) = V''(U_r(t, n)) linear in time over the segment
    n = r.size
    f = np.empty(n)
    for s in range(nsteps + 1):
        lam = s / nsteps if nsteps > 0 else 0.0
        for i in range(n):
            f[i] = (g0[i] + lam * (g1[i] - g0[i])) * r[i]
        h = 0.5 * dt if (s == 0 or s == nsteps) else dt
        p[0] += h * f[0]
        for i in range(1, n):
            p[i] += h * (f[i] - f[i - 1])
        if s < nsteps:
            for i in range(n - 1):
                r[i] += dt * (p[i + 1] - p[i])
            r[n - 1] -= dt * p[n - 1]


def linear_step_segment(w, g0, g1, duration, dt):
    """Advance w over one segment of the linearized flow.

    g0, g1 are V''(U_r) at the segment ends (same window as w); the
    coefficient is interpolated linearly in time.
    """
    if duration == 0:
        return w
    nsteps = max(1, int(round(abs(duration) / dt)))
    h = duration / nsteps
    r, p = np.array(w.r), np.array(w.p)
    _linear_kernel(r, p, h, nsteps, np.asarray(g0, float), np.asarray(g1, float))
    if not _healthy(r, p):
        raise BlowUpError("linearized flow exploded", w, None)
    return LatticeField(w.window_lo, r, p)
