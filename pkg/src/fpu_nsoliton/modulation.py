"""Splitting a lattice state into N solitary waves plus a remainder.

Given speeds c_i and centres x_i write u = sum_i u_{c_i}(. - x_i) + v and
require the remainder to be symplectically orthogonal to the tangent
directions of every wave:

    <v, J^-1 d_x u_i> = <v, J^-1 d_c u_i> = 0,  i = 1..N.

The 2N x 2N Gram matrix A of pairings between the tangent directions
(with the scalings eps^-1, eps^-4, eps^2 on the entries of each block)
is the Jacobian of these conditions with respect to the parameters and
is used for the Newton iteration.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import ConvergenceError, FPUError
from .lattice import (LatticeField, apply_j_inverse, grad_h, hamiltonian, pairing,
                      w_weight, weighted_norm, x_star_weight, x_weight)
from .profiles import eps_of_c, kappa_of_c

SIGMA3 = np.diag([1.0, -1.0])
LOWER = np.array([[0.0, 0.0], [1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class _Tangents:
    u: tuple
    ux: tuple
    uc: tuple
    jux: tuple
    juc: tuple


def _tangents(c, x, family, lo, hi):
    us, uxs, ucs, juxs, jucs = [], [], [], [], []
    for ci, xi in zip(c, x):
        u, ux, uc = family.fields(ci, xi, lo, hi)
        us.append(u)
        uxs.append(ux)
        ucs.append(uc)
        juxs.append(apply_j_inverse(ux)[0])
        jucs.append(apply_j_inverse(uc)[0])
    return _Tangents(tuple(us), tuple(uxs), tuple(ucs), tuple(juxs), tuple(jucs))


def _assemble(tg, eps):
    N = len(tg.u)
    A = np.empty((2 * N, 2 * N))
    for i in range(N):
        for j in range(N):
            A[2 * i, 2 * j] = pairing(tg.uc[j], tg.jux[i]) / eps
            A[2 * i, 2 * j + 1] = pairing(tg.ux[j], tg.jux[i]) / eps ** 4
            A[2 * i + 1, 2 * j] = eps ** 2 * pairing(tg.uc[j], tg.juc[i])
            A[2 * i + 1, 2 * j + 1] = pairing(tg.ux[j], tg.juc[i]) / eps
    return A


def _scaled_pairings(f, tg, eps):
    out = []
    for jux, juc in zip(tg.jux, tg.juc):
        out += [pairing(f, jux) / eps ** 4, pairing(f, juc) / eps]
    return np.array(out)


def _raw_pairings(f, tg):
    out = []
    for jux, juc in zip(tg.jux, tg.juc):
        out += [pairing(f, jux), pairing(f, juc)]
    return np.array(out)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Scaled pairing matrix together with its leading-order blocks."""

    matrix: np.ndarray
    eps: float
    c: tuple
    x: tuple
    theta1: tuple
    theta2: tuple
    sums: tuple  # (<d_c r_i, 1>, <d_c p_i, 1>) per wave

    @property
    def N(self):
        return len(self.c)

    def block(self, i, j):
        return self.matrix[2 * i:2 * i + 2, 2 * j:2 * j + 2]

    def theta3(self, i, j):
        (ri, pi), (rj, pj) = self.sums[i], self.sums[j]
        return pi * rj + pj * ri

    def B1(self, i):
        c, e = self.c[i], self.eps
        return -self.theta1[i] / (c * e) * SIGMA3 - e ** 2 * self.theta2[i] * LOWER

    def B2(self, i, j):
        return -self.eps ** 2 * self.theta3(i, j) * LOWER

    @property
    def condition(self):
        return float(np.linalg.cond(self.matrix))

    def block_report(self):
        """Magnitudes of each block and of its deviation from the leading form."""
        rows = []
        for i in range(self.N):
            dn = np.linalg.norm(self.block(i, i))
            for j in range(self.N):
                b = self.block(i, j)
                if i == j:
                    lead = self.B1(i)
                elif i > j:
                    lead = self.B2(i, j)
                else:
                    lead = np.zeros((2, 2))
                rows.append({"i": i, "j": j, "norm": float(np.linalg.norm(b)),
                             "deviation": float(np.linalg.norm(b - lead)),
                             "relative_to_diagonal": float(np.linalg.norm(b) / dn)})
        upper = [r["relative_to_diagonal"] for r in rows if r["i"] < r["j"]]
        lower = [r["relative_to_diagonal"] for r in rows if r["i"] > r["j"]]
        return {"blocks": rows, "max_upper_relative": max(upper, default=0.0),
                "max_lower_relative": max(lower, default=0.0),
                "dominant_lower_triangular": max(upper, default=0.0) < 1e-3,
                "condition": self.condition}


def gram_matrix(c, x, family, eps, lo, hi, pot=None):
    """Gram matrix at speeds c and centres x on the window [lo, hi]."""
    tg = _tangents(c, x, family, lo, hi)
    return _gram_from(tg, c, x, eps, pot or family.pot)


def _gram_from(tg, c, x, eps, pot):
    th1, th2, sums = [], [], []
    for u, uc in zip(tg.u, tg.uc):
        th1.append(pairing(uc, grad_h(u, pot)))  # dH(u_c)/dc by the chain rule
        sr, sp = uc.sums()
        th2.append(sp * sr)
        sums.append((sr, sp))
    return GramMatrix(_assemble(tg, eps), eps, tuple(c), tuple(x), tuple(th1), tuple(th2),
                      tuple(sums))


def dH_dc_fd(family, c, pot, lo, hi, dc=None):
    """dH(u_c)/dc by centred differences of the lattice Hamiltonian."""
    dc = dc or 1e-4 * (c - 1)
    hp = hamiltonian(family.fields(c + dc, 0.0, lo, hi)[0], pot)
    hm = hamiltonian(family.fields(c - dc, 0.0, lo, hi)[0], pot)
    return (hp - hm) / (2 * dc)


# ---------------------------------------------------------------------------
# decomposition

@dataclass(frozen=True, eq=False)
class ModulationState:
    c: np.ndarray
    x: np.ndarray
    v: LatticeField
    orth: np.ndarray
    iterations: int
    history: tuple = ()
    gram: GramMatrix | None = None

    @property
    def orth_max(self):
        return float(np.max(np.abs(self.orth))) if self.orth.size else 0.0


def decompose(u, guess_c, guess_x, family, eps, orth_tol=None, max_iter=50, cond_max=1e12):
    """Newton iteration for (c_i, x_i) making the remainder orthogonal.

    Converged when every raw pairing is below orth_tol (default
    1e-9 ||u||). Raises ConvergenceError after max_iter iterations and
    FPUError when the Gram matrix is ill-conditioned (waves too close).
    """
    c = np.array(guess_c, dtype=float)
    x = np.array(guess_x, dtype=float)
    if c.shape != x.shape:
        raise ValueError("guess_c and guess_x differ in length")
    if np.any(np.diff(x) <= 0):
        raise ValueError("centres must be strictly increasing")
    tol = orth_tol if orth_tol is not None else 1e-9 * u.norm()
    lo, hi = u.window_lo, u.window_hi
    history = []
    for it in range(max_iter + 1):
        tg = _tangents(c, x, family, lo, hi)
        v = u
        for ui in tg.u:
            v = v - ui
        raw = _raw_pairings(v, tg)
        history.append(float(np.max(np.abs(raw))))
        if history[-1] <= tol:
            gram = _gram_from(tg, c, x, eps, family.pot)
            return ModulationState(c, x, v, raw, it, tuple(history), gram)
        if it == max_iter:
            break
        A = _assemble(tg, eps)
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > cond_max:
            raise FPUError(f"Gram matrix ill-conditioned (cond = {cond:.3e}); "
                           "waves are not separated enough")
        sol = np.linalg.solve(A, _scaled_pairings(v, tg, eps))
        c = c + eps ** 3 * sol[0::2]
        x = x - sol[1::2]
        if np.any(c <= 1) or not np.all(np.isfinite(x)):
            raise ConvergenceError("Newton step left the admissible region", history[-1], history)
    raise ConvergenceError(f"decomposition did not converge in {max_iter} iterations "
                           f"(residual {history[-1]:.3e}, tol {tol:.3e})", history[-1], history)


def project_out(f, c, x, family, eps):
    """Remove from f its component along the tangent directions (returns Q f)."""
    tg = _tangents(c, x, family, f.window_lo, f.window_hi)
    sol = np.linalg.solve(_assemble(tg, eps), _scaled_pairings(f, tg, eps))
    out = f
    for j in range(len(c)):
        out = out - (eps ** 3 * sol[2 * j]) * tg.uc[j] - sol[2 * j + 1] * tg.ux[j]
    return out


def orthogonality_residuals(f, c, x, family):
    tg = _tangents(c, x, family, f.window_lo, f.window_hi)
    return _raw_pairings(f, tg)


def initial_guess(u, N, family, eps, L0=10.0):
    """Centres from the N highest peaks of r, speeds from their heights."""
    min_dist = max(1, int(L0 / (2 * eps)))
    peaks, props = find_peaks(u.r, distance=min_dist, height=0.0)
    if peaks.size < N:
        raise FPUError(f"found {peaks.size} peaks, expected {N}")
    top = np.sort(peaks[np.argsort(props["peak_heights"])[::-1][:N]])
    xs, cs = [], []
    for k in top:
        k = int(np.clip(k, 1, u.size - 2))
        y0, y1, y2 = u.r[k - 1], u.r[k], u.r[k + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        xs.append(u.window_lo + k + off)
        cs.append(_speed_from_height(y1 - 0.125 * (y0 - y2) * off, family))
    return np.array(cs), np.array(xs)


def _speed_from_height(A, family):
    # invert the amplitude map on the family; small-amplitude law A ~ 6 eps^2
    from scipy.optimize import brentq
    for lo, hi, _, _ in family.intervals:
        alo, ahi = family.amplitude(lo), family.amplitude(hi)
        if alo <= A <= ahi:
            return brentq(lambda c: family.amplitude(c) - A, lo, hi, xtol=1e-14)
    return 1.0 + A / 36.0


# ---------------------------------------------------------------------------
# tracking

@dataclass(frozen=True, eq=False)
class TrackResult:
    times: np.ndarray
    c: np.ndarray          # (T, N)
    x: np.ndarray          # (T, N)
    l2_residual: np.ndarray
    w_residual: np.ndarray
    x_star_residual: np.ndarray
    orth_residual_max: np.ndarray
    iterations: np.ndarray
    truncated: bool = False
    failure: str = ""
    states: tuple = ()

    @property
    def N(self):
        return self.c.shape[1]

    def to_csv(self, path):
        N = self.N
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"c_{i + 1}" for i in range(N)] + [f"x_{i + 1}" for i in range(N)]
                       + ["l2_residual", "w_residual", "orth_residual_max"])
            for k, t in enumerate(self.times):
                w.writerow([f"{t:.16e}"] + [f"{v:.16e}" for v in self.c[k]]
                           + [f"{v:.16e}" for v in self.x[k]]
                           + [f"{self.l2_residual[k]:.16e}", f"{self.w_residual[k]:.16e}",
                              f"{self.orth_residual_max[k]:.16e}"])


def track(traj, guess_c, guess_x, family, eps, a=None, keep_states=False, **kw):
    """Warm-started decomposition of every snapshot of a trajectory."""
    c = np.array(guess_c, dtype=float)
    x = np.array(guess_x, dtype=float)
    if a is None:
        a = kappa_of_c(float(np.min(c)))
    rows = []
    states = []
    failure = ""
    t_prev = traj.times[0]
    for k, (t, u) in enumerate(zip(traj.times, traj.states)):
        gx = x + c * (t - t_prev)
        try:
            st = decompose(u, c, gx, family, eps, **kw)
        except FPUError as exc:
            if k == 0:
                raise
            failure = f"t = {t:.6g}: {exc}"
            break
        c, x, t_prev = st.c, st.x, t
        rows.append((t, st.c.copy(), st.x.copy(), st.v.norm(),
                     weighted_norm(st.v, w_weight(a, st.x)),
                     min(weighted_norm(st.v, x_star_weight(a, xi)) for xi in st.x),
                     st.orth_max, st.iterations))
        if keep_states:
            states.append(st)
    col = lambda i: np.array([r[i] for r in rows])
    return TrackResult(col(0), np.array([r[1] for r in rows]), np.array([r[2] for r in rows]),
                       col(3), col(4), col(5), col(6), col(7).astype(int), bool(failure), failure,
                       tuple(states))
