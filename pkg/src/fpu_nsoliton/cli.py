"""Command line entry point: fpu-nsoliton <kind> config.ini [--output-dir DIR].

Exit status: 0 when every check passed, 1 when a check failed, 2 for
configuration errors and 3 when an experiment stage raised.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .config import KINDS, load_config
from .construct import (SeparationSchedule, construct_limit, default_schedule, soliton_sum,
                        validate_forward, write_summary)
from .diagnostics import (VirialWeight, free_weighted_decay, interaction_size, fit_exponential,
                          linearized_decay, virial_energy, virial_energy_summed, write_table)
from .errors import ConfigError, FPUError
from .integrator import integrate
from .lattice import LatticeField, check_h1
from .modulation import decompose, initial_guess, track
from .profiles import ProfileFamily, solve_profile

log = logging.getLogger("fpu_nsoliton")


class Stage:
    """Context manager tagging downstream errors with the experiment stage."""

    current = "setup"

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        Stage.current = self.name
        log.info("stage: %s", self.name)

    def __exit__(self, *exc):
        return False


class Run:
    def __init__(self, cfg):
        self.cfg = cfg
        self.out = cfg.output_dir
        self.files = []
        self.checks = {}
        self.summary = {}
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.out, name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.files.append(name)
        return p

    def check(self, name, ok, detail=None):
        self.checks[name] = {"ok": bool(ok), "detail": detail}
        if not ok:
            log.warning("check failed: %s (%s)", name, detail)

    @property
    def passed(self):
        return all(c["ok"] for c in self.checks.values())


def _family(cfg, params):
    return ProfileFamily(cfg.make_potential(), params.speeds,
                         points_per_site=cfg.numerics["points_per_site"])


def run_profile(run):
    cfg = run.cfg
    pot = cfg.make_potential()
    rows = []
    for i, c in enumerate(cfg.section["c"]):
        with Stage(f"profile c={c}"):
            prof = solve_profile(c, pot, cfg.numerics["points_per_site"],
                                 tol=cfg.numerics["profile_tol"])
        prof.to_csv(run.path(f"profile_{i}.csv"), run.path(f"profile_{i}.json"))
        rows.append(prof.metadata())
        run.check(f"residual c={c}", prof.residual <= cfg.numerics["profile_tol"],
                  prof.residual)
    run.summary["profiles"] = rows
    run.summary["h1"] = check_h1(pot)


def _initial_state(cfg, params, fam, t):
    if cfg.section.get("initial", "solitons") == "file":
        return LatticeField.from_csv(cfg.section["initial_file"])
    lo, hi = cfg.window or (int(math.floor(min(params.x_plus(t)) - params.margin)),
                            int(math.ceil(max(params.x_plus(t)) + params.margin)))
    return soliton_sum(params, fam, t, lo, hi)


def run_simulate(run):
    cfg, sec = run.cfg, run.cfg.section
    pot = cfg.make_potential()
    params = fam = None
    if sec["initial"] == "solitons":
        params = cfg.soliton_parameters()
        with Stage("profiles"):
            fam = _family(cfg, params)
    with Stage("initial data"):
        u0 = _initial_state(cfg, params, fam, sec["t0"])
    t0, t1, dt = sec["t0"], sec["t1"], cfg.numerics["dt"]
    obs = t0 + np.round(np.linspace(0.0, t1 - t0, sec["snapshots"]) / dt) * dt
    obs[-1] = t1
    with Stage("integrate"):
        traj = integrate(u0, pot, t0, t1, dt, list(obs), cfg.numerics["scheme"])
    traj.to_csv(run.path("trajectory.csv"))
    if sec["write_states"]:
        for k, s in enumerate(traj.states):
            s.to_csv(run.path(os.path.join("states", f"state_{k:04d}.csv")))
    traj.final.to_csv(run.path("final_state.csv"))
    run.summary["max_energy_drift"] = traj.max_drift
    run.check("energy drift", not traj.drift_warning, traj.max_drift)


def run_construct(run):
    cfg, sec = run.cfg, run.cfg.section
    params = cfg.soliton_parameters()
    T, dt = sec["t"], cfg.numerics["dt"]
    with Stage("profiles"):
        fam = _family(cfg, params)
    ns = sec["n_schedule"] or default_schedule(params, T, sec["count"], dt=dt)
    with Stage("construct_limit"):
        limit, rep = construct_limit(params, fam, T, ns, sec["tol"], dt, cfg.window,
                                     cfg.numerics["scheme"], workers=cfg.workers)
    rep.to_csv(run.path("shoot_diffs.csv"))
    limit.to_csv(run.path("limit.csv"))
    run.summary["construct"] = rep.summary()
    run.summary["tolerances"] = {"tol": sec["tol"], "dt": dt, "scheme": cfg.numerics["scheme"]}
    if params.N == 1:
        run.check("one-soliton diffs", max(rep.deltas) <= 1e-6, max(rep.deltas))
    else:
        run.check("cauchy converging", rep.converging, rep.failure or None)
        run.check("final increment", rep.final_delta <= sec["tol"], rep.final_delta)
    run.check("energy drift", rep.max_energy_drift <= 1e-8, rep.max_energy_drift)
    if sec["horizon"] > 0:
        fit_from = None if math.isnan(sec["fit_from"]) else sec["fit_from"]
        with Stage("validate_forward"):
            fw = validate_forward(limit, params, fam, T, sec["horizon"], dt,
                                  scheme=cfg.numerics["scheme"], fit_from=fit_from,
                                  keep_trajectory=not math.isnan(sec["track_from"]))
        fw.to_csv(run.path("forward_error.csv"))
        run.summary["forward"] = {"beta": fw.beta, "fit": fw.fit, "e_T": fw.e_T,
                                  "e_T_over_eps32": fw.e_T / params.eps ** 1.5}
        if params.N >= 2:
            run.check("forward beta positive", fw.fit is not None and fw.beta > 0, fw.beta)
        if not math.isnan(sec["track_from"]):
            with Stage("track"):
                _track_forward(run, fw.trajectory, params, fam, sec["track_from"])


def _track_forward(run, traj, params, fam, t_from):
    from .integrator import Trajectory
    keep = traj.times >= t_from
    sub = Trajectory(traj.times[keep], tuple(s for s, k in zip(traj.states, keep) if k),
                     traj.energy[keep], traj.dt, traj.scheme)
    tr = track(sub, params.speeds, params.x_plus(sub.times[0]), fam, params.eps)
    tr.to_csv(run.path("modulation.csv"))
    run.summary["track"] = {"failure": tr.failure,
                            "max_orth_residual": float(np.max(tr.orth_residual_max))}
    run.check("tracking complete", not tr.truncated, tr.failure or None)


def run_decompose(run):
    cfg, sec = run.cfg, run.cfg.section
    params = cfg.soliton_parameters()
    with Stage("profiles"):
        fam = _family(cfg, params)
    with Stage("input"):
        if sec["input"]:
            u = LatticeField.from_csv(sec["input"])
        else:
            u = _initial_state(cfg, params, fam, sec["t"])
    orth_tol = cfg.numerics["orth_tol"]
    orth_tol = None if math.isnan(orth_tol) else orth_tol
    with Stage("decompose"):
        gc, gx = initial_guess(u, params.N, fam, params.eps, params.L0)
        st = decompose(u, gc, gx, fam, params.eps, orth_tol=orth_tol)
    st.v.to_csv(run.path("remainder.csv"))
    tol = orth_tol if orth_tol is not None else 1e-9 * u.norm()
    run.summary["decomposition"] = {"c": st.c, "x": st.x, "orth": st.orth,
                                    "iterations": st.iterations, "remainder_l2": st.v.norm(),
                                    "gram_condition": st.gram.condition}
    if not sec["input"]:
        run.summary["decomposition"]["c_error"] = np.abs(st.c - np.array(params.speeds))
        run.summary["decomposition"]["x_error"] = np.abs(st.x - params.x_plus(sec["t"]))
    run.check("orthogonality", st.orth_max <= tol, st.orth_max)


def _backward_background(cfg, params, fam, t_end, snaps):
    # backward run of the terminal sum; snapshots from t_end down to 0
    dt = cfg.numerics["dt"]
    u = _initial_state(cfg, params, fam, t_end)
    times = np.round(np.linspace(t_end, 0.0, snaps) / dt) * dt
    return integrate(u, fam.pot, t_end, 0.0, dt, list(times), cfg.numerics["scheme"])


def run_diagnose(run):
    cfg, sec = run.cfg, run.cfg.section
    exp = sec["experiment"]
    run.summary["experiment"] = exp
    if exp == "free-decay":
        n = np.arange(-20, 21)
        seed = LatticeField.from_arrays(n, np.exp(-0.1 * n ** 2), np.zeros(n.size))
        with Stage("free decay"):
            res = free_weighted_decay(seed, sec["a"], sec["c"], sec["duration"])
        write_table(run.path("free_decay.csv"), {"t": res.times, "weighted_norm": res.norms})
        run.summary.update(rate=res.rate, bound=res.bound, fit=res.fit)
        run.check("free bound", res.rate <= res.bound + 1e-3, res.rate - res.bound)
        return
    params = cfg.soliton_parameters()
    with Stage("profiles"):
        fam = _family(cfg, params)
    if exp == "interaction":
        p1, p2 = fam.profile(params.speeds[0]), fam.profile(params.speeds[-1])
        seps = np.array(sec["separations"] or np.arange(10, 61, 5) / (params.k[0] * params.eps))
        vals = np.array([interaction_size(p1, p2, s) for s in seps])
        write_table(run.path("interaction.csv"), {"sep": seps, "l1": vals[:, 0],
                                                   "linf": vals[:, 1]})
        fit = fit_exponential(seps, vals[:, 0])
        run.summary.update(fit=fit, kappa_1=params.kappas[0])
        run.check("interaction decays", fit.slope < 0, fit.slope)
    elif exp == "virial":
        with Stage("background"):
            traj = _backward_background(cfg, params, fam, sec["t_end"], sec["snapshots"])
        a = params.k[0] * params.eps
        single, summed = [], []
        for t, s in zip(traj.times, traj.states):
            v = s - soliton_sum(params, fam, t, s.window_lo, s.window_hi)
            xs = params.x_plus(t)
            single.append(virial_energy(v, VirialWeight(a, xs[0])))
            summed.append(virial_energy_summed(v, [VirialWeight(a, xi) for xi in xs]))
        write_table(run.path("virial.csv"), {"t": traj.times, "single": single,
                                              "summed": summed})
        run.check("virial bounded", all(np.isfinite(single)), None)
    elif exp == "linearized-decay":
        with Stage("background"):
            traj = _backward_background(cfg, params, fam, sec["t_end"], sec["snapshots"])
        x0 = params.x_plus(traj.times[0])
        n = np.arange(int(x0[0]) - 60, int(x0[0]) - 20)
        seed = LatticeField.from_arrays(n, np.exp(-0.02 * (n - n.mean()) ** 2), np.zeros(n.size))
        with Stage("linearized decay"):
            res = linearized_decay(traj, seed, sec["a"], params, fam)
        write_table(run.path("linearized_decay.csv"), {"t": res.times, "weighted_norm": res.norms})
        run.summary.update(rate=res.rate, fit=res.fit, eps3=params.eps ** 3)
        run.check("decay measured", res.fit is not None and math.isfinite(res.rate), res.rate)


RUNNERS = {"profile": run_profile, "simulate": run_simulate, "construct": run_construct,
           "decompose": run_decompose, "diagnose": run_diagnose}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import numba
    import scipy
    return {"fpu_nsoliton": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def execute(cfg):
    """Run one configured experiment; returns the Run with checks and files."""
    run = Run(cfg)
    t0 = time.perf_counter()
    RUNNERS[cfg.kind](run)
    run.summary["checks"] = run.checks
    write_summary(run.path("summary.json"), run.summary)
    manifest = {"config": cfg.echo(), "config_source": cfg.source, "versions": _versions(),
                "wall_time_s": time.perf_counter() - t0, "passed": run.passed,
                "files": {f: _sha256(os.path.join(run.out, f)) for f in run.files}}
    write_summary(os.path.join(run.out, "manifest.json"), manifest)
    return run


def build_parser():
    ap = argparse.ArgumentParser(prog="fpu-nsoliton",
                                 description="FPU lattice N-soliton backward shooting lab")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--output-dir", help="override [experiment] output_dir and OUTPUT_DIR")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    env = dict(os.environ)
    if args.output_dir:
        env["OUTPUT_DIR"] = args.output_dir
    try:
        cfg = load_config(args.config, env, args.kind)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    Stage.current = "setup"
    try:
        run = execute(cfg)
    except (FPUError, ValueError, OverflowError) as exc:
        print(f"error in stage '{Stage.current}': {exc}", file=sys.stderr)
        return 3
    for name, c in run.checks.items():
        print(f"{'PASS' if c['ok'] else 'FAIL'} {name}: {c['detail']}")
    print(f"outputs written to {run.out}")
    return 0 if run.passed else 1


if __name__ == "__main__":
    sys.exit(main())
