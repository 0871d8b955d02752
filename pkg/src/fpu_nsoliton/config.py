"""INI-style experiment configuration.

Sections: [experiment] (kind, output_dir, workers), [potential],
[solitons], [numerics] and one section named after each experiment kind.
Unknown sections or keys are rejected with their line number.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .lattice import alpha_fpu, harmonic, toda

KINDS = ("profile", "simulate", "construct", "decompose", "diagnose")
DIAGNOSE_EXPERIMENTS = ("free-decay", "interaction", "virial", "linearized-decay")

# key -> (type, default); None default means required when the section is used
SCHEMA = {
    "experiment": {"kind": (str, None), "output_dir": (str, "output"),
                   "workers": (int, 0)},
    "potential": {"name": (str, "toda"), "a": (float, 36.0), "b": (float, 1.0 / 6.0),
                  "alpha": (float, 1.0 / 36.0)},
    "solitons": {"eps": (float, 0.1), "k": ("floats", (1.0,)), "gamma": ("floats", ()),
                 "l0": (float, 10.0), "eps0": (float, 0.2)},
    "numerics": {"dt": (float, 0.01), "scheme": (str, "yoshida4"), "tail_tol": (float, 1e-14),
                 "orth_tol": (float, math.nan), "profile_tol": (float, 1e-10),
                 "points_per_site": (int, 10), "window_lo": (int, None),
                 "window_hi": (int, None)},
    "profile": {"c": ("floats", ())},
    "simulate": {"t0": (float, 0.0), "t1": (float, 50.0), "snapshots": (int, 11),
                 "initial": (str, "solitons"), "initial_file": (str, ""),
                 "write_states": (bool, False)},
    "construct": {"t": (float, 0.0), "n_schedule": ("floats", ()), "count": (int, 8),
                  "tol": (float, 1e-5), "horizon": (float, 0.0), "fit_from": (float, math.nan),
                  "track_from": (float, math.nan)},
    "decompose": {"input": (str, ""), "t": (float, 0.0)},
    "diagnose": {"experiment": (str, "free-decay"), "a": (float, 0.1), "c": (float, 1.01),
                 "duration": (float, 2000.0), "separations": ("floats", ()),
                 "t_end": (float, 1000.0), "snapshots": (int, 21)},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    output_dir: str
    workers: int
    potential: dict
    solitons: dict
    numerics: dict
    section: dict
    source: str = ""
    raw: dict = field(default_factory=dict)

    def make_potential(self):
        p = self.potential
        name = p["name"].lower()
        if name == "toda":
            return toda(p["a"], p["b"])
        if name in ("alpha-fpu", "alpha_fpu", "fpu"):
            return alpha_fpu(p["alpha"])
        if name == "harmonic":
            return harmonic()
        raise ConfigError(f"[potential] name: unknown potential {p['name']!r}")

    def soliton_parameters(self):
        from .construct import SolitonParameters
        s = self.solitons
        return SolitonParameters(s["eps"], tuple(s["k"]), tuple(s["gamma"]), s["eps0"], s["l0"])

    @property
    def window(self):
        lo, hi = self.numerics["window_lo"], self.numerics["window_hi"]
        if lo is None and hi is None:
            return None
        if lo is None or hi is None or hi <= lo:
            raise ConfigError("[numerics] window_lo and window_hi must both be set, lo < hi")
        return (lo, hi)

    def echo(self):
        """Parsed values as plain data for the manifest."""
        return {"kind": self.kind, "potential": self.potential, "solitons": self.solitons,
                "numerics": self.numerics, self.kind: self.section}


def _line_numbers(text):
    lines, sec = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip().lower()
            lines[(sec, None)] = i
        elif sec and s and not s.startswith(("#", ";")):
            key = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            lines.setdefault((sec, key), i)
    return lines


def _convert(kind, raw, where):
    try:
        if kind == "floats":
            parts = [x for x in raw.replace(",", " ").split() if x]
            vals = tuple(float(x) for x in parts)
            if any(not math.isfinite(v) for v in vals):
                raise ValueError("non-finite entry")
            return vals
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if kind is str:
            return raw.strip()
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None


def parse_config(text, source="<string>", env=None, kind=None):
    """Parse and validate; ``kind`` (from the subcommand) fills or must match [experiment] kind."""
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_numbers(text)

    def where(sec, key=None):
        ln = lines.get((sec, key)) or lines.get((sec, None))
        loc = f"{source}:{ln}" if ln else source
        return f"{loc} [{sec}]" + (f" {key}" if key else "")

    values = {}
    for sec in cp.sections():
        s = sec.lower()
        if s not in SCHEMA:
            raise ConfigError(f"{where(s)}: unknown section; expected one of {sorted(SCHEMA)}")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[s]:
                raise ConfigError(f"{where(s, key)}: unknown key; expected one of "
                                  f"{sorted(SCHEMA[s])}")
            values[(s, key)] = _convert(SCHEMA[s][key][0], raw, where(s, key))

    def get(sec, key):
        if (sec, key) in values:
            return values[(sec, key)]
        return SCHEMA[sec][key][1]

    cfg_kind = get("experiment", "kind")
    if kind is not None and cfg_kind is not None and cfg_kind.lower() != kind.lower():
        raise ConfigError(f"{where('experiment', 'kind')}: config is for {cfg_kind!r} "
                          f"but the subcommand is {kind!r}")
    kind = kind or cfg_kind
    if kind is None:
        raise ConfigError(f"{source}: [experiment] kind is required (one of {KINDS})")
    kind = kind.lower()
    if kind not in KINDS:
        raise ConfigError(f"{where('experiment', 'kind')}: kind {kind!r} not in {KINDS}")
    block = lambda sec: {k: get(sec, k) for k in SCHEMA[sec]}
    exp = block("experiment")
    out = env.get("OUTPUT_DIR") or exp["output_dir"]
    workers = int(env["WORKERS"]) if env.get("WORKERS") else exp["workers"]
    if workers <= 0:
        workers = os.cpu_count() or 1
    cfg = ExperimentConfig(kind, out, workers, block("potential"), block("solitons"),
                           block("numerics"), block(kind), source,
                           {f"{s}.{k}": v for (s, k), v in values.items()})
    _validate(cfg, where)
    return cfg


def _validate(cfg, where):
    num, sol, sec = cfg.numerics, cfg.solitons, cfg.section
    if not 0 < num["dt"] <= 0.05:
        raise ConfigError(f"{where('numerics', 'dt')}: dt must lie in (0, 0.05]")
    if num["scheme"] not in ("leapfrog", "yoshida4"):
        raise ConfigError(f"{where('numerics', 'scheme')}: scheme must be leapfrog or yoshida4")
    if not 0 < num["tail_tol"] < 1e-3:
        raise ConfigError(f"{where('numerics', 'tail_tol')}: tail_tol must lie in (0, 1e-3)")
    if not 0 < num["profile_tol"] < 1e-3:
        raise ConfigError(f"{where('numerics', 'profile_tol')}: profile_tol must lie in (0, 1e-3)")
    if num["points_per_site"] < 2:
        raise ConfigError(f"{where('numerics', 'points_per_site')}: need at least 2")
    cfg.make_potential()
    if cfg.kind in ("simulate", "construct", "decompose") or (
            cfg.kind == "diagnose" and sec["experiment"] in ("virial", "linearized-decay",
                                                              "interaction")):
        try:
            cfg.soliton_parameters()
        except ConfigError as exc:
            raise ConfigError(f"{where('solitons')}: {exc}") from None
    cfg.window
    if cfg.kind == "profile":
        if not sec["c"]:
            raise ConfigError(f"{where('profile', 'c')}: at least one speed is required")
        for c in sec["c"]:
            if not 0 < c - 1 <= 0.2:
                raise ConfigError(f"{where('profile', 'c')}: c = {c} outside (1, 1.2]")
    if cfg.kind == "simulate":
        if sec["snapshots"] < 2:
            raise ConfigError(f"{where('simulate', 'snapshots')}: need at least 2")
        if sec["initial"] not in ("solitons", "file"):
            raise ConfigError(f"{where('simulate', 'initial')}: must be 'solitons' or 'file'")
        if sec["initial"] == "file" and not sec["initial_file"]:
            raise ConfigError(f"{where('simulate', 'initial_file')}: required for initial = file")
    if cfg.kind == "construct":
        ns = sec["n_schedule"]
        if ns and (len(ns) < 4 or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] <= sec["t"]):
            raise ConfigError(f"{where('construct', 'n_schedule')}: need >= 4 increasing "
                              "terminal times above t")
        if sec["count"] < 4:
            raise ConfigError(f"{where('construct', 'count')}: need at least 4")
        if not 0 < sec["tol"] < 1:
            raise ConfigError(f"{where('construct', 'tol')}: tol must lie in (0, 1)")
        if sec["horizon"] < 0:
            raise ConfigError(f"{where('construct', 'horizon')}: must be >= 0")
    if cfg.kind == "diagnose":
        if sec["experiment"] not in DIAGNOSE_EXPERIMENTS:
            raise ConfigError(f"{where('diagnose', 'experiment')}: must be one of "
                              f"{DIAGNOSE_EXPERIMENTS}")
        if not sec["a"] > 0:
            raise ConfigError(f"{where('diagnose', 'a')}: a must be positive")
        if sec["snapshots"] < 2:
            raise ConfigError(f"{where('diagnose', 'snapshots')}: need at least 2")


def load_config(path, env=None, kind=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), env, kind)
