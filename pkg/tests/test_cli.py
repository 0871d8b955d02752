import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fpu_nsoliton.cli import main
from fpu_nsoliton.config import load_config, parse_config
from fpu_nsoliton.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

N1 = """
[experiment]
kind = construct
workers = 1
[potential]
name = toda
[solitons]
eps = 0.15
k = 1
[construct]
t = 0
n_schedule = 50, 100, 150, 200
"""

N2_SMALL = """
[experiment]
kind = construct
workers = 1
[solitons]
eps = 0.2
k = 1, 2
gamma = 0, 30
[construct]
t = 0
n_schedule = 10, 20, 30, 40
tol = {tol}
"""


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


def test_construct_one_soliton_end_to_end(tmp_path, capsys):
    cfg = _write(tmp_path, N1)
    out = tmp_path / "out"
    assert main(["construct", str(cfg), "--output-dir", str(out)]) == 0
    assert "PASS one-soliton diffs" in capsys.readouterr().out
    with open(out / "shoot_diffs.csv") as fh:
        rows = list(csv.DictReader(fh))
    # stops after the first increment already meets the tolerance
    assert len(rows) >= 1
    assert all(float(r["l2_diff"]) <= 1e-6 for r in rows)
    man = json.loads((out / "manifest.json").read_text())
    assert man["passed"] is True
    assert set(man["files"]) >= {"shoot_diffs.csv", "limit.csv", "summary.json"}
    for f, digest in man["files"].items():
        assert hashlib.sha256((out / f).read_bytes()).hexdigest() == digest
    assert man["config"]["solitons"]["k"] == [1.0]
    assert {"numpy", "scipy", "numba", "python"} <= set(man["versions"])

    # determinism: a rerun reproduces every CSV byte for byte
    out2 = tmp_path / "out2"
    assert main(["construct", str(cfg), "--output-dir", str(out2)]) == 0
    assert _csvs(out) == _csvs(out2)


def test_profile_rerun_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["profile", str(CONFIGS / "profile.ini"), "--output-dir", str(out)]) == 0
        outs.append(_csvs(out))
    assert outs[0] == outs[1] and len(outs[0]) == 2


def test_failed_check_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, N2_SMALL.format(tol=1e-14))
    assert main(["construct", str(cfg), "--output-dir", str(tmp_path / "o")]) == 1
    assert "FAIL final increment" in capsys.readouterr().out
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["passed"] is False


def test_stage_error_exit_code(tmp_path, capsys):
    text = N2_SMALL.format(tol=1e-5) + "[numerics]\nwindow_lo = -20\nwindow_hi = 20\n"
    cfg = _write(tmp_path, text)
    assert main(["construct", str(cfg), "--output-dir", str(tmp_path / "o")]) == 3
    assert "error in stage 'construct_limit'" in capsys.readouterr().err


def test_rejects_decreasing_k(tmp_path, capsys):
    cfg = _write(tmp_path, N1.replace("k = 1", "k = 2, 1\ngamma = 0, 10"))
    assert main(["construct", str(cfg)]) == 2
    assert "k must be strictly increasing" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path):
    text = N1.replace("eps = 0.15", "eps = 0.15\nepsilon = 0.1")
    with pytest.raises(ConfigError, match=r"c\.ini:9 \[solitons\] epsilon: unknown key"):
        load_config(_write(tmp_path, text))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[experiment]\nkind = profile\n[bogus]\nx = 1\n")


def test_kind_mismatch_and_bad_values():
    with pytest.raises(ConfigError, match="subcommand"):
        parse_config(N1, kind="profile")
    with pytest.raises(ConfigError, match="dt must lie"):
        parse_config(N1 + "[numerics]\ndt = 0.5\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config(N1.replace("eps = 0.15", "eps = small"))
    with pytest.raises(ConfigError, match="n_schedule"):
        parse_config(N1.replace("50, 100, 150, 200", "50, 40, 150, 200"))


def test_env_overrides(tmp_path):
    cfg = parse_config(N1, env={"OUTPUT_DIR": str(tmp_path / "env"), "WORKERS": "3"})
    assert cfg.output_dir == str(tmp_path / "env") and cfg.workers == 3
    cfg = parse_config(N1, env={})
    assert cfg.output_dir == "output" and cfg.workers == 1


def test_console_script_runs(tmp_path):
    # the module entry point behaves like main()
    out = tmp_path / "p"
    r = subprocess.run([sys.executable, "-m", "fpu_nsoliton.cli", "profile",
                        str(CONFIGS / "profile.ini"), "--output-dir", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out / "profile_1.csv").exists() and (out / "manifest.json").exists()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name, env={})
    assert cfg.kind in name
