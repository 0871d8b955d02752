import numpy as np
import pytest
from scipy.linalg import expm

from fpu_nsoliton.errors import BlowUpError
from fpu_nsoliton.integrator import evolve, integrate, step
from fpu_nsoliton.lattice import LatticeField, alpha_fpu, harmonic, hamiltonian, toda
from fpu_nsoliton.profiles import kappa_of_c, toda_soliton

KAPPA = kappa_of_c(1.004)


def linear_generator(size):
    # d/dt (r, p) for V = r^2/2 with zero ghost sites
    D = np.eye(size, k=1) - np.eye(size)          # p(n+1) - p(n)
    B = np.eye(size) - np.eye(size, k=-1)         # r(n) - r(n-1)
    Z = np.zeros((size, size))
    return np.block([[Z, D], [B, Z]])


def packet(lo, hi, xi=0.8, width=6.0, x0=0.0):
    n = np.arange(lo, hi + 1)
    env = np.exp(-((n - x0) / width) ** 2)
    return LatticeField(lo, env * np.cos(xi * n), env * np.sin(xi * n))


def test_zero_state_is_fixed():
    z = LatticeField.zeros(-10, 10)
    for scheme in ("leapfrog", "yoshida4"):
        assert step(z, toda(), 0.01, scheme).norm() == 0.0


@pytest.mark.parametrize("scheme", ["leapfrog", "yoshida4"])
def test_step_reversible(scheme, rng):
    u = LatticeField(0, 0.3 * rng.normal(size=40), 0.3 * rng.normal(size=40))
    pot = toda()
    back = step(step(u, pot, 0.01, scheme), pot, -0.01, scheme)
    assert np.max(np.abs(back.r - u.r)) <= 1e-12
    assert np.max(np.abs(back.p - u.p)) <= 1e-12


def test_step_rejects_large_dt():
    with pytest.raises(ValueError):
        step(LatticeField.zeros(0, 3), toda(), 0.1)


def test_plane_wave_against_diagonalization():
    u0 = packet(-60, 60)
    t1 = 10.0
    exact = expm(linear_generator(u0.size) * t1) @ np.r_[u0.r, u0.p]
    errs = []
    for dt in (0.02, 0.01):
        u = evolve(u0, harmonic(), t1, dt)
        errs.append(np.linalg.norm(np.r_[u.r, u.p] - exact))
    assert errs[1] <= 2e-4
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_plane_wave_frequency():
    # a broad packet of the mode exp(i(xi n - omega t)), omega = 2 sin(xi/2)
    xi, t1 = 0.8, 5.0
    om = 2 * np.sin(xi / 2)
    n = np.arange(-400, 401)
    env = np.exp(-(n / 80.0) ** 2)
    z = env * np.exp(1j * xi * n)
    zp = -1j * om / (np.exp(1j * xi) - 1) * z
    u0 = LatticeField(-400, z.real, zp.real)
    u = evolve(u0, harmonic(), t1, 0.005)
    core = slice(380, 421)
    basis = np.c_[np.cos(xi * n[core]), np.sin(xi * n[core])]
    (a, b), *_ = np.linalg.lstsq(basis, u.r[core], rcond=None)
    phase = np.arctan2(b, a)
    diff = np.angle(np.exp(1j * (phase - om * t1)))
    assert abs(diff) <= 2e-3


def test_zero_duration():
    u0 = packet(-20, 20)
    tr = integrate(u0, toda(), 3.0, 3.0, 0.01)
    assert tr.times.tolist() == [3.0]
    np.testing.assert_array_equal(tr.final.r, u0.r)


def test_backward_recovers_initial():
    pot = toda()
    u0 = toda_soliton(KAPPA, 0.0, 0.0, -150, 150)
    u1 = integrate(u0, pot, 0.0, 20.0, 0.01).final
    back = integrate(u1, pot, 20.0, 0.0, 0.01).final
    assert (back - u0).norm() <= 1e-8


def test_observation_grid_checks():
    u0 = packet(-20, 20)
    with pytest.raises(ValueError):
        integrate(u0, toda(), 0.0, 1.0, 0.01, observe_at=[0.005])
    with pytest.raises(ValueError):
        integrate(u0, toda(), 0.0, 1.0, 0.01, observe_at=[2.0])
    with pytest.raises(ValueError):
        integrate(u0, toda(), 0.0, 1.0, 0.3)
    tr = integrate(u0, toda(), 1.0, 0.0, 0.01, observe_at=[1.0, 0.5, 0.0])
    assert np.all(np.diff(tr.times) < 0)


def test_toda_soliton_propagation():
    pot = toda()
    u0 = toda_soliton(KAPPA, 0.0, 0.0, -150, 200)
    tr = integrate(u0, pot, 0.0, 50.0, 0.01, scheme="yoshida4")
    exact = toda_soliton(KAPPA, 0.0, 50.0, -150, 200)
    assert (tr.final - exact).norm() <= 1e-6
    assert tr.max_drift <= 1e-8


def test_energy_drift_long_run():
    pot = toda()
    u0 = toda_soliton(KAPPA, 0.0, 0.0, -150, 250)
    tr = integrate(u0, pot, 0.0, 100.0, 1e-3, observe_at=list(np.linspace(0, 100, 11)))
    assert tr.max_drift <= 1e-8
    assert not tr.drift_warning
    norms = [s.norm() for s in tr.states]
    assert max(norms) <= 1.01 * norms[0]


@pytest.mark.parametrize("scheme,lo,hi", [("leapfrog", 3.5, 4.5), ("yoshida4", 12.0, 20.0)])
def test_convergence_order(scheme, lo, hi):
    pot = alpha_fpu()
    u0 = packet(-50, 50, 0.6, 5.0)
    u0 = u0 * 0.2
    t1 = 4.0
    ref = evolve(u0, pot, t1, 0.04 / 8, scheme)
    e1 = (evolve(u0, pot, t1, 0.04, scheme) - ref).norm()
    e2 = (evolve(u0, pot, t1, 0.02, scheme) - ref).norm()
    assert lo <= e1 / e2 <= hi


def test_blowup_reports_last_state():
    pot = alpha_fpu()
    n = np.arange(-5, 6)
    u0 = LatticeField(-5, -30.0 * np.exp(-n ** 2), np.zeros(11))
    with pytest.raises(BlowUpError) as exc:
        integrate(u0, pot, 0.0, 50.0, 0.01, check_every=10)
    last = exc.value.last_state
    assert np.all(np.isfinite(last.r)) and exc.value.time is not None


def test_trajectory_csv(tmp_path):
    u0 = packet(-20, 20)
    tr = integrate(u0, toda(), 0.0, 1.0, 0.01, observe_at=[0.0, 0.5, 1.0])
    tr.to_csv(tmp_path / "traj.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,energy,drift" and len(lines) == 4
    paths = tr.write_states(tmp_path / "states")
    assert len(paths) == 3
    assert LatticeField.from_csv(paths[-1]).window_lo == -20
    assert tr.energy[0] == pytest.approx(hamiltonian(u0, toda()))
