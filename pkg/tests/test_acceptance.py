"""End-to-end acceptance criteria, one PASS/FAIL line each in the session summary."""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from semirel import checks
from semirel import fields as F
from semirel.config import load_config, parse_config
from semirel.constants import PhysicalConstants
from semirel.dynamics import evolve, plane_wave, run_selfconsistent
from semirel.fields import Grid
from semirel.hamiltonian import Potentials

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def pair_runs():
    """The 1000-step two-orbital minimal-model run in both self-consistency modes."""
    cfg, _ = load_config(DATA / "pair_minimal.cfg")
    return {
        mode: run_selfconsistent(cfg.replace(selfconsistency=mode))[1]
        for mode in ("one-corrector", "lagged")
    }


def energy_drift(rows):
    e0 = rows[0]["energy_total"]
    return max(abs(r["energy_total"] - e0) for r in rows) / abs(e0)


def test_criterion_1_decomposition_identity(verdict):
    start = time.perf_counter()
    rho_err, j_err = checks.decomposition_errors(n_states=20)
    elapsed = time.perf_counter() - start
    ok = rho_err <= 1e-12 and j_err <= 1e-11 and elapsed < 30
    assert verdict(
        "1 decomposition identity", ok,
        f"density {rho_err:.2e} (<=1e-12), current {j_err:.2e} (<=1e-11), {elapsed:.1f} s (<30 s)",
    )


def test_criterion_2_continuity(verdict, pair_runs):
    full, minimal = checks.continuity_static()
    mutated = checks.continuity_mutation()
    rows = pair_runs["one-corrector"]
    run_worst = max(r["continuity_residual_l2"] for r in rows)
    ok = full <= 1e-8 and minimal <= 1e-8 and run_worst <= 1e-7 and mutated > 1e-4 and len(rows) == 1001
    assert verdict(
        "2 continuity", ok,
        f"static full {full:.2e} minimal {minimal:.2e} (<=1e-8), "
        f"worst of {len(rows)} run steps {run_worst:.2e} (<=1e-7), SOC x1.1 mutation {mutated:.2e} (>1e-4)",
    )


def test_criterion_3_variational_source_check(verdict):
    static = checks.variational_static()
    spacetime = checks.variational_spacetime()
    rs = checks.convergence_ratios(static)
    rt = checks.convergence_ratios(spacetime)
    ok = static[-1] <= 1e-6 and np.all(np.abs(rs - 10) <= 1) and np.all(np.abs(rt - 10) <= 1)
    assert verdict(
        "3 variational sources", ok,
        f"static error at 1e-5 {static[-1]:.2e} (<=1e-6), static ratios "
        + ", ".join(f"{r:.2f}" for r in rs) + ", spacetime ratios "
        + ", ".join(f"{r:.2f}" for r in rt) + " (10+-1)",
    )


def test_criterion_4_inverse_c_squared_scaling(verdict):
    res = checks.scaling_ratios()
    j_rel_at_zero = res.pop("j_rel_at_A0_max")
    worst = max(res.values())
    ok = worst <= 1e-9 and j_rel_at_zero == 0.0
    assert verdict(
        "4 1/c^2 scaling", ok,
        f"worst |f(c) - 4 f(2c)| / |4 f(2c)| over {len(res)} pieces {worst:.2e} (<=1e-9), "
        f"mass-correction current at A=0 {j_rel_at_zero:.1e} (==0)",
    )


def _larmor_worst_error():
    b = 2.0
    cfg, _ = parse_config(
        "grid.n = 2\ngrid.L = 6.283185307179586\nscenario.name = uniform_spin_sample\n"
        f"scenario.spin = 1 0 0\nscenario.direct_b = 0 0 {b}\nmodel.interactions = false\n"
        "time.dt = 0.001\ntime.steps = 3000\noutput.cadence = 100\n"
    )
    _, rows = run_selfconsistent(cfg)
    t = np.array([r["time"] for r in rows])
    sx = np.array([r["sx"] for r in rows])
    k = cfg.constants
    w = abs(k.charge) * b / (2 * k.mass)
    sol = solve_ivp(lambda _, y: [-1j * w * y[0], 1j * w * y[1]], (0, t[-1]),
                    np.array([1, 1], dtype=complex) / math.sqrt(2), t_eval=t,
                    method="DOP853", rtol=1e-12, atol=1e-14)
    oracle = 2 * np.real(np.conj(sol.y[0]) * sol.y[1])
    closed = np.cos(abs(k.charge) * b * t / k.mass)
    return max(np.max(np.abs(sx - oracle)), np.max(np.abs(sx - closed)))


def test_criterion_5_analytic_dynamics_oracles(verdict):
    grid = Grid(8, 2 * np.pi)
    k = PhysicalConstants()
    psi0 = plane_wave(grid, (1, 0, 0))
    psi = evolve(psi0, Potentials(grid), k, 1e-3, 1000)
    fidelity = abs(F.l2_inner(psi0 * np.exp(-0.5j), psi, grid)) ** 2
    larmor = _larmor_worst_error()
    _, glob = checks.rk4_state_errors()
    orders = np.log2(glob[:-1] / glob[1:])
    ok = fidelity >= 1 - 1e-10 and larmor <= 1e-6 and np.all(np.abs(orders - 4) <= 0.2)
    assert verdict(
        "5 dynamics oracles", ok,
        f"plane-wave infidelity at t=1 {1 - fidelity:.1e} (<=1e-10), Larmor sx error {larmor:.2e} (<=1e-6), "
        "RK4 orders " + ", ".join(f"{o:.3f}" for o in orders) + " (4+-0.2)",
    )


def test_criterion_6_poisson_solvers(verdict):
    cosine, gaussian, round_trip = checks.poisson_errors()
    ok = cosine <= 1e-12 and gaussian <= 1e-5 and round_trip <= 1e-11
    assert verdict(
        "6 Poisson solvers", ok,
        f"cosine {cosine:.2e} (<=1e-12), Gaussian interior {gaussian:.2e} (<=1e-5), "
        f"round trip {round_trip:.2e} (<=1e-11)",
    )


def test_criterion_7_hermiticity(verdict, pair_runs):
    defect = checks.hermiticity_worst(pairs=50)
    residue = checks.energy_residue_during_run()
    run_residue = max(r["energy_imaginary_residue"] for rows in pair_runs.values() for r in rows)
    ok = defect <= 1e-10 and residue <= 1e-8 and run_residue <= 1e-8
    assert verdict(
        "7 Hermiticity", ok,
        f"defect over 50 pairs {defect:.2e} (<=1e-10), energy imaginary residue along RK4 path "
        f"{residue:.2e} and over both 1000-step runs {run_residue:.2e} (<=1e-8)",
    )


def test_criterion_8_conservation(verdict):
    neutral = checks.integral_neutrality()
    drifts, orders = checks.rk4_norm_drift()
    ok = neutral <= 1e-12 and np.all(orders >= 5.0)
    assert verdict(
        "8 conservation", ok,
        f"|int rho_full - int rho_free| / |int rho_free| {neutral:.2e} (<=1e-12), per-step norm drift "
        + ", ".join(f"{d:.1e}" for d in drifts) + " with orders "
        + ", ".join(f"{o:.2f}" for o in orders) + " (>=5)",
    )


def test_criterion_9_check_command(verdict):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "semirel", "check"], capture_output=True, text=True,
                          timeout=600)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    assert verdict("9 check command", ok, f"exit {proc.returncode}, {elapsed:.1f} s (<300 s); {summary}"), proc.stdout


def test_pair_run_energy_bookkeeping(verdict, pair_runs):
    corrected = energy_drift(pair_runs["one-corrector"])
    lagged = energy_drift(pair_runs["lagged"])
    ok = corrected <= 1e-6 and corrected < lagged
    assert verdict(
        "energy drift over 1000 steps", ok,
        f"one-corrector {corrected:.2e} (<=1e-6), lagged {lagged:.2e}",
    )
