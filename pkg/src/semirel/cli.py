"""Command-line entry point: ``semirel run|check|sources|scaling|variational``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import checks
from . import fields as F
from . import sources as S
from .config import dump_config, load_config
from .constants import PhysicalConstants
from .diagnostics import DiagnosticsWriter
from .dynamics import init_scenario, run_selfconsistent
from .errors import ConfigError, NumericsError, SemirelError, SnapshotError
from .fields import Grid, OrbitalSet
from .hamiltonian import Potentials
from .snapshot import SnapshotMeta, load_snapshot, save_snapshot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_IO = 4


def _constants_tuple(k: PhysicalConstants):
    return (k.hbar, k.mass, k.charge, k.c, k.eps0)


def _meta(name, kind, grid, t, k, count=1):
    return SnapshotMeta(name, kind, grid.n, grid.L, float(t), _constants_tuple(k), count)


def _report_failures(failures, stream=None):
    """Machine-readable failure list on stdout, one JSON document."""
    stream = stream or sys.stdout
    stream.write(json.dumps({"failures": failures}, indent=1) + "\n")


# --- run -------------------------------------------------------------------------------------


def write_state_snapshots(state, model, out_dir):
    g, k = model.grid, model.k
    tag = f"{state.step:06d}"
    orbs = state.orbs
    norb = orbs.psi.shape[0]
    save_snapshot(
        os.path.join(out_dir, f"orbitals_{tag}.pmx"), orbs.psi if norb > 1 else orbs.psi[0],
        _meta("orbitals", "spinor", g, state.time, k, count=norb),
    )
    save_snapshot(os.path.join(out_dir, f"rho_free_{tag}.pmx"), S.rho_free(orbs),
                  _meta("rho_free", "scalar", g, state.time, k))
    pot = model.potentials(state.em, state.time)
    save_snapshot(os.path.join(out_dir, f"phi_{tag}.pmx"), pot.phi, _meta("phi", "scalar", g, state.time, k))
    save_snapshot(os.path.join(out_dir, f"A_{tag}.pmx"), pot.A, _meta("A", "vector", g, state.time, k))


def cmd_run(args):
    cfg, values = load_config(args.config)
    if args.out:
        cfg = cfg.replace(output_dir=args.out)
        values = dict(values, **{"output.dir": args.out})
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(values))
    with open(os.path.join(cfg.output_dir, "diagnostics.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = DiagnosticsWriter(fh)

        def on_output(state, row, model):
            writer.write(row)
            fh.flush()
            if cfg.output_snapshots:
                write_state_snapshots(state, model, cfg.output_dir)

        state, rows = run_selfconsistent(cfg, on_output=on_output)
    last = rows[-1]
    print(f"finished step {last['step']} at t={last['time']:.6g}; norm {last['norm_total']:.15g}")
    return EXIT_OK


# --- check -----------------------------------------------------------------------------------


def cmd_check(args):
    start = time.perf_counter()
    results = checks.run_suite(report=lambda r: print(r.line(), flush=True))
    elapsed = time.perf_counter() - start
    failures = [r.as_dict() for r in results if not r.passed]
    print(f"{len(results) - len(failures)}/{len(results)} checks passed in {elapsed:.1f} s")
    if failures:
        _report_failures(failures)
        return EXIT_NUMERICS
    return EXIT_OK


# --- sources ---------------------------------------------------------------------------------


def _load_field(path, kind, grid):
    arr, meta = load_snapshot(path)
    if meta.kind != kind:
        raise SnapshotError(f"{path}: expected a {kind} snapshot, found {meta.kind}")
    if tuple(meta.grid) != grid.n or not np.allclose(meta.box, grid.L, rtol=0, atol=0):
        raise SnapshotError(f"{path}: grid {meta.grid} box {meta.box} differs from the orbitals")
    return arr


SOURCE_FIELDS = (
    ("rho_free", "scalar"), ("rho_full", "scalar"), ("j_free", "vector"), ("j_full", "vector"),
    ("M", "vector"), ("P_spin", "vector"), ("P_darwin", "vector"), ("P_rate", "vector"),
)


def compute_sources(orb_path, phi_path=None, a_path=None, da_path=None):
    """Load orbitals (unit occupations) and optional potentials, return (bundle, grid, k, time)."""
    psi, meta = load_snapshot(orb_path)
    if meta.kind != "spinor":
        raise SnapshotError(f"{orb_path}: expected a spinor snapshot, found {meta.kind}")
    grid = Grid(meta.grid, meta.box)
    hbar, mass, charge, c, eps0 = meta.constants
    k = PhysicalConstants(hbar=hbar, mass=mass, charge=charge, c=c, eps0=eps0)
    orbs = OrbitalSet(psi if meta.count != 1 else psi[None], grid)
    pot = Potentials(
        grid,
        phi=None if phi_path is None else _load_field(phi_path, "scalar", grid),
        A=None if a_path is None else _load_field(a_path, "vector", grid),
        dA_dt=None if da_path is None else _load_field(da_path, "vector", grid),
    )
    dorbs = S.time_derivative(orbs, pot, k)
    bundle = S.source_bundle(orbs, dorbs, pot.A, pot.electric_field(), k, pot.dA_dt)
    return bundle, grid, k, meta.time


def cmd_sources(args):
    bundle, grid, k, t = compute_sources(args.snapshot, args.phi, args.A, args.dA_dt)
    os.makedirs(args.out, exist_ok=True)
    paths = {}
    for name, kind in SOURCE_FIELDS:
        paths[name] = os.path.join(args.out, f"{name}.pmx")
        save_snapshot(paths[name], getattr(bundle, name), _meta(name, kind, grid, t, k))
    reloaded = S.SourceBundle(**{name: load_snapshot(paths[name])[0] for name, _ in SOURCE_FIELDS})
    errors = {
        "density_identity": reloaded.density_identity_error(k, grid),
        "current_identity": reloaded.current_identity_error(k, grid),
    }
    limits = {"density_identity": 1e-12, "current_identity": 1e-11}
    for name, value in errors.items():
        status = "PASS" if value <= limits[name] else "FAIL"
        print(f"{status} {name}: {value:.3e} (limit {limits[name]:.0e})")
    failures = [
        {"name": n, "value": v, "limit": limits[n]} for n, v in errors.items() if not v <= limits[n]
    ]
    if failures:
        _report_failures(failures)
        return EXIT_NUMERICS
    return EXIT_OK


# --- scaling ---------------------------------------------------------------------------------


def scaling_from_config(cfg, c_values):
    """|f(c_a) - r f(c_b)| / |r f(c_b)| with r = (c_b/c_a)^2 for the configured initial state."""
    state, model = init_scenario(cfg)
    pot = model.potentials(state.em, 0.0)
    dorbs = S.time_derivative(state.orbs, pot, model.k, model.opt)
    pieces = [
        checks.second_order_pieces(state.orbs, dorbs, pot, model.k.with_c(c)) for c in c_values
    ]
    out = []
    for (ca, fa), (cb, fb) in zip(zip(c_values, pieces), zip(c_values[1:], pieces[1:])):
        r = (cb / ca) ** 2
        for name in fa:
            den = float(np.max(np.abs(r * fb[name])))
            if den == 0.0:
                value = float(np.max(np.abs(fa[name])))
            else:
                value = float(np.max(np.abs(fa[name] - r * fb[name]))) / den
            out.append((f"{name} c={ca:g}->{cb:g}", value))
    return out


def _parse_c_values(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--c-values must be comma separated numbers, got {text!r}") from None
    if len(values) < 2 or any(not np.isfinite(v) or v <= 0 for v in values):
        raise ConfigError("--c-values needs at least two positive numbers")
    return values


def cmd_scaling(args):
    cfg, _ = load_config(args.config)
    c_values = _parse_c_values(args.c_values)
    results = scaling_from_config(cfg, c_values)
    failures = []
    for name, value in results:
        ok = value <= args.tol
        print(f"{'PASS' if ok else 'FAIL'} scaling.{name}: {value:.3e} (limit {args.tol:.0e})")
        if not ok:
            failures.append({"name": name, "value": value, "limit": args.tol})
    if failures:
        _report_failures(failures)
        return EXIT_NUMERICS
    return EXIT_OK


# --- variational -----------------------------------------------------------------------------


def variational_from_config(cfg, eps_values, seed=0, a_pert=0.05):
    """Static-mode check on the configured initial state and its self-consistent potentials.

    The offset in dphi keeps the first variation large for localized states,
    where zero-mean noise alone could nearly cancel against the density. The
    energy is always that of the full Hamiltonian: the reduced model drops
    A-dependent terms, so its variation is not the full current.
    """
    state, model = init_scenario(cfg)
    opt = dataclasses.replace(model.opt, model="full")
    pot = model.potentials(state.em, 0.0)
    grid = model.grid
    rng = np.random.default_rng(seed)
    dphi = 1.0 + F.band_limited_noise(grid, (), rng, 1 / 4)
    dA = a_pert * F.band_limited_noise(grid, (3,), rng, 1 / 4)
    return [
        S.variational_check(state.orbs.psi, pot, dphi, dA, eps, model.k, mode="static",
                            opt=opt, weights=state.orbs.weights)
        for eps in eps_values
    ]


def cmd_variational(args):
    cfg, _ = load_config(args.config)
    eps_values = (1e-3, 1e-4, 1e-5)
    errors = variational_from_config(cfg, eps_values, seed=args.seed)
    ratios = checks.convergence_ratios(errors)
    for eps, err in zip(eps_values, errors):
        print(f"eps={eps:.0e} relative error {err:.3e}")
    failures = []
    if not errors[-1] <= 1e-6:
        failures.append({"name": "error_at_1e-5", "value": errors[-1], "limit": 1e-6})
    for r in ratios:
        if not abs(r - 10.0) <= 1.0:
            failures.append({"name": "first_order_ratio", "value": float(r), "limit": "10+-1"})
    print("ratios per decade: " + ", ".join(f"{r:.3f}" for r in ratios))
    if failures:
        _report_failures(failures)
        return EXIT_NUMERICS
    return EXIT_OK


# --- entry -----------------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="semirel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a self-consistent simulation from a config file")
    p.add_argument("config")
    p.add_argument("--out", help="override output.dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="run the built-in verification suite")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sources", help="charge/current sources of a stored orbital snapshot")
    p.add_argument("snapshot")
    p.add_argument("--out", required=True)
    p.add_argument("--phi", help="scalar potential snapshot")
    p.add_argument("--A", dest="A", help="vector potential snapshot")
    p.add_argument("--dA-dt", dest="dA_dt", help="snapshot of the vector potential's time derivative")
    p.set_defaults(func=cmd_sources)

    p = sub.add_parser("scaling", help="1/c^2 scaling of second-order sources")
    p.add_argument("config")
    p.add_argument("--c-values", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("variational", help="energy-variation check of the sources")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_variational)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SnapshotError as exc:
        print(f"snapshot error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericsError, SemirelError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
