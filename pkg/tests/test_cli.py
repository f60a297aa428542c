import json
import math
import os

import numpy as np
import pytest

from semirel.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICS, EXIT_OK, main
from semirel.config import parse_values
from semirel.diagnostics import read_csv
from semirel.snapshot import load_snapshot

LARMOR = (
    "grid.n = 2\ngrid.L = 6.283185307179586\nscenario.name = uniform_spin_sample\n"
    "scenario.spin = 1 0 0\nscenario.direct_b = 0 0 2\nmodel.interactions = false\n"
    "time.dt = 0.001\ntime.steps = 400\noutput.cadence = 100\n"
)

PACKET = (
    "grid.n = 24\ngrid.L = 12\nscenario.name = gaussian_packet\nscenario.sigma = 1.0\n"
    "scenario.k0 = 0.5235987755982988 0 0\nscenario.spin = 1 1 0\nconstants.c = 3\n"
    "time.dt = 0.002\ntime.steps = 2\noutput.cadence = 1\noutput.snapshots = true\n"
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_run_writes_resolved_config_and_diagnostics(tmp_path, capsys):
    cfg = write(tmp_path, "larmor.cfg", LARMOR)
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    assert "finished step 400" in capsys.readouterr().out
    values, _ = parse_values((out / "config.resolved").read_text())
    assert values["output.dir"] == str(out)
    rows = read_csv((out / "diagnostics.csv").read_text())
    assert [int(r["step"]) for r in rows] == [0, 100, 200, 300, 400]
    for r in rows:
        assert float(r["sx"]) == pytest.approx(math.cos(2 * float(r["time"])), abs=1e-6)


def test_run_snapshots_feed_the_sources_command(tmp_path, capsys):
    cfg = write(tmp_path, "packet.cfg", PACKET)
    out = tmp_path / "run"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    names = sorted(os.listdir(out))
    for prefix in ("orbitals", "rho_free", "phi", "A"):
        assert f"{prefix}_000002.pmx" in names
    psi, meta = load_snapshot(out / "orbitals_000002.pmx")
    assert meta.kind == "spinor" and psi.shape == (2, 24, 24, 24)
    assert meta.constants[3] == 3.0
    capsys.readouterr()
    src = tmp_path / "src"
    code = main([
        "sources", str(out / "orbitals_000002.pmx"), "--out", str(src),
        "--phi", str(out / "phi_000002.pmx"), "--A", str(out / "A_000002.pmx"),
    ])
    printed = capsys.readouterr().out
    assert code == EXIT_OK, printed
    assert printed.count("PASS") == 2
    rho_free, _ = load_snapshot(src / "rho_free.pmx")
    rho_run, _ = load_snapshot(out / "rho_free_000002.pmx")
    np.testing.assert_allclose(rho_free, rho_run, atol=1e-15)
    assert {f"{n}.pmx" for n in ("rho_full", "j_full", "M", "P_spin", "P_darwin", "P_rate")} <= set(
        os.listdir(src)
    )


def test_scaling_and_variational_commands(tmp_path, capsys):
    cfg = write(tmp_path, "packet.cfg", PACKET.replace("constants.c = 3", "constants.c = 2"))
    assert main(["scaling", cfg, "--c-values", "2,4,8"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS scaling.") for line in lines)
    assert main(["variational", cfg]) == EXIT_OK
    assert "ratios per decade" in capsys.readouterr().out


def test_failed_tolerance_prints_json_failures(tmp_path, capsys):
    cfg = write(tmp_path, "packet.cfg", PACKET)
    assert main(["scaling", cfg, "--c-values", "3,6", "--tol", "0"]) == EXIT_NUMERICS
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{"):])
    assert report["failures"] and all(f["limit"] == 0 for f in report["failures"])


def test_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_IO
    bad = write(tmp_path, "bad.cfg", "grid.n = 8\ngrid.L = 6\ntim.dt = 1e-3\n")
    assert main(["run", bad]) == EXIT_CONFIG
    assert "line 3: unknown key 'tim.dt'" in capsys.readouterr().err
    cfg = write(tmp_path, "packet.cfg", PACKET)
    assert main(["scaling", cfg, "--c-values", "3"]) == EXIT_CONFIG
    unstable = write(tmp_path, "unstable.cfg", LARMOR.replace("time.dt = 0.001", "time.dt = 1e300"))
    with pytest.warns(RuntimeWarning):
        assert main(["run", unstable, "--out", str(tmp_path / "u")]) == EXIT_NUMERICS
    assert "step 1" in capsys.readouterr().err
    junk = tmp_path / "junk.pmx"
    junk.write_bytes(b"not a snapshot")
    assert main(["sources", str(junk), "--out", str(tmp_path / "s")]) == EXIT_IO
    with pytest.raises(SystemExit):
        main(["frobnicate"])
