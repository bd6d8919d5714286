import json
import subprocess
import sys

import pytest

from couettelab.cli import EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK, kelvin_check, main

CONFIG = """nu = 1e-2
nx = 16
ny = 16
nz = 16
ly = 6.283185307179586
dt = 0.25
t_end = 2
init.template = rolls
init.amp_u = {amp}
init.amp_theta = 0
"""


def _write(tmp_path, amp):
    p = tmp_path / "case.cfg"
    p.write_text(CONFIG.format(amp=amp))
    return p


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(_write(tmp_path, 1e-4)), "--out", str(out), "--checkpoint"]) == EXIT_OK
    assert "verdict=stable" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdict"] == "stable"
    assert (out / "final.chk").exists() and (out / "manifest.json").exists()


def test_run_inconclusive_exit_code(tmp_path):
    # violated bounds that are not confirmed before t_end
    assert main(["run", str(_write(tmp_path, 1.0)), "--out", str(tmp_path / "o")]) == EXIT_INCONCLUSIVE


def test_run_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("nu = 1e-2\nnu = 2e-2\n")
    assert main(["run", str(p)]) == EXIT_ERROR
    assert "duplicate key" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_ERROR


def test_kelvin_subcommand(capsys):
    assert main(["kelvin", "--k", "1", "--eta", "2", "--k3", "1", "--nu", "1e-2", "--t", "5"]) == EXIT_OK
    line = capsys.readouterr().out
    assert float(line.split("rel_err=")[1]) < 1e-10


def test_kelvin_check_values():
    num, exact = kelvin_check(1, 0, 0, 1e-2, 4.0, 0.05)
    assert num == pytest.approx(exact, rel=1e-12)


def test_lemmas_subcommand(tmp_path, capsys):
    out = tmp_path / "l32.json"
    code = main(["lemmas", "L3.2", "--seeds", "2", "--base", "16", "--out", str(out)])
    assert code in (EXIT_OK, EXIT_INCONCLUSIVE)
    assert json.loads(out.read_text())["lemma_id"] == "L3.2"
    assert "L3.2: verdict=" in capsys.readouterr().out
    assert main(["lemmas", "IDENTITIES", "--seeds", "1", "--base", "8"]) == EXIT_OK
    assert main(["lemmas", "Z9"]) == EXIT_ERROR


def test_scan_rejects_bad_nu_list(tmp_path):
    with pytest.raises(SystemExit):
        main(["scan", str(_write(tmp_path, 1e-4)), "--nu-list", "a,b"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "couettelab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "scan", "lemmas", "kelvin"):
        assert cmd in res.stdout
