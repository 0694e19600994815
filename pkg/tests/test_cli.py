import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mcdist import __version__
from mcdist.channel import system1
from mcdist.cli import main
from mcdist.config import config_digest, load_config, parse_list, read_config
from mcdist.crlb import ObservationSeries, means
from mcdist.estimators import sat_estimate
from mcdist.particle_sim import realization_rng

UM, MS = 1e-6, 1e-3

CRLB_CFG = """\
[environment]
d_um = 4

[sweep]
distance_um = 2, 4, 6, 8, 10
time_ms = 0.1:20:0.1
"""

EXPERIMENT_CFG = """\
[environment]
d_um = 4

[simulation]
mode = poisson
realizations = 40
seed = 3

[protocols]
sat_t_ms = 2.5
rtt_tau = 2
envd_window = 7
ml = yes

[sweep]
distance_um = 2:6:2
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_crlb_grid_and_header(tmp_path):
    cfg = write(tmp_path, "c.ini", CRLB_CFG)
    out = tmp_path / "out"
    assert main(["crlb", "--config", cfg, "--out", str(out)]) == 0
    r = rows(out / "crlb_curve.csv")
    assert r[0] == ["d_um", "t_ms", "crlb_um2"]
    assert len(r) == 1 + 5 * 200
    assert r[1][:2] == ["2.0", "0.1"] and r[-1][:2] == ["10.0", "20.0"]
    first = (out / "crlb_curve.csv").read_bytes()
    assert main(["crlb", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "crlb_curve.csv").read_bytes() == first


def test_crlb_defaults_to_simulation_grid(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", "[environment]\nd_um = 3\n")
    assert main(["crlb", "--config", cfg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 201 and lines[1].startswith("3.0,0.1,")


def test_crlb_empty_time_grid_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", "[sweep]\ndistance_um = 4\ntime_ms =\n")
    assert main(["crlb", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "c.ini:3" in err and "time_ms" in err


def test_experiment_outputs_and_manifest(tmp_path):
    cfg = write(tmp_path, "e.ini", EXPERIMENT_CFG)
    out = tmp_path / "exp"
    assert main(["experiment", "--config", cfg, "--out", str(out)]) == 0
    mse = rows(out / "mse_sweep.csv")
    assert mse[0] == ["sweep_value", "protocol", "mse_um2", "bias_um", "var_um2", "stderr_um2",
                      "n_corrections", "n_cointoss"]
    assert len(mse) == 1 + 3 * 4
    assert [r[1] for r in mse[1:5]] == ["SAT_t2.5ms", "RTT_tau2", "ENVD_w7", "ML"]
    cr = rows(out / "crlb.csv")
    assert cr[0] == ["sweep_value", "crlb_m1_um2", "crlb_full_um2"]
    assert [r[0] for r in cr[1:]] == ["2.0", "4.0", "6.0"]

    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) == {"config_digest", "toolkit_version", "timestamp", "seed", "resolved_config"}
    assert manifest["toolkit_version"] == __version__
    assert manifest["seed"] == 3
    assert manifest["config_digest"] == load_config(cfg).digest
    assert manifest["config_digest"] == config_digest(manifest["resolved_config"])


def test_experiment_csv_deterministic_across_threads(tmp_path, monkeypatch):
    cfg = write(tmp_path, "e.ini", EXPERIMENT_CFG)
    outputs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("MCDIST_THREADS", threads)
        out = tmp_path / f"t{threads}"
        assert main(["experiment", "--config", cfg, "--out", str(out)]) == 0
        outputs.append(((out / "mse_sweep.csv").read_bytes(), (out / "crlb.csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_cli_overrides_reach_manifest(tmp_path):
    cfg = write(tmp_path, "e.ini", EXPERIMENT_CFG)
    out = tmp_path / "o"
    assert main(["experiment", "--config", cfg, "--out", str(out), "--seed", "9", "--realizations", "5"]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["seed"] == 9 and m["resolved_config"]["simulation"]["realizations"] == 5
    assert m["config_digest"] != load_config(cfg).digest


def test_digest_stable_under_key_reordering():
    a = read_config("[environment]\nd_um = 4\nk_per_s = 1\n[sweep]\ndistance_um = 2,3\n")
    b = read_config("[sweep]\ndistance_um = 2, 3\n\n[environment]\nk_per_s = 1.0\nd_um = 4.0\n")
    assert a.digest == b.digest
    c = read_config("[environment]\nd_um = 4\nk_per_s = 2\n[sweep]\ndistance_um = 2,3\n")
    assert c.digest != a.digest


@pytest.mark.parametrize("text,line,fragment", [
    ("[environment]\nd_um = 4\nbogus = 1\n", 3, "unknown key"),
    ("[environment]\nd_um = four\n", 2, "d_um"),
    ("[simulation]\nmode = quantum\n", 2, "mode"),
    ("[simulation]\nrealizations = 2.5\n", 2, "realizations"),
    ("[protocols]\nsat_t_ms = 25\n[sweep]\ndistance_um = 4\n", 1, "outside the simulated window"),
    ("[environment\nd_um = 4\n", 1, ""),
    ("d_um = 4\n", 1, ""),
])
def test_malformed_config_exits_2_with_line(tmp_path, capsys, text, line, fragment):
    cfg = write(tmp_path, "bad.ini", text)
    assert main(["experiment", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"bad.ini:{line}" in err and fragment in err


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["crlb", "--config", str(tmp_path / "nope.ini")]) == 2


def test_parse_list_ranges():
    assert parse_list("2:10:1") == [float(v) for v in range(2, 11)]
    assert parse_list("0.1:0.5:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert parse_list("3, 5 7") == [3.0, 5.0, 7.0]
    for bad in ("1:2", "2:1:1", "1:2:0"):
        with pytest.raises(ValueError):
            parse_list(bad)


def test_simulate_dumps_series(tmp_path, capsys):
    cfg = write(tmp_path, "s.ini", "[simulation]\nmode = poisson\nn_steps = 30\n")
    assert main(["simulate", "--config", cfg, "--realization", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t_ms,count" and len(lines) == 31
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--realization", "2", "--out", str(out)]) == 0
    assert (out / "series.csv").read_text().splitlines() == lines
    assert (out / "manifest.json").exists()


def write_series(tmp_path, times_ms, counts, header="t_ms,count"):
    lines = [header] + [f"{t!r},{c!r}" for t, c in zip(times_ms, counts)]
    return write(tmp_path, "series.csv", "\n".join(lines) + "\n")


def parse_estimate(out):
    r = list(csv.reader(out.splitlines()))
    assert r[0] == ["protocol", "d_hat_um", "corrections", "samples_used"]
    assert len(r) == 2
    return r[1]


def test_estimate_sat_single_row_matches_library(tmp_path, capsys):
    path = write_series(tmp_path, [2.5], [60])
    assert main(["estimate", "--series", path, "--protocol", "sat"]) == 0
    row = parse_estimate(capsys.readouterr().out)
    ref = sat_estimate(system1(), 60, 2.5 * MS, realization_rng(0, 0))
    assert row == ["SAT", repr(ref.d_hat / UM), "", "1"]


def test_estimate_ml_noiseless_series(tmp_path, capsys):
    env = system1()
    times = 0.1 * np.arange(1, 201)
    counts = means(env, 4 * UM, times * MS)
    path = write_series(tmp_path, times.tolist(), counts.tolist())
    assert main(["estimate", "--series", path, "--protocol", "ml"]) == 0
    row = parse_estimate(capsys.readouterr().out)
    assert row[0] == "ML" and abs(float(row[1]) - 4.0) < 1e-3 and row[3] == "200"


def test_estimate_rtt_and_envd(tmp_path, capsys):
    path = write_series(tmp_path, [0.1, 0.2, 0.3], [0, 0, 0])
    assert main(["estimate", "--series", path, "--protocol", "rtt"]) == 0
    assert parse_estimate(capsys.readouterr().out) == ["RTT", "0.0", "ThresholdNeverCrossed", "3"]
    assert main(["estimate", "--series", path, "--protocol", "envd", "--window", "3"]) == 0
    assert parse_estimate(capsys.readouterr().out)[2] == "ZeroObservation"


def test_estimate_input_errors(tmp_path, capsys):
    good = write_series(tmp_path, [1.0], [3])
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--series", good, "--protocol", "magic"])
    assert exc.value.code == 2
    bad = write_series(tmp_path, [1.0], [3], header="time,count")
    assert main(["estimate", "--series", bad, "--protocol", "sat"]) == 2
    assert "missing column" in capsys.readouterr().err
    unordered = write_series(tmp_path, [2.0, 1.0], [3, 4])
    assert main(["estimate", "--series", unordered, "--protocol", "ml"]) == 2
    assert main(["estimate", "--series", good, "--protocol", "envd", "--window", "4"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mcdist", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "mcdist", "crlb"], capture_output=True, text=True)
    assert proc.returncode == 2
