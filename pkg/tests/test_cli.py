import csv
import json
import math
import sys

import numpy as np
import pytest

from lvopt import cli
from lvopt.earth import R_EQ

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TABLE1 = ["t", "v_i", "v_r", "h", "lon", "lat", "q", "gamma", "chi", "alpha", "beta", "t_go", "lat_iip", "lon_iip",
          "i", "h_p", "h_a"]


@pytest.fixture(scope="module")
def sim_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--mission", "case3", "--out", str(out)]) == cli.EXIT_OK
    return out


def test_iip_command(capsys):
    code = cli.main(["iip", "--state", str(R_EQ + 100e3), "0", "0", "1000", "2000", "0"])
    assert code == cli.EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.startswith("t_go =") and "lat =" in line and "lon =" in line


def test_iip_command_orbit_has_no_impact(capsys):
    v = math.sqrt(3.986004418e14 / (R_EQ + 300e3))
    assert cli.main(["iip", "--state", str(R_EQ + 300e3), "0", "0", "0", str(v), "0"]) == cli.EXIT_SOLVER
    assert "no impact" in capsys.readouterr().out


def test_simulate_writes_artifacts(sim_out):
    for name in ("summary.txt", "summary.toml", "trajectory.csv", "tracks.geojson"):
        assert (sim_out / name).is_file()
    text = (sim_out / "summary.txt").read_text()
    for label in ("V_f - V_i, m/s", "Delta v_Loss, m/s", "Delta v_k, m/s", "m_s,k, kg", "m_p,k, kg",
                  "Lift-off mass, kg"):
        assert label in text


def test_csv_header_and_rows(sim_out):
    with open(sim_out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    assert header == list(cli.CSV_COLUMNS)
    assert header[: len(TABLE1)] == TABLE1
    assert {"loss_pressure", "loss_drag", "loss_gravity", "loss_tvc", "mass"} <= set(header)
    t = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.diff(t) >= 0.0)


def test_geojson_structure(sim_out):
    doc = json.loads((sim_out / "tracks.geojson").read_text())
    assert doc["type"] == "FeatureCollection"
    names = [f["properties"]["name"] for f in doc["features"]]
    assert names[:2] == ["ground track", "IIP track"]
    assert "stage 1 separation" in names and "IIP bound lon_max" in names
    for f in doc["features"]:
        geom = f["geometry"]
        coords = [geom["coordinates"]] if geom["type"] == "Point" else geom["coordinates"]
        assert geom["type"] in ("Point", "LineString")
        for lon, lat in coords:
            assert -180.0 < lon <= 180.0
            assert -90.0 <= lat <= 90.0
    bound = next(f for f in doc["features"] if f["properties"]["name"] == "IIP bound lon_max")
    assert bound["geometry"]["coordinates"][0][0] == pytest.approx(128.3)


def test_summary_reproducible(sim_out, tmp_path):
    assert cli.main(["simulate", "--mission", "case3", "--out", str(tmp_path), "--seed", "1"]) == cli.EXIT_OK
    assert (tmp_path / "summary.toml").read_bytes() == (sim_out / "summary.toml").read_bytes()
    rec = tomllib.loads((tmp_path / "summary.toml").read_text())
    assert "run_time" not in rec["simulation"]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("payload = 1\n[[stage]]\nv_ex = 1\n")
    assert cli.main(["simulate", "--vehicle", str(bad), "--mission", "case1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert cli.main(["simulate", "--mission", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--out", str(tmp_path)]) == 2


def test_table_self_comparison_has_same_columns(sim_out):
    rec = tomllib.loads((sim_out / "summary.toml").read_text())["simulation"]
    table = cli.format_table({"A": dict(rec, run_time=1.0), "B": dict(rec, run_time=1.0)})
    lines = [ln for ln in table.splitlines() if ln.startswith("Lift-off mass")]
    a, b = lines[0].split()[-2:]
    assert a == b


@pytest.mark.slow
def test_optimize_case1(tmp_path):
    assert cli.main(["optimize", "--mission", "case1", "--out", str(tmp_path)]) == cli.EXIT_OK
    rec = tomllib.loads((tmp_path / "summary.toml").read_text())["simultaneous"]
    assert rec["status"] == "converged"
    assert rec["m_liftoff"] == pytest.approx(154_185, rel=0.05)


@pytest.mark.slow
def test_baseline_case3_reports_divergence(tmp_path):
    code = cli.main(["baseline", "--mission", "case3", "--out", str(tmp_path)])
    assert code in (cli.EXIT_DIVERGED, cli.EXIT_SOLVER)
    log = (tmp_path / "baseline_iterations.csv").read_text().splitlines()
    assert log[0].startswith("iteration") and len(log) > 1
    rec = tomllib.loads((tmp_path / "summary.toml").read_text())["sequential"]
    assert rec["status"] in ("diverged", "max_iter")
