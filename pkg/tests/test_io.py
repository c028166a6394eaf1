import json

import numpy as np
import pytest

from hncnav.errors import ConfigurationError
from hncnav.geometry import build_beam_geometry
from hncnav.harness import FilterConfig, FusionStrategy, run_fusion
from hncnav.io import (
    DVL_COLUMNS,
    load_runlog,
    load_scenario,
    read_dvl_csv,
    read_output_csv,
    save_runlog,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    write_dvl_csv,
    write_output_csv,
)
from hncnav.regressor import THREE_MISSING, TWO_MISSING
from hncnav.sim import Leg, OutageWindow, ScenarioConfig, TrajectorySpec, outage_scenario, simulate


def small_config():
    legs = (Leg("straight", 10.0, 1.0), Leg("turn", 10.0, 1.0, turn_rate=0.05), Leg("dive", 10.0, 1.0, pitch=-0.1))
    return ScenarioConfig("small", TrajectorySpec(legs), dvl_bias=(0.01, 0.0, -0.01, 0.02),
                          outages=(OutageWindow(10.0, 5.0, TWO_MISSING), OutageWindow(20.0, 5.0, THREE_MISSING)))


@pytest.fixture(scope="module")
def run():
    return simulate(small_config())


def test_scenario_round_trip(tmp_path):
    for cfg in (small_config(), outage_scenario(THREE_MISSING, start=240.0, seed=7)):
        path = tmp_path / "s.json"
        save_scenario(cfg, path)
        assert load_scenario(path) == cfg


def test_scalar_bias_round_trip():
    cfg = outage_scenario(TWO_MISSING)
    assert scenario_from_dict(json.loads(json.dumps(scenario_to_dict(cfg)))).dvl_bias == 0.01


def test_scenario_errors(tmp_path):
    doc = scenario_to_dict(small_config())
    with pytest.raises(ConfigurationError):
        scenario_from_dict({k: v for k, v in doc.items() if k != "trajectory"})
    bad = json.loads(json.dumps(doc))
    bad["trajectory"]["legs"][0]["kind"] = "loop"
    with pytest.raises(ConfigurationError):
        scenario_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["outages"][0]["missing"] = [1]
    with pytest.raises(ConfigurationError):
        scenario_from_dict(bad)
    (tmp_path / "x.json").write_text("not json")
    with pytest.raises(ConfigurationError):
        load_scenario(tmp_path / "x.json")
    with pytest.raises(ConfigurationError):
        load_scenario(tmp_path / "missing.json")


def test_runlog_round_trip_is_exact(run, tmp_path):
    save_runlog(run, tmp_path)
    back = load_runlog(tmp_path)
    for a, b in [(run.truth.t, back.truth.t), (run.truth.pos, back.truth.pos), (run.truth.quat, back.truth.quat),
                 (run.truth.v_body, back.truth.v_body), (run.imu.f, back.imu.f), (run.imu.w, back.imu.w),
                 (run.imu.accel_bias, back.imu.accel_bias), (run.imu.gyro_bias, back.imu.gyro_bias),
                 (run.dvl.valid, back.dvl.valid), (run.dvl.truth_index, back.dvl.truth_index)]:
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(np.isnan(run.dvl.beams), np.isnan(back.dvl.beams))
    np.testing.assert_array_equal(np.nan_to_num(run.dvl.beams), np.nan_to_num(back.dvl.beams))
    assert back.config == run.config
    assert back.metadata == {"name": "small"}


def test_dvl_csv_blank_invalid_beams(run, tmp_path):
    path = tmp_path / "dvl.csv"
    write_dvl_csv(run.dvl, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(DVL_COLUMNS)
    row = lines[10].split(",")  # t = 10 s, beams 1 and 3 withheld
    assert row[1] == "" and row[3] == "" and row[5:] == ["0", "1", "0", "1"]


def test_dvl_csv_errors(run, tmp_path):
    path = tmp_path / "dvl.csv"
    write_dvl_csv(run.dvl, path)
    text = path.read_text().splitlines()
    text[10] = text[10].replace(",0,1,0,1", ",1,1,0,1")
    path.write_text("\n".join(text))
    with pytest.raises(ConfigurationError):
        read_dvl_csv(path)
    write_dvl_csv(run.dvl, path)
    with pytest.raises(ConfigurationError):
        read_dvl_csv(path, truth_t=run.truth.t + 0.005)
    (tmp_path / "hdr.csv").write_text("time,b1\n")
    with pytest.raises(ConfigurationError):
        read_dvl_csv(tmp_path / "hdr.csv")


def test_runlog_length_check(run, tmp_path):
    save_runlog(run, tmp_path)
    lines = (tmp_path / "imu.csv").read_text().splitlines()
    (tmp_path / "imu.csv").write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ConfigurationError):
        load_runlog(tmp_path)
    with pytest.raises(ConfigurationError):
        load_runlog(tmp_path / "nowhere")


def test_output_csv_round_trip(run, tmp_path):
    out = run_fusion(run, FusionStrategy("baseline_tc"), FilterConfig.for_imu(run.config.imu),
                     build_beam_geometry(np.radians(20.0)))
    path = tmp_path / "out.csv"
    write_output_csv(out, path)
    back = read_output_csv(path, "baseline_tc")
    np.testing.assert_array_equal(back.vel, out.vel)
    np.testing.assert_array_equal(back.P_v, out.P_v)
    np.testing.assert_array_equal(np.isnan(back.nis), np.isnan(out.nis))
    np.testing.assert_array_equal(back.update_kind, out.update_kind)
    text = path.read_text().replace(",tc\n", ",xx\n", 1)
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        read_output_csv(path)
