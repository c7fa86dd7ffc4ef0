import copy
import io
import json
import math

import numpy as np
import pytest

from ablab import cli
from ablab.abxf import read_abxf
from ablab.scenarios import (
    ConfigError, ScenarioConfig, ScenarioDesignError, box_arc, combined_criteria, enclosed_flux,
    load_config, report_json, run_scenario,
)

PI = math.pi

SMALL_ELECTRIC = {
    "version": 1,
    "kind": "electric_ab",
    "grid": {"half_width": 4.0, "n": 65},
    "gate": {"center": [0.0, 0.0], "r_in": 1.5, "r_out": 2.0, "gap_half_width": 0.4, "gate_angle": 0.0,
             "t_close": 0.1, "t_open": 0.6, "t_open_end": 0.7},
    "pulse": {"phase": PI, "t_on": 0.2, "t_off": 0.5},
    "states": [{"center": [0.0, 0.0], "radius": 0.9},
               {"center": [3.2, 0.0], "radius": 0.7, "momentum": [-2.0, 0.0]}],
    "time": {"dt": 0.02, "t_final": 1.2},
}

ANALYTIC = {
    "version": 1,
    "kind": "flux_recovery",
    "mode": "analytic",
    "obstacles": [{"type": "disc", "center": [5.5, 2.5], "radius": 1.4},
                  {"type": "disc", "center": [9.1, 0.5], "radius": 1.2}],
    "fluxes": [{"type": "ab", "alpha": 0.4, "center": [5.5, 2.5]},
               {"type": "ab", "alpha": -2.9, "center": [9.1, 0.5]}],
    "box": [-4.0, 14.0, -6.0, 10.0],
    "sources": [[-4.0, 0.0], [-4.0, 6.0], [14.0, 2.0]],
    "angle_range": [-3.14159, 3.14159],
    "n_rays": 200,
}


def electric(**changes):
    d = copy.deepcopy(SMALL_ELECTRIC)
    for k, v in changes.items():
        d[k] = v
    return d


def test_schema_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="kind"):
        ScenarioConfig.from_dict({"version": 1, "kind": "teleport"})


def test_schema_rejects_wrong_version():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(dict(SMALL_ELECTRIC, version=2))


def test_schema_reports_location():
    d = electric()
    d["gate"]["r_in"] = -1.0
    with pytest.raises(ConfigError, match="gate/r_in"):
        ScenarioConfig.from_dict(d)


def test_missing_required_block():
    d = electric()
    del d["pulse"]
    with pytest.raises(ConfigError, match="pulse"):
        ScenarioConfig.from_dict(d)


def test_gate_times_must_be_ordered():
    d = electric()
    d["pulse"]["t_off"] = 0.65
    with pytest.raises(ConfigError, match="t_close < t_on"):
        ScenarioConfig.from_dict(d)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "version": 1,\n  "kind": "synth"\n  "x": 1\n}\n')
    with pytest.raises(ConfigError, match="line 4"):
        load_config(p)


def test_missing_field_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"version": 1, "kind": "synth", "field": {"path": "nope.abxf"},
                             "support": {"center": [0, 0], "radius": 1.0}}))
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(p)


def test_preset_fills_and_config_overrides():
    cfg = ScenarioConfig.from_dict({"version": 1, "kind": "magnetic_ab", "preset": "k_large",
                                    "packets": {"k": 12.0}})
    assert cfg.data["packets"]["k"] == 12.0
    assert cfg.data["packets"]["back"] == 6.0
    assert cfg.data["grid"]["nx"] == 512


def test_magnetic_needs_grid_without_preset():
    with pytest.raises(ConfigError, match="grid"):
        ScenarioConfig.from_dict({"version": 1, "kind": "magnetic_ab"})


def test_combined_criteria_table():
    assert combined_criteria((0, 0), (0, 0))[0] == "none"
    assert combined_criteria((0, PI), (0, 0))[0] == "a"
    assert combined_criteria((1.0, 1.0), (0, PI))[0] == "b"
    assert combined_criteria((0, 2 * PI), (0, PI))[0] == "b"
    assert combined_criteria((0, 2 * PI), (0, 2 * PI))[0] == "none"
    assert combined_criteria((0, PI / 2), (0, PI))[0] == "a"


def test_box_arc_goes_counterclockwise():
    box = (0.0, 2.0, 0.0, 1.0)
    arc = box_arc((1.0, 0.0), (0.0, 0.5), box)
    np.testing.assert_array_equal(arc, [[1, 0], [2, 0], [2, 1], [0, 1], [0, 0.5]])
    arc = box_arc((0.0, 0.5), (1.0, 0.0), box)
    np.testing.assert_array_equal(arc, [[0, 0.5], [0, 0], [1, 0]])


def test_enclosed_flux_of_wedge():
    specs = [{"alpha": 1.3, "center": [0.0, 0.0]}, {"alpha": 0.5, "center": [5.0, 0.0]}]
    b = [np.array([-1.0, -1.0]) / math.sqrt(2), np.array([1.0, -1.0]) / math.sqrt(2)]
    alpha, w = enclosed_flux(specs, (0.0, 3.0), b)
    assert alpha == pytest.approx(1.3) and w == [1, 0]


def test_electric_zero_pulse_runs_identical():
    r = run_scenario(ScenarioConfig.from_dict(electric(pulse=dict(SMALL_ELECTRIC["pulse"], phase=0.0))), write=False)
    assert r["density_difference"] < 1e-12


def test_electric_two_pi_pulse_is_invisible():
    r = run_scenario(ScenarioConfig.from_dict(electric(pulse=dict(SMALL_ELECTRIC["pulse"], phase=2 * PI))), write=False)
    assert abs(r["measured"] - 2 * PI) < 1e-6
    assert r["density_difference"] < 1e-6


def test_electric_pi_pulse_is_visible():
    r = run_scenario(ScenarioConfig.from_dict(electric()), write=False)
    assert r["inner_phase_error"] < 1e-6
    assert r["density_difference"] > 1e-3
    assert r["target"] == PI


def test_state_on_gate_is_a_design_error():
    d = electric(states=[{"center": [1.1, 0.0], "radius": 0.35, "momentum": [6.0, 0.0]}])
    with pytest.raises(ScenarioDesignError):
        run_scenario(ScenarioConfig.from_dict(d), write=False)


def test_state_overlapping_wall_rejected():
    d = electric(states=[{"center": [1.7, 1.0], "radius": 0.5}])
    with pytest.raises(ConfigError, match="overlaps"):
        run_scenario(ScenarioConfig.from_dict(d), write=False)


def test_packet_overlapping_obstacle_rejected():
    d = {"version": 1, "kind": "magnetic_ab", "grid": {"half_width": 10.0, "n": 65},
         "obstacles": [{"type": "disc", "center": [-4.0, -1.0], "radius": 1.0}],
         "fluxes": [], "packets": {"meeting_point": [0.0, 3.0], "k": 2.0, "delta1": 0.8, "length": 1.5, "back": 6.0},
         "time": {"dt": 0.05}}
    with pytest.raises(ConfigError, match="packet"):
        run_scenario(ScenarioConfig.from_dict(d), write=False)


def test_analytic_recovery_two_obstacles():
    r = run_scenario(ScenarioConfig.from_dict(ANALYTIC), write=False)
    assert r["max_abs_error"] < 1e-8
    c = np.array(r["candidates"])
    np.testing.assert_allclose(c[0], -c[1], atol=1e-12)


def test_single_obstacle_zero_flux():
    d = copy.deepcopy(ANALYTIC)
    d["obstacles"] = d["obstacles"][:1]
    d["fluxes"] = [dict(d["fluxes"][0], alpha=0.0)]
    r = run_scenario(ScenarioConfig.from_dict(d), write=False)
    assert r["candidates"] == [[0.0], [0.0]]


def test_source_must_be_on_box():
    d = copy.deepcopy(ANALYTIC)
    d["sources"] = [[0.0, 0.0]]
    with pytest.raises(ConfigError, match="boundary"):
        run_scenario(ScenarioConfig.from_dict(d), write=False)


def test_seed_changes_rays_but_not_recovery():
    a = run_scenario(ScenarioConfig.from_dict(ANALYTIC, seed=1), write=False)
    b = run_scenario(ScenarioConfig.from_dict(ANALYTIC, seed=2), write=False)
    assert a["max_abs_error"] < 1e-8 and b["max_abs_error"] < 1e-8


def test_report_json_is_sorted_and_plain():
    text = report_json({"b": np.float64(1.5), "a": (1, 2), "c": np.array([True, False])})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": [1, 2], "b": 1.5, "c": [True, False]}


def test_reruns_are_bit_identical(tmp_path):
    for name in ("one", "two"):
        cfg = ScenarioConfig.from_dict(electric(), out_dir=tmp_path / name)
        run_scenario(cfg)
    for f in ("report.json", "report.txt", "density_reference.abxf", "density_pulsed.abxf"):
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()
    field = read_abxf(tmp_path / "one" / "density_pulsed.abxf")
    assert field.values.shape == (65, 65)


def test_synth_scenario_bumps():
    d = {"version": 1, "kind": "synth",
         "field": {"grid": {"half_width": 2.0, "n": 64},
                   "bumps": [{"center": [-0.5, 0.0], "radius": 0.5, "profile": "soft"},
                             {"center": [0.5, 0.0], "radius": 0.5, "weight": -1.0, "profile": "soft"}]},
         "support": {"center": [0.0, 0.0], "radius": 1.05}}
    r = run_scenario(ScenarioConfig.from_dict(d), write=False)
    assert r["measured"] < 1e-6


def test_synth_scenario_split():
    d = {"version": 1, "kind": "synth", "split": True,
         "field": {"grid": {"half_width": 1.2, "n": 64},
                   "bumps": [{"center": [0.15, -0.1], "radius": 0.5}]},
         "support": {"center": [0.0, 0.0], "radius": 0.95}}
    r = run_scenario(ScenarioConfig.from_dict(d), write=False)
    assert r["relative_deviation"] < 1e-6


def test_gravity_scenario_nonclosed():
    d = {"version": 1, "kind": "gravity_check",
         "metric": {"g0": [0.0, {"poly": [[1.0, 1, 0]]}]},
         "loops": [{"type": "circle", "center": [0.0, 0.0], "radius": 1.0}],
         "expected": {"locally_static": False, "globally_static": False}}
    r = run_scenario(ScenarioConfig.from_dict(d), write=False)
    assert r["relative_deviation"] == 0.0
    assert r["max_curl"] == pytest.approx(1.0, abs=1e-6)


def test_gravity_bad_expression_is_config_error():
    d = {"version": 1, "kind": "gravity_check", "metric": {"g0": [0.0, {"cube": 1}]},
         "loops": [{"type": "circle", "center": [0.0, 0.0], "radius": 1.0}]}
    with pytest.raises(ConfigError):
        run_scenario(ScenarioConfig.from_dict(d), write=False)


def test_amplitude_sweep_scenario():
    r = run_scenario(ScenarioConfig.from_dict({"version": 1, "kind": "amplitude_sweep", "alpha": 2.5}), write=False)
    assert r["relative_deviation"] < 1e-12


def test_spectrum_sweep_scenario():
    r = run_scenario(ScenarioConfig.from_dict({"version": 1, "kind": "spectrum_sweep", "alpha1": [0.0, PI],
                                               "alpha2": [0.0], "n_eigs": 3}), write=False)
    rows = np.asarray(r["rows"])
    assert rows.shape == (2, 5)
    assert rows[1, 2] == pytest.approx(PI ** 2, rel=1e-12)


# ---------------------------------------------------------------- command line

def run_cli(*argv):
    buf = io.StringIO()
    code = cli.main(list(argv), stream=buf)
    return code, buf.getvalue()


def test_cli_spectrum_csv():
    code, out = run_cli("spectrum", "--alpha1", "3.14159", "--alpha2", "0", "--cutoff", "8", "--n", "10")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "index,eigenvalue" and len(lines) == 11
    assert float(lines[1].split(",")[1]) == pytest.approx(PI ** 2, rel=1e-5)


def test_cli_unknown_subcommand():
    assert run_cli("teleport")[0] == 1


def test_cli_no_subcommand():
    assert run_cli()[0] == 1


def test_cli_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"version": 1,,}')
    code, _ = run_cli("run", str(p))
    assert code == 1
    assert "line 1, column 15" in capsys.readouterr().err


def test_cli_run_writes_json_and_text(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(ANALYTIC))
    code, out = run_cli("run", str(p), "--out", str(tmp_path / "o"), "--seed", "3")
    assert code == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["max_abs_error"] < 1e-8
    assert (tmp_path / "o" / "report.txt").read_text() == out
    assert (tmp_path / "o" / "measurements.csv").read_bytes().count(b"\r") == 0


def test_cli_flux_from_csv(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(ANALYTIC))
    run_cli("run", str(p), "--out", str(tmp_path / "o"))
    code, out = run_cli("flux", str(tmp_path / "o" / "measurements.csv"))
    assert code == 0
    cands = json.loads(out[out.index("{"):])["candidates"]
    assert any(np.allclose(c, [0.4, -2.9], atol=1e-8) for c in cands)


def test_cli_flux_inconsistent_is_numerical_failure(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("w1,value,mode\n1,0.5,phase\n1,1.5,phase\n")
    assert run_cli("flux", str(p))[0] == 2


def test_cli_synth_from_abxf(tmp_path):
    from ablab.abxf import write_abxf
    from ablab.grid import Grid2D
    from ablab.smooth import soft_bump
    g = Grid2D.square(2.0, 64)
    X, Y = g.mesh()
    B = soft_bump(((X + 0.5) ** 2 + Y ** 2) / 0.25) - soft_bump(((X - 0.5) ** 2 + Y ** 2) / 0.25)
    write_abxf(tmp_path / "b.abxf", grid=g, values=B)
    code, _ = run_cli("synth", "--field", str(tmp_path / "b.abxf"), "--radius", "1.05", "--out", str(tmp_path / "s"))
    assert code == 0
    A1 = read_abxf(tmp_path / "s" / "A1.abxf")
    assert A1.values.shape == (64, 64)


def test_cli_synth_flux_without_split_is_config_error(tmp_path):
    from ablab.abxf import write_abxf
    from ablab.grid import Grid2D
    g = Grid2D.square(2.0, 32)
    write_abxf(tmp_path / "b.abxf", grid=g, values=np.ones(g.shape) * (np.hypot(*g.mesh()) < 0.5))
    assert run_cli("synth", "--field", str(tmp_path / "b.abxf"), "--radius", "1.0")[0] == 1


def test_cli_amplitude():
    code, out = run_cli("amplitude", "--alpha", "1.0", "--n-theta", "9")
    assert code == 0
    assert out.startswith("theta,re_a,im_a,abs_a_squared\n")
    assert len(out.strip().split("\n")) == 9  # theta = 0 dropped


def test_cli_gravity(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"version": 1, "kind": "gravity_check",
                             "metric": {"g0": [{"ab_form": {"alpha": 1.0, "component": 1}},
                                               {"ab_form": {"alpha": 1.0, "component": 2}}]},
                             "loops": [{"type": "circle", "center": [0.0, 0.0], "radius": 1.0}]}))
    code, out = run_cli("gravity", str(p))
    assert code == 0
    rep = json.loads(out[out.index("{"):])
    assert rep["locally_static"] and not rep["globally_static"]


def test_cli_respects_thread_cap(monkeypatch):
    monkeypatch.setenv("ABX_THREADS", "1")
    assert run_cli("spectrum", "--alpha1", "0", "--alpha2", "0", "--n", "2")[0] == 0
    monkeypatch.setenv("ABX_THREADS", "0")
    assert run_cli("spectrum", "--alpha1", "0", "--alpha2", "0", "--n", "2")[0] == 1
