import json

from artifact import __version__, cli


def _run(tmp_path, cfg, name=None):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = cli.main([name or cfg["experiment"], "--config", str(p), "--out", str(out)])
    return code, out


def test_list_presets(capsys):
    assert cli.main(["--list-presets"]) == 0
    text = capsys.readouterr().out
    for name in ("minkowski", "conformal_bump", "static_profile", "lens", "fourwave", "ray-q"):
        assert name in text


def test_every_experiment_has_a_valid_bundled_scenario():
    sc = cli.bundled_scenarios()
    assert set(sc) == set(cli.EXPERIMENTS)
    for name, raw in sc.items():
        cfg = cli.resolve_config(name, raw)
        assert cfg["experiment"] == name


def test_riccati_flat_exit_zero_and_report(tmp_path):
    code, out = _run(tmp_path, {"experiment": "riccati", "params": {"cases": ["flat"]}})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["version"] == __version__
    # defaults are filled and echoed
    assert rep["config"]["params"]["closed_form_tol"] == 1e-10
    assert rep["pass"] is True and all(c["pass"] for c in rep["checks"])
    header = (out / "beam_flat.csv").read_text().splitlines()[0]
    assert header == "tau,re_H11,im_H11,re_H12,im_H12,re_H22,im_H22,re_a0,im_a0,re_a1,im_a1"


def test_unknown_key_names_the_key(tmp_path, capsys):
    code, _ = _run(tmp_path, {"experiment": "riccati", "foo": 1})
    assert code == 2
    assert "foo" in capsys.readouterr().err


def test_unknown_nested_key_reports_path(tmp_path, capsys):
    code, _ = _run(tmp_path, {"experiment": "riccati", "params": {"bar": 1}})
    assert code == 2
    err = capsys.readouterr().err
    assert "params" in err and "bar" in err


def test_wrong_type_reports_field_path(tmp_path, capsys):
    code, _ = _run(tmp_path, {"experiment": "riccati", "params": {"n": "two"}})
    assert code == 2
    assert "params/n" in capsys.readouterr().err


def test_cfl_violation_cites_dt_bound(tmp_path, capsys):
    code, _ = _run(tmp_path, {"experiment": "control", "grid": {"h": 0.01, "dt": 0.02, "T": 2.4}})
    assert code == 2
    assert "dt <= 0.9 h / c_max" in capsys.readouterr().err


def test_bad_metric_params(tmp_path, capsys):
    code, _ = _run(tmp_path, {"experiment": "riccati", "metric": {"preset": "lens", "params": {"n": 2}}})
    assert code == 2
    assert "metric/params" in capsys.readouterr().err


def test_experiment_mismatch(tmp_path):
    code, _ = _run(tmp_path, {"experiment": "riccati"}, name="transit")
    assert code == 2


def test_invalid_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    assert cli.main(["riccati", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_fourwave_without_nonlinearity_fails_signal_check(tmp_path):
    code, out = _run(tmp_path, {"experiment": "fourwave", "grid": {"h": 0.01},
                                "params": {"a": [0.0, 0.0], "require_signal": True}})
    assert code == 1
    rep = json.loads((out / "report.json").read_text())
    sig = next(c for c in rep["checks"] if c["name"] == "signal_norm")
    assert sig["pass"] is False


def test_divergence_exit_code(tmp_path, capsys):
    big = {"t0": 0.0, "width": 0.4, "amp": 200.0}
    code, _ = _run(tmp_path, {"experiment": "fourwave", "grid": {"h": 0.02},
                              "params": {"a": [-50.0, 0.0], "eps": 1.0,
                                         "pulses": [[big, None], [big, None], [None, big], [None, big]]}})
    assert code == 3
    assert "divergence" in capsys.readouterr().err


def test_float_format_17_digits():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.dumps({"x": 0.1, "z": 1 + 2j}) == '{\n  "x": 0.10000000000000001,\n  "z": {\n    "re": 1,\n    "im": 2\n  }\n}\n'


def test_rerun_is_byte_identical(tmp_path):
    cfg = {"experiment": "geodesic"}
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, a = _run(tmp_path / "a", cfg)
    _, b = _run(tmp_path / "b", cfg)
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()
