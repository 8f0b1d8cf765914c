"""Acceptance suite driven by the bundled scenarios.

Thresholds are hard-coded here, independently of the tolerances stored in
the scenario configs.  Each criterion prints one PASS/FAIL line.
"""

import json
import time

import pytest

from artifact import cli

SUITE = list(cli.EXPERIMENTS)


def _run_suite(root):
    reports, codes, times = {}, {}, {}
    for name, raw in cli.bundled_scenarios().items():
        cfg = cli.resolve_config(name, raw)
        t0 = time.perf_counter()
        codes[name] = cli.run_experiment(cfg, root / name)
        times[name] = time.perf_counter() - t0
        reports[name] = json.loads((root / name / "report.json").read_text())
    return reports, codes, times


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite_a")
    reports, codes, times = _run_suite(root)
    return root, reports, codes, times


def _value(reports, exp, check):
    return next(c for c in reports[exp]["checks"] if c["name"] == check)["value"]


def _report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def test_criterion_01_riccati(suite, capsys):
    _, rep, _, t = suite
    flat = _value(rep, "riccati", "flat_conservation_drift")
    osc = _value(rep, "riccati", "oscillator_conservation_drift")
    closed = _value(rep, "riccati", "flat_closed_form")
    ok = flat <= 1e-8 and osc <= 1e-8 and closed <= 1e-10
    _report(capsys, 1, ok, f"drift flat {flat:.3e}, oscillator {osc:.3e}; closed form {closed:.3e} ({t['riccati']:.1f}s)")
    assert ok


def test_criterion_02_beam_residual(suite, capsys):
    _, rep, _, t = suite
    slope = _value(rep, "beam-residual", "residual_slope")
    ok = slope <= -1.2
    _report(capsys, 2, ok, f"N=4 residual slope {slope:.4f} (<= -1.2) ({t['beam-residual']:.1f}s)")
    assert ok


def test_criterion_03_reflected_beam(suite, capsys):
    _, rep, _, t = suite
    order = rep["reflect-beam"]["config"]["params"]["order"]
    slope = _value(rep, "reflect-beam", "trace_slope")
    bound = -(order + 1) / 2 - 0.75 + 0.3
    ok = slope <= bound
    _report(capsys, 3, ok, f"N={order} trace slope {slope:.4f} (<= {bound}) ({t['reflect-beam']:.1f}s)")
    assert ok


def test_criterion_04_boundary_jets(suite, capsys, tmp_path):
    _, rep, _, _ = suite
    g2 = _value(rep, "recover-boundary", "boundary_metric")
    d2 = _value(rep, "recover-boundary", "normal_derivative")
    # second static_profile preset: 1+1
    cfg = cli.resolve_config("recover-boundary", {
        "experiment": "recover-boundary",
        "metric": {"preset": "static_profile", "params": {"n": 1, "alpha": [1.0, -0.2, 0.3, 0.0], "c": [1.0, 0.1, 0.2]}},
        "params": {"y0": [0.5]}})
    cli.run_experiment(cfg, tmp_path)
    r1 = json.loads((tmp_path / "report.json").read_text())
    g1 = _value({"x": r1}, "x", "boundary_metric")
    d1 = _value({"x": r1}, "x", "normal_derivative")
    ok = max(g1, g2) <= 1e-8 and max(d1, d2) <= 1e-6
    _report(capsys, 4, ok, f"g err 1+1 {g1:.2e}, 1+2 {g2:.2e}; dn g err 1+1 {d1:.2e}, 1+2 {d2:.2e}")
    assert ok


@pytest.mark.parametrize("exp", ["invariance-diffeo", "invariance-conformal"])
def test_criterion_05_invariances(suite, capsys, exp):
    _, rep, _, t = suite
    hs = rep[exp]["config"]["grid"]["h_ladder"]
    disc = _value(rep, exp, "discrepancy")
    order = _value(rep, exp, "order")
    neg = _value(rep, exp, "negative_control")
    order_ok = order == "exact" or order >= 0.8
    ok = min(hs) == pytest.approx(1 / 800) and disc <= 0.02 and order_ok and neg >= 0.2
    _report(capsys, 5, ok, f"{exp}: discrepancy {disc:.3e} at h=1/{round(1 / min(hs))}, order {order}, "
                           f"negative control {neg:.3f} ({t[exp]:.1f}s)")
    assert ok


def test_criterion_06_four_fold_linearization(suite, capsys):
    _, rep, _, t = suite
    agree = _value(rep, "fourwave", "stencil_vs_cascade")
    factor = _value(rep, "fourwave", "factor")
    ok = agree <= 1e-2 and abs(factor + 24) <= 0.5
    _report(capsys, 6, ok, f"stencil vs cascade {agree:.3e}; factor {factor:.6f} ({t['fourwave']:.1f}s)")
    assert ok


def test_criterion_07_scattering_control(suite, capsys):
    _, rep, _, t = suite
    unc = _value(rep, "control", "uncontrolled")
    one = _value(rep, "control", "one_pass")
    two = _value(rep, "control", "two_pass_long_window")
    ok = unc >= 0.3 and one <= 0.01 and two <= 0.02
    _report(capsys, 7, ok, f"uncontrolled {unc:.3f}, one pass {one:.3e}, two passes (long window) {two:.3e} "
                           f"({t['control']:.1f}s)")
    assert ok


def test_criterion_08_stationary_phase(suite, capsys):
    _, rep, _, t = suite
    assert max(rep["stationary-phase"]["config"]["params"]["rhos"]) == 400
    r1 = _value(rep, "stationary-phase", "ratio_x1")
    r2 = _value(rep, "stationary-phase", "ratio_x2")
    ok = abs(r1 - 1) <= 0.01 and abs(r2 - 2) <= 0.04
    _report(capsys, 8, ok, f"ratios {r1:.7f} and {r2:.7f} ({t['stationary-phase']:.1f}s)")
    assert ok


def test_criterion_09_ray_transform(suite, capsys):
    _, rep, _, t = suite
    ie = _value(rep, "ray-q", "integral_error")
    re_ = _value(rep, "ray-q", "recovery_error")
    ok = ie <= 1e-8 and re_ <= 1e-3
    _report(capsys, 9, ok, f"integral vs quadrature {ie:.3e}; q recovery {re_:.3e} ({t['ray-q']:.1f}s)")
    assert ok


def test_criterion_10_observation_set(suite, capsys):
    root, rep, _, t = suite
    cells = []
    good = 0
    for k in range(len(rep["observation-set"]["config"]["params"]["q0s"])):
        rows = (root / "observation-set" / f"arrivals_{k}.csv").read_text().splitlines()[1:]
        errs = [float(r.split(",")[3]) for r in rows]
        cells += errs
        good += all(abs(e) <= 2 for e in errs)
    ok = good >= 3
    _report(capsys, 10, ok, f"{good} positions within 2 cells; cell errors {[round(c, 2) for c in cells]} "
                            f"({t['observation-set']:.1f}s)")
    assert ok


def test_criterion_11_quartic_scaling(suite, capsys):
    _, rep, _, _ = suite
    assert len(rep["fourwave"]["config"]["params"]["eps_ladder"]) == 3
    e = _value(rep, "fourwave", "quartic_exponent")
    ok = abs(e - 4) <= 0.2
    _report(capsys, 11, ok, f"exponent {e:.6f}")
    assert ok


def test_criterion_12_determinism(suite, capsys, tmp_path_factory):
    root_a, _, codes, _ = suite
    root_b = tmp_path_factory.mktemp("suite_b")
    _run_suite(root_b)
    files = sorted(p.relative_to(root_a) for p in root_a.rglob("*") if p.is_file())
    diff = [str(f) for f in files if (root_a / f).read_bytes() != (root_b / f).read_bytes()]
    extra = sorted(p.relative_to(root_b) for p in root_b.rglob("*") if p.is_file())
    ok = not diff and extra == files
    _report(capsys, 12, ok, f"{len(files)} artifacts compared, {len(diff)} differ {diff[:3]}")
    assert ok


def test_suite_exit_codes(suite):
    _, _, codes, _ = suite
    assert codes == {name: 0 for name in SUITE}
