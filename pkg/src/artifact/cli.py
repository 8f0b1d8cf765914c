"""Command-line driver: strict JSON configs, experiment runners, deterministic artifacts.

Each experiment is a subcommand.  A config supplies overrides of the
experiment's defaults; the resolved config is validated against a strict
schema, echoed into the report together with the package version, and all
artifacts are written with 17 significant digits in a fixed column order.

Exit codes: 0 all checks pass, 1 a tolerance check fails, 2 configuration
error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import __version__
from . import bdopt, beams, lorgeo, recon
from . import wavelab as wl

EXIT_OK, EXIT_TOL, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------
def fmt(x) -> str:
    """17 significant digits; non-finite values spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(w) for k, w in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(w) for w in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": _jsonable(float(v.real)), "im": _jsonable(float(v.imag))}
    if isinstance(v, (float, np.floating)):
        return _Float(float(v))
    return v


class _Float(float):
    pass


def dumps(obj) -> str:
    """JSON text with floats at 17 significant digits (non-finite values as strings)."""

    def enc(v, ind):
        pad = "  " * (ind + 1)
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {enc(w, ind + 1)}" for k, w in v.items()]
            return "{\n" + ",\n".join(items) + "\n" + "  " * ind + "}"
        if isinstance(v, list):
            if not v:
                return "[]"
            if all(not isinstance(w, (dict, list)) for w in v):
                return "[" + ", ".join(enc(w, ind + 1) for w in v) + "]"
            return "[\n" + ",\n".join(pad + enc(w, ind + 1) for w in v) + "\n" + "  " * ind + "]"
        if isinstance(v, _Float):
            s = fmt(v)
            return s if math.isfinite(v) else json.dumps(s)
        return json.dumps(v)

    return enc(_jsonable(obj), 0) + "\n"


def write_csv(path: Path, header: list, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------
NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
INT = {"type": "integer"}
VEC = {"type": "array", "items": NUM, "minItems": 1}
STR = {"type": "string"}
BOOL = {"type": "boolean"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


DOMAIN = _obj({"kind": {"enum": ["interval", "box", "ball"]}, "lo": VEC, "hi": VEC, "center": VEC,
               "radius": NUM}, ["kind"])

METRIC_PARAMS = {
    "minkowski": _obj({"n": {"type": "integer", "minimum": 1, "maximum": 3}, "T": POS, "N": DOMAIN, "N1": DOMAIN}),
    "conformal_bump": _obj({"n": {"type": "integer", "minimum": 1, "maximum": 3}, "amp": NUM, "center": VEC,
                            "width": POS, "T": POS, "N": DOMAIN, "N1": DOMAIN}),
    "static_profile": _obj({"n": {"type": "integer", "minimum": 1, "maximum": 2},
                            "alpha": {**VEC, "maxItems": 4}, "c": {**VEC, "maxItems": 3}, "T": POS,
                            "N": DOMAIN, "N1": DOMAIN}),
    "lens": _obj({"amp": NUM, "width": POS, "T": POS, "N": DOMAIN, "N1": DOMAIN}),
}

GRID = _obj({"h": POS, "T": POS, "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.9},
             "dt": POS, "h_ladder": {"type": "array", "items": POS, "minItems": 2}})

PULSE = _obj({"t0": NUM, "width": POS, "amp": NUM}, ["t0", "width"])
FACE_PULSES = {"type": "array", "items": {"oneOf": [PULSE, {"type": "null"}]}}


@dataclass
class Experiment:
    name: str
    runner: Callable
    params: dict
    defaults: dict
    needs_grid: bool = False
    doc: str = ""


EXPERIMENTS: dict[str, Experiment] = {}


def experiment(name: str, params: dict, defaults: dict, needs_grid: bool = False):
    def deco(fn):
        EXPERIMENTS[name] = Experiment(name, fn, params, defaults, needs_grid, (fn.__doc__ or "").strip())
        return fn

    return deco


def config_schema(exp: Experiment) -> dict:
    metric = {"type": "object", "additionalProperties": False, "required": ["preset"],
              "properties": {"preset": {"enum": sorted(lorgeo.PRESETS)}, "params": {"type": "object"}}}
    return _obj({"experiment": {"const": exp.name}, "scenario": STR, "seed": INT, "metric": metric,
                 "grid": GRID, "params": _obj(exp.params), "out": STR})


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def resolve_config(name: str, raw: dict) -> dict:
    """Fill defaults and validate; raises :class:`ConfigError` naming the field."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    exp = EXPERIMENTS[name]
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    schema = config_schema(exp)
    # unknown keys are reported against the raw input before defaults hide nothing
    for err in jsonschema.Draft7Validator(schema).iter_errors(raw):
        if err.validator == "additionalProperties":
            raise ConfigError(f"{_path(err)}: {err.message}")
    base = {"experiment": name, "scenario": name, "seed": 0, **copy.deepcopy(exp.defaults)}
    if "metric" in raw and "metric" in base and raw["metric"].get("preset") != base["metric"].get("preset"):
        base["metric"] = {"preset": raw["metric"].get("preset"), "params": {}}
    cfg = _merge(base, raw)
    errs = sorted(jsonschema.Draft7Validator(schema).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        raise ConfigError(f"{_path(e)}: {e.message}")
    if "metric" in cfg:
        m = cfg["metric"]
        ps = METRIC_PARAMS[m["preset"]]
        m.setdefault("params", {})
        for e in jsonschema.Draft7Validator(ps).iter_errors(m["params"]):
            raise ConfigError(f"metric/params/{_path(e)}: {e.message}")
    return cfg


def parse_config(path) -> dict:
    """Read a JSON config; the experiment name comes from the file."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "experiment" not in raw:
        raise ConfigError("config needs an 'experiment' field")
    return resolve_config(raw["experiment"], raw)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------
def build_metric(cfg: dict):
    m = cfg["metric"]
    try:
        return lorgeo.make_metric(m["preset"], **copy.deepcopy(m.get("params", {})))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"metric: {exc}") from exc


def build_grid(metric, cfg: dict, h: float | None = None, **kw) -> wl.GridSpec:
    g = cfg["grid"]
    try:
        return wl.make_grid(metric, h or g["h"], g["T"], cfl=g.get("cfl", 0.5), dt=g.get("dt"), **kw)
    except wl.ConfigError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def pulse(entry):
    if entry is None:
        return None
    return wl.smooth_pulse(entry["t0"], entry["width"], entry.get("amp", 1.0))


def affine_field(c0: float, grad) -> Callable:
    grad = np.asarray(grad, float)
    return lambda X: c0 + np.asarray(X, float) @ grad


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    comparison: str  # "<=", ">=", "abs<=" (|value - target| <= tolerance), "=="
    target: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        v = self.value
        if isinstance(v, str):
            return v == "exact"
        if not np.isfinite(v):
            return False
        if self.comparison == "<=":
            return v <= self.tolerance
        if self.comparison == ">=":
            return v >= self.tolerance
        if self.comparison == "abs<=":
            return abs(v - self.target) <= self.tolerance
        if self.comparison == "==":
            return v == self.target
        raise ValueError(self.comparison)

    def record(self, scenario: str, preset: str | None) -> dict:
        out = {"name": self.name, "scenario": scenario, "metric_preset": preset, "value": self.value,
               "comparison": self.comparison, "tolerance": self.tolerance}
        if self.target is not None:
            out["target"] = self.target
        out.update(self.extra)
        out["pass"] = self.passed
        return out


@dataclass
class Result:
    checks: list
    artifacts: dict  # filename -> (header, rows)
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------
@experiment("geodesic",
            {"p0": VEC, "v0": VEC, "mode": {"enum": ["transmit", "reflect"]}, "s_max": POS,
             "max_events": INT, "rtol": POS, "drift_factor": POS},
            {"metric": {"preset": "minkowski", "params": {"n": 2, "T": 4.0}},
             "params": {"p0": [0.1, 0.0, 0.0], "v0": [1.0, 0.8, 0.6], "mode": "reflect", "s_max": 3.0,
                        "max_events": 8, "rtol": 1e-10, "drift_factor": 10.0}})
def run_geodesic(cfg):
    """Broken null geodesic dump with the null-conservation check."""
    p = cfg["params"]
    m = build_metric(cfg)
    geo = lorgeo.integrate_null_geodesic(m, p["p0"], p["v0"], p["mode"], s_max=p["s_max"],
                                         max_events=p["max_events"], rtol=p["rtol"], atol=p["rtol"] * 1e-2)
    S = geo.samples()
    d = m.dim
    header = ["s", "t"] + [f"x{i}" for i in range(1, d)] + [f"v{i}" for i in range(d)] + ["event_flag"]
    rows = [[*map(float, r[:-1]), int(r[-1])] for r in S]
    drift = geo.max_null_drift(m)
    checks = [Check("null_drift", drift, p["drift_factor"] * p["rtol"], "<=")]
    return Result(checks, {"geodesic.csv": (header, rows)},
                  {"events": [{"kind": e.kind, "s": e.s, "point": e.point, "face": e.face} for e in geo.contacts],
                   "renormalizations": geo.renormalizations})


@experiment("transit",
            {"z0": VEC, "zeta0": VEC, "expected_class": {"enum": ["NoEntry", "I", "IO", "IOI"]},
             "expected_times": {"type": "array", "items": NUM}, "time_tol": POS},
            {"metric": {"preset": "minkowski", "params": {"n": 2, "T": 4.0}},
             "params": {"z0": [0.2, -1.3, 0.0], "zeta0": [1.0, 1.0, 0.0], "expected_class": "IO",
                        "expected_times": [0.3, 2.3], "time_tol": 1e-8}})
def run_transit(cfg):
    """Transit classification (NoEntry | I | IO | IOI) with contact parameters."""
    p = cfg["params"]
    m = build_metric(cfg)
    rec = lorgeo.classify_transit(m, p["z0"], p["zeta0"])
    times = [v for v in (rec.t0, rec.t1, rec.t2) if v is not None]
    checks = [Check("class", float(rec.cls == p["expected_class"]), 1.0, "==", 1.0,
                    {"class": rec.cls, "expected": p["expected_class"]})]
    if p.get("expected_times"):
        exp = p["expected_times"]
        err = max((abs(a - b) for a, b in zip(times, exp)), default=float("inf")) if len(times) == len(exp) else float("inf")
        checks.append(Check("times", err, p["time_tol"], "<="))
    S = rec.geodesic.samples()
    d = m.dim
    header = ["s", "t"] + [f"x{i}" for i in range(1, d)] + [f"v{i}" for i in range(d)] + ["event_flag"]
    rows = [[*map(float, r[:-1]), int(r[-1])] for r in S]
    return Result(checks, {"transit.csv": (header, rows)},
                  {"class": rec.cls, "t0": rec.t0, "t1": rec.t1, "t2": rec.t2, "tangency": rec.tangency})


@experiment("chart",
            {"face": INT, "depth": POS, "y0": VEC, "n_depth": INT, "tol": POS},
            {"metric": {"preset": "static_profile", "params": {"n": 1, "alpha": [1.0, 0.3, 0.1, 0.0],
                                                               "c": [1.0, 0.2, 0.0]}},
             "params": {"face": 0, "depth": 0.2, "y0": [1.0], "n_depth": 8, "tol": 1e-6}})
def run_chart(cfg):
    """Boundary normal chart by normal geodesics against the analytic static-profile chart."""
    p = cfg["params"]
    m = build_metric(cfg)
    if m.name != "static_profile" or p["face"] != 0:
        raise ConfigError("params/face: the chart check compares with the analytic chart of static_profile, face 0")
    ch = lorgeo.boundary_normal_chart(m, p["face"], p["depth"], patch=[np.asarray(p["y0"])])
    ref = bdopt.StaticProfileChart(m, depth=p["depth"])
    dim = m.dim
    rows, err = [], 0.0
    for xn in np.linspace(0, p["depth"], p["n_depth"] + 1):
        G = ch.metric_at(p["y0"], float(xn))
        Gi = np.linalg.inv(G)
        exact = np.zeros((dim, dim))
        exact[: dim - 1, : dim - 1] = ref.Gi(np.asarray(p["y0"]), float(xn))
        exact[dim - 1, dim - 1] = 1.0
        e = float(np.max(np.abs(Gi - exact)))
        err = max(err, e)
        rows.append([float(xn), *map(float, Gi[np.triu_indices(dim)]), e])
    header = ["xn"] + [f"ginv_{i}{j}" for i, j in zip(*np.triu_indices(dim))] + ["abs_error"]
    return Result([Check("chart_metric_error", err, p["tol"], "<=")], {"chart.csv": (header, rows)})


@experiment("riccati",
            {"n": {"type": "integer", "minimum": 1, "maximum": 3},
             "cases": {"type": "array", "items": {"enum": ["flat", "oscillator"]}, "minItems": 1},
             "omega": NUM, "H0_imag": VEC, "H0_real": NUM, "tau_range": VEC, "n_samples": INT,
             "conservation_tol": POS, "closed_form_tol": POS},
            {"params": {"n": 2, "cases": ["flat", "oscillator"], "omega": 1.0, "H0_imag": [1.0, 1.0],
                        "H0_real": 0.2, "tau_range": [0.0, 2.0], "n_samples": 201, "conservation_tol": 1e-8,
                        "closed_form_tol": 1e-10}})
def run_riccati(cfg):
    """Riccati system with the conserved quantity and, when flat, the closed form."""
    p = cfg["params"]
    n = p["n"]
    if len(p["H0_imag"]) != n:
        raise ConfigError("params/H0_imag: needs n entries")
    H0 = np.diag(1j * np.asarray(p["H0_imag"], float)) + p["H0_real"] * np.ones((n, n))
    C = beams.C_matrix(n)
    checks, artifacts, extra = [], {}, {}
    for case in p["cases"]:
        D = np.zeros((n, n)) if case == "flat" else p["omega"] ** 2 * np.eye(n)
        ric = beams.solve_riccati(D, C, np.eye(n), H0, tuple(p["tau_range"]), n_samples=p["n_samples"])
        cons = ric.conserved()
        drift = float(np.max(np.abs(cons - cons[0])) / abs(cons[0]))
        checks.append(Check(f"{case}_conservation_drift", drift, p["conservation_tol"], "<="))
        if case == "flat":
            Yc = np.eye(n)[None] + ric.tau[:, None, None] * (C @ H0)[None]
            Hc = np.array([H0 @ np.linalg.inv(Y) for Y in Yc])
            err = max(float(np.max(np.abs(ric.Y - Yc))), float(np.max(np.abs(ric.H - Hc))))
            checks.append(Check("flat_closed_form", err, p["closed_form_tol"], "<="))
        table = beams.beam_table(ric, beams.amplitude_a0(ric))
        artifacts[f"beam_{case}.csv"] = (beams.beam_table_header(n), table.tolist())
        extra[f"{case}_c0"] = ric.c0
    return Result(checks, artifacts, extra)


@experiment("beam-residual",
            {"order": INT, "origin": VEC, "direction": VEC, "H0_imag": VEC, "tau_range": VEC,
             "rhos": {"type": "array", "items": POS, "minItems": 2}, "n_tau": INT, "half_width": POS,
             "cells_per_unit": INT, "delta": POS, "slope_max": NUM},
            {"metric": {"preset": "minkowski", "params": {"n": 2}},
             "params": {"order": 4, "origin": [0.5, 0.5, 0.5], "direction": [1.0, 1.0, 0.0],
                        "H0_imag": [0.5, 1.0], "tau_range": [0.0, 0.3], "rhos": [25, 50, 100, 200],
                        "n_tau": 20, "half_width": 5.0, "cells_per_unit": 16, "delta": 100.0,
                        "slope_max": -1.2}})
def run_beam_residual(cfg):
    """Residual of the wave operator on an order-N beam across a frequency ladder."""
    p = cfg["params"]
    m = build_metric(cfg)
    ch = beams.NullFrameChart.along(m, p["origin"], p["direction"])
    H0 = np.diag(1j * np.asarray(p["H0_imag"], float))
    b = beams.build_beam(ch, order=p["order"], H0=H0, tau_range=tuple(p["tau_range"]), delta=p["delta"])
    grid = beams.ResidualGrid(n_tau=p["n_tau"], n_z=int(p["cells_per_unit"] * p["half_width"]) + 1,
                              half_width=p["half_width"])
    res = [beams.beam_residual_norm(b, m, None, r, grid) for r in p["rhos"]]
    slope = beams.fit_slope(p["rhos"], res)
    rows = [[float(r), float(v), ""] for r, v in zip(p["rhos"], res)]
    rows[-1][2] = float(slope)
    return Result([Check("residual_slope", slope, p["slope_max"], "<=",
                         extra={"ladder": res, "theoretical": -(p["order"] + 2) / 2 + 1.5})],
                  {"residual.csv": (["rho", "residual_l2", "fitted_slope"], rows)})


@experiment("reflect-beam",
            {"order": INT, "direction": VEC, "angle": NUM, "t_hit": NUM, "tau1": POS, "H0_imag": VEC,
             "rhos": {"type": "array", "items": POS, "minItems": 2}, "n_pts": INT, "half_width": POS,
             "delta": POS, "margin": NUM},
            {"metric": {"preset": "minkowski", "params": {"n": 3}},
             "params": {"order": 2, "direction": [1.0, 0.2, 0.1], "angle": 0.4, "t_hit": 0.5, "tau1": 0.5,
                        "H0_imag": [0.5, 1.0, 1.0], "rhos": [25, 50, 100, 200], "n_pts": 40,
                        "half_width": 5.0, "delta": 4.0, "margin": 0.3}})
def run_reflect_beam(cfg):
    """Boundary trace of an incident beam plus its matched reflection across a frequency ladder."""
    p = cfg["params"]
    m = build_metric(cfg)
    n = m.n
    if m.N.kind != "ball":
        raise ConfigError("metric: reflect-beam needs a ball domain")
    u = np.asarray(p["direction"], float)
    if len(u) != n:
        raise ConfigError("params/direction: needs n entries")
    u = u / np.linalg.norm(u)
    a = p["angle"]
    p1 = np.zeros(n)
    p1[0], p1[1] = math.cos(a), math.sin(a)
    p1 = np.asarray(m.N.center) + m.N.radius * p1
    X0 = np.concatenate(([p["t_hit"] - p["tau1"]], p1 - p["tau1"] * u))
    v = np.concatenate(([1.0], u))
    ch = beams.NullFrameChart.along(m, X0, v)
    H0 = np.diag(1j * np.asarray(p["H0_imag"], float))
    inc = beams.build_beam(ch, order=p["order"], H0=H0, tau_range=(0.0, p["tau1"] + p["margin"]), delta=p["delta"])
    ref, data = beams.reflect_beam(inc, p["tau1"], tau_range=(-p["margin"], p["margin"]))
    res = [beams.boundary_trace_norm(inc, ref, m.N, data.p1, r, n_pts=p["n_pts"], half_width=p["half_width"])
           for r in p["rhos"]]
    slope = beams.fit_slope(p["rhos"], res)
    bound = -(p["order"] + 1) / 2 - 0.75 + 0.3
    rows = [[float(r), float(v), ""] for r, v in zip(p["rhos"], res)]
    rows[-1][2] = float(slope)
    return Result([Check("trace_slope", slope, bound, "<=", extra={"ladder": res})],
                  {"trace.csv": (["rho", "trace_l2", "fitted_slope"], rows)})


@experiment("recover-boundary",
            {"y0": VEC, "count": INT, "spread": POS, "depth": POS, "g_tol": POS, "dn_tol": POS},
            {"metric": {"preset": "static_profile", "params": {"n": 2, "alpha": [1.0, 0.3, 0.1, 0.2],
                                                               "c": [1.0, 0.2, 0.0]}},
             "params": {"y0": [0.5, 0.5], "count": 10, "spread": 0.5, "depth": 0.05, "g_tol": 1e-8,
                        "dn_tol": 1e-6}})
def run_recover_boundary(cfg):
    """Boundary metric and its normal derivative recovered from geometric-optics boundary data."""
    p = cfg["params"]
    m = build_metric(cfg)
    if m.name != "static_profile":
        raise ConfigError("metric: recover-boundary runs on static_profile presets (analytic ground truth)")
    ch = bdopt.StaticProfileChart(m)
    y0 = np.asarray(p["y0"], float)
    if len(y0) != m.n:
        raise ConfigError("params/y0: needs n entries")
    fan = bdopt.covector_fan(m.n, p["count"], spread=p["spread"], seed=cfg["seed"])
    r = bdopt.recovery_round_trip(ch, y0, fan, depth=p["depth"])
    G, dG = ch.Gi(y0, 0.0), ch.dGi_n(y0, 0.0)
    Gr, dGr = r["G"].value, r["normal"]["dGi"]
    rows = []
    for i, j in zip(*np.triu_indices(m.n)):
        rows.append([f"g^{i}{j}", float(G[i, j]), float(Gr[i, j]), float(abs(G[i, j] - Gr[i, j])),
                     float(r["G"].condition_number)])
    for i, j in zip(*np.triu_indices(m.n)):
        rows.append([f"dn g^{i}{j}", float(dG[i, j]), float(dGr[i, j]), float(abs(dG[i, j] - dGr[i, j])),
                     float(r["normal"]["condition_number"])])
    checks = [Check("boundary_metric", float(np.max(np.abs(G - Gr))), p["g_tol"], "<="),
              Check("normal_derivative", float(np.max(np.abs(dG - dGr))), p["dn_tol"], "<=")]
    return Result(checks, {"recovery.csv": (["quantity", "true_value", "recovered_value", "abs_error",
                                              "condition_number"], rows)})


@experiment("dn",
            {"pulse": PULSE, "order_min": NUM, "t_max": POS, "a": NUM, "causality_cells": NUM},
            {"metric": {"preset": "minkowski", "params": {"n": 1, "T": 1.8}},
             "grid": {"h": 0.005, "T": 1.8, "cfl": 0.5, "h_ladder": [0.01, 0.005, 0.0025]},
             "params": {"pulse": {"t0": 0.1, "width": 0.6, "amp": 1.0}, "order_min": 1.8, "t_max": 1.8,
                        "a": 0.0, "causality_cells": 1.0}}, needs_grid=True)
def run_dn(cfg):
    """Simulated DN map of a travelling pulse: convergence order and causality."""
    p = cfg["params"]
    m = build_metric(cfg)
    if m.n != 1:
        raise ConfigError("metric: the dn experiment runs in 1+1")
    f = pulse(p["pulse"])
    t0, w, amp = p["pulse"]["t0"], p["pulse"]["width"], p["pulse"].get("amp", 1.0)
    hs = cfg["grid"]["h_ladder"]
    errs, last = [], None
    for h in hs:
        g = build_grid(m, cfg, h=h)
        _, d = wl.solve_semilinear(m, None, p["a"] or None, [f, None], g)
        sel = d.t <= p["t_max"]
        exact = _pulse_derivative(d.t, t0, w, amp)
        errs.append(wl.relative_l2(d.neumann[0][sel], exact[sel]))
        last = (g, d)
    order = wl.fitted_order(hs, errs)
    g, d = last
    # explicit leapfrog moves one cell per step, so the exact-zero region ends at the numerical cone;
    # the one-sided Neumann stencil reaches two cells further
    nb = d.neumann[1]
    hit = np.nonzero(nb)[0]
    t_first = float(d.t[hit[0]]) if len(hit) else float("inf")
    on = np.nonzero(f(d.t))[0]
    cells = int(round((m.N.hi[0] - m.N.lo[0]) / g.h))
    t_cone = float(d.t[on[0]]) + (cells - 2) * g.dt
    geo = t0 + (m.N.hi[0] - m.N.lo[0])
    pre = float(np.max(np.abs(nb[d.t < geo - g.h]), initial=0.0) / np.max(np.abs(nb)))
    checks = [Check("convergence_order", order, p["order_min"], ">=", extra={"ladder": errs, "h": hs}),
              Check("zero_before_numerical_cone", (t_cone - t_first) / g.dt, p["causality_cells"], "<=",
                    extra={"t_first": t_first, "t_cone": t_cone, "t_geometric": geo,
                           "pre_arrival_relative": pre})]
    return Result(checks, {"dn.csv": (["face_id", "t", "dirichlet", "neumann"], list(d.rows()))},
                  {"h": g.h, "dt": g.dt})


def _pulse_derivative(t, t0, width, amp):
    r = (np.asarray(t, float) - t0 - 0.5 * width) / (0.5 * width)
    inside = np.abs(r) < 1
    rr = np.where(inside, r, 0.0)
    one = 1.0 - rr * rr
    val = np.where(inside, amp * np.exp(1.0 - 1.0 / one), 0.0)
    return np.where(inside, val * (-2 * rr / one**2) / (0.5 * width), 0.0)


def _ladder_grids(m, cfg):
    return [build_grid(m, cfg, h=h) for h in cfg["grid"]["h_ladder"]]


@experiment("invariance-diffeo",
            {"pulse": PULSE, "a": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2},
             "diffeo": _obj({"amp": NUM, "center": VEC, "width": POS}), "control_shift": NUM,
             "tol": POS, "order_min": NUM, "control_min": NUM},
            {"metric": {"preset": "minkowski", "params": {"n": 1, "T": 1.0}},
             "grid": {"T": 1.0, "h": 0.00125, "cfl": 0.5, "h_ladder": [0.005, 0.0025, 0.00125]},
             "params": {"pulse": {"t0": 0.05, "width": 0.4, "amp": 1.0}, "a": [1.0, 0.0],
                        "diffeo": {"amp": 0.05, "center": [0.5, 0.5], "width": 0.3}, "control_shift": 0.1,
                        "tol": 0.02, "order_min": 0.8, "control_min": 0.2}}, needs_grid=True)
def run_invariance_diffeo(cfg):
    """DN map under an interior diffeomorphism, with a boundary-moving negative control."""
    p = cfg["params"]
    m = build_metric(cfg)
    a = affine_field(p["a"][0], [0.0, p["a"][1]])
    dd = p["diffeo"]
    psi = wl.Diffeo(dd["amp"], tuple(dd["center"]), dd["width"])
    f = [pulse(p["pulse"]), None]
    grids = _ladder_grids(m, cfg)
    vals = [wl.diffeo_invariance_check(m, a, psi, f, g).value for g in grids]
    order = _order(cfg["grid"]["h_ladder"], vals)
    neg = wl.diffeo_invariance_check(m, a, wl.TimeShift(p["control_shift"], m.T), f, grids[-1], check=False).value
    g = grids[-1]
    ex = {"h": g.h, "dt": g.dt}
    return Result([Check("discrepancy", vals[-1], p["tol"], "<=", extra={**ex, "ladder": vals}),
                   Check("order", order, p["order_min"], ">=", extra={"h_ladder": cfg["grid"]["h_ladder"]}),
                   Check("negative_control", neg, p["control_min"], ">=", extra=ex)],
                  {"ladder.csv": (["h", "discrepancy"], [[float(h), float(v)] for h, v in
                                                        zip(cfg["grid"]["h_ladder"], vals)])})


def _order(hs, vals):
    if all(v == 0 for v in vals):
        return "exact"
    if any(v <= 0 for v in vals):
        return float("nan")
    return wl.fitted_order(hs, vals)


@experiment("invariance-conformal",
            {"pulse": PULSE, "a": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2},
             "beta": _obj({"amp": NUM, "shift": NUM, "width": POS}), "control_beta": NUM,
             "tol": POS, "order_min": NUM, "control_min": NUM},
            {"metric": {"preset": "minkowski", "params": {"n": 1, "T": 0.5}},
             "grid": {"T": 0.5, "h": 0.00125, "cfl": 0.5, "h_ladder": [0.005, 0.0025, 0.00125]},
             "params": {"pulse": {"t0": 0.05, "width": 0.2, "amp": 0.5}, "a": [1.0, 0.5],
                        "beta": {"amp": 0.1, "shift": 0.2, "width": 0.15}, "control_beta": 0.3,
                        "tol": 0.02, "order_min": 0.8, "control_min": 0.2}}, needs_grid=True)
def run_invariance_conformal(cfg):
    """DN map under a conformal rescaling with the matching coefficient rule, plus a negative control."""
    p = cfg["params"]
    m = build_metric(cfg)
    a = affine_field(p["a"][0], [0.0, p["a"][1]])
    b = p["beta"]
    beta = wl.travelling_beta(b["amp"], b["shift"], b["width"])
    f = [pulse(p["pulse"]), None]
    grids = _ladder_grids(m, cfg)
    vals = [wl.conformal_invariance_check(m, a, beta, f, g).value for g in grids]
    order = _order(cfg["grid"]["h_ladder"], vals)
    neg = wl.conformal_invariance_check(m, a, wl.constant_beta(p["control_beta"]), f, grids[-1], check=False).value
    g = grids[-1]
    ex = {"h": g.h, "dt": g.dt}
    return Result([Check("discrepancy", vals[-1], p["tol"], "<=", extra={**ex, "ladder": vals}),
                   Check("order", order, p["order_min"], ">=", extra={"h_ladder": cfg["grid"]["h_ladder"]}),
                   Check("negative_control", neg, p["control_min"], ">=", extra=ex)],
                  {"ladder.csv": (["h", "discrepancy"], [[float(h), float(v)] for h, v in
                                                        zip(cfg["grid"]["h_ladder"], vals)])})


@experiment("fourwave",
            {"pulses": {"type": "array", "items": FACE_PULSES, "minItems": 4, "maxItems": 4},
             "a": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2}, "eps": POS,
             "stencil_tol": POS, "factor_target": NUM, "factor_tol": POS,
             "eps_ladder": {"type": "array", "items": POS, "minItems": 3}, "exponent_tol": POS,
             "require_signal": BOOL, "signal_min": POS},
            {"metric": {"preset": "minkowski", "params": {"n": 1, "T": 1.5}},
             "grid": {"h": 0.005, "T": 1.5, "cfl": 0.5},
             "params": {"pulses": [[{"t0": 0.0, "width": 0.3}, None], [{"t0": 0.1, "width": 0.3}, None],
                                   [None, {"t0": 0.0, "width": 0.3}], [None, {"t0": 0.1, "width": 0.3}]],
                        "a": [1.0, 0.5], "eps": 0.05, "stencil_tol": 1e-2, "factor_target": -24.0,
                        "factor_tol": 0.5, "eps_ladder": [0.01, 0.005, 0.0025], "exponent_tol": 0.2,
                        "require_signal": True, "signal_min": 1e-6}}, needs_grid=True)
def run_fourwave(cfg):
    """Fourth-order linearization: sign stencil, cascade oracle, factor regression and quartic scaling."""
    p = cfg["params"]
    m = build_metric(cfg)
    g = build_grid(m, cfg)
    a = affine_field(p["a"][0], [0.0, p["a"][1]]) if any(p["a"]) else None
    fs = [[pulse(s) for s in fl] for fl in p["pulses"]]
    st = wl.dn_fourth_mixed(m, None, a if a is not None else 0.0, fs, g, eps=p["eps"])
    cas = wl.cascade_fourth(m, None, a if a is not None else 0.0, fs, g)
    unit = wl.cascade_fourth(m, None, a if a is not None else 0.0, fs, g, factor=1.0)
    nrm = float(np.linalg.norm(cas.neumann))
    agree = wl.relative_l2(st.neumann, cas.neumann) if nrm > 0 else float(np.linalg.norm(st.neumann))
    factor = wl.factor_regression(st, unit) if np.linalg.norm(unit.neumann) > 0 else float("nan")
    combined = wl._combine(fs, [1.0, 1.0, 1.0, 1.0])
    expo, errs = wl.quartic_scaling(m, None, a if a is not None else 0.0, combined, g, tuple(p["eps_ladder"]))
    ex = {"h": g.h, "dt": g.dt}
    checks = [Check("stencil_vs_cascade", agree, p["stencil_tol"], "<=", extra=ex),
              Check("factor", factor, p["factor_tol"], "abs<=", p["factor_target"], ex),
              Check("quartic_exponent", expo, p["exponent_tol"], "abs<=", 4.0, {**ex, "ladder": errs})]
    if p["require_signal"]:
        checks.append(Check("signal_norm", float(np.linalg.norm(st.neumann)), p["signal_min"], ">="))
    return Result(checks, {"stencil.csv": (["face_id", "t", "dirichlet", "neumann"], list(st.rows())),
                           "cascade.csv": (["face_id", "t", "dirichlet", "neumann"], list(cas.rows()))})


@experiment("control",
            {"pulse": PULSE, "window": VEC, "long_window": VEC, "one_pass_tol": POS, "two_pass_tol": POS,
             "uncontrolled_min": POS},
            {"metric": {"preset": "minkowski", "params": {"n": 1, "T": 2.4}},
             "grid": {"h": 0.0025, "T": 2.4, "cfl": 0.5},
             "params": {"pulse": {"t0": 0.12, "width": 0.2, "amp": 1.0}, "window": [0.0, 1.8],
                        "long_window": [0.0, 2.4], "one_pass_tol": 0.01, "two_pass_tol": 0.02,
                        "uncontrolled_min": 0.3}}, needs_grid=True)
def run_control(cfg):
    """Time-domain scattering control on the exit face."""
    p = cfg["params"]
    m = build_metric(cfg)
    if m.n != 1:
        raise ConfigError("metric: the control experiment runs in 1+1")
    g = build_grid(m, cfg)
    r = wl.scattering_control(m, pulse(p["pulse"]), g, passes=2, window=tuple(p["window"]),
                              long_window=tuple(p["long_window"]))
    ex = {"h": g.h, "dt": g.dt}
    checks = [Check("uncontrolled", r.uncontrolled, p["uncontrolled_min"], ">=", extra=ex),
              Check("one_pass", r.mismatch[0], p["one_pass_tol"], "<=", extra=ex),
              Check("two_pass_long_window", r.long_mismatch[1], p["two_pass_tol"], "<=", extra=ex)]
    rows = [[float(t), float(a), float(b)] for t, a, b in zip(r.t, r.f_entry, r.f_exit)]
    return Result(checks, {"control.csv": (["t", "f_entry", "f_exit"], rows)},
                  {"mismatch": r.mismatch, "long_mismatch": r.long_mismatch})


@experiment("stationary-phase",
            {"q0": VEC, "r0": NUM, "varsigma": NUM, "sign": {"enum": [1, -1]},
             "rhos": {"type": "array", "items": POS, "minItems": 3},
             "a": {"type": "array", "items": NUM, "minItems": 1},
             "beta": _obj({"amp": NUM, "offset": VEC, "width": POS}),
             "multipliers": {"type": "array", "items": NUM, "minItems": 1},
             "tolerances": {"type": "array", "items": POS, "minItems": 1}, "decay": POS, "cells": POS},
            {"metric": {"preset": "minkowski", "params": {"n": 2, "T": 2.0}},
             "params": {"q0": [1.0, 0.0, 0.0], "r0": 1.0, "varsigma": 0.6, "sign": 1,
                        "rhos": [50, 100, 200, 400], "a": [1.0, 0.2, 0.3, 0.0],
                        "beta": {"amp": 0.3, "offset": [-0.15, 0.05, 0.0], "width": 0.6},
                        "multipliers": [1.0, 2.0], "tolerances": [0.01, 0.04], "decay": 25.0, "cells": 8.0}})
def run_stationary_phase(cfg):
    """Ratios of extrapolated interaction integrals recover the coefficient at the interaction point."""
    p = cfg["params"]
    m = build_metric(cfg)
    q0 = np.asarray(p["q0"], float)
    if len(q0) != m.dim or len(p["beta"]["offset"]) != m.dim:
        raise ConfigError("params/q0: dimension mismatch with the metric")
    if len(p["multipliers"]) != len(p["tolerances"]):
        raise ConfigError("params/tolerances: one tolerance per multiplier")
    beta, q = recon.bump_potential(q0 + np.asarray(p["beta"]["offset"]), p["beta"]["width"], p["beta"]["amp"])
    coeffs = (list(p["a"]) + [0.0] * m.dim)[: m.dim + 1]
    a = affine_field(coeffs[0], coeffs[1:])
    plain = recon.build_interaction_setup(m, q0, p["r0"], p["varsigma"], p["sign"])
    tilde = recon.build_interaction_setup(m, q0, p["r0"], p["varsigma"], p["sign"], q=q)
    grid = recon.default_quadrature(plain, decay=p["decay"], cells=p["cells"])
    plain_ladder = [recon.interaction_integral(plain, a, r, grid) for r in p["rhos"]]
    checks, rows = [], []
    for mult, tol in zip(p["multipliers"], p["tolerances"]):
        at = lambda X, mult=mult: mult * np.exp(-beta(X)) * a(X)
        rep = recon.recover_amplitude_ratio(plain, tilde, a, at, beta, p["rhos"], grid,
                                            plain_ladder=plain_ladder)
        # limit is exp(beta) a~ / a at q0, i.e. the multiplier
        checks.append(Check(f"ratio_x{fmt(mult)}", float(rep.extrapolated.real), tol, "abs<=", float(mult),
                            {"experiment": "stationary-phase", "ladder": [complex(v) for v in rep.ratios],
                             "extrapolated": complex(rep.extrapolated), "reliable": rep.reliable,
                             "extrapolation_residual": rep.residual}))
        for r, v, w in zip(p["rhos"], rep.ladder_tilde, rep.ratios):
            rows.append([float(mult), float(r), float(v.real), float(v.imag), float(w.real), float(w.imag)])
    pos = recon.phase_positivity(plain, grid, p["rhos"][-1])
    return Result(checks, {"ladder.csv": (["multiplier", "rho", "re_scaled_integral", "im_scaled_integral",
                                           "re_ratio", "im_ratio"], rows)},
                  {"kappa": plain.kappa, "alpha": plain.coeffs.alpha, "quadrature": {
                      "half_width": grid.half_width, "m": grid.m}, "phase": pos,
                   "plain_ladder": plain_ladder})


@experiment("ray-q",
            {"origin": VEC, "direction": VEC, "s_range": VEC, "q_center": VEC, "q_width": POS, "q_amp": NUM,
             "s0": {"type": "array", "items": NUM, "minItems": 1}, "hs": POS, "integral_tol": POS,
             "recovery_tol": POS},
            {"metric": {"preset": "minkowski", "params": {"n": 2, "T": 2.0}},
             "params": {"origin": [0.0, -0.5, 0.0], "direction": [1.0, 1.0, 0.0], "s_range": [0.0, 1.0],
                        "q_center": [0.5, 0.0, 0.05], "q_width": 0.2, "q_amp": 1.0,
                        "s0": [0.3, 0.4, 0.5, 0.6, 0.7], "hs": 1e-3, "integral_tol": 1e-8,
                        "recovery_tol": 1e-3}})
def run_ray_q(cfg):
    """Light-ray transform of a bump potential read off subleading amplitudes, and its pointwise inversion."""
    p = cfg["params"]
    m = build_metric(cfg)
    c = np.asarray(p["q_center"], float)
    if len(c) != m.dim or len(p["origin"]) != m.dim or len(p["direction"]) != m.dim:
        raise ConfigError("params/q_center: dimension mismatch with the metric")
    q = lambda X: p["q_amp"] * np.exp(-np.sum((np.asarray(X) - c) ** 2, axis=-1) / p["q_width"] ** 2)
    rt = recon.ray_transform_q(m, p["origin"], p["direction"], q, tuple(p["s_range"]))
    rows, ierr, rerr = [], 0.0, 0.0
    for s0 in p["s0"]:
        smp = rt.sample(s0, q)
        rec = rt.recover_q(s0, p["hs"])
        truth = float(q(rt.chart.gamma(np.array([s0]))[0]))
        e1 = max(abs(smp.weighted - smp.weighted_quadrature), abs(smp.unweighted - smp.unweighted_quadrature))
        e2 = abs(rec - truth)
        ierr, rerr = max(ierr, e1), max(rerr, e2)
        w, wq = complex(smp.weighted), complex(smp.weighted_quadrature)
        rows.append([float(s0), w.real, w.imag, wq.real, wq.imag, float(np.real(smp.unweighted)),
                     float(smp.unweighted_quadrature), float(np.real(rec)), truth])
    return Result([Check("integral_error", ierr, p["integral_tol"], "<="),
                   Check("recovery_error", rerr, p["recovery_tol"], "<=")],
                  {"ray.csv": (["s0", "re_weighted", "im_weighted", "re_weighted_quadrature",
                                "im_weighted_quadrature", "unweighted", "unweighted_quadrature", "q_recovered",
                                "q_true"], rows)})


@experiment("observation-set",
            {"q0s": {"type": "array", "items": VEC, "minItems": 1}, "a": NUM, "width": POS, "eps": POS,
             "cells": NUM, "min_positions": INT, "floor": POS, "factor": POS, "noise_window": INT},
            {"metric": {"preset": "minkowski", "params": {"n": 1, "T": 1.45}},
             "grid": {"h": 0.0025, "T": 1.45, "cfl": 0.5},
             "params": {"q0s": [[0.5, 0.5], [0.7, 0.5], [0.7, 0.3]], "a": 1.0, "width": 0.1, "eps": 0.05,
                        "cells": 2.0, "min_positions": 3, "floor": 6e-3, "factor": 5.0,
                        "noise_window": 10}}, needs_grid=True)
def run_observation_set(cfg):
    """Earliest arrivals of the fourth-order DN response against the geometric observation set."""
    p = cfg["params"]
    m = build_metric(cfg)
    g = build_grid(m, cfg)
    good, artifacts, positions = 0, {}, []
    det = {"floor": p["floor"], "factor": p["factor"], "noise_window": p["noise_window"]}
    for k, q0 in enumerate(p["q0s"]):
        rep = recon.observation_set_from_data(m, q0, g, a=p["a"], width=p["width"], eps=p["eps"], detect=det)
        ok = all(x.cell_error is not None and abs(x.cell_error) <= p["cells"] for x in rep.arrivals)
        good += ok
        positions.append({"q0": q0, "within_cells": ok})
        rows = [[x.face_id, "" if x.t_detected is None else float(x.t_detected),
                 "" if x.t_geometric is None else float(x.t_geometric),
                 "" if x.cell_error is None else float(x.cell_error)] for x in rep.arrivals]
        artifacts[f"arrivals_{k}.csv"] = (["face_id", "t_detected", "t_geometric", "cell_error"], rows)
    return Result([Check("positions_within_cells", float(good), float(p["min_positions"]), ">=",
                         extra={"h": g.h, "dt": g.dt})], artifacts, {"positions": positions})


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------
def run_experiment(cfg: dict, out: Path) -> int:
    """Run a resolved config, write artifacts into ``out`` and return the exit status."""
    exp = EXPERIMENTS[cfg["experiment"]]
    np.random.seed(cfg.get("seed", 0))
    res = exp.runner(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in sorted(res.artifacts.items()):
        write_csv(out / name, header, rows)
    preset = cfg.get("metric", {}).get("preset")
    checks = [c.record(cfg["scenario"], preset) for c in res.checks]
    ok = all(c["pass"] for c in checks)
    report = {"experiment": cfg["experiment"], "scenario": cfg["scenario"], "version": __version__,
              "metric_preset": preset, "config": cfg, "checks": checks, "results": res.extra, "pass": ok}
    (out / "report.json").write_text(dumps(report))
    return EXIT_OK if ok else EXIT_TOL


def bundled_scenarios() -> dict[str, dict]:
    """Scenario configs shipped with the package, keyed by experiment name."""
    out = {}
    for entry in sorted(resources.files("artifact").joinpath("scenarios").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            cfg = json.loads(entry.read_text())
            out[cfg["experiment"]] = cfg
    return out


def _presets_text() -> str:
    lines = ["metric presets:"]
    for name in sorted(lorgeo.PRESETS):
        lines.append(f"  {name}: params {sorted(METRIC_PARAMS[name]['properties'])}")
    lines.append("experiments:")
    for name in EXPERIMENTS:
        lines.append(f"  {name}: {EXPERIMENTS[name].doc.splitlines()[0] if EXPERIMENTS[name].doc else ''}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="artifact", description="Lorentzian inverse-problem laboratory")
    parser.add_argument("--list-presets", action="store_true", help="list metric presets and experiments")
    sub = parser.add_subparsers(dest="experiment")
    for name, exp in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=exp.doc.splitlines()[0] if exp.doc else name)
        sp.add_argument("--config", type=str, default=None, help="JSON config (defaults to the bundled scenario)")
        sp.add_argument("--out", type=str, default=None, help="artifact directory")
    args = parser.parse_args(argv)
    if args.list_presets:
        print(_presets_text())
        return EXIT_OK
    if not args.experiment:
        parser.print_help()
        return EXIT_CONFIG
    try:
        if args.config:
            try:
                raw = json.loads(Path(args.config).read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"config file {args.config} not found") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
            if isinstance(raw, dict) and raw.get("experiment", args.experiment) != args.experiment:
                raise ConfigError(f"experiment: config is for {raw.get('experiment')!r}, not {args.experiment!r}")
        else:
            raw = bundled_scenarios().get(args.experiment, {"experiment": args.experiment})
        cfg = resolve_config(args.experiment, raw)
        out = Path(args.out or cfg.get("out") or f"out/{cfg['scenario']}")
        status = run_experiment(cfg, out)
    except (ConfigError, wl.ConfigError, beams.ConfigurationError, lorgeo.DomainError, lorgeo.PreconditionError,
            lorgeo.DegeneracyError, bdopt.ConditioningError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (wl.DivergenceError, beams.PositivityError, beams.ConjugatePointError, FloatingPointError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"{args.experiment}: {'PASS' if status == EXIT_OK else 'FAIL'} -> {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
