"""JSON configuration of macroscopic runs: schema, defaults and execution."""

from __future__ import annotations

import csv
import json

import jsonschema
import numpy as np

from .dispersion import DispersionTable, tabulate
from .errors import ConfigError
from .geometry import CellGeometry
from .isotherm import IsothermModel
from .macro import MacroGrid, Medium, bump, default_dt, initial_state, run
from .sweep import CellContext, CellSetup, mesh_stats

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_MAT = {"type": "array", "minItems": 2, "maxItems": 2,
        "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM}}

MACRO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "steps"],
    "properties": {
        "grid": {
            "type": "object", "additionalProperties": False, "required": ["n", "length"],
            "properties": {"n": {"type": "integer", "minimum": 3}, "length": _POS,
                           "dim": {"enum": [1, 2]}},
        },
        "steps": {"type": "integer", "minimum": 1},
        "dt": _POS,
        "isotherm": {
            "type": "object", "additionalProperties": False,
            "properties": {"alpha": _POS, "beta": {"type": "number", "minimum": 0}},
        },
        "cell": {
            "type": "object", "additionalProperties": False,
            "properties": {"h": _POS, "radius": _POS,
                           "velocity": {"enum": ["symmetric", "nonsymmetric", "zero"]},
                           "surface_speed": _NUM, "D": _MAT, "Ds": _POS, "kappa": _POS,
                           "mesh_in": {"type": "string"}},
        },
        "tensor": {
            "type": "object", "additionalProperties": False,
            "properties": {"constant": _MAT, "u0_max": _POS,
                           "points": {"type": "integer", "minimum": 16}},
        },
        "initial": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "bump": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"amplitude": {"type": "number", "minimum": 0}, "width": _POS,
                                   "center": {"type": "array", "items": _NUM},
                                   "background": {"type": "number", "minimum": 0}},
                },
                "u_in": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "v_in": {"oneOf": [
                    {"enum": ["well_prepared", "zero"]},
                    {"type": "number", "minimum": 0},
                    {"type": "array", "items": {"type": "number", "minimum": 0}},
                ]},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"csv": {"type": "string"}, "snapshots": {"type": "string"},
                           "snapshot_every": {"type": "integer", "minimum": 1}},
        },
    },
}

MACRO_COLUMNS = ("t", "mass", "stored_energy", "min_u", "max_u")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc})", path=str(path)) from exc
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, MACRO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(exc.message, path=where) from exc
    grid = config["grid"]
    u_in = config.get("initial", {}).get("u_in")
    if u_in is not None and len(u_in) != grid["n"] ** grid.get("dim", 1):
        raise ConfigError("length does not match the grid size", path="initial/u_in")


def _setup(config: dict) -> CellSetup:
    cell = config.get("cell", {})
    iso = config.get("isotherm", {})
    s = CellSetup()
    for key in ("h", "radius", "velocity", "surface_speed", "D", "Ds", "kappa", "mesh_in"):
        if key in cell:
            setattr(s, key, cell[key])
    s.alpha = iso.get("alpha", 1.0)
    s.beta = iso.get("beta", 1.0)
    return s


def build_table(config: dict):
    """Return (table, medium, mesh stats or None)."""
    setup = _setup(config)
    model = IsothermModel(setup.alpha, setup.beta)
    tensor = config.get("tensor", {})
    if "constant" in tensor:
        g = CellGeometry(obstacle_radius=setup.radius)
        return DispersionTable.constant(tensor["constant"]), Medium(model, g.fluid_area, g.surface_length), None
    ctx = CellContext(setup)
    table = tabulate(ctx.problem(), tensor.get("u0_max", 10.0), tensor.get("points", 16))
    g = ctx.mesh.geometry()
    return table, Medium(model, g.fluid_area, g.surface_length), mesh_stats(ctx.mesh)


def initial_data(config: dict, grid: MacroGrid, medium: Medium):
    init = config.get("initial", {})
    if "u_in" in init:
        u_in = np.asarray(init["u_in"], dtype=float).reshape(grid.shape)
    else:
        b = init.get("bump", {})
        u_in = bump(grid, b.get("amplitude", 1.0), b.get("width", grid.length / 8),
                    b.get("center"), b.get("background", 0.0))
    v = init.get("v_in", "well_prepared")
    if v == "well_prepared":
        v_in = None
    elif v == "zero":
        v_in = np.zeros(grid.shape)
    else:
        v_in = np.broadcast_to(np.asarray(v, dtype=float), grid.shape)
    state, v_in = initial_state(grid, medium, u_in, v_in)
    return state, u_in, v_in


def run_macro_config(config: dict, csv_path=None) -> dict:
    """Execute a validated configuration; returns a manifest fragment."""
    validate_config(config)
    g = config["grid"]
    grid = MacroGrid(g["n"], float(g["length"]), g.get("dim", 1))
    table, medium, stats = build_table(config)
    state, u_in, v_in = initial_data(config, grid, medium)
    dt = float(config.get("dt") or default_dt(grid, medium, table))
    out = config.get("output", {})
    every = out.get("snapshot_every", 0)
    result = run(state, table, dt, config["steps"], snapshot_every=every if out.get("snapshots") else 0)
    csv_path = csv_path or out.get("csv")
    outputs = []
    if csv_path:
        write_series_csv(result.records, csv_path)
        outputs.append(str(csv_path))
    if out.get("snapshots"):
        write_snapshots(result.snapshots, dt, grid, out["snapshots"])
        outputs.append(out["snapshots"])
    f_in = medium.isotherm.f(u_in)
    masses = np.array([r.mass for r in result.records])
    stored0 = result.records[0].stored_energy
    last = result.records[-1]
    return {
        "dt": dt,
        "steps": config["steps"],
        "mesh": stats,
        "fluid_area": medium.fluid_area,
        "surface_length": medium.surface_length,
        "v_in": {"max": float(np.max(v_in)),
                 "max_abs_minus_f_u_in": float(np.max(np.abs(v_in - f_in)))},
        "mass_drift_relative": float(np.max(np.abs(masses - masses[0])) / max(abs(masses[0]), 1e-300)),
        "energy_balance_defect": (last.stored_energy + last.dissipated - stored0) / stored0
        if stored0 > 0 else 0.0,
        "newton": [{"iterations": d.iterations, "residual": d.residual} for d in result.diagnostics],
        "outputs": outputs,
        "records": result.records,
    }


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_series_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MACRO_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.t), _fmt(r.mass), _fmt(r.stored_energy), _fmt(r.min_u), _fmt(r.max_u)])


def write_snapshots(snapshots: dict, dt: float, grid: MacroGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "index", "u"])
        for k in sorted(snapshots):
            for i, u in enumerate(np.asarray(snapshots[k]).ravel()):
                w.writerow([k, _fmt(k * dt), i, _fmt(u)])


__all__ = ["MACRO_SCHEMA", "MACRO_COLUMNS", "load_config", "validate_config", "run_macro_config",
           "build_table", "initial_data", "write_series_csv"]
