"""Parameter sweeps of the dispersion tensor (u0, Ds or kappa) with a worker pool."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cell import CellProblem, CoefficientSet
from .dispersion import COERCIVITY_TOL, assemble_dispersion, dispersion_at
from .errors import InputError
from .geometry import CellGeometry, CellMesh, build_cell_mesh, extract_surface_mesh, read_mesh
from .velocity import VelocityRecipe, build_velocity

PARAMETERS = ("u0", "Ds", "kappa")
CSV_COLUMNS = ("A11", "A12", "A21", "A22", "A11_sym", "A22_sym", "lambda_min")


@dataclass
class CellSetup:
    """Everything needed to rebuild the cell problem in a worker process."""
    h: float = 1 / 32
    radius: float = 0.2
    velocity: str = "symmetric"
    surface_speed: float = 0.0
    D: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    Ds: float = 1.0
    kappa: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    u0: float = 2.5
    mesh_in: str | None = None


@dataclass
class SweepSpec:
    parameter: str
    min: float
    max: float
    count: int
    spacing: str = "log"          # linear | log | mixed (linear to 1, log above)
    setup: CellSetup = field(default_factory=CellSetup)

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise InputError(f"unknown sweep parameter '{self.parameter}'")
        if not self.min < self.max:
            raise InputError("sweep range needs min < max")
        if self.count < 2:
            raise InputError("sweep needs at least 2 points")
        if self.spacing not in ("linear", "log", "mixed"):
            raise InputError(f"unknown spacing '{self.spacing}'")
        if self.spacing == "log" and not self.min > 0:
            raise InputError("log spacing needs min > 0")
        if self.parameter != "u0" and not self.min > 0:
            raise InputError(f"{self.parameter} must stay positive")
        if self.parameter == "u0" and self.min < 0:
            raise InputError("u0 must be non-negative")

    def values(self) -> np.ndarray:
        if self.spacing == "linear":
            return np.linspace(self.min, self.max, self.count)
        if self.spacing == "log":
            return np.logspace(math.log10(self.min), math.log10(self.max), self.count)
        if self.max <= 1:
            return np.linspace(self.min, self.max, self.count)
        n_log = max(2, self.count // 2)
        n_lin = self.count - n_log + 1
        lin = np.linspace(self.min, 1.0, n_lin)
        log = np.logspace(0.0, math.log10(self.max), n_log)
        return np.concatenate([lin, log[1:]])

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_digest(self.as_dict())


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def build_mesh(setup: CellSetup) -> CellMesh:
    if setup.mesh_in:
        return read_mesh(setup.mesh_in)
    return build_cell_mesh(CellGeometry(obstacle_radius=setup.radius), setup.h)


def mesh_stats(mesh: CellMesh) -> dict:
    g = mesh.geometry()
    return {"h": mesh.h, "nodes": int(mesh.n_nodes), "triangles": int(mesh.n_triangles),
            "loop_nodes": int(len(mesh.boundary_segments)), "fluid_area": g.fluid_area,
            "surface_length": g.surface_length}


class CellContext:
    """Mesh, velocity and a cache of cell problems keyed by (Ds, kappa)."""

    def __init__(self, setup: CellSetup, mesh: CellMesh | None = None):
        self.setup = setup
        self.mesh = mesh if mesh is not None else build_mesh(setup)
        self.surface = extract_surface_mesh(self.mesh)
        recipe = VelocityRecipe(setup.velocity, surface_speed=setup.surface_speed)
        self.velocity = build_velocity(self.mesh, self.surface, recipe)
        self._problems = {}

    def coefficients(self, **override) -> CoefficientSet:
        s = self.setup
        args = dict(velocity=self.velocity, D=np.asarray(s.D, dtype=float), Ds=s.Ds,
                    kappa=s.kappa, alpha=s.alpha, beta=s.beta)
        args.update(override)
        return CoefficientSet(**args)

    def problem(self, Ds: float | None = None, kappa: float | None = None) -> CellProblem:
        key = (self.setup.Ds if Ds is None else Ds, self.setup.kappa if kappa is None else kappa)
        if key not in self._problems:
            coeffs = self.coefficients(Ds=key[0], kappa=key[1])
            self._problems[key] = CellProblem(self.mesh, coeffs, self.surface)
        return self._problems[key]


def evaluate_point(ctx: CellContext, parameter: str, value: float) -> dict:
    """Tensor and diagnostics at one sweep value; ``value = inf`` selects the limit solver."""
    u0 = ctx.setup.u0
    limit = math.isinf(value)
    if parameter == "u0":
        pb = ctx.problem()
        if limit:
            cells = pb.solve_limit_u0_inf(with_aux=False)
            tensor = assemble_dispersion(cells, pb)
        else:
            tensor = dispersion_at(pb, float(value))
            u0 = float(value)
    elif parameter == "Ds":
        if limit:
            pb = ctx.problem()
            tensor = assemble_dispersion(pb.solve_limit_ds_inf(u0, with_aux=False), pb)
        else:
            pb = ctx.problem(Ds=float(value))
            tensor = dispersion_at(pb, u0)
    else:
        if limit:
            pb = ctx.problem()
            tensor = assemble_dispersion(pb.solve_limit_kappa_inf(u0, with_aux=False), pb)
        else:
            pb = ctx.problem(kappa=float(value))
            tensor = dispersion_at(pb, u0)
    bound = pb.geometry.fluid_area * float(np.linalg.eigvalsh(pb.coeffs.D)[0])
    compat = pb.compatibility_residual(u0) if tensor.regime == "full" else 0.0
    return {"A": tensor.A.tolist(), "lambda_min": tensor.lambda_min, "regime": tensor.regime,
            "fprime": pb.fprime(u0) if tensor.regime != "u0_inf" else 0.0,
            "compatibility": compat, "positive_definite": bool(tensor.lambda_min > 0),
            "area_bound_ok": bool(tensor.lambda_min >= bound - COERCIVITY_TOL),
            "solver": "direct"}


_WORKER_CTX: CellContext | None = None


def _init_worker(setup: CellSetup, mesh: CellMesh) -> None:
    global _WORKER_CTX
    _WORKER_CTX = CellContext(setup, mesh)


def _run_point(parameter: str, value: float) -> dict:
    try:
        out = evaluate_point(_WORKER_CTX, parameter, value)
        out["status"] = "ok"
    except Exception as exc:  # per-point isolation: a failing solve must not stop the sweep
        out = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return out


def default_jobs() -> int:
    env = os.environ.get("DISPERSION_LAB_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"DISPERSION_LAB_JOBS must be an integer, got '{env}'") from exc
    return 1


@dataclass
class SweepResult:
    spec: SweepSpec
    values: list
    points: list
    mesh: dict

    @property
    def failed(self) -> int:
        return sum(p["status"] != "ok" for p in self.points)


def run_sweep(spec: SweepSpec, jobs: int = 1, ctx: CellContext | None = None) -> SweepResult:
    """Evaluate all sweep points plus the limit row; results come back in parameter order."""
    ctx = ctx or CellContext(spec.setup)
    values = [float(v) for v in spec.values()] + [math.inf]
    global _WORKER_CTX
    if jobs <= 1:
        prev, _WORKER_CTX = _WORKER_CTX, ctx
        try:
            points = [_run_point(spec.parameter, v) for v in values]
        finally:
            _WORKER_CTX = prev
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(spec.setup, ctx.mesh)) as pool:
            points = list(pool.map(_run_point, [spec.parameter] * len(values), values))
    return SweepResult(spec, values, points, mesh_stats(ctx.mesh))


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else format(float(v), ".17g")


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([result.spec.parameter, *CSV_COLUMNS, "tag"])
        for v, p in zip(result.values, result.points):
            tag = "limit" if math.isinf(v) else "point"
            if p["status"] != "ok":
                w.writerow([_fmt(v)] + [""] * len(CSV_COLUMNS) + ["failed"])
                continue
            A = np.asarray(p["A"])
            row = [A[0, 0], A[0, 1], A[1, 0], A[1, 1], A[0, 0], A[1, 1], p["lambda_min"]]
            w.writerow([_fmt(v)] + [_fmt(x) for x in row] + [tag])


def read_sweep_csv(path) -> dict:
    """Parse a sweep CSV into {'parameter', 'points': [(value, row dict)], 'limit': row dict}."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        param = reader.fieldnames[0]
        points, limit = [], None
        for row in reader:
            if row["tag"] == "failed":
                continue
            vals = {k: float(row[k]) for k in CSV_COLUMNS}
            if row["tag"] == "limit":
                limit = vals
            else:
                points.append((float(row[param]), vals))
    return {"parameter": param, "points": points, "limit": limit}
