"""Command line entry point: ``dispersion-lab <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .checks import FAULTS, run_checks
from .errors import ConfigError, DispersionLabError
from .fem import dump_system
from .geometry import write_mesh
from .runconfig import load_config, run_macro_config
from .sweep import (CellContext, CellSetup, SweepSpec, config_digest, default_jobs, mesh_stats,
                    run_sweep, write_sweep_csv)
from .velocity import write_velocity_csv

log = logging.getLogger("dispersion_lab")

SWEEP_DEFAULTS = {
    "sweep-u0": ("u0", 0.0, 100.0, 16, "mixed"),
    "sweep-ds": ("Ds", 0.1, 1000.0, 9, "log"),
    "sweep-kappa": ("kappa", 0.1, 10000.0, 11, "log"),
}


def _fraction(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from exc


def _matrix(text: str) -> list:
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("D takes four comma-separated entries d11,d12,d21,d22")
    return [vals[:2], vals[2:]]


def _cell_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("cell")
    g.add_argument("--h", type=_fraction, default=None, help="mesh size, e.g. 1/32")
    g.add_argument("--radius", type=float, default=None)
    g.add_argument("--mesh-in", default=None, help="read the cell mesh from this file")
    g.add_argument("--mesh-out", default=None, help="write the cell mesh to this file")
    g.add_argument("--velocity", choices=["symmetric", "nonsymmetric", "zero"], default=None)
    g.add_argument("--surface-speed", type=float, default=None)
    g.add_argument("--D", type=_matrix, default=None)
    g.add_argument("--Ds", type=float, default=None)
    g.add_argument("--kappa", type=float, default=None)
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--beta", type=float, default=None)
    g.add_argument("--u0", type=float, default=None, help="fixed u0 for Ds and kappa sweeps")
    g.add_argument("--config", default=None, help="JSON file with cell and sweep settings")


def _setup_from(args) -> tuple[CellSetup, dict]:
    setup = CellSetup()
    extra = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(str(exc), path=args.config) from exc
        for key, val in data.items():
            if hasattr(setup, key):
                setattr(setup, key, val)
            elif key in ("min", "max", "points", "spacing"):
                extra[key] = val
            else:
                raise ConfigError(f"unknown key '{key}'", path=args.config)
    for key in ("h", "radius", "mesh_in", "velocity", "surface_speed", "D", "Ds", "kappa",
                "alpha", "beta", "u0"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(setup, key, val)
    return setup, extra


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")


def _manifest_path(args, out: Path) -> Path:
    return Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")


def _dump_correctors(ctx: CellContext, u0: float, prefix: str) -> list[str]:
    pb = ctx.problem()
    cells = pb.solve(u0, with_aux=False)
    chi_path, omega_path = f"{prefix}_chi.csv", f"{prefix}_omega.csv"
    with open(chi_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_index", "y1", "y2", "chi1", "chi2"])
        for i, (p, c) in enumerate(zip(ctx.mesh.nodes, cells.chi)):
            w.writerow([i, *(format(float(x), ".17g") for x in (*p, *c))])
    with open(omega_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loop_index", "node_index", "y1", "y2", "omega1", "omega2"])
        for k, (n, p, o) in enumerate(zip(ctx.surface.loop_nodes, ctx.surface.points, cells.omega)):
            w.writerow([k, int(n), *(format(float(x), ".17g") for x in (*p, *o))])
    return [chi_path, omega_path]


# -- subcommands --------------------------------------------------------------------

def cmd_mesh(args) -> int:
    setup, _ = _setup_from(args)
    ctx = CellContext(setup)
    out = Path(args.mesh_out or args.out or "cell_mesh.txt")
    write_mesh(ctx.mesh, out)
    outputs = [str(out)]
    if args.velocity_out:
        write_velocity_csv(ctx.velocity, ctx.mesh, args.velocity_out)
        outputs.append(args.velocity_out)
    stats = mesh_stats(ctx.mesh)
    print(json.dumps(stats, sort_keys=True))
    if args.manifest:
        _write_manifest(Path(args.manifest), {
            "command": "mesh", "version": __version__, "config": vars_setup(setup),
            "config_sha256": config_digest(vars_setup(setup)), "mesh": stats, "outputs": outputs})
    return 0


def vars_setup(setup: CellSetup) -> dict:
    return dict(vars(setup))


def cmd_sweep(args) -> int:
    param, lo, hi, count, spacing = SWEEP_DEFAULTS[args.command]
    setup, extra = _setup_from(args)
    lo = args.min if args.min is not None else extra.get("min", lo)
    hi = args.max if args.max is not None else extra.get("max", hi)
    count = args.points if args.points is not None else extra.get("points", count)
    spacing = args.spacing or extra.get("spacing", spacing)
    spec = SweepSpec(param, float(lo), float(hi), int(count), spacing, setup)
    ctx = CellContext(setup)
    out = Path(args.out or f"sweep_{param}.csv")
    outputs = [str(out)]
    if args.mesh_out:
        write_mesh(ctx.mesh, args.mesh_out)
        outputs.append(args.mesh_out)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    result = run_sweep(spec, jobs=jobs, ctx=ctx)
    write_sweep_csv(result, out)
    if args.dump_system:
        pb = ctx.problem()
        dump_system(args.dump_system, pb.cell_system(setup.u0).matrix)
        outputs.append(args.dump_system)
    if args.dump_correctors:
        outputs.extend(_dump_correctors(ctx, setup.u0, args.dump_correctors))
    config = spec.as_dict()
    points = []
    for v, p in zip(result.values, result.points):
        points.append({"value": "inf" if math.isinf(v) else v, **{k: p[k] for k in p if k != "A"}})
    manifest = {"command": args.command, "version": __version__, "config": config,
                "config_sha256": config_digest(config), "mesh": result.mesh, "jobs": jobs,
                "points": points, "failed": result.failed, "outputs": outputs}
    _write_manifest(_manifest_path(args, out), manifest)
    for p, v in zip(result.points, result.values):
        if p["status"] != "ok":
            log.error("point %s=%s failed: %s", param, v, p["error"])
    print(f"{param} sweep: {len(result.values) - result.failed}/{len(result.values)} points ok -> {out}")
    return 1 if result.failed else 0


def cmd_macro(args) -> int:
    config = load_config(args.config_file)
    out = Path(args.out or config.get("output", {}).get("csv") or "macro.csv")
    info = run_macro_config(config, csv_path=out)
    info.pop("records")
    manifest = {"command": "macro", "version": __version__, "config": config,
                "config_sha256": config_digest(config), **info}
    _write_manifest(_manifest_path(args, out), manifest)
    print(f"macro run: {config['steps']} steps, dt={info['dt']:.6g}, "
          f"mass drift {info['mass_drift_relative']:.3e} -> {out}")
    return 0


def cmd_verify(args) -> int:
    hs = args.h_list or [1 / 16]
    checks = run_checks(hs, fault=args.fault)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = ("PASS" if c.passed else "FAIL") if c.gating else ("info" if c.passed else "INFO-FAIL")
        print(f"{status:<9} {c.name:<{width}}  value={c.value:.3e}  "
              f"threshold={c.threshold:.1e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "value", "threshold", "status"])
            for c in checks:
                w.writerow([c.name, format(c.value, ".17g"), format(c.threshold, ".17g"),
                            ("pass" if c.passed else "fail") + ("" if c.gating else " (info)")])
    gating = [c for c in checks if c.gating]
    failed = sum(not c.passed for c in gating)
    print(f"{len(gating) - failed}/{len(gating)} gating checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dispersion-lab", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="build the perforated cell mesh")
    _cell_options(m)
    m.add_argument("--out", default=None)
    m.add_argument("--velocity-out", default=None, help="write the cell velocity as CSV")
    m.add_argument("--manifest", default=None)
    m.set_defaults(func=cmd_mesh)

    for name in SWEEP_DEFAULTS:
        s = sub.add_parser(name, help=f"dispersion tensor sweep over {SWEEP_DEFAULTS[name][0]}")
        _cell_options(s)
        s.add_argument("--min", type=float, default=None)
        s.add_argument("--max", type=float, default=None)
        s.add_argument("--points", type=int, default=None)
        s.add_argument("--spacing", choices=["linear", "log", "mixed"], default=None)
        s.add_argument("--out", default=None)
        s.add_argument("--manifest", default=None)
        s.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: $DISPERSION_LAB_JOBS or 1)")
        s.add_argument("--dump-system", default=None, help="write the cell matrix at --u0")
        s.add_argument("--dump-correctors", default=None, metavar="PREFIX",
                       help="write PREFIX_chi.csv and PREFIX_omega.csv at --u0")
        s.set_defaults(func=cmd_sweep)

    mc = sub.add_parser("macro", help="run the macroscopic solver from a JSON config")
    mc.add_argument("config_file")
    mc.add_argument("--out", default=None)
    mc.add_argument("--manifest", default=None)
    mc.set_defaults(func=cmd_macro)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--h", dest="h_list", type=_fraction, action="append", default=None,
                   help="mesh size; repeat to compare refinements")
    v.add_argument("--fault", choices=FAULTS, default=None, help="inject a known defect")
    v.add_argument("--out", default=None, help="CSV report")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DispersionLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
