"""Invariant suite run by ``dispersion-lab verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellProblem, CoefficientSet
from .dispersion import (assemble_dispersion, assemble_dispersion_alt, coercivity_check,
                         frobenius_gap)
from .geometry import CellGeometry, build_cell_mesh, extract_surface_mesh
from .velocity import (VelocityRecipe, boundary_normal_flux, build_velocity, compute_drift,
                       elementwise_divergence, zero_field)

FAULTS = ("skew",)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    gating: bool = True   # informational checks are reported but do not set the exit code


def _le(name, value, threshold) -> Check:
    return Check(name, float(value), float(threshold), bool(value <= threshold))


def _gap_threshold(h: float) -> float:
    return 0.005 if h <= 1 / 64 + 1e-12 else 0.02


def run_checks(hs=(1 / 16,), fault: str | None = None, u0: float = 2.5) -> list[Check]:
    out = []
    for h in hs:
        tag = f"h=1/{round(1 / h)}"
        mesh = build_cell_mesh(CellGeometry(), h)
        surf = extract_surface_mesh(mesh)
        bound = mesh.geometry().fluid_area
        worst_coercive = np.inf
        worst_lambda = np.inf
        worst_sym = 0.0
        for kind in ("symmetric", "nonsymmetric"):
            v = build_velocity(mesh, surf, VelocityRecipe(kind))
            bulk, surface = compute_drift(v, mesh, surf, check=False)
            out.append(_le(f"drift[{kind},{tag}]", max(np.abs(bulk).max(), np.abs(surface).max()), 1e-10))
            out.append(_le(f"normal_flux[{kind},{tag}]", np.abs(boundary_normal_flux(v, mesh, surf)).max(), 1e-10))
            out.append(_le(f"divergence[{kind},{tag}]", np.abs(elementwise_divergence(v, mesh)).max(), 1e-10))
            pb = CellProblem(mesh, CoefficientSet(velocity=v), surf)
            out.append(_le(f"compatibility[{kind},{tag}]", pb.compatibility_residual(u0), 1e-10))
            for u in (0.0, 1.0, u0, 10.0):
                cells = pb.solve(u, with_aux=(u == u0))
                t = assemble_dispersion(cells, pb)
                if fault == "skew":
                    t.A_sym = t.A_sym + 1e-3 * np.array([[0.0, 1.0], [-1.0, 0.0]])
                rep = coercivity_check(t, pb.coeffs, mesh.geometry())
                worst_coercive = min(worst_coercive, rep.eigenvalues[0] - bound)
                worst_lambda = min(worst_lambda, rep.eigenvalues[0])
                worst_sym = max(worst_sym, rep.symmetry_residual)
                if u == u0:
                    gap = frobenius_gap(t, assemble_dispersion_alt(cells, pb))
                    out.append(_le(f"formula_gap[{kind},{tag}]", gap, _gap_threshold(h)))
        out.append(Check(f"positive_definite[{tag}]", worst_lambda, 0.0, bool(worst_lambda > 0)))
        out.append(Check(f"area_bound_margin[{tag}]", worst_coercive, -1e-6,
                         bool(worst_coercive >= -1e-6), gating=False))
        out.append(_le(f"symmetric_part_residual[{tag}]", worst_sym, 1e-12))

        z = zero_field(mesh, surf)
        pb = CellProblem(mesh, CoefficientSet(velocity=z), surf)
        A = assemble_dispersion(pb.solve(u0, with_aux=False), pb).A
        out.append(_le(f"isotropy_zero_velocity[{tag}]", max(abs(A[0, 0] - A[1, 1]), abs(A[0, 1]), abs(A[1, 0])), 1e-6))

        v = build_velocity(mesh, surf, VelocityRecipe("symmetric"))
        pb = CellProblem(mesh, CoefficientSet(velocity=v, beta=0.0), surf)
        As = [assemble_dispersion(pb.solve(u, with_aux=False), pb).A for u in (0.1, 1.0, 10.0, 100.0)]
        spread = max(np.linalg.norm(a - As[0]) for a in As) / np.linalg.norm(As[0])
        out.append(_le(f"linear_isotherm_invariance[{tag}]", spread, 1e-10))
    return out
