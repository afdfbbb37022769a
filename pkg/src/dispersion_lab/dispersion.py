"""Effective dispersion tensor from cell correctors.

Two routes are provided.  The primary one sums the seven groups of terms
(symmetric energy groups, the two antisymmetric diffusion groups and the two
convection groups); the alternative one goes through the auxiliary Poisson
solutions xi_i and Xi_i.  On the discrete level both are exact quadratures of
P1 fields, so they agree up to solver round-off once the auxiliaries are
Galerkin solutions in the same spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell import CellProblem, CellSolutionSet, FPRIME_MIN
from .errors import (CoercivityError, DegenerateCouplingError, DispersionLabError, InputError,
                     SolverError)

SYM_TOL = 1e-12
COERCIVITY_TOL = 1e-6


@dataclass(eq=False)
class DispersionTensor:
    u0: float
    A: np.ndarray
    A_sym: np.ndarray
    A_formula: str = "primary"   # primary | alternative
    regime: str = "full"

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.A_sym)[0])

    def antisymmetric(self) -> np.ndarray:
        return 0.5 * (self.A - self.A.T)


@dataclass
class CoercivityReport:
    eigenvalues: np.ndarray
    lower_bound: float
    symmetry_residual: float
    finite: bool
    ok: bool
    messages: list = field(default_factory=list)


def _blocks(problem: CellProblem, cells: CellSolutionSet):
    if cells.chi.shape != (problem.mesh.n_nodes, 2) or cells.omega.shape != (problem.n_surface, 2):
        raise InputError("cell solution does not match the problem discretization")
    X = problem.reduce_nodal(cells.chi)
    W = cells.omega
    return X, W


def _surface_flux_pairing(problem: CellProblem, cells: CellSolutionSet, X, W) -> np.ndarray:
    """P[i, j] = int Ds t_i (t_j + omega_j')  (in the Ds -> inf limit, its finite limit)."""
    if cells.regime == "ds_inf":
        y = problem.surface.points
        TX = problem.T @ X
        kap = problem.coeffs.kappa
        bs_vec = problem.surf_src  # int (b* - b^s_j) psi
        # tested surface equation with psi = y_i; Ds (t_j + omega_j') stays finite
        return (kap * y.T @ (problem.Ms @ (TX - W)) + y.T @ bs_vec - y.T @ (problem.Cs @ W))
    R = problem.hD.T @ W   # R[j, i] = int Ds t_j omega_i'
    return problem.coeffs.Ds * problem.tt + R


def assemble_dispersion(cells: CellSolutionSet, problem: CellProblem) -> DispersionTensor:
    """Primary formula; returns A together with its separately assembled symmetric part."""
    X, W = _blocks(problem, cells)
    c = problem.coeffs
    fp = cells.fprime
    area = problem.wb.sum()
    Q = problem.gD.T @ X             # Q[j, i] = int D e_j . grad chi_i
    bulk_energy = X.T @ (problem.K @ X) + Q + Q.T + area * c.D
    bulk_skew = Q - Q.T              # [i, j] = int D grad chi_j . e_i - int D grad chi_i . e_j
    bulk_conv = (X.T @ (problem.Cb @ X)).T

    TX = problem.T @ X
    if cells.regime == "kappa_inf":
        coupling = np.zeros((2, 2))
    else:
        E = TX - W
        coupling = c.kappa * fp * (E.T @ (problem.Ms @ E))
    P = _surface_flux_pairing(problem, cells, X, W)
    if cells.regime == "ds_inf":
        surf_energy = np.zeros((2, 2))
    else:
        R = problem.hD.T @ W
        surf_energy = fp * (W.T @ (problem.Ks @ W) + R + R.T + c.Ds * problem.tt)
    surf_skew = fp * (P - P.T)
    surf_conv = fp * (W.T @ (problem.Cs @ W)).T

    A_sym = bulk_energy + coupling + surf_energy
    A = A_sym + bulk_skew + surf_skew + bulk_conv + surf_conv
    return DispersionTensor(u0=cells.u0, A=A, A_sym=0.5 * (A_sym + A_sym.T),
                            A_formula="primary", regime=cells.regime)


def assemble_dispersion_alt(cells: CellSolutionSet, problem: CellProblem) -> DispersionTensor:
    """Alternative formula through the auxiliary solutions xi_i, Xi_i."""
    if cells.xi is None or cells.Xi is None:
        raise InputError("alternative formula needs the auxiliary solutions")
    X, W = _blocks(problem, cells)
    c = problem.coeffs
    fp = cells.fprime
    area = problem.wb.sum()
    xi = problem.reduce_nodal(cells.xi)
    Q = problem.gD.T @ X             # Q[i, j] = int D grad chi_j . e_i
    P = _surface_flux_pairing(problem, cells, X, W)
    aux_bulk = xi.T @ (problem.K_lap @ X)
    aux_surf = cells.Xi.T @ (problem.Ks_lap @ W)
    A = area * c.D + Q + fp * P + aux_bulk + fp * aux_surf
    return DispersionTensor(u0=cells.u0, A=A, A_sym=0.5 * (A + A.T),
                            A_formula="alternative", regime=cells.regime)


def symmetric_part_residual(tensor: DispersionTensor) -> float:
    return float(np.max(np.abs(tensor.A_sym - 0.5 * (tensor.A + tensor.A.T))))


def coercivity_check(tensor: DispersionTensor, coeffs, geometry, raise_on_failure: bool = False,
                     bound: str = "area") -> CoercivityReport:
    """Eigenvalues of A_sym against a lower bound, plus finiteness and symmetric-part consistency.

    ``bound="area"`` tests lambda_min(A_sym) >= |Y0| lambda_min(D).  That value is
    an upper bound for the pure bulk contribution (chi = 0 is admissible in
    the bulk energy minimization), so perforated cells with weak coupling fall
    below it.  ``bound="positive"`` only requires a positive definite A_sym,
    which is what well-posedness of the macroscopic problem needs.
    """
    eig = np.linalg.eigvalsh(tensor.A_sym)
    if bound == "area":
        lower = geometry.fluid_area * float(np.linalg.eigvalsh(np.asarray(coeffs.D))[0])
    elif bound == "positive":
        lower = 0.0
    else:
        raise InputError(f"unknown bound '{bound}'")
    finite = bool(np.all(np.isfinite(tensor.A)))
    sym_res = symmetric_part_residual(tensor)
    msgs = []
    if not finite:
        msgs.append("non-finite tensor entries")
    if bound == "area" and eig[0] < lower - COERCIVITY_TOL:
        msgs.append(f"lambda_min(A_sym)={eig[0]:.6g} below bound {lower:.6g}")
    if bound == "positive" and not eig[0] > 0:
        msgs.append(f"A_sym is not positive definite (lambda_min={eig[0]:.6g})")
    if sym_res > SYM_TOL * max(1.0, float(np.max(np.abs(tensor.A)))):
        msgs.append(f"A_sym differs from (A + A^T)/2 by {sym_res:.3e}")
    report = CoercivityReport(eig, lower, sym_res, finite, not msgs, msgs)
    if raise_on_failure and not report.ok:
        raise CoercivityError("; ".join(msgs))
    return report


def dispersion_at(problem: CellProblem, u0: float, formula: str = "primary") -> DispersionTensor:
    """Solve the cell problem at ``u0`` (dispatching to the u0 -> inf limit when
    f'(u0) is degenerate) and assemble the tensor."""
    try:
        cells = problem.solve(u0, with_aux=formula == "alternative")
    except DegenerateCouplingError:
        cells = problem.solve_limit_u0_inf(with_aux=formula == "alternative")
        cells.u0 = float(u0)
    if formula == "alternative":
        return assemble_dispersion_alt(cells, problem)
    return assemble_dispersion(cells, problem)


def frobenius_gap(a: DispersionTensor, b: DispersionTensor) -> float:
    return float(np.linalg.norm(a.A - b.A) / np.linalg.norm(a.A))


# -- tabulation --------------------------------------------------------------------

def u0_grid(u0_max: float, n_points: int) -> np.ndarray:
    """Grid on [0, u0_max]: uniform up to 1, logarithmic above."""
    if not u0_max > 0:
        raise InputError("u0_max must be positive")
    if n_points < 16:
        raise InputError("a dispersion table needs at least 16 points")
    if u0_max <= 1:
        return np.linspace(0.0, u0_max, n_points)
    n_log = max(2, int(round(n_points * math.log10(1 + u0_max) / (1 + math.log10(1 + u0_max)))))
    n_log = min(n_log, n_points - 2)
    n_lin = n_points - n_log + 1
    lin = np.linspace(0.0, 1.0, n_lin)
    log = np.logspace(0.0, math.log10(u0_max), n_log)
    return np.concatenate([lin, log[1:]])


@dataclass(eq=False)
class DispersionTable:
    u0_grid: np.ndarray
    tensors: list

    def __post_init__(self):
        g = np.asarray(self.u0_grid, dtype=float)
        if np.any(np.diff(g) <= 0):
            raise InputError("u0 grid must be strictly increasing")
        self.u0_grid = g
        self._A = np.array([t.A for t in self.tensors])

    @classmethod
    def constant(cls, A) -> "DispersionTable":
        A = np.asarray(A, dtype=float)
        ts = [DispersionTensor(u, A, 0.5 * (A + A.T)) for u in (0.0, 1.0)]
        return cls(np.array([0.0, 1.0]), ts)

    def __call__(self, u) -> np.ndarray:
        """Piecewise-linear interpolation in u0, clamped at both ends; shape u.shape + (2, 2)."""
        u = np.asarray(u, dtype=float)
        g = self.u0_grid
        flat = np.clip(u.ravel(), g[0], g[-1])
        k = np.clip(np.searchsorted(g, flat, side="right") - 1, 0, len(g) - 2)
        w = ((flat - g[k]) / (g[k + 1] - g[k]))[:, None, None]
        out = (1 - w) * self._A[k] + w * self._A[k + 1]
        return out.reshape(u.shape + (2, 2))

    def midpoint_lambda_min(self) -> np.ndarray:
        mids = 0.5 * (self.u0_grid[1:] + self.u0_grid[:-1])
        A = self(mids)
        return np.array([np.linalg.eigvalsh(0.5 * (a + a.T))[0] for a in A])


def tabulate(problem: CellProblem, u0_max: float, n_points: int = 16) -> DispersionTable:
    grid = u0_grid(u0_max, n_points)
    tensors = []
    for u in grid:
        try:
            tensors.append(dispersion_at(problem, float(u)))
        except DispersionLabError as exc:
            raise SolverError(f"dispersion tabulation failed at u0={u}: {exc}") from exc
    table = DispersionTable(grid, tensors)
    if not np.all(table.midpoint_lambda_min() > 0):
        raise CoercivityError("interpolated tensor loses positive definiteness between table nodes")
    return table


__all__ = ["DispersionTensor", "DispersionTable", "CoercivityReport", "assemble_dispersion",
           "assemble_dispersion_alt", "coercivity_check", "tabulate", "dispersion_at",
           "frobenius_gap", "u0_grid", "symmetric_part_residual", "FPRIME_MIN"]
