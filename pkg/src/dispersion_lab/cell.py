"""Coupled bulk-surface cell problems and their limit regimes.

Unknowns for one direction ``i`` are the bulk corrector chi_i (P1 on the
periodic cell, reduced to representative nodes) and the surface corrector
omega_i (P1 on the obstacle loop).  The block system is ordered
``[bulk; surface; multiplier]``; the multiplier pins the constant-pair kernel
through  int_Y0 chi + int_dSigma omega = 0.

The surface diffusion acts on tangential quantities only: the unit vector e_i
enters through its tangential part G e_i = (e_i . t) t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateCouplingError, InputError, CoefficientError
from .fem import (PeriodicMap, SparseSystem, assemble_bulk, assemble_surface, bulk_flux_load,
                  bulk_load, bulk_weights, factorize, check_compatibility, surface_flux_load,
                  surface_load, surface_mass, trace_operator, RTOL)
from .errors import SolverError
from .geometry import CellMesh, SurfaceMesh, extract_surface_mesh
from .isotherm import IsothermModel
from .velocity import VelocityField, compute_drift

FPRIME_MIN = 1e-12
REGIMES = ("full", "u0_inf", "ds_inf", "kappa_inf")


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    velocity: VelocityField
    D: np.ndarray = field(default_factory=lambda: np.eye(2))
    Ds: float = 1.0
    kappa: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        if D.shape != (2, 2) or not np.allclose(D, D.T):
            raise CoefficientError("D must be a symmetric 2x2 tensor")
        if np.linalg.eigvalsh(D)[0] <= 0:
            raise CoefficientError("D must be positive definite")
        object.__setattr__(self, "D", D)
        if not self.Ds > 0:
            raise CoefficientError("Ds must be positive")
        if not self.kappa > 0:
            raise CoefficientError("kappa must be positive")
        IsothermModel(self.alpha, self.beta)

    @property
    def isotherm(self) -> IsothermModel:
        return IsothermModel(self.alpha, self.beta)

    def replace(self, **kw) -> "CoefficientSet":
        args = dict(velocity=self.velocity, D=self.D, Ds=self.Ds, kappa=self.kappa,
                    alpha=self.alpha, beta=self.beta)
        args.update(kw)
        return CoefficientSet(**args)


@dataclass(eq=False)
class CellSolutionSet:
    u0: float
    fprime: float
    chi: np.ndarray            # (n_nodes, 2) nodal bulk correctors
    omega: np.ndarray          # (L, 2) surface correctors on the loop
    regime: str = "full"
    xi: np.ndarray | None = None   # (n_nodes, 2)
    Xi: np.ndarray | None = None   # (L, 2)
    residual: float = 0.0


class CellProblem:
    """Pre-assembled operators for every cell solve on one mesh and coefficient set."""

    def __init__(self, mesh: CellMesh, coeffs: CoefficientSet, surface: SurfaceMesh | None = None):
        if not mesh.cell.has_obstacle:
            raise InputError("cell problems need an obstacle boundary")
        self.mesh = mesh
        self.coeffs = coeffs
        self.surface = surface if surface is not None else extract_surface_mesh(mesh)
        self.geometry = mesh.geometry()
        bulk_drift, _ = compute_drift(coeffs.velocity, mesh, self.surface)
        self.bstar = bulk_drift
        self.pmap = pm = PeriodicMap.from_mesh(mesh)
        self.reps = np.empty(pm.n_dofs, dtype=np.int64)
        self.reps[pm.master] = np.arange(mesh.n_nodes)
        s = self.surface
        self.trace_index = pm.master[s.loop_nodes]
        self.T = trace_operator(self.trace_index, pm.n_dofs)
        b = coeffs.velocity.bulk
        D = coeffs.D
        self.K = pm.reduce(assemble_bulk(mesh, D=D))
        self.Cb = pm.reduce(assemble_bulk(mesh, b=b))
        self.K_lap = pm.reduce(assemble_bulk(mesh, D=np.eye(2)))
        self.wb = pm.reduce_vector(bulk_weights(mesh))
        # gD[:, j] = int D e_j . grad phi
        self.gD = np.column_stack([pm.reduce_vector(bulk_flux_load(mesh, D[:, j])) for j in range(2)])
        self.bulk_src = np.column_stack([
            pm.reduce_vector(bulk_load(mesh, self.bstar[j] - b[:, j])) for j in range(2)])
        bs = coeffs.velocity.surface_vectors(s)
        self.Ks = assemble_surface(s, Ds=coeffs.Ds)
        self.Ks_lap = assemble_surface(s, Ds=1.0)
        self.Cs = assemble_surface(s, bs=coeffs.velocity.surface_speed)
        self.Ms = surface_mass(s)
        self.ws = s.node_weights()
        self.hD = np.column_stack([surface_flux_load(s, coeffs.Ds * s.tangents[:, j]) for j in range(2)])
        self.surf_src = np.column_stack([surface_load(s, self.bstar[j] - bs[:, j]) for j in range(2)])
        self.tt = np.einsum("k,ki,kj->ij", s.segment_lengths, s.tangents, s.tangents)
        self._aux = None

    # -- helpers -------------------------------------------------------------
    @property
    def n_bulk(self) -> int:
        return self.pmap.n_dofs

    @property
    def n_surface(self) -> int:
        return self.surface.n_loop

    def fprime(self, u0: float) -> float:
        return float(self.coeffs.isotherm.fprime(u0))

    def reduce_nodal(self, values: np.ndarray) -> np.ndarray:
        return values[self.reps]

    def expand(self, x: np.ndarray) -> np.ndarray:
        return self.pmap.expand(x)

    def _normalize(self, X: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = (self.wb @ X + self.ws @ W) / (self.wb.sum() + self.ws.sum())
        return X - c, W - c

    def _solve(self, system: SparseSystem) -> tuple[np.ndarray, float]:
        check_compatibility(system)
        solver, n = factorize(system)
        k = len(system.constraints)
        rhs = np.vstack([system.rhs, np.zeros((k, system.rhs.shape[1]))])
        x = solver(rhs)
        A = system.matrix
        res = A @ x[:n] - system.rhs
        if k:
            C = np.vstack([c for c, _ in system.constraints])
            res = res + C.T @ x[n:]
        rel = float(np.max(np.linalg.norm(res, axis=0) /
                           np.maximum(np.linalg.norm(system.rhs, axis=0), 1e-300)))
        if rel > RTOL or not np.all(np.isfinite(x)):
            raise SolverError(f"cell solve residual {rel:.3e} above tolerance", residual=rel)
        return x[:n], rel

    # -- coupled system --------------------------------------------------------
    def cell_system(self, u0: float) -> SparseSystem:
        """Galerkin system of the f'-weighted variational form for both directions."""
        fp = self.fprime(u0)
        kap = self.coeffs.kappa
        T = self.T
        kf = kap * fp
        A_bb = self.K + self.Cb + kf * (T.T @ self.Ms @ T)
        A_bs = -kf * (T.T @ self.Ms)
        A_sb = -kf * (self.Ms @ T)
        A_ss = fp * (self.Ks + self.Cs) + kf * self.Ms
        A = sp.bmat([[A_bb, A_bs], [A_sb, A_ss]], format="csr")
        rhs = np.vstack([-self.gD + self.bulk_src, fp * (-self.hD + self.surf_src)])
        c = np.concatenate([self.wb, self.ws])
        ones = np.ones(self.n_bulk + self.n_surface)
        return SparseSystem(A, rhs, constraints=[(c, 0.0)], kernel=[ones])

    def compatibility_residual(self, u0: float) -> float:
        """Right-hand side tested against the constant pair (1, 1)."""
        system = self.cell_system(u0)
        return float(np.max(np.abs(system.rhs.sum(axis=0))))

    def solve(self, u0: float, with_aux: bool = True) -> CellSolutionSet:
        if u0 < 0:
            raise InputError("u0 must be non-negative")
        fp = self.fprime(u0)
        if fp < FPRIME_MIN:
            raise DegenerateCouplingError(
                f"f'(u0)={fp:.3e} below {FPRIME_MIN:g}; use solve_limit_u0_inf")
        system = self.cell_system(u0)
        x, res = self._solve(system)
        m = self.n_bulk
        X, W = self._normalize(x[:m], x[m:])
        return self._package(u0, fp, X, W, "full", res, with_aux)

    def _package(self, u0, fp, X, W, regime, res, with_aux) -> CellSolutionSet:
        sol = CellSolutionSet(u0=float(u0), fprime=fp, chi=self.expand(X), omega=W,
                              regime=regime, residual=res)
        if with_aux:
            sol.xi, sol.Xi = self.solve_aux()
        return sol

    # -- auxiliary problems --------------------------------------------------------
    def solve_aux(self) -> tuple[np.ndarray, np.ndarray]:
        """Zero-mean solutions of -Lap xi_i = b*_i - b_i and -Lap_s Xi_i = b*_i - b^s_i."""
        if self._aux is None:
            bulk = SparseSystem(self.K_lap, self.bulk_src, constraints=[(self.wb, 0.0)],
                                kernel=[np.ones(self.n_bulk)])
            xi, _ = self._solve(bulk)
            surf = SparseSystem(self.Ks_lap, self.surf_src, constraints=[(self.ws, 0.0)],
                                kernel=[np.ones(self.n_surface)])
            if np.any(self.surf_src):
                Xi, _ = self._solve(surf)
            else:
                check_compatibility(surf)
                Xi = np.zeros_like(self.surf_src)
            if not np.any(self.bulk_src):
                xi = np.zeros_like(xi)
            self._aux = (self.expand(xi), Xi)
        return self._aux

    # -- limit regimes -------------------------------------------------------------
    def solve_limit_u0_inf(self, with_aux: bool = True) -> CellSolutionSet:
        """f'(u0) -> 0: no-flux bulk problem, then the surface equation fed by chi."""
        bulk = SparseSystem(self.K + self.Cb, -self.gD + self.bulk_src,
                            constraints=[(self.wb, 0.0)], kernel=[np.ones(self.n_bulk)])
        X, res = self._solve(bulk)
        kap = self.coeffs.kappa
        A = (self.Ks + self.Cs + kap * self.Ms).tocsc()
        rhs = -self.hD + self.surf_src + kap * (self.Ms @ (self.T @ X))
        W, res2 = self._solve(SparseSystem(A, rhs))
        X, W = self._normalize(X, W)
        return self._package(np.inf, 0.0, X, W, "u0_inf", max(res, res2), with_aux)

    def solve_limit_ds_inf(self, u0: float, with_aux: bool = True) -> CellSolutionSet:
        """Ds -> inf: omega_i + y_i is constant on the loop; chi_i sees a nonlocal Robin term."""
        fp = self.fprime(u0)
        kap = self.coeffs.kappa
        kf = kap * fp
        T, Ms, ws = self.T, self.Ms, self.ws
        length = ws.sum()
        ws_col = sp.csr_matrix(ws[:, None])
        # rank-one mean removal:  int (v - mean v) phi
        robin = Ms - (ws_col @ ws_col.T) / length
        A = self.K + self.Cb + kf * (T.T @ robin @ T)
        y = self.surface.points
        ybar = (ws @ y) / length
        rhs = -self.gD + self.bulk_src
        rhs = rhs - kf * (T.T @ (Ms @ y - np.outer(ws, ybar)))
        rhs = rhs + fp * (T.T @ ws)[:, None] * self.bstar[None, :]
        X, res = self._solve(SparseSystem(A.tocsr(), rhs, constraints=[(self.wb, 0.0)],
                                          kernel=[np.ones(self.n_bulk)]))
        mean_chi_y = (ws @ (T @ X) + ws @ y) / length
        const = mean_chi_y + self.bstar / kap
        W = const[None, :] - y
        X, W = self._normalize(X, W)
        return self._package(u0, fp, X, W, "ds_inf", res, with_aux)

    def solve_limit_kappa_inf(self, u0: float, with_aux: bool = True) -> CellSolutionSet:
        """kappa -> inf: omega_i equals the trace of chi_i; one field with a
        surface (Ventcel-type) operator on the boundary, weighted by f'(u0)."""
        fp = self.fprime(u0)
        T = self.T
        A = self.K + self.Cb + fp * (T.T @ (self.Ks + self.Cs) @ T)
        rhs = -self.gD + self.bulk_src + fp * (T.T @ (-self.hD + self.surf_src))
        c = self.wb + T.T @ self.ws
        X, res = self._solve(SparseSystem(A.tocsr(), rhs, constraints=[(c, 0.0)],
                                          kernel=[np.ones(self.n_bulk)]))
        W = T @ X
        X, W = self._normalize(X, W)
        return self._package(u0, fp, X, W, "kappa_inf", res, with_aux)

    # -- diagnostics -------------------------------------------------------------------
    def vf_residual(self, sol: CellSolutionSet) -> float:
        """Relative residual of the f'-weighted Galerkin equations for ``sol``."""
        system = self.cell_system(sol.u0)
        x = np.vstack([self.reduce_nodal(sol.chi), sol.omega])
        r = system.matrix @ x - system.rhs
        return float(np.max(np.linalg.norm(r, axis=0) / np.linalg.norm(system.rhs, axis=0)))


def solve_cell(mesh, surface, coeffs, u0, *, problem: CellProblem | None = None,
               dispatch: bool = False) -> CellSolutionSet:
    """Solve the coupled cell problem at ``u0``.

    With ``dispatch`` set, a degenerate f'(u0) returns the u0 -> inf limit
    instead of raising :class:`DegenerateCouplingError`.
    """
    problem = problem or CellProblem(mesh, coeffs, surface)
    try:
        return problem.solve(u0)
    except DegenerateCouplingError:
        if not dispatch:
            raise
        return problem.solve_limit_u0_inf()


def solve_aux(mesh, surface, velocity: VelocityField, *, problem: CellProblem | None = None):
    problem = problem or CellProblem(mesh, CoefficientSet(velocity=velocity), surface)
    return problem.solve_aux()


def solve_limit_u0_inf(mesh, surface, coeffs, *, problem: CellProblem | None = None):
    return (problem or CellProblem(mesh, coeffs, surface)).solve_limit_u0_inf()


def solve_limit_ds_inf(mesh, surface, coeffs, u0, *, problem: CellProblem | None = None):
    return (problem or CellProblem(mesh, coeffs, surface)).solve_limit_ds_inf(u0)


def solve_limit_kappa_inf(mesh, surface, coeffs, u0, *, problem: CellProblem | None = None):
    return (problem or CellProblem(mesh, coeffs, surface)).solve_limit_kappa_inf(u0)
