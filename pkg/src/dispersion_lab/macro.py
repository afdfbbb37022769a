"""Homogenized nonlinear parabolic equation on a periodic macro box.

The conserved variable is z = |Y0| u + |dSigma| f(u).  One implicit Euler step
solves  z(u^{n+1}) - z^n = dt L(u^n) u^{n+1}  by Newton on u, where L is the
finite-volume operator div(A*(u^n) grad .) with the tensor lagged.  The new
density is then set to z^n + dt L u^{n+1}, so discrete mass is conserved to
round-off (face fluxes telescope on the periodic grid), and u is recovered
by inverting the density nodewise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, SolverError
from .isotherm import IsothermModel

INVERT_TOL = 1e-12
NEWTON_TOL = 1e-10
MAX_NEWTON = 100


@dataclass(frozen=True)
class Medium:
    """Isotherm and the two cell measures that enter the macroscopic balance."""
    isotherm: IsothermModel
    fluid_area: float
    surface_length: float

    @property
    def eta(self) -> float:
        return self.surface_length / self.fluid_area

    def density(self, u):
        return self.fluid_area * np.asarray(u, dtype=float) + self.surface_length * self.isotherm.f(u)

    def capacity(self, u):
        return self.fluid_area + self.surface_length * self.isotherm.fprime(u)

    def energy_density(self, u):
        f = self.isotherm.f(u)
        return self.fluid_area * self.isotherm.F(u) + 0.5 * self.surface_length * f * f


def _invert(medium: Medium, z: np.ndarray) -> np.ndarray:
    """Newton for Y u + S f(u) = z on all of R (linear extension below 0).

    Starting from the linear lower bound z / (Y + alpha S), the iterates increase
    monotonically to the root because the map is concave for u >= 0.
    """
    Y, S = medium.fluid_area, medium.surface_length
    iso = medium.isotherm
    z = np.asarray(z, dtype=float)
    u = z / (Y + iso.alpha * S)
    neg = z < 0
    hi = np.where(neg, u, z / Y)
    scale = INVERT_TOL * np.maximum(1.0, np.abs(z))
    for _ in range(MAX_NEWTON):
        g = medium.density(u) - z
        if np.all(np.abs(g) <= scale):
            return u
        u_new = u - g / medium.capacity(u)
        u = np.where(neg, u, np.clip(u_new, u, hi))
    g = medium.density(u) - z
    if np.all(np.abs(g) <= scale):
        return u
    raise SolverError("density inversion did not converge", residual=float(np.max(np.abs(g))))


def invert_density(medium: Medium, z) -> np.ndarray | float:
    """Unique u >= 0 with |Y0| u + |dSigma| f(u) = z, for z >= 0."""
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise InputError("density must be finite and non-negative")
    u = _invert(medium, arr)
    return float(u) if u.ndim == 0 else u


def well_prepared_vin(medium: Medium, u_in) -> np.ndarray | float:
    """Surface datum v_in making the initial energy balance exact.

    H(v) = F(u_in) + eta v^2 / 2 - (F + eta f^2 / 2)(u00(v)) has a double root,
    so Newton is applied to its derivative eta (v - f(u00(v))), whose slope is
    eta / (1 + eta f'(u00)).  A bracket keeps the iteration safe.
    """
    u_in = np.asarray(u_in, dtype=float)
    if np.any(u_in < 0) or not np.all(np.isfinite(u_in)):
        raise InputError("u_in must be finite and non-negative")
    Y, S, eta = medium.fluid_area, medium.surface_length, medium.eta
    iso = medium.isotherm

    def dH(v):
        u00 = _invert(medium, Y * u_in + S * v)
        return eta * (v - iso.f(u00)), u00

    lo = np.zeros_like(u_in)
    hi = np.maximum(1.0, 2.0 * iso.alpha * u_in)
    for _ in range(60):
        g, _ = dH(hi)
        if np.all(g > 0):
            break
        hi = np.where(g > 0, hi, 2 * hi)
    v = lo.copy()
    for _ in range(MAX_NEWTON):
        g, u00 = dH(v)
        if np.all(np.abs(g) <= 1e-14 * eta * np.maximum(1.0, np.abs(v))):
            return float(v) if v.ndim == 0 else v
        lo = np.where(g < 0, v, lo)
        hi = np.where(g > 0, v, hi)
        slope = eta / (1.0 + eta * iso.fprime(u00))
        v_new = v - g / slope
        bad = (v_new <= lo) | (v_new >= hi)
        v = np.where(bad & (g != 0), 0.5 * (lo + hi), np.where(g == 0, v, v_new))
    raise SolverError("well-prepared root search did not converge in 100 iterations",
                      residual=float(np.max(np.abs(dH(v)[0]))))


def H_value(medium: Medium, u_in, v_in):
    """The compatibility function whose unique root is the well-prepared datum."""
    iso, eta = medium.isotherm, medium.eta
    u00 = _invert(medium, medium.fluid_area * np.asarray(u_in, float)
                  + medium.surface_length * np.asarray(v_in, float))
    f0 = iso.f(u00)
    return iso.F(u_in) + 0.5 * eta * np.asarray(v_in) ** 2 - (iso.F(u00) + 0.5 * eta * f0 * f0)


# -- grid and state -------------------------------------------------------------------

@dataclass(frozen=True)
class MacroGrid:
    n: int
    length: float
    dim: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InputError("macro grid dimension must be 1 or 2")
        if self.n < 3:
            raise InputError("macro grid needs at least 3 nodes per direction")
        if not self.length > 0:
            raise InputError("macro box length must be positive")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.dim

    def coordinates(self) -> list[np.ndarray]:
        x = (np.arange(self.n) + 0.5) * self.dx
        if self.dim == 1:
            return [x]
        return list(np.meshgrid(x, x, indexing="ij"))


@dataclass
class MacroState:
    grid: MacroGrid
    medium: Medium
    u: np.ndarray
    z: np.ndarray
    t: float = 0.0
    dissipated: float = 0.0

    @classmethod
    def from_density(cls, grid, medium, z, t=0.0) -> "MacroState":
        z = np.asarray(z, dtype=float).reshape(grid.shape)
        return cls(grid, medium, invert_density(medium, z), z, t)

    @classmethod
    def from_u(cls, grid, medium, u, t=0.0) -> "MacroState":
        u = np.asarray(u, dtype=float).reshape(grid.shape)
        return cls(grid, medium, u, medium.density(u), t)

    def mass(self) -> float:
        return float(self.z.sum() * self.grid.cell_volume)


def initial_state(grid: MacroGrid, medium: Medium, u_in, v_in=None) -> tuple[MacroState, np.ndarray]:
    """Homogenized initial datum from (u_in, v_in); v_in defaults to the well-prepared root."""
    u_in = np.asarray(u_in, dtype=float).reshape(grid.shape)
    if v_in is None:
        v_in = well_prepared_vin(medium, u_in)
    v_in = np.asarray(v_in, dtype=float).reshape(grid.shape)
    if np.any(v_in < 0):
        raise InputError("v_in must be non-negative")
    z = medium.fluid_area * u_in + medium.surface_length * v_in
    return MacroState.from_density(grid, medium, z), v_in


# -- spatial operator --------------------------------------------------------------------

def _shift(idx: np.ndarray, n: int, axis: int, s: int) -> np.ndarray:
    return np.roll(idx, -s, axis=axis)


def flux_operator(grid: MacroGrid, A_nodes: np.ndarray) -> sp.csr_matrix:
    """Sparse L with (L u)_i = div(A grad u) at node i, A lagged at the nodes and
    averaged to faces.  Rows of the transpose sum to zero (telescoping fluxes)."""
    n, dx = grid.n, grid.dx
    N = grid.size
    idx = np.arange(N).reshape(grid.shape)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    if grid.dim == 1:
        a = A_nodes[..., 0, 0]
        right = _shift(idx, n, 0, 1)
        af = 0.5 * (a + a[right]) / dx ** 2
        # flux from i to i+1 leaves i and enters i+1
        for sgn, node in ((1.0, idx), (-1.0, right)):
            add(node, right, sgn * af)
            add(node, idx, -sgn * af)
    else:
        for ax in range(2):
            oth = 1 - ax
            nb = _shift(idx, n, ax, 1)
            Af = 0.5 * (A_nodes + A_nodes.reshape(N, 2, 2)[nb.ravel()].reshape(A_nodes.shape))
            diag = Af[..., ax, ax] / dx ** 2
            cross = Af[..., ax, oth] / (4 * dx ** 2)
            up, dn = _shift(idx, n, oth, 1), _shift(idx, n, oth, -1)
            nb_up, nb_dn = _shift(nb, n, oth, 1), _shift(nb, n, oth, -1)
            # face flux F = diag (u_nb - u) + cross (u_up + u_nb_up - u_dn - u_nb_dn)
            terms = [(nb, diag), (idx, -diag), (up, cross), (nb_up, cross),
                     (dn, -cross), (nb_dn, -cross)]
            for sgn, node in ((1.0, idx), (-1.0, nb)):
                for col, w in terms:
                    add(node, col, sgn * w)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    L.sum_duplicates()
    return L


# -- time stepping --------------------------------------------------------------------

@dataclass
class StepDiagnostics:
    iterations: int
    residual: float
    dissipation: float


def _tensor_at(table, u: np.ndarray) -> np.ndarray:
    return np.asarray(table(u), dtype=float)


def step(state: MacroState, table, dt: float) -> tuple[MacroState, StepDiagnostics]:
    """One implicit Euler step of the conservative scheme."""
    if not dt > 0:
        raise InputError("dt must be positive")
    grid, medium = state.grid, state.medium
    L = flux_operator(grid, _tensor_at(table, state.u))
    z0 = state.z.ravel()
    u = state.u.ravel().copy()
    scale = max(1.0, float(np.max(np.abs(z0))))
    res = np.inf
    for it in range(1, MAX_NEWTON + 1):
        r = medium.density(u) - z0 - dt * (L @ u)
        res = float(np.max(np.abs(r))) / scale
        if res <= NEWTON_TOL:
            break
        J = sp.diags(medium.capacity(u)) - dt * L
        u = u - spla.spsolve(J.tocsc(), r)
    else:
        raise SolverError(f"Newton did not converge (residual {res:.3e}); reduce dt", residual=res)
    Lu = L @ u
    z1 = z0 + dt * Lu
    u1 = _invert(medium, z1)
    diss = -dt * grid.cell_volume * float(medium.isotherm.f(u1) @ (L @ u1))
    new = MacroState(grid, medium, u1.reshape(grid.shape), z1.reshape(grid.shape),
                     state.t + dt, state.dissipated + diss)
    return new, StepDiagnostics(it, res, diss)


def step_capacity_form(state: MacroState, table, dt: float) -> MacroState:
    """Linearly implicit step of the non-conservative form
    [|Y0| + |dSigma| f'(u^n)] (u^{n+1} - u^n) / dt = L u^{n+1}; used as a consistency check."""
    L = flux_operator(state.grid, _tensor_at(table, state.u))
    u0 = state.u.ravel()
    c = state.medium.capacity(u0)
    u1 = spla.spsolve((sp.diags(c) - dt * L).tocsc(), c * u0)
    return MacroState.from_u(state.grid, state.medium, u1, state.t + dt)


def energy(state: MacroState, table=None) -> tuple[float, float]:
    """(stored, dissipated so far)."""
    stored = float(state.medium.energy_density(state.u).sum() * state.grid.cell_volume)
    return stored, state.dissipated


def default_dt(grid: MacroGrid, medium: Medium, table) -> float:
    A0 = np.asarray(table(np.array(0.0)), dtype=float)
    lam = float(np.linalg.eigvalsh(0.5 * (A0 + A0.T))[-1])
    cap = medium.fluid_area + medium.isotherm.alpha * medium.surface_length
    return grid.dx ** 2 * cap / (4.0 * lam)


@dataclass
class MacroRecord:
    t: float
    mass: float
    stored_energy: float
    min_u: float
    max_u: float
    dissipated: float = 0.0


@dataclass
class MacroRun:
    records: list = field(default_factory=list)
    final: MacroState | None = None
    diagnostics: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


def record_of(state: MacroState) -> MacroRecord:
    stored, diss = energy(state)
    return MacroRecord(state.t, state.mass(), stored, float(state.u.min()), float(state.u.max()), diss)


def run(state: MacroState, table, dt: float, n_steps: int, snapshot_every: int = 0) -> MacroRun:
    out = MacroRun(records=[record_of(state)])
    if snapshot_every:
        out.snapshots[0] = state.u.copy()
    for k in range(1, n_steps + 1):
        state, diag = step(state, table, dt)
        out.records.append(record_of(state))
        out.diagnostics.append(diag)
        if snapshot_every and k % snapshot_every == 0:
            out.snapshots[k] = state.u.copy()
    out.final = state
    return out


def bump(grid: MacroGrid, amplitude: float = 1.0, width: float = 1.0, center=None,
         background: float = 0.0) -> np.ndarray:
    """Smooth bump of compact support (cosine squared) on the periodic box."""
    xs = grid.coordinates()
    c = center if center is not None else [grid.length / 2] * grid.dim
    r2 = sum((x - ci) ** 2 for x, ci in zip(xs, np.broadcast_to(c, (grid.dim,))))
    r = np.sqrt(r2)
    prof = np.where(r < width, np.cos(0.5 * math.pi * r / width) ** 2, 0.0)
    return background + amplitude * prof


def fourier_mode_oracle(grid: MacroGrid, medium: Medium, A11: float, k: int, t: float, dt: float):
    """Exact and discrete amplitude factors of mode k under a constant tensor (beta = 0)."""
    cap = medium.fluid_area + medium.isotherm.alpha * medium.surface_length
    kk = 2 * math.pi * k / grid.length
    exact = math.exp(-A11 * kk * kk * t / cap)
    symbol = A11 * 4.0 / grid.dx ** 2 * math.sin(math.pi * k * grid.dx / grid.length) ** 2
    steps = int(round(t / dt))
    discrete = (1.0 + dt * symbol / cap) ** (-steps)
    return exact, discrete


__all__ = ["Medium", "MacroGrid", "MacroState", "MacroRecord", "MacroRun", "StepDiagnostics",
           "invert_density", "well_prepared_vin", "H_value", "initial_state", "flux_operator",
           "step", "step_capacity_form", "energy", "default_dt", "run", "bump",
           "fourier_mode_oracle", "record_of"]
