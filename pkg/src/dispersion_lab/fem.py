"""P1 finite elements on the bulk cell and on the obstacle boundary loop.

Bulk matrices are assembled in full node numbering and reduced to periodic
representatives with a 0/1 prolongation ``P`` (``A_red = P.T @ A @ P``).
Surface matrices live on the loop ordering of :class:`SurfaceMesh`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CoefficientError, CompatibilityError, MeshError, SolverError, TopologyError
from .geometry import CellMesh, SurfaceMesh

RTOL = 1e-10
COMPAT_TOL = 1e-8
DIRECT_LIMIT = 200_000


@dataclass
class FieldOnCell:
    values: np.ndarray
    kind: str = "bulk"  # "bulk" | "surface"


@dataclass
class SparseSystem:
    """Square system ``matrix @ x = rhs`` with optional affine constraints.

    ``constraints`` holds ``(c, value)`` pairs enforced as ``c @ x = value``
    through Lagrange multipliers; ``kernel`` holds left null vectors of
    ``matrix`` against which ``rhs`` must be orthogonal.
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    constraints: list = field(default_factory=list)
    kernel: list = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


# -- element geometry ----------------------------------------------------------

def p1_gradients(mesh: CellMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle areas and constant basis gradients, shape (m, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.triangle_areas()
    # grad phi_k = rot90(opposite edge) / (2 area)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    grads = np.stack([np.column_stack([-e[:, 1], e[:, 0]]) for e in (e0, e1, e2)], axis=1)
    grads /= (2.0 * area)[:, None, None]
    return area, grads


def field_gradient(mesh: CellMesh, values: np.ndarray) -> np.ndarray:
    """Constant gradient of a nodal P1 field on every triangle, shape (m, 2)."""
    _, g = p1_gradients(mesh)
    return np.einsum("tk,tkd->td", values[mesh.triangles], g)


def _scatter(mesh: CellMesh, local: np.ndarray, n: int | None = None) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes if n is None else n
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _per_triangle(value, m: int, shape: tuple) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        return np.broadcast_to(arr, (m,) + shape)
    if arr.shape == (m,) + shape:
        return arr
    raise CoefficientError(f"coefficient of shape {arr.shape} does not match {shape} per triangle")


def assemble_bulk(mesh: CellMesh, D=None, b=None, reaction=None) -> sp.csr_matrix:
    """Matrix of  int D grad u . grad v + (b . grad u) v + r u v  over Y0.

    ``D`` is a 2x2 tensor or one per triangle, ``b`` a vector or one per
    triangle, ``reaction`` a scalar or one per triangle.  All integrals are
    exact for P1 functions with piecewise constant data.
    """
    m = mesh.n_triangles
    area, g = p1_gradients(mesh)
    local = np.zeros((m, 3, 3))
    if D is not None:
        Dt = _per_triangle(D, m, (2, 2))
        if not np.allclose(Dt, np.swapaxes(Dt, 1, 2), atol=1e-14):
            raise CoefficientError("diffusion tensor is not symmetric")
        if np.min(np.linalg.eigvalsh(Dt)) <= 0:
            raise CoefficientError("diffusion tensor is not positive definite")
        local += area[:, None, None] * np.einsum("tid,tde,tje->tij", g, Dt, g)
    if b is not None:
        bt = _per_triangle(b, m, (2,))
        # (b . grad u_j) integrated against v_i gives area/3 per test function
        adv = np.einsum("td,tjd->tj", bt, g)
        local += (area / 3.0)[:, None, None] * adv[:, None, :]
    if reaction is not None:
        rt = _per_triangle(reaction, m, ())
        mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local += (rt * area)[:, None, None] * mass
    return _scatter(mesh, local)


def bulk_load(mesh: CellMesh, source) -> np.ndarray:
    """Vector of  int s v  for piecewise-constant (or scalar) ``source``."""
    area = mesh.triangle_areas()
    s = _per_triangle(source, mesh.n_triangles, ())
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(s * area / 3.0, 3))
    return out


def bulk_flux_load(mesh: CellMesh, vec) -> np.ndarray:
    """Vector of  int q . grad v  for piecewise-constant vector ``vec``."""
    area, g = p1_gradients(mesh)
    q = _per_triangle(vec, mesh.n_triangles, (2,))
    local = area[:, None] * np.einsum("td,tkd->tk", q, g)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


def bulk_weights(mesh: CellMesh) -> np.ndarray:
    return bulk_load(mesh, 1.0)


# -- boundary loop -------------------------------------------------------------

def _loop_scatter(L: int, local: np.ndarray) -> sp.csr_matrix:
    a = np.arange(L)
    b = (a + 1) % L
    rows = np.column_stack([a, a, b, b]).ravel()
    cols = np.column_stack([a, b, a, b]).ravel()
    return sp.coo_matrix((local.reshape(L, 4).ravel(), (rows, cols)), shape=(L, L)).tocsr()


def _per_segment(value, L: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(L, float(arr))
    if arr.shape != (L,):
        raise CoefficientError(f"surface coefficient of shape {arr.shape}, expected ({L},)")
    return arr


def assemble_surface(surface: SurfaceMesh, Ds=None, bs=None, reaction=None) -> sp.csr_matrix:
    """Laplace-Beltrami stiffness, tangential convection and mass on the loop.

    ``Ds`` is the tangential diffusivity, ``bs`` the signed tangential speed
    (surface velocity ``bs * tangent``), ``reaction`` a mass weight; each is a
    scalar or one value per segment.
    """
    ell = surface.segment_lengths
    L = surface.n_loop
    if np.any(ell <= 0):
        raise MeshError("zero-length boundary segment")
    local = np.zeros((L, 2, 2))
    if Ds is not None:
        d = _per_segment(Ds, L)
        if np.any(d < 0):
            raise CoefficientError("negative surface diffusivity")
        local += (d / ell)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    if bs is not None:
        c = _per_segment(bs, L)
        # int c u' v over a segment: u' = (u_b - u_a)/ell, int v = ell/2
        local += (0.5 * c)[:, None, None] * np.array([[-1.0, 1.0], [-1.0, 1.0]])
    if reaction is not None:
        r = _per_segment(reaction, L)
        local += (r * ell / 6.0)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])
    return _loop_scatter(L, local)


def surface_mass(surface: SurfaceMesh) -> sp.csr_matrix:
    return assemble_surface(surface, reaction=1.0)


def surface_load(surface: SurfaceMesh, source) -> np.ndarray:
    """Vector of  int s psi  for per-segment constant ``source``."""
    L = surface.n_loop
    s = _per_segment(source, L) * surface.segment_lengths * 0.5
    return s + np.roll(s, 1)


def surface_flux_load(surface: SurfaceMesh, q) -> np.ndarray:
    """Vector of  int q psi'  for per-segment constant ``q`` (arc-length derivative)."""
    q = _per_segment(q, surface.n_loop)
    # psi' on segment k is (psi_{k+1} - psi_k)/ell; times ell
    return -q + np.roll(q, 1)


def assemble_coupling(surface: SurfaceMesh, weight: float, n_bulk: int,
                      trace_index: np.ndarray | None = None) -> sp.csr_matrix:
    """Block matrix of  weight * int (u - w)(v - psi)  on the 2-field space.

    Unknowns are ordered ``[bulk (n_bulk); surface (n_loop)]``;
    ``trace_index[k]`` is the bulk dof sitting on loop node ``k``
    (defaults to ``surface.loop_nodes``).
    """
    L = surface.n_loop
    idx = surface.loop_nodes if trace_index is None else np.asarray(trace_index)
    if len(idx) != L or np.any(idx < 0) or np.any(idx >= n_bulk):
        raise TopologyError("bulk trace indices do not match the surface loop")
    T = trace_operator(idx, n_bulk)
    M = surface_mass(surface)
    B = sp.hstack([T, -sp.identity(L)])
    return (weight * (B.T @ M @ B)).tocsr()


def trace_operator(trace_index: np.ndarray, n_bulk: int) -> sp.csr_matrix:
    L = len(trace_index)
    return sp.csr_matrix((np.ones(L), (np.arange(L), trace_index)), shape=(L, n_bulk))


# -- periodic reduction ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PeriodicMap:
    master: np.ndarray   # node -> reduced dof
    P: sp.csr_matrix     # (n_nodes, n_dofs) prolongation

    @classmethod
    def from_mesh(cls, mesh: CellMesh) -> "PeriodicMap":
        m = mesh.master_index()
        reps, dof = np.unique(m, return_inverse=True)
        P = sp.csr_matrix((np.ones(mesh.n_nodes), (np.arange(mesh.n_nodes), dof)),
                          shape=(mesh.n_nodes, len(reps)))
        return cls(master=dof, P=P)

    @property
    def n_dofs(self) -> int:
        return self.P.shape[1]

    def reduce(self, A: sp.spmatrix) -> sp.csr_matrix:
        return (self.P.T @ A @ self.P).tocsr()

    def reduce_vector(self, v: np.ndarray) -> np.ndarray:
        return self.P.T @ v

    def expand(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x


# -- solving -------------------------------------------------------------------

def _augment(system: SparseSystem):
    A = sp.csr_matrix(system.matrix)
    n = A.shape[0]
    rhs = np.asarray(system.rhs, dtype=float)
    if not system.constraints:
        return A, rhs, n
    C = np.vstack([np.asarray(c, dtype=float) for c, _ in system.constraints])
    vals = np.array([v for _, v in system.constraints], dtype=float)
    Cs = sp.csr_matrix(C)
    K = sp.bmat([[A, Cs.T], [Cs, None]], format="csc")
    if rhs.ndim == 1:
        r = np.concatenate([rhs, vals])
    else:
        r = np.vstack([rhs, np.repeat(vals[:, None], rhs.shape[1], axis=1)])
    return K, r, n


def check_compatibility(system: SparseSystem) -> None:
    rhs = np.asarray(system.rhs, dtype=float)
    scale = max(1.0, float(np.max(np.linalg.norm(rhs, axis=0), initial=0.0)))
    for kvec in system.kernel:
        kvec = np.asarray(kvec, dtype=float)
        kn = kvec / np.linalg.norm(kvec)
        proj = np.abs(kn @ rhs)
        if np.max(proj, initial=0.0) > COMPAT_TOL * scale:
            raise CompatibilityError(
                f"right-hand side has component {np.max(proj):.3e} along the kernel")


def factorize(system: SparseSystem):
    """Return a callable ``solve(rhs)`` for repeated right-hand sides."""
    K, _, n = _augment(SparseSystem(system.matrix, np.zeros(system.dimension), system.constraints))
    if K.shape[0] <= DIRECT_LIMIT:
        lu = spla.splu(sp.csc_matrix(K))
        return lu.solve, n
    diag = K.diagonal()
    diag[diag == 0] = 1.0
    prec = spla.LinearOperator(K.shape, matvec=lambda x: x / diag)

    def krylov(r):
        cols = r if r.ndim == 2 else r[:, None]
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            x, info = spla.gmres(K, cols[:, j], M=prec, rtol=RTOL * 1e-2, restart=200, maxiter=2000)
            if info != 0:
                res = np.linalg.norm(K @ x - cols[:, j])
                raise SolverError(f"GMRES did not converge (info={info})", residual=res)
            out[:, j] = x
        return out if r.ndim == 2 else out[:, 0]

    return krylov, n


def solve(system: SparseSystem) -> np.ndarray:
    """Solve a (possibly constrained) sparse system; returns the primal unknowns.

    Raises :class:`CompatibilityError` when ``rhs`` is not orthogonal to a
    declared kernel vector and :class:`SolverError` when the final residual
    exceeds ``RTOL * ||rhs||``.
    """
    check_compatibility(system)
    K, r, n = _augment(system)
    solver, _ = factorize(system)
    x = solver(r)
    res = K @ x - r
    rn = np.linalg.norm(res, axis=0)
    bn = np.linalg.norm(r, axis=0)
    if np.any(rn > RTOL * np.maximum(bn, 1e-300)) and np.any(bn > 0):
        raise SolverError(f"linear residual {np.max(rn):.3e} above tolerance", residual=float(np.max(rn)))
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution (singular system?)")
    return x[:n]


def dump_system(path, matrix: sp.spmatrix) -> None:
    """Write ``row col value`` lines for every stored entry."""
    A = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v!r}\n")
