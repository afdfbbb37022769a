"""Periodic unit cell with a disk obstacle: meshing, boundary curve, measures.

The cell is Y = [0, 1]^2.  The fluid part Y0 is the square minus a closed disk;
the obstacle boundary is discretized as a closed polyline whose nodes lie exactly
on the circle.  Outer edges carry identical node coordinates on opposite sides so
the periodic identification is an exact node-to-node bijection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import triangle

from .errors import GeometryError, MeshError, TopologyError

GEOM_TOL = 1e-12


@dataclass(frozen=True)
class CellGeometry:
    """Disk obstacle inside the unit cell.

    ``fluid_area`` and ``surface_length`` default to the exact analytic values;
    :meth:`CellMesh.geometry` returns a copy holding the discrete ones.
    """

    obstacle_center: tuple[float, float] = (0.5, 0.5)
    obstacle_radius: float = 0.2
    fluid_area: float = field(default=math.nan)
    surface_length: float = field(default=math.nan)

    def __post_init__(self):
        r = float(self.obstacle_radius)
        if r < 0:
            raise GeometryError(f"negative obstacle radius {r}")
        cx, cy = self.obstacle_center
        if r > 0 and r + max(abs(cx - 0.5), abs(cy - 0.5)) >= 0.5:
            raise GeometryError("obstacle is not strictly inside the cell")
        if math.isnan(self.fluid_area):
            object.__setattr__(self, "fluid_area", 1.0 - math.pi * r * r)
        if math.isnan(self.surface_length):
            object.__setattr__(self, "surface_length", 2.0 * math.pi * r)

    @property
    def eta(self) -> float:
        return self.surface_length / self.fluid_area

    @property
    def has_obstacle(self) -> bool:
        return self.obstacle_radius > 0


@dataclass(frozen=True, eq=False)
class CellMesh:
    nodes: np.ndarray            # (n, 2)
    triangles: np.ndarray        # (m, 3), counter-clockwise
    boundary_segments: np.ndarray  # (k, 2), closed loop around the obstacle
    periodic_pairs: np.ndarray   # (p, 2), (slave on x=1 or y=1, master partner)
    h: float
    cell: CellGeometry

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def master_index(self) -> np.ndarray:
        """Map every node to its periodic representative (x=1 -> 0, y=1 -> 0)."""
        master = np.arange(self.n_nodes)
        # pairs are stored for both directions; apply until fixed point so the
        # corner (1, 1) lands on (0, 0)
        for _ in range(2):
            master[self.periodic_pairs[:, 0]] = master[self.periodic_pairs[:, 1]]
        return master

    def geometry(self) -> CellGeometry:
        area, length = measure(self)
        return replace(self.cell, fluid_area=area, surface_length=length)

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    loop_nodes: np.ndarray       # cyclic node indices, counter-clockwise
    points: np.ndarray           # (L, 2) coordinates of loop nodes
    segment_lengths: np.ndarray  # (L,), segment k joins loop k -> k+1
    outward_normals: np.ndarray  # (L, 2), exterior to Y0, i.e. into the obstacle
    tangents: np.ndarray         # (L, 2)

    @property
    def n_loop(self) -> int:
        return len(self.loop_nodes)

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def projection(self, k: int) -> np.ndarray:
        """Tangential projector G = Id - n (x) n on segment ``k``."""
        n = self.outward_normals[k]
        return np.eye(2) - np.outer(n, n)

    def node_weights(self) -> np.ndarray:
        """Integrals of the P1 hat functions along the loop."""
        ell = self.segment_lengths
        return 0.5 * (ell + np.roll(ell, 1))


def build_cell_mesh(geometry: CellGeometry, h: float) -> CellMesh:
    """Triangulate Y0 with matched periodic edge nodes.

    Outer edges get ``round(1/h)`` uniform intervals, the circle gets
    ``ceil(2 pi r / h)`` uniform angular intervals, and the interior is filled
    by a quality constrained Delaunay triangulation that inserts no Steiner
    points on either boundary.
    """
    if not h > 0:
        raise GeometryError(f"mesh size must be positive, got {h}")
    r = geometry.obstacle_radius
    cx, cy = geometry.obstacle_center
    if r > 0:
        if h > r / 2 + 1e-15:
            raise GeometryError(f"h={h} exceeds radius/2={r / 2}")
        gap = 0.5 - (r + max(abs(cx - 0.5), abs(cy - 0.5)))
        if gap < h:
            raise GeometryError(
                f"obstacle leaves a gap {gap:.3g} < h to the cell boundary")

    if r > 0 and abs(cx - 0.5) <= GEOM_TOL and abs(cy - 0.5) <= GEOM_TOL:
        return _build_symmetric(geometry, h)
    n = max(2, int(round(1.0 / h)))
    s = np.arange(n) / n
    # counter-clockwise square perimeter, corners included once
    square = np.concatenate([
        np.column_stack([s, np.zeros(n)]),
        np.column_stack([np.ones(n), s]),
        np.column_stack([1.0 - s, np.ones(n)]),
        np.column_stack([np.zeros(n), 1.0 - s]),
    ])
    n_sq = len(square)
    seg_sq = np.column_stack([np.arange(n_sq), (np.arange(n_sq) + 1) % n_sq])
    vertices = [square]
    segments = [seg_sq]
    tri_in = {}
    n_circ = 0
    if r > 0:
        n_circ = max(8, int(math.ceil(2 * math.pi * r / h - 1e-9)))
        theta = 2 * math.pi * np.arange(n_circ) / n_circ
        circle = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
        vertices.append(circle)
        idx = n_sq + np.arange(n_circ)
        segments.append(np.column_stack([idx, np.roll(idx, -1)]))
        tri_in["holes"] = np.array([[cx, cy]])
    tri_in["vertices"] = np.vstack(vertices)
    tri_in["segments"] = np.vstack(segments)

    max_area = math.sqrt(3) / 4 * h * h
    out = triangle.triangulate(tri_in, f"pq30a{max_area:.12f}YYQ")
    nodes = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    n_in = len(tri_in["vertices"])
    if not np.array_equal(nodes[:n_in], tri_in["vertices"]):
        raise MeshError("triangulator reordered the prescribed boundary nodes")

    # snap the prescribed boundary coordinates exactly (triangle copies them,
    # but keep the guarantee explicit)
    nodes[:n_in] = tri_in["vertices"]
    p = nodes[tris]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
        (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    if r > 0:
        idx = n_sq + np.arange(n_circ)
        boundary = np.column_stack([idx, np.roll(idx, -1)])
    else:
        boundary = np.zeros((0, 2), dtype=np.int64)

    pairs = _periodic_pairs(nodes)
    mesh = CellMesh(nodes=nodes, triangles=tris, boundary_segments=boundary,
                    periodic_pairs=pairs, h=float(h), cell=geometry)
    check_mesh(mesh)
    return mesh


def _build_symmetric(geometry: CellGeometry, h: float) -> CellMesh:
    """Mesh one eighth of the cell (0 <= angle <= pi/4 around the centre) and
    unfold it with the eight symmetries of the square.

    The result is invariant under the full symmetry group of the cell, so
    isotropy of symmetric problems holds to round-off rather than to
    discretization error.  Reflections about x = 0.5 are exact in floating
    point, which also makes the periodic node matching exact.
    """
    r = geometry.obstacle_radius
    m = max(1, int(math.ceil(2 * math.pi * r / h / 8 - 1e-9)))
    n_ray = max(1, int(round((0.5 - r) / h)))
    n_edge = max(1, int(round(0.5 / h)))
    diag_len = math.sqrt(2) * (0.5 - r / math.sqrt(2))
    n_diag = max(1, int(round(diag_len / h)))

    ray_x = 0.5 + r + (0.5 - r) * np.arange(n_ray) / n_ray
    ray = np.column_stack([ray_x, np.full(n_ray, 0.5)])
    edge = np.column_stack([np.ones(n_edge), 0.5 + 0.5 * np.arange(n_edge) / n_edge])
    d0 = 0.5 + r / math.sqrt(2)
    dt = 1.0 - (1.0 - d0) * np.arange(n_diag) / n_diag
    diag = np.column_stack([dt, dt])
    theta = (math.pi / 4) * np.arange(m, 0, -1) / m
    arc = np.column_stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)])
    arc[0] = (d0, d0)
    poly = np.vstack([ray, edge, diag, arc])
    k = len(poly)
    seg = np.column_stack([np.arange(k), (np.arange(k) + 1) % k])
    max_area = math.sqrt(3) / 4 * h * h
    out = triangle.triangulate({"vertices": poly, "segments": seg}, f"pq30a{max_area:.12f}YYQ")
    wedge = np.asarray(out["vertices"], dtype=float)
    wedge[:k] = poly
    wtris = np.asarray(out["triangles"], dtype=np.int64)

    d = wedge - 0.5
    images = [(d[:, 0], d[:, 1]), (d[:, 1], d[:, 0])]
    images = [(sx * a, sy * b) for a, b in images for sx in (1, -1) for sy in (1, -1)]
    index = {}
    nodes = []
    tris = []
    for a, b in images:
        pts = np.column_stack([0.5 + a, 0.5 + b])
        local = np.empty(len(pts), dtype=np.int64)
        for i, q in enumerate(pts):
            key = (round(q[0], 12), round(q[1], 12))
            j = index.get(key)
            if j is None:
                j = index[key] = len(nodes)
                nodes.append(q)
            local[i] = j
        tris.append(local[wtris])
    nodes = np.array(nodes)
    tris = np.vstack(tris)
    p = nodes[tris]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
        (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    rad = np.hypot(nodes[:, 0] - 0.5, nodes[:, 1] - 0.5)
    on_circle = np.flatnonzero(np.abs(rad - r) <= 1e-12)
    ang = np.mod(np.arctan2(nodes[on_circle, 1] - 0.5, nodes[on_circle, 0] - 0.5), 2 * math.pi)
    loop = on_circle[np.argsort(ang)]
    boundary = np.column_stack([loop, np.roll(loop, -1)])
    mesh = CellMesh(nodes=nodes, triangles=tris, boundary_segments=boundary,
                    periodic_pairs=_periodic_pairs(nodes), h=float(h), cell=geometry)
    check_mesh(mesh)
    return mesh


def _periodic_pairs(nodes: np.ndarray) -> np.ndarray:
    pairs = []
    for axis, other in ((0, 1), (1, 0)):
        lo = np.flatnonzero(np.abs(nodes[:, axis]) <= GEOM_TOL)
        hi = np.flatnonzero(np.abs(nodes[:, axis] - 1.0) <= GEOM_TOL)
        if len(lo) != len(hi):
            raise TopologyError("opposite cell edges carry different node counts")
        lo = lo[np.argsort(nodes[lo, other])]
        hi = hi[np.argsort(nodes[hi, other])]
        if np.max(np.abs(nodes[lo, other] - nodes[hi, other]), initial=0.0) > GEOM_TOL:
            raise TopologyError("opposite edge nodes are not aligned")
        pairs.append(np.column_stack([hi, lo]))
    return np.vstack(pairs).astype(np.int64)


def check_mesh(mesh: CellMesh) -> None:
    """Raise if any structural invariant of ``mesh`` is violated."""
    if np.any(mesh.triangle_areas() <= 0):
        raise MeshError("triangle with non-positive signed area")
    cell = mesh.cell
    if cell.has_obstacle:
        c = np.asarray(cell.obstacle_center)
        dist = np.linalg.norm(mesh.nodes - c, axis=1)
        if np.any(dist < cell.obstacle_radius - 1e-9):
            raise MeshError("node strictly inside the obstacle")
        seg = mesh.boundary_segments
        if len(seg) == 0 or not np.array_equal(seg[:, 1], np.roll(seg[:, 0], -1)):
            raise TopologyError("obstacle boundary is not a single closed loop")
        on_circle = np.abs(dist[seg[:, 0]] - cell.obstacle_radius)
        if np.any(on_circle > 0.5 * mesh.h ** 2):
            raise MeshError("boundary node off the obstacle circle")
    pp = mesh.periodic_pairs
    d = mesh.nodes[pp[:, 0]] - mesh.nodes[pp[:, 1]]
    ok = (np.isclose(np.abs(d[:, 0]), 1.0, atol=GEOM_TOL) & (np.abs(d[:, 1]) <= GEOM_TOL)) | \
        (np.isclose(np.abs(d[:, 1]), 1.0, atol=GEOM_TOL) & (np.abs(d[:, 0]) <= GEOM_TOL))
    if not np.all(ok):
        raise TopologyError("periodic pair offsets differ from a unit shift")


def extract_surface_mesh(mesh: CellMesh) -> SurfaceMesh:
    seg = np.asarray(mesh.boundary_segments)
    if len(seg) == 0:
        raise TopologyError("mesh has no obstacle boundary")
    nxt = {}
    for a, b in seg:
        if a in nxt:
            raise TopologyError(f"node {a} starts two boundary segments")
        nxt[int(a)] = int(b)
    start = int(seg[0, 0])
    loop = [start]
    while True:
        b = nxt.get(loop[-1])
        if b is None:
            raise TopologyError("obstacle boundary loop is open")
        if b == start:
            break
        loop.append(b)
        if len(loop) > len(seg):
            raise TopologyError("obstacle boundary loop does not close")
    if len(loop) != len(seg):
        raise TopologyError("obstacle boundary has several components")
    loop = np.asarray(loop, dtype=np.int64)
    pts = mesh.nodes[loop]
    d = np.roll(pts, -1, axis=0) - pts
    ell = np.linalg.norm(d, axis=1)
    if np.any(ell <= GEOM_TOL):
        raise MeshError("zero-length boundary segment")
    t = d / ell[:, None]
    # circle is traversed counter-clockwise; left normal points at the center
    normals = np.column_stack([-t[:, 1], t[:, 0]])
    mid = pts + 0.5 * d
    centre = np.asarray(mesh.cell.obstacle_center)
    if np.any(np.einsum("ij,ij->i", normals, centre - mid) <= 0):
        normals = -normals
    return SurfaceMesh(loop_nodes=loop, points=pts, segment_lengths=ell,
                       outward_normals=normals, tangents=t)


def measure(mesh: CellMesh) -> tuple[float, float]:
    """Return (|Y0|, |dSigma0|) as sums of triangle areas and segment lengths."""
    area = float(mesh.triangle_areas().sum())
    seg = mesh.boundary_segments
    if len(seg) == 0:
        return area, 0.0
    d = mesh.nodes[seg[:, 1]] - mesh.nodes[seg[:, 0]]
    return area, float(np.linalg.norm(d, axis=1).sum())


def euler_characteristic(mesh: CellMesh) -> int:
    return mesh.n_nodes - len(mesh.edges()) + mesh.n_triangles


def locate(mesh: CellMesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Find the containing triangle and barycentric weights for each point.

    Points outside Y0 get triangle index -1.
    """
    from scipy.spatial import cKDTree

    points = np.atleast_2d(np.asarray(points, dtype=float))
    cent = mesh.centroids()
    tree = cKDTree(cent)
    k = min(16, mesh.n_triangles)
    _, cand = tree.query(points, k=k)
    cand = np.atleast_2d(cand)
    found = np.full(len(points), -1, dtype=np.int64)
    bary = np.zeros((len(points), 3))
    P = mesh.nodes[mesh.triangles]
    for j in range(k):
        t = cand[:, j]
        todo = found < 0
        if not todo.any():
            break
        a, b, c = P[t, 0], P[t, 1], P[t, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        l1 = ((points[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (points[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (points[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (points[:, 0] - a[:, 0])) / det
        l0 = 1 - l1 - l2
        inside = todo & (l0 >= -1e-10) & (l1 >= -1e-10) & (l2 >= -1e-10)
        found[inside] = t[inside]
        bary[inside] = np.column_stack([l0, l1, l2])[inside]
    return found, bary


def interpolate(mesh: CellMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate a nodal P1 field at arbitrary points (NaN outside Y0)."""
    tri, bary = locate(mesh, points)
    out = np.full(len(tri), np.nan)
    ok = tri >= 0
    out[ok] = np.einsum("ij,ij->i", bary[ok], values[mesh.triangles[tri[ok]]])
    return out


# -- plain-text mesh exchange ------------------------------------------------

def write_mesh(mesh: CellMesh, path) -> None:
    cx, cy = (float(c) for c in mesh.cell.obstacle_center)
    r, h = float(mesh.cell.obstacle_radius), float(mesh.h)
    with open(path, "w") as fh:
        fh.write(f"# cell center {cx!r} {cy!r} radius {r!r} h {h!r}\n")
        fh.write(f"nodes {mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for i, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{i} {a} {b} {c}\n")
        fh.write(f"boundary {len(mesh.boundary_segments)}\n")
        for i, (a, b) in enumerate(mesh.boundary_segments):
            fh.write(f"{i} {a} {b}\n")
        fh.write(f"periodic {len(mesh.periodic_pairs)}\n")
        for i, (a, b) in enumerate(mesh.periodic_pairs):
            fh.write(f"{i} {a} {b}\n")


def read_mesh(path) -> CellMesh:
    with open(path) as fh:
        header = fh.readline().split()
        if header[:3] != ["#", "cell", "center"]:
            raise MeshError(f"{path}: missing cell header")
        cx, cy, r, h = float(header[3]), float(header[4]), float(header[6]), float(header[8])
        tables = {}
        for name, ncols, dtype in (("nodes", 2, float), ("triangles", 3, np.int64),
                                   ("boundary", 2, np.int64), ("periodic", 2, np.int64)):
            tag, count = fh.readline().split()
            if tag != name:
                raise MeshError(f"{path}: expected table '{name}', found '{tag}'")
            rows = [fh.readline().split()[1:] for _ in range(int(count))]
            tables[name] = np.asarray(rows, dtype=dtype).reshape(int(count), ncols)
    mesh = CellMesh(nodes=tables["nodes"], triangles=tables["triangles"],
                    boundary_segments=tables["boundary"], periodic_pairs=tables["periodic"],
                    h=h, cell=CellGeometry((cx, cy), r))
    check_mesh(mesh)
    return mesh
