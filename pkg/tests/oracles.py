"""Loop-based re-implementation of the cell problem and dispersion tensor.

It shares no assembly code with the package: periodic identification is done
by coordinates, gradients by inverting the 3x3 Vandermonde matrix of each
triangle, the kernel is pinned by fixing one unknown, and every quadrature is
an explicit loop.  Used as a cross-check on a coarse mesh.
"""

import numpy as np


def _periodic_ids(nodes):
    ids, table = np.empty(len(nodes), dtype=int), {}
    for i, (x, y) in enumerate(nodes):
        key = (round(x % 1.0, 9) % 1.0, round(y % 1.0, 9) % 1.0)
        ids[i] = table.setdefault(key, len(table))
    return ids, len(table)


def oracle_tensor(mesh, bulk_velocity, u0, D=np.eye(2), Ds=1.0, kappa=1.0, alpha=1.0, beta=1.0,
                  surface_speed=0.0):
    nodes, tris = mesh.nodes, mesh.triangles
    ids, n = _periodic_ids(nodes)
    fp = alpha / (1 + beta * u0) ** 2

    areas, grads = [], []
    for tri in tris:
        V = np.array([[1.0, *nodes[k]] for k in tri])
        coef = np.linalg.inv(V)
        grads.append(coef[1:, :].T)
        areas.append(0.5 * abs(np.linalg.det(V)))
    areas = np.array(areas)
    bstar = (areas[:, None] * bulk_velocity).sum(0) / areas.sum()

    K = np.zeros((n, n))
    C = np.zeros((n, n))
    rhs_b = np.zeros((n, 2))
    wb = np.zeros(n)
    for t, tri in enumerate(tris):
        g, a, b = grads[t], areas[t], bulk_velocity[t]
        I = ids[tri]
        for r in range(3):
            wb[I[r]] += a / 3
            for j in range(2):
                rhs_b[I[r], j] += a / 3 * (bstar[j] - b[j]) - a * (D[:, j] @ g[r])
            for s in range(3):
                K[I[r], I[s]] += a * g[r] @ D @ g[s]
                C[I[r], I[s]] += a / 3 * (b @ g[s])

    seg = mesh.boundary_segments
    loop_nodes = list(dict.fromkeys(seg.ravel()))
    sidx = {v: k for k, v in enumerate(loop_nodes)}
    L = len(loop_nodes)
    Ks = np.zeros((L, L))
    Cs = np.zeros((L, L))
    Ms = np.zeros((L, L))
    rhs_s = np.zeros((L, 2))
    ws = np.zeros(L)
    segs = []
    for a_node, b_node in seg:
        d = nodes[b_node] - nodes[a_node]
        ell = np.hypot(*d)
        t = d / ell
        bs = surface_speed * t
        A, B = sidx[a_node], sidx[b_node]
        segs.append((A, B, ids[a_node], ids[b_node], ell, t))
        for (p, q), m in zip([(A, A), (A, B), (B, A), (B, B)], [2, 1, 1, 2]):
            Ms[p, q] += ell / 6 * m
        for p, q, sgn in [(A, A, 1), (A, B, -1), (B, A, -1), (B, B, 1)]:
            Ks[p, q] += sgn * Ds / ell
        # convection (bs . t) w' psi, w' = (w_B - w_A) / ell
        c = bs @ t
        for p in (A, B):
            Cs[p, B] += c / 2
            Cs[p, A] -= c / 2
        ws[A] += ell / 2
        ws[B] += ell / 2
        for j in range(2):
            rhs_s[A, j] += ell / 2 * (bstar[j] - bs[j]) + Ds * t[j]
            rhs_s[B, j] += ell / 2 * (bstar[j] - bs[j]) - Ds * t[j]

    Tm = np.zeros((L, n))
    for v, k in sidx.items():
        Tm[k, ids[v]] = 1.0
    kf = kappa * fp
    Abig = np.block([[K + C + kf * Tm.T @ Ms @ Tm, -kf * Tm.T @ Ms],
                     [-kf * Ms @ Tm, fp * (Ks + Cs) + kf * Ms]])
    rhs = np.vstack([rhs_b, fp * rhs_s])
    # drop one equation (implied by the others) and pin the first unknown
    Abig[0, :] = 0.0
    Abig[0, 0] = 1.0
    rhs[0, :] = 0.0
    x = np.linalg.solve(Abig, rhs)
    X, W = x[:n], x[n:]
    shift = (wb @ X + ws @ W) / (wb.sum() + ws.sum())
    X, W = X - shift, W - shift

    A = np.zeros((2, 2))
    for t, tri in enumerate(tris):
        g, a, b = grads[t], areas[t], bulk_velocity[t]
        I = ids[tri]
        gx = [g.T @ X[I, i] for i in range(2)]
        mean = [X[I, i].mean() for i in range(2)]
        for i in range(2):
            for j in range(2):
                ei, ej = np.eye(2)[i], np.eye(2)[j]
                A[i, j] += a * (gx[i] + ei) @ D @ (gx[j] + ej)
                A[i, j] += a * (D @ gx[j] @ ei - D @ gx[i] @ ej)
                A[i, j] += a * (b @ gx[i]) * mean[j]
    for A_, B_, ia, ib, ell, t in segs:
        Mloc = ell / 6 * np.array([[2, 1], [1, 2]])
        for i in range(2):
            di = W[B_, i] - W[A_, i]
            ei = np.array([X[ia, i] - W[A_, i], X[ib, i] - W[B_, i]])
            for j in range(2):
                dj = W[B_, j] - W[A_, j]
                ej = np.array([X[ia, j] - W[A_, j], X[ib, j] - W[B_, j]])
                A[i, j] += kf * ei @ Mloc @ ej
                A[i, j] += fp * Ds * ell * (di / ell + t[i]) * (dj / ell + t[j])
                A[i, j] += fp * Ds * ell * ((dj / ell) * t[i] - (di / ell) * t[j])
                A[i, j] += fp * surface_speed * di * 0.5 * (W[A_, j] + W[B_, j])
    return A
