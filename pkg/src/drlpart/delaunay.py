"""Incremental Bowyer-Watson Delaunay triangulation with filtered exact predicates."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

_ORIENT_EPS = 1e-12
_INCIRCLE_EPS = 1e-12
SUPER_SCALE = 1e6


def orient(ax, ay, bx, by, cx, cy) -> float:
    """Positive if a, b, c are in counter-clockwise order."""
    l = (bx - ax) * (cy - ay)
    r = (by - ay) * (cx - ax)
    det = l - r
    if abs(det) > _ORIENT_EPS * (abs(l) + abs(r)):
        return det
    F = Fraction
    return float((F(bx) - F(ax)) * (F(cy) - F(ay)) - (F(by) - F(ay)) * (F(cx) - F(ax)))


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> float:
    """Positive if d lies strictly inside the circumcircle of counter-clockwise a, b, c."""
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    t1 = bdx * cdy - bdy * cdx
    t2 = cdx * ady - cdy * adx
    t3 = adx * bdy - ady * bdx
    det = alift * t1 + blift * t2 + clift * t3
    perm = (alift * (abs(bdx * cdy) + abs(bdy * cdx)) + blift * (abs(cdx * ady) + abs(cdy * adx))
            + clift * (abs(adx * bdy) + abs(ady * bdx)))
    if abs(det) > _INCIRCLE_EPS * perm:
        return det
    F = Fraction
    adx, ady = F(ax) - F(dx), F(ay) - F(dy)
    bdx, bdy = F(bx) - F(dx), F(by) - F(dy)
    cdx, cdy = F(cx) - F(dx), F(cy) - F(dy)
    exact = ((adx * adx + ady * ady) * (bdx * cdy - bdy * cdx)
             + (bdx * bdx + bdy * bdy) * (cdx * ady - cdy * adx)
             + (cdx * cdx + cdy * cdy) * (adx * bdy - ady * bdx))
    return float(exact)


def _insertion_order(pts: np.ndarray) -> np.ndarray:
    """Snake order over a grid of cells so consecutive points are close."""
    n = len(pts)
    k = max(1, int(np.sqrt(n / 4)))
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-300)
    cell = np.minimum(((pts - lo) / span * k).astype(np.int64), k - 1)
    col = np.where(cell[:, 1] % 2 == 0, cell[:, 0], k - 1 - cell[:, 0])
    return np.lexsort((pts[:, 0], col, cell[:, 1]))


def triangulate(points) -> tuple[np.ndarray, np.ndarray]:
    """Delaunay triangulation of 2-D points.

    Returns ``(triangles, edges)``: counter-clockwise triangles whose
    vertices are all input points, and every triangulation edge between input
    points (including hull edges of degenerate, e.g. collinear, inputs).
    Cocircular ties are resolved as "outside", so the result is one valid
    Delaunay triangulation among the possible ones.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    center = pts.mean(axis=0) if n else np.zeros(2)
    span = float(np.ptp(pts, axis=0).max()) if n else 1.0
    span = span if span > 0 else 1.0
    M = SUPER_SCALE * span
    cx, cy = float(center[0]), float(center[1])
    X = pts[:, 0].tolist() + [cx - 2 * M, cx + 2 * M, cx]
    Y = pts[:, 1].tolist() + [cy - M, cy - M, cy + 2 * M]
    s0, s1, s2 = n, n + 1, n + 2
    V = [[s0, s1, s2]]
    N = [[-1, -1, -1]]
    alive = [True]
    last = 0

    def locate(px, py, t):
        steps = 0
        while True:
            a, b, c = V[t]
            moved = False
            for i, (u, w) in enumerate(((b, c), (c, a), (a, b))):
                if orient(X[u], Y[u], X[w], Y[w], px, py) < 0:
                    nb = N[t][i]
                    if nb >= 0:
                        t = nb
                        moved = True
                        break
            if not moved:
                return t
            steps += 1
            if steps > 4 * len(V) + 10:
                raise RuntimeError("point location failed to terminate")

    for p in _insertion_order(pts).tolist() if n else []:
        px, py = X[p], Y[p]
        if not alive[last]:
            last = len(V) - 1
        t0 = locate(px, py, last)
        a, b, c = V[t0]
        if (X[a], Y[a]) == (px, py) or (X[b], Y[b]) == (px, py) or (X[c], Y[c]) == (px, py):
            continue
        cavity = {t0}
        stack = [t0]
        while stack:
            t = stack.pop()
            for nb in N[t]:
                if nb >= 0 and nb not in cavity:
                    a, b, c = V[nb]
                    if incircle(X[a], Y[a], X[b], Y[b], X[c], Y[c], px, py) > 0:
                        cavity.add(nb)
                        stack.append(nb)
        boundary = []
        for t in cavity:
            a, b, c = V[t]
            for i, (u, w) in enumerate(((b, c), (c, a), (a, b))):
                nb = N[t][i]
                if nb < 0 or nb not in cavity:
                    boundary.append((u, w, nb))
            alive[t] = False
        by_start, by_end = {}, {}
        for u, w, nb in boundary:
            t = len(V)
            V.append([u, w, p])
            N.append([-1, -1, nb])
            alive.append(True)
            if nb >= 0:
                nv = V[nb]
                for j in range(3):
                    x, y = nv[(j + 1) % 3], nv[(j + 2) % 3]
                    if x == w and y == u:
                        N[nb][j] = t
                        break
            by_start[u] = t
            by_end[w] = t
        for t in range(len(V) - len(boundary), len(V)):
            u, w, _ = V[t]
            N[t][0] = by_start[w]
            N[t][1] = by_end[u]
        last = len(V) - 1

    tris, edges = [], set()
    for t, ok in enumerate(alive):
        if not ok:
            continue
        a, b, c = V[t]
        real = [v for v in (a, b, c) if v < n]
        for i in range(len(real)):
            for j in range(i + 1, len(real)):
                u, w = real[i], real[j]
                edges.add((min(u, w), max(u, w)))
        if len(real) == 3:
            tris.append((a, b, c))
    tri_arr = np.array(tris, dtype=np.int64).reshape(-1, 3)
    edge_arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return tri_arr, edge_arr
