"""Triangle quadrature and panel-pair integration of G(z) = 1 / (4 pi |z|).

Regular pairs use tensor products of symmetric triangle rules. Pairs that
share a vertex, an edge or the whole panel use Sauter-Schwab style
relative-coordinate transformations on the reference triangle
{0 <= x2 <= x1 <= 1}, which turn the weakly singular integrand into a
bounded one on the unit 4-cube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
import scipy.sparse as sp

FOUR_PI = 4.0 * np.pi

COINCIDENT = "Coincident"
EDGE_ADJACENT = "EdgeAdjacent"
VERTEX_ADJACENT = "VertexAdjacent"
SEPARATED = "Separated"

KERNELS = ("SingleLayer", "DoubleLayerNy", "DoubleLayerNx")

# Gauss points per coordinate of the 4D singular rules. Self-panel integrals
# converge slowest (on obtuse panels 6 points leave ~1e-5 relative error), so
# the coincident class gets more points than the adjacent ones.
SINGULAR_POINTS = 6
COINCIDENT_POINTS = 10


def singular_points(tag: str, n: int | None = None) -> int:
    if n is not None:
        return n
    return COINCIDENT_POINTS if tag == COINCIDENT else SINGULAR_POINTS


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, 2) reference coordinates, triangle (0,0),(1,0),(0,1)
    weights: np.ndarray  # (n,), sum 1/2

    @property
    def bary(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)


def _orbit(*bary):
    return sorted(set(permutations(bary)))


# symmetric rules, weights normalised to unit area
_RULES = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    3: [((0.659027622374092, 0.231933368553031, 0.109039009072877), 1 / 6)],
    4: [((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322)],
    5: [((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827)],
    6: [((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374)],
}


@lru_cache(maxsize=None)
def gauss_triangle(order: int) -> QuadratureRule:
    """Symmetric rule exact for polynomials of total degree <= order."""
    if order not in _RULES:
        raise ValueError(f"unsupported triangle quadrature order {order}; use 1..6")
    pts, wts = [], []
    for bary, w in _RULES[order]:
        for b in _orbit(*bary):
            pts.append(b[1:])
            wts.append(w / 2.0)
    return QuadratureRule(np.array(pts), np.array(wts))


@lru_cache(maxsize=None)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# -- pair classification ----------------------------------------------------

@dataclass(frozen=True)
class PanelPairClass:
    tag: str
    shared: tuple[int, ...] = ()


def classify_pair(ta: int, tb: int, mesh) -> PanelPairClass:
    if ta == tb:
        return PanelPairClass(COINCIDENT, tuple(int(v) for v in mesh.triangles[ta]))
    shared = tuple(sorted(set(mesh.triangles[ta].tolist()) & set(mesh.triangles[tb].tolist())))
    tag = {2: EDGE_ADJACENT, 1: VERTEX_ADJACENT}.get(len(shared), SEPARATED)
    return PanelPairClass(tag, shared)


def adjacency(triangles: np.ndarray, n_vertices: int):
    """Unordered adjacent pairs (ta < tb) split into edge- and vertex-sharing."""
    f = len(triangles)
    inc = sp.csr_matrix((np.ones(3 * f), (np.repeat(np.arange(f), 3), triangles.reshape(-1))),
                        shape=(f, n_vertices))
    s = sp.triu(inc @ inc.T, k=1).tocoo()
    edge = np.stack([s.row[s.data == 2], s.col[s.data == 2]], axis=1)
    vert = np.stack([s.row[s.data == 1], s.col[s.data == 1]], axis=1)
    return edge.astype(np.int64), vert.astype(np.int64)


def separated_order(distance, diameter):
    """Triangle-rule order for a regular pair from centroid distance and panel size."""
    distance = np.asarray(distance)
    return np.where(distance < 1.5 * diameter, 6, np.where(distance < 5.0 * diameter, 4, 2))


# -- singular rules -----------------------------------------------------------

@lru_cache(maxsize=None)
def sauter_schwab(tag: str, n: int | None = None):
    """Reference nodes (xhat, yhat) and weights on {0<=x2<=x1<=1}^2.

    Weights integrate 1 to 1/4, the squared reference area.
    """
    t, w = gauss_legendre01(singular_points(tag, n))
    g = np.stack(np.meshgrid(t, t, t, t, indexing="ij"), -1).reshape(-1, 4)
    gw = np.einsum("i,j,k,l->ijkl", w, w, w, w).reshape(-1)
    xi, e1, e2, e3 = g.T
    xs, ys, ws = [], [], []

    def add(x, y, jac):
        xs.append(np.stack(x, -1))
        ys.append(np.stack(y, -1))
        ws.append(gw * jac)

    if tag == COINCIDENT:
        jac = xi**3 * e1**2 * e2
        a = (xi, xi * (1 - e1 + e1 * e2))
        b = (xi * (1 - e1 * e2 * e3), xi * (1 - e1))
        add(a, b, jac)
        add(b, a, jac)
        a = (xi, xi * e1 * (1 - e2 + e2 * e3))
        b = (xi * (1 - e1 * e2), xi * e1 * (1 - e2))
        add(a, b, jac)
        add(b, a, jac)
        a = (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))
        b = (xi, xi * e1 * (1 - e2))
        add(a, b, jac)
        add(b, a, jac)
    elif tag == EDGE_ADJACENT:
        add((xi, xi * e1 * e3), (xi * (1 - e1 * e2), xi * e1 * (1 - e2)), xi**3 * e1**2)
        jac = xi**3 * e1**2 * e2
        add((xi, xi * e1), (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), jac)
        add((xi * (1 - e1 * e2), xi * e1 * (1 - e2)), (xi, xi * e1 * e2 * e3), jac)
        add((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), (xi, xi * e1), jac)
        add((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * e2), jac)
    elif tag == VERTEX_ADJACENT:
        jac = xi**3 * e2
        add((xi, xi * e1), (xi * e2, xi * e2 * e3), jac)
        add((xi * e2, xi * e2 * e3), (xi, xi * e1), jac)
    else:
        raise ValueError(f"no singular rule for {tag!r}")
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def _ss_bary(xh):
    return np.stack([1.0 - xh[:, 0], xh[:, 0] - xh[:, 1], xh[:, 1]], axis=1)


def _alignment(triangles, ta, tb, tag):
    """Local vertex orders putting shared vertices first, in matching order."""
    A = triangles[ta]
    B = triangles[tb]
    p = len(ta)
    pa = np.tile(np.arange(3), (p, 1))
    pb = np.tile(np.arange(3), (p, 1))
    if tag == COINCIDENT:
        return pa, pb
    match = A[:, :, None] == B[:, None, :]  # (P, 3a, 3b)
    in_b = match.any(axis=2)
    if tag == EDGE_ADJACENT:
        for i in range(p):
            sa = np.flatnonzero(in_b[i])
            oa = np.flatnonzero(~in_b[i])[0]
            sb = [int(np.flatnonzero(match[i, k])[0]) for k in sa]
            ob = 3 - sb[0] - sb[1]
            pa[i] = [sa[0], sa[1], oa]
            pb[i] = [sb[0], sb[1], ob]
    else:
        for i in range(p):
            ka = int(np.flatnonzero(in_b[i])[0])
            kb = int(np.flatnonzero(match[i, ka])[0])
            pa[i] = [ka, (ka + 1) % 3, (ka + 2) % 3]
            pb[i] = [kb, (kb + 1) % 3, (kb + 2) % 3]
    return pa, pb


def singular_nodes(triangles, areas, ta, tb, tag, n=None):
    """Barycentrics on each panel (own vertex order) and weights incl. Jacobians.

    Returns lam_a (P, Q, 3), lam_b (P, Q, 3), w (P, Q).
    """
    xh, yh, w = sauter_schwab(tag, n)
    la_ref, lb_ref = _ss_bary(xh), _ss_bary(yh)
    pa, pb = _alignment(triangles, np.asarray(ta), np.asarray(tb), tag)
    p = len(pa)
    lam_a = np.empty((p, len(w), 3))
    lam_b = np.empty((p, len(w), 3))
    rows = np.arange(p)[:, None]
    lam_a[rows, :, pa] = la_ref.T[None, :, :].repeat(p, 0)
    lam_b[rows, :, pb] = lb_ref.T[None, :, :].repeat(p, 0)
    wt = 4.0 * (areas[ta] * areas[tb])[:, None] * w[None, :]
    return lam_a, lam_b, wt


def regular_nodes(areas, ta, tb, order_a, order_b=None):
    qa = gauss_triangle(order_a)
    qb = gauss_triangle(order_b or order_a)
    na, nb = len(qa.weights), len(qb.weights)
    la = np.repeat(qa.bary, nb, axis=0)
    lb = np.tile(qb.bary, (na, 1))
    w = np.outer(qa.weights, qb.weights).reshape(-1)
    p = len(ta)
    wt = 4.0 * (areas[ta] * areas[tb])[:, None] * w[None, :]
    return np.broadcast_to(la, (p,) + la.shape), np.broadcast_to(lb, (p,) + lb.shape), wt


# -- kernels --------------------------------------------------------------------

def kernel_values(kernel: str, x, y, nx=None, ny=None, *, guard: float | None = None):
    d = x - y
    r = np.sqrt(np.einsum("...c,...c->...", d, d))
    if guard is not None and np.any(r < guard):
        raise RuntimeError("kernel evaluated at coincident points in a regular rule")
    if kernel == "SingleLayer":
        return 1.0 / (FOUR_PI * r)
    if kernel == "DoubleLayerNy":
        # grad G evaluated at x - y, dotted with n(y)
        return -np.einsum("...c,...c->...", d, ny) / (FOUR_PI * r**3)
    if kernel == "DoubleLayerNx":
        return -np.einsum("...c,...c->...", d, nx) / (FOUR_PI * r**3)
    raise ValueError(f"unknown kernel {kernel!r}")


def integrate_kernel_pair(ta: int, tb: int, fa, fb, kernel: str, mesh, order: int | None = None,
                          n_singular: int | None = None) -> float:
    """Double integral of fa(x) k(x, y) fb(y) over panels ta (x) and tb (y).

    fa, fb are nodal values at the panels' own vertices (linear shape functions).
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if ta > tb:
        # each unordered pair is evaluated in one orientation only; swapping x and y
        # flips the sign of grad G and exchanges which normal is used
        swapped = {"SingleLayer": ("SingleLayer", 1.0), "DoubleLayerNy": ("DoubleLayerNx", -1.0),
                   "DoubleLayerNx": ("DoubleLayerNy", -1.0)}[kernel]
        return swapped[1] * integrate_kernel_pair(tb, ta, fb, fa, swapped[0], mesh, order, n_singular)
    cls = classify_pair(ta, tb, mesh)
    if cls.tag == COINCIDENT and kernel != "SingleLayer":
        return 0.0  # flat panel: x - y is orthogonal to the normal
    ta_, tb_ = np.array([ta]), np.array([tb])
    if cls.tag == SEPARATED:
        if order is None:
            d = np.linalg.norm(mesh.centroids[ta] - mesh.centroids[tb])
            order = int(separated_order(d, max(mesh.diameters[ta], mesh.diameters[tb])))
        la, lb, w = regular_nodes(mesh.areas, ta_, tb_, order)
        guard = 1e-14 * mesh.scale
    else:
        la, lb, w = singular_nodes(mesh.triangles, mesh.areas, ta_, tb_, cls.tag, n_singular)
        guard = None
    x = np.einsum("pqk,kc->pqc", la, mesh.corners[ta])
    y = np.einsum("pqk,kc->pqc", lb, mesh.corners[tb])
    k = kernel_values(kernel, x, y, mesh.normals[ta], mesh.normals[tb], guard=guard)
    fa, fb = np.asarray(fa, float), np.asarray(fb, float)
    if cls.tag == COINCIDENT:
        # symmetric local matrix and an order-free sum keep (fa, fb) <-> (fb, fa) bitwise equal
        local = np.einsum("pq,pqi,pqj->ij", w * k, la, lb)
        local = 0.5 * (local + local.T)
        return math.fsum((local * np.outer(fa, fb)).ravel())
    return float(np.sum(w * k * (la @ fa) * (lb @ fb)))
