"""Galerkin matrices of the boundary integral operators.

Every panel pair is integrated once. Per ordered pair (x-panel, y-panel) we
keep two small tables from which all blocks are contracted:

    S[x, y, k, l] = int int G(x - y) lam_k(x) mu_l(y)
    R[x, y, l, :] = int int (grad G)(x - y) mu_l(y)

with lam, mu the barycentrics of the two panels. The swapped pair follows
from S[y, x] = S[x, y].T and R[y, x, k] = -int int (grad G)(x - y) lam_k(x).
"""
from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .quadrature import (COINCIDENT, EDGE_ADJACENT, FOUR_PI, VERTEX_ADJACENT, adjacency,
                         regular_nodes, separated_order, singular_nodes, singular_points)
from .spaces import (Rotation, TraceR, TraceSpaceSet, TraceT, curl_p1_to_rwg, rotate,
                     scalar_curl_rotrwg, surf_div_rwg)

R_SPACES = ("p0", "rwg", "p1")      # H_R coefficient layout
T_SPACES = ("p1", "rot_rwg", "p0")  # H_T coefficient layout

_CHUNK_NODES = 1_500_000


@dataclass
class OperatorBlock:
    matrix: np.ndarray
    row_space: tuple[str, ...]
    col_space: tuple[str, ...]
    kind: str
    row_dims: tuple[int, ...] = field(default=())
    col_dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.row_dims:
            self.row_dims = (self.matrix.shape[0],)
        if not self.col_dims:
            self.col_dims = (self.matrix.shape[1],)
        if (sum(self.row_dims), sum(self.col_dims)) != self.matrix.shape:
            raise ValueError(f"{self.kind}: matrix shape {self.matrix.shape} does not match "
                             f"space dims {self.row_dims} x {self.col_dims}")

    @property
    def shape(self):
        return self.matrix.shape

    def block(self, i: int, j: int) -> np.ndarray:
        r = np.cumsum((0,) + self.row_dims)
        c = np.cumsum((0,) + self.col_dims)
        return self.matrix[r[i]:r[i + 1], c[j]:c[j + 1]]

    def symmetry_error(self) -> float:
        a = self.matrix
        return float(np.linalg.norm(a - a.T) / np.linalg.norm(a))

    def export(self, prefix, mesh=None) -> tuple[Path, Path]:
        """Write `<prefix>.csv` (row-major) and `<prefix>.json` (header)."""
        prefix = Path(prefix)
        csv_path = prefix.with_suffix(".csv")
        json_path = prefix.with_suffix(".json")
        np.savetxt(csv_path, self.matrix, delimiter=",", fmt="%.17g")
        header = {"kind": self.kind, "shape": list(self.shape),
                  "row_space": list(self.row_space), "col_space": list(self.col_space),
                  "row_dims": list(self.row_dims), "col_dims": list(self.col_dims),
                  "mesh_hash": mesh.digest() if mesh is not None else None,
                  "version": __version__}
        json_path.write_text(json.dumps(header, indent=2, sort_keys=True))
        return csv_path, json_path


# -- panel-pair tables ----------------------------------------------------------

class PanelPairTables:
    """S and R tables for all ordered panel pairs of a mesh."""

    def __init__(self, mesh, n_singular: int | None = None):
        self.mesh = mesh
        self.n_singular = n_singular
        f = mesh.n_triangles
        self.S = np.zeros((f, f, 3, 3))
        self.R = np.zeros((f, f, 3, 3))
        self._fill()

    def _fill(self):
        m = self.mesh
        f = m.n_triangles
        tris, areas = m.triangles, m.areas
        edge, vert = adjacency(tris, m.n_vertices)
        # Each unordered pair is integrated in one orientation. Choosing it by the
        # sorted vertex triples, not by triangle index, makes the quadrature
        # independent of the order in which triangles are listed.
        key = np.empty(f, dtype=np.int64)
        key[np.lexsort(np.sort(tris, axis=1).T[::-1])] = np.arange(f)

        def canonical(a, b):
            swap = key[a] > key[b]
            return np.where(swap, b, a), np.where(swap, a, b)

        self_pairs = np.arange(f)
        self._singular(self_pairs, self_pairs, COINCIDENT)
        self._singular(*canonical(edge[:, 0], edge[:, 1]), EDGE_ADJACENT)
        self._singular(*canonical(vert[:, 0], vert[:, 1]), VERTEX_ADJACENT)

        ia, ib = np.triu_indices(f, 1)
        adj = np.concatenate([edge[:, 0] * f + edge[:, 1], vert[:, 0] * f + vert[:, 1]])
        keep = ~np.isin(ia * f + ib, adj)
        ia, ib = ia[keep], ib[keep]
        dist = np.linalg.norm(m.centroids[ia] - m.centroids[ib], axis=1)
        order = separated_order(dist, np.maximum(m.diameters[ia], m.diameters[ib]))
        ia, ib = canonical(ia, ib)
        for o in np.unique(order):
            sel = order == o
            self._regular(ia[sel], ib[sel], int(o))

    def _chunks(self, n_pairs, nodes_per_pair):
        step = max(1, _CHUNK_NODES // nodes_per_pair)
        for s in range(0, n_pairs, step):
            yield slice(s, min(s + step, n_pairs))

    def _singular(self, ta, tb, tag):
        m = self.mesh
        n = singular_points(tag, self.n_singular)
        nq = (6 if tag == COINCIDENT else 5 if tag == EDGE_ADJACENT else 2) * n**4
        for sl in self._chunks(len(ta), nq):
            la, lb, w = singular_nodes(m.triangles, m.areas, ta[sl], tb[sl], tag, self.n_singular)
            self._accumulate(ta[sl], tb[sl], la, lb, w, coincident=(tag == COINCIDENT))

    def _regular(self, ta, tb, order):
        m = self.mesh
        for sl in self._chunks(len(ta), 144):
            la, lb, w = regular_nodes(m.areas, ta[sl], tb[sl], order)
            self._accumulate(ta[sl], tb[sl], la, lb, w, guard=1e-14 * m.scale)

    def _accumulate(self, ta, tb, la, lb, w, coincident=False, guard=None):
        p = self.mesh.corners
        x = np.einsum("pqk,pkc->pqc", la, p[ta])
        y = np.einsum("pqk,pkc->pqc", lb, p[tb])
        d = x - y
        r = np.sqrt(np.einsum("pqc,pqc->pq", d, d))
        if guard is not None and r.min() < guard:
            raise RuntimeError("coincident quadrature points in a separated panel pair")
        g = w / (FOUR_PI * r)
        s = np.einsum("pq,pqk,pql->pkl", g, la, lb)
        if coincident:
            s = 0.5 * (s + s.transpose(0, 2, 1))
            self.S[ta, tb] = s
            # flat panel: (grad G)(x - y) only ever meets in-plane factors that
            # vanish against it in every contraction used below
            return
        gx = -d * (g / (r * r))[..., None]
        ry = np.einsum("pqc,pql->plc", gx, lb)
        rx = np.einsum("pqc,pqk->pkc", gx, la)
        self.S[ta, tb] = s
        self.S[tb, ta] = s.transpose(0, 2, 1)
        self.R[ta, tb] = ry
        self.R[tb, ta] = -rx


# -- operator set -------------------------------------------------------------------

class OperatorSet:
    """Lazily assembled blocks for one TraceSpaceSet."""

    def __init__(self, spaces: TraceSpaceSet, n_singular: int | None = None):
        self.spaces = spaces
        self.mesh = spaces.mesh
        self.n_singular = n_singular

    @cached_property
    def tables(self) -> PanelPairTables:
        return PanelPairTables(self.mesh, self.n_singular)

    # local-to-global maps, rows indexed by (panel, local vertex)
    @cached_property
    def p1_map(self) -> sp.csr_matrix:
        m = self.mesh
        f = m.n_triangles
        return sp.csr_matrix((np.ones(3 * f), (np.arange(3 * f), m.triangles.reshape(-1))),
                             shape=(3 * f, m.n_vertices))

    @cached_property
    def p0_map(self) -> sp.csr_matrix:
        f = self.mesh.n_triangles
        return sp.csr_matrix((np.ones(3 * f), (np.arange(3 * f), np.repeat(np.arange(f), 3))),
                             shape=(3 * f, f))

    @cached_property
    def rwg_map(self) -> sp.csr_matrix:
        s = self.spaces
        f = self.mesh.n_triangles
        dof = s.tri_rwg.reshape(-1)
        keep = dof >= 0
        return sp.csr_matrix((s.tri_rwg_coef.reshape(-1)[keep], (np.arange(3 * f)[keep], dof[keep])),
                             shape=(3 * f, s.dims["rwg"]))

    @cached_property
    def _dx(self) -> np.ndarray:
        """(F, 3, 3, 3): X_k - X_a on each panel."""
        p = self.mesh.corners
        return p[:, :, None, :] - p[:, None, :, :]

    def _galerkin(self, local, rmap, cmap) -> np.ndarray:
        f = self.mesh.n_triangles
        l2 = local.transpose(0, 2, 1, 3).reshape(3 * f, 3 * f)
        left = np.asarray(rmap.T @ l2)
        return np.asarray((cmap.T @ left.T).T)

    def _by_rows(self, fn, out_shape=(3, 3)) -> np.ndarray:
        f = self.mesh.n_triangles
        out = np.empty((f, f) + out_shape)
        for s in range(0, f, 64):
            out[s:s + 64] = fn(slice(s, min(s + 64, f)))
        return out

    # single-layer Grams
    @cached_property
    def V00(self) -> np.ndarray:
        return self.tables.S.sum(axis=(2, 3))

    @cached_property
    def V11(self) -> np.ndarray:
        return self._galerkin(self.tables.S, self.p1_map, self.p1_map)

    @cached_property
    def V01(self) -> np.ndarray:
        return self._galerkin(self.tables.S, self.p0_map, self.p1_map)

    @cached_property
    def _tangent_local(self) -> np.ndarray:
        S, dx = self.tables.S, self._dx
        return self._by_rows(lambda r: np.einsum("xykl,xkac,ylbc->xyab", S[r], dx[r], dx,
                                                 optimize=True))

    @cached_property
    def Vvec(self) -> np.ndarray:
        """int int G f_i(x) . f_j(y) on rwg."""
        return self._galerkin(self._tangent_local, self.rwg_map, self.rwg_map)

    @cached_property
    def Vvec_mixed(self) -> np.ndarray:
        """int int G (n(x) x f_i(x)) . (n(y) x f_j(y)) on rwg."""
        S, dx, n = self.tables.S, self._dx, self.mesh.normals
        nn = n @ n.T

        def rows(r):
            a = np.einsum("xc,ylbc->xylb", n[r], dx)      # n(x) . (Y_l - Y_b)
            b = np.einsum("xkac,yc->xyka", dx[r], n)      # (X_k - X_a) . n(y)
            t2 = np.einsum("xykl,xyka,xylb->xyab", S[r], b, a, optimize=True)
            return nn[r][:, :, None, None] * self._tangent_local[r] - t2

        return self._galerkin(self._by_rows(rows), self.rwg_map, self.rwg_map)

    # second-kind blocks
    @cached_property
    def K01(self) -> np.ndarray:
        """(F, V): int_{T_t} int mu_v(y) (grad G)(x - y) . n(y)."""
        d = np.einsum("xylc,yc->xyl", self.tables.R, self.mesh.normals)
        f = self.mesh.n_triangles
        return np.asarray((self.p1_map.T @ d.reshape(f, 3 * f).T).T)

    @cached_property
    def K10p(self) -> np.ndarray:
        """(V, F): int lam_v(x) (grad G)(x - y) . n(x) over T_t in y."""
        f = self.mesh.n_triangles
        d = -np.einsum("yxkc,xc->xky", self.tables.R, self.mesh.normals)
        return np.asarray(self.p1_map.T @ d.reshape(3 * f, f))

    @cached_property
    def Mx(self) -> np.ndarray:
        """(E, E): int int (grad G)(x - y) . (f_j(y) x f_i(x)).

        With f_a(x) = c_a (x - X_a) the integrand reduces to
        c_a c_b (Y_b - X_a) . ((grad G)(x - y) x (y - Y_b)).
        """
        R, dx, p = self.tables.R, self._dx, self.mesh.corners

        def rows(r):
            w = np.cross(R[r][:, :, :, None, :], dx[None, :, :, :, :]).sum(axis=2)  # (x,y,b,c)
            yb = np.einsum("ybc,xybc->xyb", p, w)
            xa = np.einsum("xac,xybc->xyab", p[r], w)
            return yb[:, :, None, :] - xa

        return self._galerkin(self._by_rows(rows), self.rwg_map, self.rwg_map)

    @cached_property
    def N(self) -> np.ndarray:
        """(V, V): int int G mu_w(y) n(y) . curl_G lam_v(x)."""
        s1 = self.tables.S.sum(axis=2)  # (x, y, l)
        cn = np.einsum("xkc,yc->xyk", self.spaces.curl_local, self.mesh.normals)
        local = cn[:, :, :, None] * s1[:, :, None, :]
        return self._galerkin(local, self.p1_map, self.p1_map)

    # differential maps
    @cached_property
    def div(self) -> sp.csr_matrix:
        return surf_div_rwg(self.spaces)

    @cached_property
    def curl(self) -> sp.csr_matrix:
        return curl_p1_to_rwg(self.spaces)

    # first-kind operators
    @cached_property
    def BT(self) -> OperatorBlock:
        s = self.spaces
        vd = np.asarray(self.div.T @ self.V00).T        # V00 Div, (F, E)
        vc = np.asarray((self.curl.T @ self.Vvec.T).T)  # Vvec C, (E, V)
        f, e, v = s.dims["p0"], s.dims["rwg"], s.dims["p1"]
        m = np.block([[np.zeros((f, f)), -vd, np.zeros((f, v))],
                      [-vd.T, np.zeros((e, e)), vc],
                      [np.zeros((v, f)), vc.T, np.zeros((v, v))]])
        d = (f, e, v)
        return OperatorBlock(m, R_SPACES, R_SPACES, "B_T", d, d)

    @cached_property
    def BR(self) -> OperatorBlock:
        s = self.spaces
        vd = np.asarray(scalar_curl_rotrwg(s).T @ self.V00).T  # V00 curl_G on rot_rwg, (F, E)
        vc = np.asarray((self.curl.T @ self.Vvec.T).T)
        f, e, v = s.dims["p0"], s.dims["rwg"], s.dims["p1"]
        m = np.block([[np.zeros((v, v)), vc.T, np.zeros((v, f))],
                      [vc, np.zeros((e, e)), vd.T],
                      [np.zeros((f, v)), vd, np.zeros((f, f))]])
        d = (v, e, f)
        return OperatorBlock(m, T_SPACES, T_SPACES, "B_R", d, d)

    # averaged traces of the potentials, tested in the dual space
    @cached_property
    def trace_R_of_LT(self) -> OperatorBlock:
        """H_R -> H_T-dual: d . {gamma_R} L_T(a)."""
        s = self.spaces
        f, e, v = s.dims["p0"], s.dims["rwg"], s.dims["p1"]
        m = np.block([[self.K10p, np.zeros((v, e)), self.N],
                      [np.zeros((e, f)), -self.Mx, np.zeros((e, v))],
                      [np.zeros((f, f)), np.zeros((f, e)), self.K01]])
        return OperatorBlock(m, T_SPACES, R_SPACES, "avg_gammaR_LT", (v, e, f), (f, e, v))

    @cached_property
    def trace_T_of_LR(self) -> OperatorBlock:
        """H_T -> H_R-dual: c . {gamma_T} L_R(b)."""
        s = self.spaces
        f, e, v = s.dims["p0"], s.dims["rwg"], s.dims["p1"]
        m = np.block([[self.K01, np.zeros((f, e)), np.zeros((f, f))],
                      [np.zeros((e, v)), self.Mx, np.zeros((e, f))],
                      [-self.N, np.zeros((v, e)), self.K10p]])
        return OperatorBlock(m, R_SPACES, T_SPACES, "avg_gammaT_LR", (f, e, v), (v, e, f))

    @cached_property
    def mass(self) -> OperatorBlock:
        """L2 duality pairing; rows H_T test functions, columns H_R coefficients."""
        s = self.spaces
        m10 = s.pairing_p1_p0()
        mx = s.pairing_rot_rwg()
        mat = sp.block_diag([m10, mx, m10.T]).toarray()
        f, e, v = s.dims["p0"], s.dims["rwg"], s.dims["p1"]
        return OperatorBlock(mat, T_SPACES, R_SPACES, "duality", (v, e, f), (f, e, v))

    @cached_property
    def xi(self) -> sp.csr_matrix:
        """Coefficient matrix of the relabelling H_T -> H_R."""
        s = self.spaces
        f, e, v = s.dims["p0"], s.dims["rwg"], s.dims["p1"]
        return sp.bmat([[None, None, -sp.identity(f)],
                        [None, -rotate(s, Rotation.ROT_TO_RWG), None],
                        [sp.identity(v), None, None]], format="csr")


_CACHE: "weakref.WeakKeyDictionary[TraceSpaceSet, OperatorSet]" = weakref.WeakKeyDictionary()


def operator_set(spaces: TraceSpaceSet) -> OperatorSet:
    ops = _CACHE.get(spaces)
    if ops is None:
        ops = _CACHE[spaces] = OperatorSet(spaces)
    return ops


# -- public assembly API ----------------------------------------------------------

def assemble_slp_scalar(spaces: TraceSpaceSet, density_space: str = "p0",
                        test_space: str | None = None) -> OperatorBlock:
    """Single-layer Gram int int G u_i(x) v_j(y) for scalar spaces p0 / p1."""
    test_space = test_space or density_space
    ops = operator_set(spaces)
    mats = {("p0", "p0"): lambda: ops.V00, ("p1", "p1"): lambda: ops.V11,
            ("p0", "p1"): lambda: ops.V01, ("p1", "p0"): lambda: ops.V01.T}
    key = (test_space, density_space)
    if key not in mats:
        raise ValueError(f"unsupported space pair {key}")
    return OperatorBlock(np.array(mats[key]()), (test_space,), (density_space,), "slp_scalar")


def assemble_slp_tangential(spaces: TraceSpaceSet, variant: str = "T",
                            space: str = "rwg") -> OperatorBlock:
    """Tangential single-layer Gram.

    variant T: int int G u(x) . v(y); variant R: int int G (n x u)(x) . (n x v)(y).
    `space` is rwg or rot_rwg; since n x (n x f) = -f, R on rot_rwg equals T on
    rwg and T on rot_rwg equals R on rwg.
    """
    if variant not in ("T", "R") or space not in ("rwg", "rot_rwg"):
        raise ValueError(f"unsupported tangential Gram {variant!r} on {space!r}")
    ops = operator_set(spaces)
    plain = (variant == "T") == (space == "rwg")
    mat = ops.Vvec if plain else ops.Vvec_mixed
    return OperatorBlock(np.array(mat), (space,), (space,), f"slp_tangential_{variant}")


def assemble_BT(spaces: TraceSpaceSet) -> OperatorBlock:
    return operator_set(spaces).BT


def assemble_BR(spaces: TraceSpaceSet) -> OperatorBlock:
    return operator_set(spaces).BR


def assemble_rhs_blocks(spaces: TraceSpaceSet) -> dict[str, OperatorBlock]:
    ops = operator_set(spaces)
    return {
        "K": OperatorBlock(ops.K01, ("p0",), ("p1",), "double_layer"),
        "K'": OperatorBlock(ops.K10p, ("p1",), ("p0",), "adjoint_double_layer"),
        "C": OperatorBlock(ops.Mx, ("rwg",), ("rwg",), "maxwell_double_layer"),
        "N": OperatorBlock(ops.N, ("p1",), ("p1",), "curl_normal_single_layer"),
        "avg_gammaR_LT": ops.trace_R_of_LT,
        "avg_gammaT_LR": ops.trace_T_of_LR,
    }


def assemble_duality_mass(spaces: TraceSpaceSet) -> OperatorBlock:
    return operator_set(spaces).mass


def xi_map(spaces: TraceSpaceSet, b: TraceT) -> TraceR:
    """(b0, b1, b2) -> (-b2, b1 x n, b0)."""
    return TraceR(-b.b2, -(rotate(spaces, Rotation.ROT_TO_RWG) @ b.b1), b.b0.copy())


def xi_inverse(spaces: TraceSpaceSet, a: TraceR) -> TraceT:
    """Inverse of xi_map: (a0, a1, a2) -> (a2, n x a1, -a0)."""
    return TraceT(a.a2.copy(), rotate(spaces, Rotation.RWG_TO_ROT) @ a.a1, -a.a0)
