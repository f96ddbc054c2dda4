"""Discrete trace spaces and the surface differential operators between them.

p0       piecewise constants, one DOF per triangle
p1       continuous piecewise linears, one DOF per vertex
rwg      lowest-order div-conforming edge functions, one DOF per interior edge
rot_rwg  n x (rwg basis function), tangentially continuous

On triangle T with local vertex k opposite the edge, the rwg function reads
s * l / (2 A) * (x - X_k), with s = +1 on the plus triangle and -1 on the
minus triangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import SurfaceMesh
from .quadrature import gauss_triangle


class Rotation(Enum):
    RWG_TO_ROT = "RWGtoRot"
    ROT_TO_RWG = "RotToRWG"


class TraceSpaceSet:
    def __init__(self, mesh: SurfaceMesh):
        self.mesh = mesh
        interior = np.all(mesh.edge_triangles >= 0, axis=1)
        self.rwg_edges = np.flatnonzero(interior)
        dof = np.full(mesh.n_edges, -1)
        dof[self.rwg_edges] = np.arange(len(self.rwg_edges))
        self.tri_rwg = dof[mesh.triangle_edges]  # (F, 3), -1 on boundary edges
        ell = mesh.edge_lengths[mesh.triangle_edges]
        self.tri_rwg_coef = mesh.triangle_edge_signs * ell / (2.0 * mesh.areas[:, None])

    @property
    def dims(self) -> dict[str, int]:
        return {"p0": self.mesh.n_triangles, "p1": self.mesh.n_vertices,
                "rwg": len(self.rwg_edges), "rot_rwg": len(self.rwg_edges)}

    @property
    def dim_R(self) -> int:
        d = self.dims
        return d["p0"] + d["rwg"] + d["p1"]

    @property
    def dim_T(self) -> int:
        d = self.dims
        return d["p1"] + d["rot_rwg"] + d["p0"]

    # -- local shape data -------------------------------------------------
    @cached_property
    def grad_local(self) -> np.ndarray:
        """(F, 3, 3): surface gradient of barycentric k on triangle t."""
        m = self.mesh
        p = m.corners
        g = np.empty_like(p)
        for k in range(3):
            e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
            g[:, k] = np.cross(m.normals, e) / (2.0 * m.areas[:, None])
        return g

    @cached_property
    def curl_local(self) -> np.ndarray:
        """(F, 3, 3): curl_G of barycentric k, i.e. grad x n."""
        return np.cross(self.grad_local, self.mesh.normals[:, None, :])

    def _local_map(self, local) -> sp.csr_matrix:
        m = self.mesh
        f = m.n_triangles
        rows = (np.arange(f)[:, None, None] * 3 + np.arange(3)[None, None, :]).repeat(3, 1)
        cols = np.broadcast_to(m.triangles[:, :, None], (f, 3, 3))
        return sp.csr_matrix((local.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
                             shape=(3 * f, m.n_vertices))

    # -- evaluation -------------------------------------------------------
    def eval_p1(self, coef, tri, bary) -> np.ndarray:
        return np.einsum("...k,...k->...", np.asarray(coef)[self.mesh.triangles[tri]], bary)

    def eval_rwg(self, coef, tri, bary) -> np.ndarray:
        """Vector value of an rwg expansion at barycentric points of triangles `tri`."""
        m = self.mesh
        tri = np.asarray(tri)
        p = m.corners[tri]
        x = np.einsum("...k,...kc->...c", bary, p)
        dof = self.tri_rwg[tri]
        c = np.where(dof >= 0, np.asarray(coef)[np.maximum(dof, 0)], 0.0) * self.tri_rwg_coef[tri]
        return np.einsum("...k,...kc->...c", c, x[..., None, :] - p)

    def eval_rot_rwg(self, coef, tri, bary) -> np.ndarray:
        n = self.mesh.normals[np.asarray(tri)]
        return np.cross(n, self.eval_rwg(coef, tri, bary))

    # -- projections of analytic data ------------------------------------
    def interpolate_p1(self, fn) -> np.ndarray:
        return np.asarray(fn(self.mesh.vertices), dtype=float)

    def project_p0(self, fn, order: int = 4) -> np.ndarray:
        """L2 projection (panel means); `fn(points, normals)`."""
        m = self.mesh
        q = gauss_triangle(order)
        x = np.einsum("qk,fkc->fqc", q.bary, m.corners)
        n = np.broadcast_to(m.normals[:, None, :], x.shape)
        vals = np.asarray(fn(x, n), dtype=float)
        return 2.0 * (vals * q.weights).sum(axis=1)

    def _tangent_load(self, fn, rotated: bool, order: int) -> np.ndarray:
        m = self.mesh
        q = gauss_triangle(order)
        x = np.einsum("qk,fkc->fqc", q.bary, m.corners)
        n = np.broadcast_to(m.normals[:, None, :], x.shape)
        u = np.asarray(fn(x, n), dtype=float)  # (F, Q, 3)
        p = m.corners
        basis = self.tri_rwg_coef[:, None, :, None] * (x[:, :, None, :] - p[:, None, :, :])
        if rotated:
            basis = np.cross(n[:, :, None, :], basis)
        loc = 2.0 * m.areas[:, None] * np.einsum("fqc,fqkc,q->fk", u, basis, q.weights)
        mask = self.tri_rwg >= 0
        return np.bincount(self.tri_rwg[mask], weights=loc[mask], minlength=self.dims["rwg"])

    def project_rwg(self, fn, order: int = 4) -> np.ndarray:
        """L2 projection of a tangential field `fn(points, normals)` onto rwg."""
        return self._gram_rwg_lu.solve(self._tangent_load(fn, False, order))

    def project_rot_rwg(self, fn, order: int = 4) -> np.ndarray:
        return self._gram_rwg_lu.solve(self._tangent_load(fn, True, order))

    @cached_property
    def _gram_rwg_lu(self):
        return splu(self.gram("rwg").tocsc())

    # -- L2 Gram and pairing matrices -------------------------------------
    def gram(self, space: str) -> sp.csr_matrix:
        m = self.mesh
        if space == "p0":
            return sp.diags(m.areas).tocsr()
        if space == "p1":
            loc = m.areas[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
            return _scatter(loc, m.triangles, m.triangles, (m.n_vertices, m.n_vertices))
        if space in ("rwg", "rot_rwg"):
            # |n x f| = |f| for tangential f, so both spaces share the Gram
            q = gauss_triangle(2)
            x = np.einsum("qk,fkc->fqc", q.bary, m.corners)
            d = x[:, :, None, :] - m.corners[:, None, :, :]
            loc = 2.0 * m.areas[:, None, None] * np.einsum("fqac,fqbc,q->fab", d, d, q.weights)
            loc *= self.tri_rwg_coef[:, :, None] * self.tri_rwg_coef[:, None, :]
            return _scatter_dofs(loc, self.tri_rwg, self.tri_rwg, self.dims["rwg"], self.dims["rwg"])
        raise ValueError(f"unknown space {space!r}")

    def pairing_p1_p0(self) -> sp.csr_matrix:
        """(V, F): integral of hat function times panel indicator."""
        m = self.mesh
        rows = m.triangles.reshape(-1)
        cols = np.repeat(np.arange(m.n_triangles), 3)
        vals = np.repeat(m.areas / 3.0, 3)
        return sp.csr_matrix((vals, (rows, cols)), shape=(m.n_vertices, m.n_triangles))

    def pairing_rot_rwg(self) -> sp.csr_matrix:
        """(E, E): entry (i, j) is the integral of (n x f_i) . f_j; antisymmetric."""
        m = self.mesh
        p = m.corners
        c = m.centroids
        d = c[:, None, :] - p  # (F, 3, 3): centroid minus local vertex
        cr = np.cross(d[:, :, None, :], d[:, None, :, :])
        loc = m.areas[:, None, None] * np.einsum("fc,fabc->fab", m.normals, cr)
        loc *= self.tri_rwg_coef[:, :, None] * self.tri_rwg_coef[:, None, :]
        return _scatter_dofs(loc, self.tri_rwg, self.tri_rwg, self.dims["rwg"], self.dims["rwg"])


def _scatter(loc, rows_idx, cols_idx, shape) -> sp.csr_matrix:
    f = loc.shape[0]
    r = np.broadcast_to(rows_idx[:, :, None], (f, 3, 3)).reshape(-1)
    c = np.broadcast_to(cols_idx[:, None, :], (f, 3, 3)).reshape(-1)
    return sp.csr_matrix((loc.reshape(-1), (r, c)), shape=shape)


def _scatter_dofs(loc, rdof, cdof, nr, nc) -> sp.csr_matrix:
    f = loc.shape[0]
    r = np.broadcast_to(rdof[:, :, None], (f, 3, 3)).reshape(-1)
    c = np.broadcast_to(cdof[:, None, :], (f, 3, 3)).reshape(-1)
    keep = (r >= 0) & (c >= 0)
    return sp.csr_matrix((loc.reshape(-1)[keep], (r[keep], c[keep])), shape=(nr, nc))


# -- surface differential operators -----------------------------------------

def surf_div_rwg(spaces: TraceSpaceSet) -> sp.csr_matrix:
    """rwg -> p0. Value +l/A on the plus triangle and -l/A on the minus one."""
    m = spaces.mesh
    mask = spaces.tri_rwg >= 0
    rows = np.broadcast_to(np.arange(m.n_triangles)[:, None], mask.shape)[mask]
    vals = (2.0 * spaces.tri_rwg_coef)[mask]
    return sp.csr_matrix((vals, (rows, spaces.tri_rwg[mask])),
                         shape=(m.n_triangles, spaces.dims["rwg"]))


def surf_grad_p1(spaces: TraceSpaceSet) -> sp.csr_matrix:
    """p1 -> per-triangle constant vectors; row 3*t + c holds component c on t."""
    return spaces._local_map(spaces.grad_local)


def surf_curl_p1(spaces: TraceSpaceSet) -> sp.csr_matrix:
    """p1 -> per-triangle constant vectors grad_G(xi) x n."""
    return spaces._local_map(spaces.curl_local)


def curl_p1_to_rwg(spaces: TraceSpaceSet) -> sp.csr_matrix:
    """Exact rwg coefficients of curl_G of each hat function.

    The rwg coefficient of a field is its normal flux density across the edge
    (outward from the plus triangle); for grad(xi) x n that equals the
    tangential derivative of xi along the low->high edge direction.
    """
    m = spaces.mesh
    e = m.edges[spaces.rwg_edges]
    inv_len = 1.0 / m.edge_lengths[spaces.rwg_edges]
    n = len(e)
    rows = np.concatenate([np.arange(n), np.arange(n)])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    vals = np.concatenate([inv_len, -inv_len])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, m.n_vertices))


def rotate(spaces: TraceSpaceSet, direction: Rotation | str) -> sp.csr_matrix:
    """Coefficient map of v -> n x v between rwg and rot_rwg.

    rot_rwg basis functions are n x f_i, so rotating an rwg field keeps its
    coefficients; rotating a rot_rwg field gives n x (n x f) = -f.
    """
    direction = Rotation(direction)
    n = spaces.dims["rwg"]
    sign = 1.0 if direction is Rotation.RWG_TO_ROT else -1.0
    return sp.identity(n, format="csr") * sign


def scalar_curl_rotrwg(spaces: TraceSpaceSet) -> sp.csr_matrix:
    """rot_rwg -> p0, curl_G(d) = div_G(d x n).

    d x n = -(n x d), so this is minus div composed with the rotation back to
    rwg; on the rotated basis n x f_i it returns div f_i.
    """
    return (-(surf_div_rwg(spaces) @ rotate(spaces, Rotation.ROT_TO_RWG))).tocsr()


# -- coefficient containers --------------------------------------------------

@dataclass
class TraceR:
    """Coefficients in H_R: (p0 density, rwg field, p1 function)."""
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.a0, self.a1, self.a2])

    @classmethod
    def from_vector(cls, spaces: TraceSpaceSet, v) -> "TraceR":
        d = spaces.dims
        f, e = d["p0"], d["rwg"]
        v = np.asarray(v, dtype=float)
        if len(v) != spaces.dim_R:
            raise ValueError("length does not match H_R dimension")
        return cls(v[:f].copy(), v[f:f + e].copy(), v[f + e:].copy())

    @classmethod
    def zeros(cls, spaces: TraceSpaceSet) -> "TraceR":
        return cls.from_vector(spaces, np.zeros(spaces.dim_R))


@dataclass
class TraceT:
    """Coefficients in H_T: (p1 function, rot_rwg field, p0 density)."""
    b0: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.b0, self.b1, self.b2])

    @classmethod
    def from_vector(cls, spaces: TraceSpaceSet, v) -> "TraceT":
        d = spaces.dims
        nv, e = d["p1"], d["rot_rwg"]
        v = np.asarray(v, dtype=float)
        if len(v) != spaces.dim_T:
            raise ValueError("length does not match H_T dimension")
        return cls(v[:nv].copy(), v[nv:nv + e].copy(), v[nv + e:].copy())

    @classmethod
    def zeros(cls, spaces: TraceSpaceSet) -> "TraceT":
        return cls.from_vector(spaces, np.zeros(spaces.dim_T))
