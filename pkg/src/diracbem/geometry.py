"""Closed triangulated surfaces: ingestion, validation, generators, topology.

Normals point out of the bounded region enclosed by each component.
Edges are stored with the lower vertex index first; the "plus" triangle of
an edge is the one that traverses it from low to high index.
"""
from __future__ import annotations

import hashlib
import re
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

DEDUP_REL_TOL = 1e-9


class MeshError(ValueError):
    """Raised for malformed, non-manifold or unorientable input."""


@dataclass(frozen=True)
class TopologyReport:
    beta0: int
    euler: int
    beta1: int
    beta2: int
    genus: tuple[int, ...]

    @property
    def betti(self) -> tuple[int, int, int]:
        return (self.beta0, self.beta1, self.beta2)

    @property
    def betti_sum(self) -> int:
        return self.beta0 + self.beta1 + self.beta2


class SurfaceMesh:
    """Oriented triangulated surface.

    Construction validates the connectivity, repairs the orientation so
    that shared edges are traversed in opposite directions, and flips each
    closed component so that its enclosed signed volume is positive.
    Instances are treated as immutable.
    """

    def __init__(self, vertices, triangles, *, closed: bool = True, repair: bool = True):
        vertices = np.array(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError("triangles must have shape (F, 3) with F > 0")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle index out of range")
        if np.any(triangles[:, 0] == triangles[:, 1]) or np.any(triangles[:, 1] == triangles[:, 2]) \
                or np.any(triangles[:, 0] == triangles[:, 2]):
            raise MeshError("triangle with repeated vertex")
        if len(np.unique(triangles)) != len(vertices):
            raise MeshError("mesh has unreferenced vertices")

        self.closed = closed
        self.vertices = vertices
        self.vertices.setflags(write=False)
        self._check_duplicates()
        tris = triangles.copy()
        tris = self._orient(tris, repair)
        self.triangles = tris
        self.triangles.setflags(write=False)
        if np.any(self.areas <= 1e-14 * self.scale**2):
            raise MeshError("degenerate triangle")

    # -- validation -----------------------------------------------------
    @property
    def scale(self) -> float:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def _check_duplicates(self):
        tree = cKDTree(self.vertices)
        if tree.query_pairs(DEDUP_REL_TOL * self.scale):
            raise MeshError("duplicate vertices within tolerance")

    def _edge_table(self, tris):
        # half-edges a->b for the three sides of each triangle
        a = tris.reshape(-1)
        b = tris[:, [1, 2, 0]].reshape(-1)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * len(self.vertices) + hi
        uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        if np.any(counts > 2) or (self.closed and np.any(counts != 2)):
            raise MeshError("non-manifold edge: every edge needs exactly two incident triangles"
                            if self.closed else "non-manifold edge")
        return uniq, inv, counts, (a < b)

    def _orient(self, tris, repair):
        uniq, inv, counts, forward = self._edge_table(tris)
        nf = len(tris)
        owner = np.repeat(np.arange(nf), 3)
        order = np.argsort(inv, kind="stable")
        # neighbours across each interior edge, with "same traversal" flag
        pairs = {}
        pos = 0
        for e, c in enumerate(counts):
            if c == 2:
                h0, h1 = order[pos], order[pos + 1]
                pairs.setdefault(owner[h0], []).append((owner[h1], forward[h0] == forward[h1]))
                pairs.setdefault(owner[h1], []).append((owner[h0], forward[h0] == forward[h1]))
            pos += c

        flip = np.full(nf, -1)
        comp = np.full(nf, -1)
        ncomp = 0
        for seed in range(nf):
            if flip[seed] >= 0:
                continue
            flip[seed] = 0
            comp[seed] = ncomp
            queue = deque([seed])
            while queue:
                t = queue.popleft()
                for s, same in pairs.get(t, ()):
                    want = flip[t] ^ int(same)
                    if flip[s] < 0:
                        flip[s] = want
                        comp[s] = ncomp
                        queue.append(s)
                    elif flip[s] != want:
                        raise MeshError("surface is not orientable")
            ncomp += 1

        if np.any(flip == 1) and not repair:
            raise MeshError("inconsistent triangle orientation")
        tris[flip == 1] = tris[flip == 1][:, [0, 2, 1]]

        if self.closed:
            v = self.vertices
            vol = np.einsum("ij,ij->i", v[tris[:, 0]], np.cross(v[tris[:, 1]], v[tris[:, 2]])) / 6.0
            for c in range(ncomp):
                sel = comp == c
                if vol[sel].sum() < 0:
                    if not repair:
                        raise MeshError("component oriented inward")
                    tris[sel] = tris[sel][:, [0, 2, 1]]
        return tris

    # -- derived geometry -----------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        p = self.corners
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.corners
        d = np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
        return d.max(axis=1)

    @cached_property
    def _edges(self):
        tris = self.triangles
        # local edge k is opposite local vertex k: (v[k+1], v[k+2])
        a = tris[:, [1, 2, 0]].reshape(-1)
        b = tris[:, [2, 0, 1]].reshape(-1)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * self.n_vertices + hi
        uniq, inv = np.unique(key, return_inverse=True)
        edges = np.stack([uniq // self.n_vertices, uniq % self.n_vertices], axis=1)
        plus = a < b
        owner = np.repeat(np.arange(self.n_triangles), 3)
        edge_tris = np.full((len(uniq), 2), -1, dtype=np.int64)
        edge_tris[inv[plus], 0] = owner[plus]
        edge_tris[inv[~plus], 1] = owner[~plus]
        tri_edges = inv.reshape(-1, 3)
        tri_signs = np.where(plus, 1.0, -1.0).reshape(-1, 3)
        return edges, edge_tris, tri_edges, tri_signs

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) vertex pairs, lower index first."""
        return self._edges[0]

    @property
    def edge_triangles(self) -> np.ndarray:
        """(E, 2) plus and minus triangle of each edge (-1 on a boundary)."""
        return self._edges[1]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(F, 3) global edge opposite each local vertex."""
        return self._edges[2]

    @property
    def triangle_edge_signs(self) -> np.ndarray:
        """(F, 3) +1 where the triangle is the plus side of that edge."""
        return self._edges[3]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.linalg.norm(v[self.edges[:, 1]] - v[self.edges[:, 0]], axis=1)

    @cached_property
    def signed_volume(self) -> float:
        p = self.corners
        return float(np.einsum("ij,ij->", p[:, 0], np.cross(p[:, 1], p[:, 2])) / 6.0)

    @cached_property
    def components(self) -> tuple[int, np.ndarray]:
        """Connected components over vertices, as (count, label per vertex)."""
        e = self.edges
        n = self.n_vertices
        g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return connected_components(g, directed=False)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(np.round(self.vertices, 12)).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()[:16]

    def transformed(self, scale: float = 1.0, shift=(0.0, 0.0, 0.0)) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices * scale + np.asarray(shift, float), self.triangles,
                           closed=self.closed)

    def permuted(self, perm) -> "SurfaceMesh":
        """Same surface with triangles listed in a different order."""
        return SurfaceMesh(self.vertices, self.triangles[np.asarray(perm)], closed=self.closed)

    def __repr__(self) -> str:
        return f"SurfaceMesh(V={self.n_vertices}, E={self.n_edges}, F={self.n_triangles})"


def topology(mesh: SurfaceMesh) -> TopologyReport:
    """Betti numbers of a closed orientable surface from its combinatorics."""
    ncomp, labels = mesh.components
    chi = mesh.n_vertices - mesh.n_edges + mesh.n_triangles
    beta1 = 2 * ncomp - chi
    if beta1 < 0:
        raise MeshError("inconsistent topology (negative first Betti number)")
    genus = []
    tri_label = labels[mesh.triangles[:, 0]]
    edge_label = labels[mesh.edges[:, 0]]
    for c in range(ncomp):
        chi_c = (np.count_nonzero(labels == c) - np.count_nonzero(edge_label == c)
                 + np.count_nonzero(tri_label == c))
        genus.append((2 - chi_c) // 2)
    return TopologyReport(beta0=ncomp, euler=chi, beta1=beta1, beta2=ncomp, genus=tuple(genus))


# -- generators ----------------------------------------------------------

def icosahedron(radius: float = 1.0) -> SurfaceMesh:
    t = (1.0 + 5.0**0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    v *= radius / np.linalg.norm(v[0])
    return SurfaceMesh(v, f)


def _split(vertices, triangles):
    nv = len(vertices)
    a = triangles[:, [0, 1, 2]].reshape(-1)
    b = triangles[:, [1, 2, 0]].reshape(-1)
    key = np.minimum(a, b) * nv + np.maximum(a, b)
    uniq, inv = np.unique(key, return_inverse=True)
    lo, hi = uniq // nv, uniq % nv
    mids = 0.5 * (vertices[lo] + vertices[hi])
    m = (inv + nv).reshape(-1, 3)  # midpoint of sides (0-1), (1-2), (2-0)
    t = triangles
    new = np.concatenate([
        np.stack([t[:, 0], m[:, 0], m[:, 2]], 1),
        np.stack([m[:, 0], t[:, 1], m[:, 1]], 1),
        np.stack([m[:, 2], m[:, 1], t[:, 2]], 1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], 1),
    ])
    return np.vstack([vertices, mids]), new


def refine(mesh: SurfaceMesh) -> SurfaceMesh:
    """Uniform 1:4 subdivision through edge midpoints."""
    v, t = _split(mesh.vertices, mesh.triangles)
    return SurfaceMesh(v, t, closed=mesh.closed)


def sphere_mesh(subdiv: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    if subdiv < 0:
        raise ValueError("subdiv must be >= 0")
    if radius <= 0:
        raise ValueError("radius must be positive")
    base = icosahedron(1.0)
    v, t = base.vertices, base.triangles
    for _ in range(subdiv):
        v, t = _split(v, t)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return SurfaceMesh(v * radius + np.asarray(center, float), t)


def torus_mesh(nu: int, nv: int, R: float = 2.0, r: float = 0.7) -> SurfaceMesh:
    if nu < 3 or nv < 3:
        raise ValueError("nu and nv must be >= 3")
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    u = 2 * np.pi * np.arange(nu) / nu
    w = 2 * np.pi * np.arange(nv) / nv
    uu, ww = np.meshgrid(u, w, indexing="ij")
    pts = np.stack([(R + r * np.cos(ww)) * np.cos(uu),
                    (R + r * np.cos(ww)) * np.sin(uu),
                    r * np.sin(ww)], axis=-1).reshape(-1, 3)
    idx = np.arange(nu * nv).reshape(nu, nv)
    i0, j0 = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a = idx[i0, j0]
    b = idx[(i0 + 1) % nu, j0]
    c = idx[(i0 + 1) % nu, (j0 + 1) % nv]
    d = idx[i0, (j0 + 1) % nv]
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                           np.stack([a, c, d], -1).reshape(-1, 3)])
    return SurfaceMesh(pts, tris)


def disjoint_union(*meshes: SurfaceMesh) -> SurfaceMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += m.n_vertices
    return SurfaceMesh(np.vstack(verts), np.vstack(tris))


def two_spheres(subdiv: int, radius: float = 1.0, separation: float = 3.0) -> SurfaceMesh:
    return disjoint_union(sphere_mesh(subdiv, radius, (-separation / 2, 0, 0)),
                          sphere_mesh(subdiv, radius, (separation / 2, 0, 0)))


def mesh_from_spec(spec: str) -> SurfaceMesh:
    """Build a mesh from "sphere:<n>", "torus:<nu>x<nv>", "two-spheres:<n>" or a file path."""
    m = re.fullmatch(r"sphere:(\d+)", spec)
    if m:
        return sphere_mesh(int(m.group(1)))
    m = re.fullmatch(r"torus:(\d+)x(\d+)", spec)
    if m:
        return torus_mesh(int(m.group(1)), int(m.group(2)), 2.0, 0.7)
    m = re.fullmatch(r"two-spheres:(\d+)", spec)
    if m:
        return two_spheres(int(m.group(1)))
    if spec == "icosahedron":
        return icosahedron()
    return load_mesh(spec)


# -- file formats --------------------------------------------------------

def _merge_duplicates(vertices, triangles):
    scale = np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0))
    tree = cKDTree(vertices)
    rep = np.arange(len(vertices))
    for i, j in sorted(tree.query_pairs(DEDUP_REL_TOL * scale)):
        rep[j] = rep[i] if rep[i] < rep[j] else rep[j]
    # resolve chains
    while np.any(rep[rep] != rep):
        rep = rep[rep]
    tris = rep[triangles]
    used, tris = np.unique(tris, return_inverse=True)
    return vertices[used], tris.reshape(-1, 3)


def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> tuple[np.ndarray, np.ndarray]:
    lines = list(_tokens(Path(path).read_text()))
    if not lines or not lines[0].startswith("OFF"):
        raise MeshError("not an OFF file")
    head = lines[0][3:].split() or lines.pop(1).split()
    try:
        nv, nf = int(head[0]), int(head[1])
        body = lines[1:]
        verts = np.array([[float(x) for x in body[i].split()[:3]] for i in range(nv)])
        faces = []
        for i in range(nv, nv + nf):
            vals = [int(x) for x in body[i].split()]
            if vals[0] != 3:
                raise MeshError("only triangular faces are supported")
            faces.append(vals[1:4])
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed OFF file: {exc}") from exc
    return verts, np.array(faces, dtype=np.int64)


def read_gmsh(path) -> tuple[np.ndarray, np.ndarray]:
    """Gmsh 2.2 ASCII; only element type 2 (3-node triangle) is kept."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    try:
        i = lines.index("$MeshFormat")
        if not lines[i + 1].split()[0].startswith("2"):
            raise MeshError("only MSH 2.x ASCII is supported")
        i = lines.index("$Nodes")
        n = int(lines[i + 1])
        ids, pts = [], []
        for ln in lines[i + 2:i + 2 + n]:
            parts = ln.split()
            ids.append(int(parts[0]))
            pts.append([float(x) for x in parts[1:4]])
        index = {k: j for j, k in enumerate(ids)}
        i = lines.index("$Elements")
        n = int(lines[i + 1])
        tris = []
        for ln in lines[i + 2:i + 2 + n]:
            parts = [int(x) for x in ln.split()]
            if parts[1] == 2:
                ntags = parts[2]
                tris.append([index[k] for k in parts[3 + ntags:6 + ntags]])
    except (ValueError, IndexError, KeyError) as exc:
        raise MeshError(f"malformed Gmsh file: {exc}") from exc
    if not tris:
        raise MeshError("no triangles in Gmsh file")
    pts = np.array(pts)
    tris = np.array(tris, dtype=np.int64)
    used, inv = np.unique(tris, return_inverse=True)
    return pts[used], inv.reshape(-1, 3)


def load_mesh(path, fmt: str | None = None) -> SurfaceMesh:
    path = Path(path)
    if not path.exists():
        raise MeshError(f"no such mesh file: {path}")
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "off":
        v, t = read_off(path)
    elif fmt in ("msh", "gmsh", "gmshascii"):
        v, t = read_gmsh(path)
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")
    v, t = _merge_duplicates(v, t)
    return SurfaceMesh(v, t)


def write_off(mesh: SurfaceMesh, path) -> None:
    out = [f"OFF\n{mesh.n_vertices} {mesh.n_triangles} {mesh.n_edges}"]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(out) + "\n")
