"""Off-surface evaluation of the two surface potentials and derived probes.

Field layout: U = (U0, U1[3], U2[3], U3), eight components per point.
All kernels are derivatives of G(z) = 1 / (4 pi |z|), evaluated at z - y
with z off the surface, so plain Gauss quadrature applies. Panels close to an
evaluation point are subdivided adaptively.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SurfaceMesh
from .quadrature import FOUR_PI, gauss_triangle
from .spaces import TraceR, TraceSpaceSet, TraceT

BASE_ORDER = 4
NEAR_FACTOR = 2.0      # panels within NEAR_FACTOR * diameter are subdivided
MAX_DEPTH = 12
MIN_DISTANCE_REL = 1e-10


@dataclass
class FieldSamples:
    points: np.ndarray  # (P, 3)
    values: np.ndarray  # (P, 8)

    @property
    def U0(self):
        return self.values[:, 0]

    @property
    def U1(self):
        return self.values[:, 1:4]

    @property
    def U2(self):
        return self.values[:, 4:7]

    @property
    def U3(self):
        return self.values[:, 7]

    def __add__(self, other: "FieldSamples") -> "FieldSamples":
        return FieldSamples(self.points, self.values + other.values)

    def __neg__(self) -> "FieldSamples":
        return FieldSamples(self.points, -self.values)

    def to_csv(self, path) -> None:
        head = "x,y,z,U0,U1,U2,U3,U4,U5,U6,U7"
        np.savetxt(path, np.hstack([self.points, self.values]), delimiter=",",
                   header=head, comments="", fmt="%.17g")


# -- geometry helpers ---------------------------------------------------------------

def point_triangle_distance(z, corners) -> np.ndarray:
    """Distances |z_i - T_i| for broadcastable z (..., 3) and corners (..., 3, 3)."""
    a, b, c = corners[..., 0, :], corners[..., 1, :], corners[..., 2, :]
    nrm = np.cross(b - a, c - a)
    nrm = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
    h = np.einsum("...c,...c->...", z - a, nrm)
    proj = z - h[..., None] * nrm
    inside = np.ones(np.broadcast(h, a[..., 0]).shape, dtype=bool)
    for p, q in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("...c,...c->...", np.cross(q - p, proj - p), nrm) >= 0
    best = np.abs(h)

    def seg(p, q):
        d = q - p
        t = np.clip(np.einsum("...c,...c->...", z - p, d) / np.einsum("...c,...c->...", d, d), 0, 1)
        return np.linalg.norm(z - (p + t[..., None] * d), axis=-1)

    edge = np.minimum(np.minimum(seg(a, b), seg(b, c)), seg(c, a))
    return np.where(inside, best, edge)


def winding_number(mesh: SurfaceMesh, points) -> np.ndarray:
    """Solid-angle winding number: ~1 inside the enclosed region, ~0 outside."""
    points = np.atleast_2d(points)
    out = np.empty(len(points))
    p = mesh.corners
    for s in range(0, len(points), 256):
        z = points[s:s + 256, None, None, :]
        r = p[None] - z
        ln = np.linalg.norm(r, axis=-1)
        a, b, c = r[..., 0, :], r[..., 1, :], r[..., 2, :]
        num = np.einsum("...c,...c->...", a, np.cross(b, c))
        den = (ln[..., 0] * ln[..., 1] * ln[..., 2]
               + np.einsum("...c,...c->...", a, b) * ln[..., 2]
               + np.einsum("...c,...c->...", b, c) * ln[..., 0]
               + np.einsum("...c,...c->...", c, a) * ln[..., 1])
        out[s:s + 256] = 2.0 * np.arctan2(num, den).sum(axis=1) / FOUR_PI
    return out


# -- densities at quadrature points ---------------------------------------------------

def _densities(kind: str, spaces: TraceSpaceSet, density, tri, bary):
    """(scalar s0, tangent field v1, scalar s2) at points given by (tri, bary)."""
    if kind == "LT":
        a = density
        return (np.asarray(a.a0)[tri], spaces.eval_rwg(a.a1, tri, bary),
                spaces.eval_p1(a.a2, tri, bary))
    b = density
    # b1 x n for b1 = n x f is f itself: evaluate the rwg field on b1's coefficients
    return (spaces.eval_p1(b.b0, tri, bary), spaces.eval_rwg(b.b1, tri, bary),
            np.asarray(b.b2)[tri])


def _integrand(kind, gx, n, s0, v1, s2) -> np.ndarray:
    out = np.empty(gx.shape[:-1] + (8,))
    gxn = np.cross(gx, n)
    if kind == "LT":
        out[..., 0] = -np.einsum("...c,...c->...", gx, v1)
        out[..., 1:4] = gx * s0[..., None] + gxn * s2[..., None]
        out[..., 4:7] = np.cross(gx, v1)
        out[..., 7] = np.einsum("...c,...c->...", gx, n) * s2
    else:
        out[..., 0] = np.einsum("...c,...c->...", gx, n) * s0
        out[..., 1:4] = np.cross(gx, v1)
        out[..., 4:7] = -gxn * s0[..., None] + gx * s2[..., None]
        out[..., 7] = np.einsum("...c,...c->...", gx, v1)
    return out


def _grad_g(d):
    r = np.linalg.norm(d, axis=-1)
    return -d / (FOUR_PI * r**3)[..., None]


def _leaves(mesh, z, pts, tris):
    """Adaptive subdivision of panels `tris` around points z[pts].

    Returns per-leaf (pair index, barycentric corners (3, 3), depth).
    """
    pid = np.arange(len(pts))
    sub = np.broadcast_to(np.eye(3), (len(pts), 3, 3)).copy()
    depth = np.zeros(len(pts), dtype=int)
    done_pid, done_sub, done_depth = [], [], []
    split = np.array([[[1, 0, 0], [.5, .5, 0], [.5, 0, .5]],
                      [[.5, .5, 0], [0, 1, 0], [0, .5, .5]],
                      [[.5, 0, .5], [0, .5, .5], [0, 0, 1]],
                      [[.5, .5, 0], [0, .5, .5], [.5, 0, .5]]])
    while len(pid):
        corners = np.einsum("pij,pjc->pic", sub, mesh.corners[tris[pid]])
        cen = corners.mean(axis=1)
        diam = np.max(np.linalg.norm(corners - np.roll(corners, 1, axis=1), axis=-1), axis=1)
        near = (np.linalg.norm(z[pts[pid]] - cen, axis=1) < NEAR_FACTOR * diam) & (depth < MAX_DEPTH)
        done_pid.append(pid[~near])
        done_sub.append(sub[~near])
        done_depth.append(depth[~near])
        pid, sub, depth = pid[near], sub[near], depth[near]
        sub = np.einsum("sij,pjk->psik", split, sub).reshape(-1, 3, 3)
        pid = np.repeat(pid, 4)
        depth = np.repeat(depth + 1, 4)
    return np.concatenate(done_pid), np.concatenate(done_sub), np.concatenate(done_depth)


def _evaluate(kind: str, spaces: TraceSpaceSet, density, points, order: int = BASE_ORDER) -> FieldSamples:
    mesh = spaces.mesh
    z = np.atleast_2d(np.asarray(points, dtype=float))
    nf = mesh.n_triangles
    q = gauss_triangle(order)
    nq = len(q.weights)
    tri = np.repeat(np.arange(nf), nq)
    bary = np.tile(q.bary, (nf, 1))
    y = np.einsum("mk,mkc->mc", bary, mesh.corners[tri])
    w = 2.0 * mesh.areas[tri] * np.tile(q.weights, nf)
    ny = mesh.normals[tri]
    s0, v1, s2 = _densities(kind, spaces, density, tri, bary)
    values = np.zeros((len(z), 8))
    near_p, near_t = [], []
    for s in range(0, len(z), 64):
        zc = z[s:s + 64]
        dist = point_triangle_distance(zc[:, None, :], mesh.corners[None])
        if dist.min() < MIN_DISTANCE_REL * mesh.scale:
            raise ValueError("evaluation point lies on the surface")
        near = dist < NEAR_FACTOR * mesh.diameters[None, :]
        wm = w[None, :] * ~np.repeat(near, nq, axis=1)
        gx = _grad_g(zc[:, None, :] - y[None])
        values[s:s + 64] = np.einsum("pm,pmi->pi", wm, _integrand(kind, gx, ny[None], s0[None],
                                                                  v1[None], s2[None]))
        ip, it = np.nonzero(near)
        near_p.append(ip + s)
        near_t.append(it)
    pts, tris = np.concatenate(near_p), np.concatenate(near_t)
    if len(pts):
        pid, sub, depth = _leaves(mesh, z, pts, tris)
        lb = np.einsum("qj,ljk->lqk", q.bary, sub).reshape(-1, 3)  # parent barycentrics
        lp = np.repeat(pts[pid], nq)
        lt = np.repeat(tris[pid], nq)
        lw = (2.0 * mesh.areas[tris[pid]] * 0.25**depth)[:, None] * q.weights[None, :]
        yl = np.einsum("lk,lkc->lc", lb, mesh.corners[lt])
        s0l, v1l, s2l = _densities(kind, spaces, density, lt, lb)
        gx = _grad_g(z[lp] - yl)
        contrib = _integrand(kind, gx, mesh.normals[lt], s0l, v1l, s2l) * lw.reshape(-1, 1)
        for i in range(8):
            values[:, i] += np.bincount(lp, weights=contrib[:, i], minlength=len(z))
    return FieldSamples(z, values)


def eval_L_T(spaces: TraceSpaceSet, a: TraceR, points, order: int = BASE_ORDER) -> FieldSamples:
    """(-div Psi(a1), grad psi(a0) + curl Y(a2), curl Psi(a1), div Y(a2)).

    psi, Psi are the scalar and vector single-layer potentials, Y(u) = Psi(u n).
    """
    return _evaluate("LT", spaces, a, points, order)


def eval_L_R(spaces: TraceSpaceSet, b: TraceT, points, order: int = BASE_ORDER) -> FieldSamples:
    """(div Y(b0), curl Psi(b1 x n), -curl Y(b0) + grad psi(b2), div Psi(b1 x n))."""
    return _evaluate("LR", spaces, b, points, order)


def represent(spaces: TraceSpaceSet, traces: tuple[TraceR, TraceT], side: str, points,
              order: int = BASE_ORDER) -> FieldSamples:
    """Field from its Cauchy data; side is 'Interior' or 'Exterior'."""
    if side not in ("Interior", "Exterior"):
        raise ValueError(f"side must be Interior or Exterior, got {side!r}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    wn = winding_number(spaces.mesh, points)
    inside = wn > 0.5
    if side == "Interior" and not inside.all() or side == "Exterior" and inside.any():
        raise ValueError(f"points not on the {side.lower()} side of the surface")
    a, b = traces
    u = eval_L_T(spaces, a, points, order) + eval_L_R(spaces, b, points, order)
    return u if side == "Interior" else -u


# -- Dirac operator by finite differences -------------------------------------------------

def dirac_fd(field_fn, points, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference DU = (-div U1, grad U0 + curl U2, -grad U3 + curl U1, div U2).

    Returns (DU (P, 8), Jacobian (P, 8, 3)).
    """
    points = np.atleast_2d(points)
    jac = np.empty((len(points), 8, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        jac[:, :, i] = (field_fn(points + e) - field_fn(points - e)) / (2.0 * step)
    j0, j1, j2, j3 = jac[:, 0], jac[:, 1:4], jac[:, 4:7], jac[:, 7]

    def div(j):
        return j[:, 0, 0] + j[:, 1, 1] + j[:, 2, 2]

    def curl(j):
        return np.stack([j[:, 2, 1] - j[:, 1, 2], j[:, 0, 2] - j[:, 2, 0], j[:, 1, 0] - j[:, 0, 1]], 1)

    du = np.empty((len(points), 8))
    du[:, 0] = -div(j1)
    du[:, 1:4] = j0 + curl(j2)
    du[:, 4:7] = -j3 + curl(j1)
    du[:, 7] = div(j2)
    return du, jac


def dirac_residual(kind: str, spaces: TraceSpaceSet, density, points, step: float | None = None,
                   order: int = BASE_ORDER) -> np.ndarray:
    """Per-point |DU| relative to |grad U| + |U| / dist(point, surface).

    The second term keeps the ratio meaningful where the field is locally
    constant and its Jacobian vanishes.
    """
    mesh = spaces.mesh
    points = np.atleast_2d(np.asarray(points, dtype=float))
    step = 1e-3 * mesh.scale if step is None else step
    ev = eval_L_T if kind == "LT" else eval_L_R
    du, jac = dirac_fd(lambda p: ev(spaces, density, p, order).values, points, step)
    u = ev(spaces, density, points, order).values
    dist = point_triangle_distance(points[:, None, :], mesh.corners[None]).min(axis=1)
    scale = np.linalg.norm(jac.reshape(len(du), -1), axis=1) + np.linalg.norm(u, axis=1) / dist
    return np.linalg.norm(du, axis=1) / scale


# -- traces of sampled fields ---------------------------------------------------------

def trace_T(values, n) -> np.ndarray:
    """(U0, n x (U1 x n), n . U2) packed as 5 numbers per point."""
    u1 = values[:, 1:4]
    tan = u1 - np.einsum("pc,pc->p", u1, n)[:, None] * n
    return np.column_stack([values[:, 0], tan, np.einsum("pc,pc->p", values[:, 4:7], n)])


def trace_R(values, n) -> np.ndarray:
    """(n . U1, U2 x n, U3) packed as 5 numbers per point."""
    return np.column_stack([np.einsum("pc,pc->p", values[:, 1:4], n),
                            np.cross(values[:, 4:7], n), values[:, 7]])


@dataclass
class JumpEstimate:
    jump_T: np.ndarray       # (S, 5) extrapolated interior minus exterior gamma_T
    jump_R: np.ndarray       # (S, 5) same for gamma_R
    expected_T: np.ndarray
    expected_R: np.ndarray
    weights: np.ndarray      # panel areas of the sampled faces
    order_estimate: float    # observed convergence order in the offset
    faces: np.ndarray
    density: np.ndarray      # (S, 5) density samples, the default error scale

    def _rel(self, got, exp, ref):
        ref = self.density if ref is None else ref
        err = np.sqrt(np.sum(self.weights[:, None] * (got - exp) ** 2))
        den = np.sqrt(np.sum(self.weights[:, None] * ref ** 2))
        return float(err / den) if den > 0 else float(err)

    def error_T(self, reference=None) -> float:
        """Area-weighted error of the gamma_T jump relative to the density."""
        return self._rel(self.jump_T, self.expected_T, reference)

    def error_R(self, reference=None) -> float:
        return self._rel(self.jump_R, self.expected_R, reference)


def density_samples(kind: str, spaces: TraceSpaceSet, density, faces) -> np.ndarray:
    """Density at face centroids in the trace layout of its own space."""
    mesh = spaces.mesh
    bary = np.full((len(faces), 3), 1.0 / 3.0)
    s0, v1, s2 = _densities(kind, spaces, density, faces, bary)
    if kind == "LT":
        return np.column_stack([s0, v1, s2])
    return np.column_stack([s0, np.cross(mesh.normals[faces], v1), s2])


def jump_probe(kind: str, spaces: TraceSpaceSet, density, surface_sample_count: int | None = None,
               offsets=(0.05, 0.025), order: int = BASE_ORDER, seed: int = 0) -> JumpEstimate:
    """Jumps [gamma] = gamma^- - gamma^+ of a potential at face centroids.

    `offsets` are relative to each face's diameter; the last two are combined
    by Richardson extrapolation (first order in the offset).
    """
    mesh = spaces.mesh
    offsets = np.asarray(offsets, dtype=float)
    if len(offsets) < 2 or np.any(np.diff(offsets) >= 0):
        raise ValueError("offsets must be at least two strictly decreasing values")
    if offsets.min() < 1e-3:
        raise ValueError("offsets below 1e-3 of the local mesh size are not supported")
    nf = mesh.n_triangles
    if surface_sample_count is None or surface_sample_count >= nf:
        faces = np.arange(nf)
    else:
        faces = np.sort(np.random.default_rng(seed).choice(nf, surface_sample_count, replace=False))
    x = mesh.centroids[faces]
    n = mesh.normals[faces]
    h = mesh.diameters[faces][:, None]
    ev = eval_L_T if kind == "LT" else eval_L_R
    jt, jr = [], []
    for d in offsets:
        um = ev(spaces, density, x - d * h * n, order).values
        up = ev(spaces, density, x + d * h * n, order).values
        jt.append(trace_T(um, n) - trace_T(up, n))
        jr.append(trace_R(um, n) - trace_R(up, n))
    ratio = offsets[-2] / offsets[-1]

    def extrap(seq):
        return (ratio * seq[-1] - seq[-2]) / (ratio - 1.0)

    jump_T, jump_R = extrap(jt), extrap(jr)
    dens = density_samples(kind, spaces, density, faces)
    zero = np.zeros_like(dens)
    exp_T, exp_R = (zero, dens) if kind == "LT" else (dens, zero)
    # observed order from three offsets when available
    order_est = float("nan")
    if len(offsets) >= 3:
        e = [np.linalg.norm(np.hstack([t - exp_T, r - exp_R])) for t, r in zip(jt, jr)]
        order_est = float(np.log(e[-3] / e[-2]) / np.log(offsets[-3] / offsets[-2]))
    return JumpEstimate(jump_T, jump_R, exp_T, exp_R, mesh.areas[faces], order_est, faces, dens)


# -- far-field decay ---------------------------------------------------------------------

@dataclass
class DecayResult:
    exponent: float
    radii: np.ndarray
    norms: np.ndarray
    zero_field: bool


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def decay_probe(kind: str, spaces: TraceSpaceSet, density, radii, n_directions: int = 32,
                order: int = BASE_ORDER) -> DecayResult:
    """Least-squares slope of log RMS|U| over directions against log r."""
    mesh = spaces.mesh
    radii = np.asarray(radii, dtype=float)
    center = mesh.vertices.mean(axis=0)
    reach = np.linalg.norm(mesh.vertices - center, axis=1).max()
    if radii.min() < 2.0 * reach:
        raise ValueError("decay radii must be at least twice the circumscribing radius")
    dirs = fibonacci_directions(n_directions)
    ev = eval_L_T if kind == "LT" else eval_L_R
    norms = np.array([np.sqrt(np.mean(np.sum(ev(spaces, density, center + r * dirs, order).values ** 2,
                                             axis=1))) for r in radii])
    if np.all(norms == 0.0):
        return DecayResult(float("nan"), radii, norms, True)
    if np.any(norms < 1e-300):
        raise ValueError("field below the floating-point floor at the requested radii")
    slope = np.polyfit(np.log(radii), np.log(norms), 1)[0]
    return DecayResult(float(slope), radii, norms, False)
