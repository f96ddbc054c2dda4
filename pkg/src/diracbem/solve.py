"""Kernel extraction, saddle-point solves, boundary value problems and
Calderon projector checks."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from . import __version__
from .operators import OperatorBlock, OperatorSet, operator_set
from .spaces import (TraceR, TraceSpaceSet, TraceT, scalar_curl_rotrwg, surf_div_rwg,
                     surf_grad_p1)

KERNEL_REL_TOL = 1e-8
KERNEL_MIN_GAP = 100.0


class KernelGapError(RuntimeError):
    def __init__(self, message, singular_values):
        super().__init__(message)
        self.singular_values = singular_values


class SingularSystemError(RuntimeError):
    pass


def _matrix(block) -> np.ndarray:
    return block.matrix if isinstance(block, OperatorBlock) else np.asarray(block, dtype=float)


def nullspace(block, rel_tol: float = KERNEL_REL_TOL, min_gap: float = KERNEL_MIN_GAP,
              return_values: bool = False):
    """Orthonormal basis of the numerical kernel of a symmetric matrix.

    For a symmetric matrix the singular values are the absolute eigenvalues,
    so a symmetric eigensolver gives the SVD. Values below rel_tol * max count
    as zero; the first nonzero value must exceed the last zero by min_gap.
    Returns (basis, dim) or (basis, dim, singular values descending).
    """
    a = _matrix(block)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("nullspace needs a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(np.abs(a).max(), 1e-300)):
        raise ValueError("nullspace needs a symmetric matrix")
    lam, vec = sla.eigh(a)
    order = np.argsort(-np.abs(lam))
    sigma = np.abs(lam[order])
    vec = vec[:, order]
    smax = sigma[0] if len(sigma) else 0.0
    zero = sigma < rel_tol * smax
    dim = int(zero.sum())
    if dim:
        if not zero[-dim:].all():
            raise KernelGapError("small singular values are not at the tail", sigma)
        if dim < len(sigma):
            last_nonzero, first_zero = sigma[-dim - 1], sigma[-dim]
            if first_zero > 0 and last_nonzero / first_zero < min_gap:
                raise KernelGapError(
                    f"no clean spectral gap: tail {sigma[-dim - 3:]}", sigma)
    else:
        # a near-threshold value just above the cut also means an unclear gap
        near = sigma[(sigma < min_gap * rel_tol * smax)]
        if len(near):
            raise KernelGapError(f"no clean spectral gap: tail {sigma[-4:]}", sigma)
    basis = vec[:, len(sigma) - dim:]
    return (basis, dim, sigma) if return_values else (basis, dim)


def gap_ratio(sigma: np.ndarray, dim: int) -> float:
    """First nonzero singular value over the largest zero one."""
    if dim == 0 or dim == len(sigma):
        return float("inf")
    return float(sigma[-dim - 1] / max(sigma[-dim], np.finfo(float).tiny))


@dataclass
class BvpSolution:
    unknown: TraceR | TraceT | np.ndarray
    multiplier: np.ndarray
    residuals: dict = field(default_factory=dict)
    vector: np.ndarray | None = None

    @property
    def kernel_dim(self) -> int:
        return len(self.multiplier)

    @property
    def multiplier_rel(self) -> float:
        nu = np.linalg.norm(self.vector if self.vector is not None else self.unknown)
        nm = np.linalg.norm(self.multiplier)
        return float(nm / nu) if nu > 0 else float(nm)


def solve_saddle(block, kernel_basis: np.ndarray, rhs) -> BvpSolution:
    """Solve [[B, K], [K^T, 0]] [x; p] = [rhs; 0] with K the kernel basis."""
    b = _matrix(block)
    k = np.asarray(kernel_basis, dtype=float).reshape(b.shape[0], -1)
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("right-hand side is not finite")
    n, m = b.shape[0], k.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = b
    aug[:n, n:] = k
    aug[n:, :n] = k.T
    full = np.concatenate([rhs, np.zeros(m)])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(aug, check_finite=False)
    except (sla.LinAlgError, sla.LinAlgWarning, ValueError) as exc:
        raise SingularSystemError(str(exc)) from exc
    if np.min(np.abs(np.diag(lu))) <= 1e-14 * np.abs(np.diag(lu)).max():
        raise SingularSystemError("augmented system is singular; kernel misdetected")
    sol = sla.lu_solve((lu, piv), full, check_finite=False)
    x, p = sol[:n], sol[n:]
    rn = np.linalg.norm(full)
    lin = np.linalg.norm(aug @ sol - full) / rn if rn > 0 else 0.0
    cons = np.linalg.norm(k.T @ rhs) / np.linalg.norm(rhs) if np.linalg.norm(rhs) > 0 else 0.0
    return BvpSolution(x, p, {"linear_system": float(lin), "consistency": float(cons)}, x)


# -- boundary value problems --------------------------------------------------------

class BvpContext:
    """Assembled blocks and kernel bases shared by the solves on one mesh."""

    def __init__(self, spaces: TraceSpaceSet):
        self.spaces = spaces
        self.ops: OperatorSet = operator_set(spaces)
        self._kernels = {}

    def kernel(self, which: str):
        if which not in self._kernels:
            b = self.ops.BR if which == "BR" else self.ops.BT
            self._kernels[which] = nullspace(b, return_values=True)
        return self._kernels[which]

    def rhs_R(self, a: TraceR) -> np.ndarray:
        """l_R(d) = <a/2 - {gamma_R} L_T a, d> for d in H_T."""
        v = a.vector
        return 0.5 * (self.ops.mass.matrix @ v) - self.ops.trace_R_of_LT.matrix @ v

    def rhs_T(self, b: TraceT) -> np.ndarray:
        """l_T(c) = <b/2 - {gamma_T} L_R b, c> for c in H_R."""
        v = b.vector
        return 0.5 * (self.ops.mass.matrix.T @ v) - self.ops.trace_T_of_LR.matrix @ v


_CONTEXTS: dict[int, BvpContext] = {}


def context(spaces: TraceSpaceSet) -> BvpContext:
    ctx = _CONTEXTS.get(id(spaces))
    if ctx is None or ctx.spaces is not spaces:
        ctx = _CONTEXTS[id(spaces)] = BvpContext(spaces)
    return ctx


def solve_bvp_R(spaces: TraceSpaceSet, a: TraceR) -> BvpSolution:
    """Given H_R data a, find b in H_T with B_R b = l_R, b orthogonal to ker B_R."""
    ctx = context(spaces)
    basis, _, _ = ctx.kernel("BR")
    sol = solve_saddle(ctx.ops.BR, basis, ctx.rhs_R(a))
    b = TraceT.from_vector(spaces, sol.vector)
    sol.unknown = b
    # the complementary Calderon row: B_T a = l_T(b)
    lt = ctx.rhs_T(b)
    bt = ctx.ops.BT.matrix @ a.vector
    den = np.linalg.norm(lt) + np.linalg.norm(bt)
    sol.residuals["calderon"] = float(np.linalg.norm(lt - bt) / den) if den > 0 else 0.0
    return sol


def solve_bvp_T(spaces: TraceSpaceSet, b: TraceT, path: str = "direct") -> BvpSolution:
    """Given H_T data b, find a in H_R with B_T a = l_T, a orthogonal to ker B_T.

    path="xi" solves the R-problem for the relabelled data xi(b) and maps the
    result back with -xi. xi conjugates B_T into B_R exactly, while the data
    functionals satisfy l_R(xi b) = -xi^T l_T(b), hence the sign.
    """
    ctx = context(spaces)
    if path == "direct":
        basis, _, _ = ctx.kernel("BT")
        sol = solve_saddle(ctx.ops.BT, basis, ctx.rhs_T(b))
    elif path == "xi":
        x = ctx.ops.xi
        inner = solve_bvp_R(spaces, TraceR.from_vector(spaces, x @ b.vector))
        vec = -(x @ inner.vector)
        rhs = ctx.rhs_T(b)
        kb = ctx.kernel("BT")[0]
        lin = np.linalg.norm(ctx.ops.BT.matrix @ vec - (rhs - kb @ (kb.T @ rhs)))
        rn = np.linalg.norm(rhs)
        sol = BvpSolution(vec, inner.multiplier,
                          {"linear_system": float(lin / rn) if rn > 0 else 0.0,
                           "consistency": inner.residuals["consistency"]}, vec)
    else:
        raise ValueError(f"unknown path {path!r}")
    a = TraceR.from_vector(spaces, sol.vector)
    sol.unknown = a
    lr = ctx.rhs_R(a)
    br = ctx.ops.BR.matrix @ b.vector
    den = np.linalg.norm(lr) + np.linalg.norm(br)
    sol.residuals["calderon"] = float(np.linalg.norm(lr - br) / den) if den > 0 else 0.0
    return sol


def consistency_check(spaces: TraceSpaceSet, a: TraceR) -> float:
    """Relative size of the rhs component in the kernel of B_R."""
    ctx = context(spaces)
    rhs = ctx.rhs_R(a)
    nr = np.linalg.norm(rhs)
    if nr == 0:
        return 0.0
    basis = ctx.kernel("BR")[0]
    return float(np.linalg.norm(basis.T @ rhs) / nr)


# -- Calderon projectors ------------------------------------------------------------

class DualityInverse:
    """Generalised inverse of the duality pairing, block by block.

    The p1/p0 blocks are rectangular: the wide one gets the area-weighted
    minimum-norm solution, the tall one an area-weighted least-squares fit.
    The rot_rwg/rwg block is square but singular and gets a least-squares
    pseudo-inverse.
    """

    def __init__(self, spaces: TraceSpaceSet):
        s = spaces
        self.spaces = s
        self.m10 = s.pairing_p1_p0().toarray()          # (V, F)
        self.mx = s.pairing_rot_rwg().toarray()         # (E, E)
        g0 = s.mesh.areas
        self.g0inv = 1.0 / g0
        a = self.m10 * self.g0inv[None, :]
        self._wide = sla.cho_factor(a @ self.m10.T)     # (V, V)
        self._tall = sla.cho_factor(self.m10 @ (self.g0inv[:, None] * self.m10.T))
        self._mx_pinv = np.linalg.pinv(self.mx, rcond=1e-10)

    def to_R(self, r: np.ndarray) -> np.ndarray:
        """Coefficients a in H_R with mass @ a ~ r (r tested in H_T)."""
        d = self.spaces.dims
        v, e = d["p1"], d["rwg"]
        r0, r1, r2 = r[:v], r[v:v + e], r[v + e:]
        a0 = self.g0inv * (self.m10.T @ sla.cho_solve(self._wide, r0))
        a1 = self._mx_pinv @ r1
        a2 = sla.cho_solve(self._tall, self.m10 @ (self.g0inv * r2))
        return np.concatenate([a0, a1, a2])

    def to_T(self, r: np.ndarray) -> np.ndarray:
        """Coefficients b in H_T with mass.T @ b ~ r (r tested in H_R)."""
        d = self.spaces.dims
        f, e = d["p0"], d["rwg"]
        r0, r1, r2 = r[:f], r[f:f + e], r[f + e:]
        b0 = sla.cho_solve(self._tall, self.m10 @ (self.g0inv * r0))
        b1 = self._mx_pinv.T @ r1
        b2 = self.g0inv * (self.m10.T @ sla.cho_solve(self._wide, r2))
        return np.concatenate([b0, b1, b2])


# Both projectors are combinations of the same three weak-form blocks:
# the duality pairing, the averaged traces {gamma} L, and the first-kind
# operators. Their coefficients are the definition of P- and P+.
P_MINUS = {"pairing": 0.5, "average": 1.0, "first_kind": 1.0}
P_PLUS = {"pairing": 0.5, "average": -1.0, "first_kind": -1.0}
IDENTITY = {"pairing": 1.0, "average": 0.0, "first_kind": 0.0}


def _weak_apply(ctx: BvpContext, coef: dict, a: np.ndarray, b: np.ndarray):
    ops = ctx.ops
    wr = (coef["pairing"] * (ops.mass.matrix @ a) + coef["average"] * (ops.trace_R_of_LT.matrix @ a)
          + coef["first_kind"] * (ops.BR.matrix @ b))
    wt = (coef["pairing"] * (ops.mass.matrix.T @ b) + coef["average"] * (ops.trace_T_of_LR.matrix @ b)
          + coef["first_kind"] * (ops.BT.matrix @ a))
    return wr, wt


def apply_projector(spaces: TraceSpaceSet, coef: dict, a: np.ndarray, b: np.ndarray,
                    inv: DualityInverse | None = None):
    """Coefficients of P(a, b) for P given by its block coefficients."""
    inv = inv or DualityInverse(spaces)
    wr, wt = _weak_apply(context(spaces), coef, a, b)
    return inv.to_R(wr), inv.to_T(wt)


def smooth_probe_data(spaces: TraceSpaceSet) -> tuple[TraceR, TraceT]:
    """Traces of a smooth field that is not a Dirac solution."""
    s = spaces

    def tang(fn):
        return lambda x, n: np.cross(n, np.cross(fn(x), n))

    a = TraceR(s.project_p0(lambda x, n: x[..., 0] * x[..., 1] + x[..., 2]),
               s.project_rwg(tang(lambda x: np.stack([x[..., 1], x[..., 2] ** 2, x[..., 0]], -1))),
               s.interpolate_p1(lambda x: x[:, 0] - x[:, 2] ** 2))
    b = TraceT(s.interpolate_p1(lambda x: x[:, 1] * x[:, 2] + x[:, 0]),
               s.project_rot_rwg(tang(lambda x: np.stack([x[..., 2], x[..., 0], x[..., 1] ** 2], -1))),
               s.project_p0(lambda x, n: x[..., 1] ** 2 - x[..., 0]))
    return a, b


def calderon_check(spaces: TraceSpaceSet, cauchy_data: tuple[TraceR, TraceT] | None = None,
                   probe: tuple[TraceR, TraceT] | None = None) -> dict:
    """Projector residuals of the discrete Calderon operators.

    P- is applied to coefficients through the weak form followed by the
    generalised inverse of the duality pairing. The sum identity compares
    block coefficients, so it is exact. The idempotency residual is measured
    on smooth probe data. For Cauchy data of an interior
    solution the P+ residual is reported in weak form, relative to the weak
    form of the data itself.
    """
    ctx = context(spaces)
    inv = DualityInverse(spaces)
    pa, pb = probe or smooth_probe_data(spaces)
    m1a, m1b = apply_projector(spaces, P_MINUS, pa.vector, pb.vector, inv)
    m2a, m2b = apply_projector(spaces, P_MINUS, m1a, m1b, inv)
    p1 = np.concatenate([m1a, m1b])
    p2 = np.concatenate([m2a, m2b])
    report = {
        "idempotency": float(np.linalg.norm(p2 - p1) / np.linalg.norm(p1)),
        "sum_identity": float(max(abs(P_MINUS[k] + P_PLUS[k] - IDENTITY[k]) for k in IDENTITY)),
    }
    if cauchy_data is not None:
        a, b = cauchy_data
        wr, wt = _weak_apply(ctx, P_PLUS, a.vector, b.vector)
        dr, dt = _weak_apply(ctx, IDENTITY, a.vector, b.vector)
        report["cauchy_P_plus"] = float(np.linalg.norm(np.concatenate([wr, wt]))
                                        / np.linalg.norm(np.concatenate([dr, dt])))
    return report


def solution_report(spaces: TraceSpaceSet, sol: BvpSolution, exact=None) -> dict:
    out = {"mesh_hash": spaces.mesh.digest(), "dims": spaces.dims,
           "kernel_dim": sol.kernel_dim, "residuals": sol.residuals,
           "multiplier_rel": sol.multiplier_rel, "version": __version__}
    if exact is not None:
        out["error_vs_exact"] = float(np.linalg.norm(sol.vector - exact) / np.linalg.norm(exact))
    return out


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


# -- manufactured solutions ---------------------------------------------------------

def _e1(x):
    return np.broadcast_to(np.array([1.0, 0.0, 0.0]), x.shape)


def _grad_saddle(x):
    # h = x^2 - y^2
    return np.stack([2.0 * x[..., 0], -2.0 * x[..., 1], np.zeros_like(x[..., 0])], -1)


def _grad_inverse_radius(x):
    # h = 1 / |x|, harmonic away from the origin
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return -x / r**3


MANUFACTURED = {
    "constant-field": _e1,
    "harmonic": _grad_saddle,
    "point-source": _grad_inverse_radius,
}


def manufactured_field(case: str):
    """Gradient field g with U = (0, g, 0, 0) solving DU = 0."""
    if case not in MANUFACTURED:
        raise ValueError(f"unknown case {case!r}; choose from {sorted(MANUFACTURED)}")
    return MANUFACTURED[case]


def manufactured_traces(spaces: TraceSpaceSet, case: str) -> tuple[TraceR, TraceT]:
    """Projected Cauchy data (gamma_R U, gamma_T U) of U = (0, g, 0, 0).

    gamma_R U = (n . g, 0, 0) and gamma_T U = (0, n x (g x n), 0).
    """
    g = manufactured_field(case)
    s = spaces
    a = TraceR(s.project_p0(lambda x, n: np.einsum("...c,...c->...", n, g(x))),
               np.zeros(s.dims["rwg"]), np.zeros(s.dims["p1"]))
    b = TraceT(np.zeros(s.dims["p1"]),
               s.project_rot_rwg(lambda x, n: np.cross(n, np.cross(g(x), n))),
               np.zeros(s.dims["p0"]))
    return a, b


def l2_gram_T(spaces: TraceSpaceSet):
    return sp.block_diag([spaces.gram("p1"), spaces.gram("rot_rwg"), spaces.gram("p0")]).tocsr()


def l2_gram_R(spaces: TraceSpaceSet):
    return sp.block_diag([spaces.gram("p0"), spaces.gram("rwg"), spaces.gram("p1")]).tocsr()


def relative_l2_error(gram, got: np.ndarray, exact: np.ndarray) -> float:
    d = got - exact
    return float(np.sqrt(d @ (gram @ d)) / np.sqrt(exact @ (gram @ exact)))


# -- structural checks on kernels ------------------------------------------------------

def _op_norm(mat) -> float:
    return float(svds(mat.astype(float), k=1, return_singular_vectors=False)[0])


def kernel_structure(spaces: TraceSpaceSet, which: str, basis: np.ndarray) -> dict:
    """Worst relative residual of the differential conditions on kernel vectors.

    B_T kernel: div a1 = 0 and curl a2 = 0 (a2 locally constant).
    B_R kernel: curl b1 = 0 and grad b0 = 0 (b0 locally constant).
    Each residual is |L v_i| / |L|, with v_i the block of a unit kernel vector
    and L2(surface) norms on the image.
    """
    d = spaces.dims
    f, e, v = d["p0"], d["rwg"], d["p1"]
    sqrt_area = np.sqrt(spaces.mesh.areas)
    div = surf_div_rwg(spaces)
    grad = surf_grad_p1(spaces)
    w3 = np.repeat(sqrt_area, 3)

    def rel(op, weights, x):
        scaled = op.multiply(weights[:, None]).tocsr()
        return float(np.linalg.norm(scaled @ x) / _op_norm(scaled))

    out = {}
    if which == "BT":
        out["div_a1"] = max(rel(div, sqrt_area, basis[f:f + e, j]) for j in range(basis.shape[1]))
        out["curl_a2"] = max(rel(grad, w3, basis[f + e:, j]) for j in range(basis.shape[1]))
    else:
        out["curl_b1"] = max(rel(scalar_curl_rotrwg(spaces), sqrt_area, basis[v:v + e, j])
                             for j in range(basis.shape[1]))
        out["grad_b0"] = max(rel(grad, w3, basis[:v, j]) for j in range(basis.shape[1]))
    return out


def coercivity_constant(spaces: TraceSpaceSet, which: str = "BR") -> float:
    """Smallest nonzero |eigenvalue| of B in the L2(surface) metric of its space."""
    ctx = context(spaces)
    b = (ctx.ops.BR if which == "BR" else ctx.ops.BT).matrix
    g = (l2_gram_T if which == "BR" else l2_gram_R)(spaces).toarray()
    lam = sla.eigh(b, g, eigvals_only=True)
    mag = np.sort(np.abs(lam))
    dim = ctx.kernel(which)[1]
    return float(mag[dim])
