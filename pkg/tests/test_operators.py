import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from diracbem.geometry import SurfaceMesh, icosahedron
from diracbem.operators import (OperatorBlock, OperatorSet, assemble_BR, assemble_BT,
                                assemble_duality_mass, assemble_rhs_blocks, assemble_slp_scalar,
                                assemble_slp_tangential, operator_set, xi_inverse, xi_map)
from diracbem.quadrature import integrate_kernel_pair
from diracbem.solve import consistency_check, manufactured_traces
from diracbem.spaces import TraceR, TraceSpaceSet, TraceT

from conftest import spaces
from oracle_selfpanel import MICRO_TRIANGLES, MICRO_VERTICES
from reference_values import SELF_PANEL


def _flat_patch(n=4):
    g = np.mgrid[0:n, 0:n].reshape(2, -1).T / (n - 1)
    v = np.c_[g, np.zeros(len(g))]
    tris = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            tris += [[a, a + n, a + n + 1], [a, a + n + 1, a + 1]]
    return TraceSpaceSet(SurfaceMesh(v, tris, closed=False))


def _rel_sym(m):
    return np.abs(m - m.T).max() / np.abs(m).max()


def test_p0_gram_spd_on_icosahedron():
    v = assemble_slp_scalar(spaces("icosahedron"), "p0").matrix
    assert _rel_sym(v) < 1e-14
    assert np.linalg.eigvalsh(0.5 * (v + v.T)).min() > 0


def test_scalar_grams_spd_and_consistent():
    s = spaces("sphere:1")
    v11 = assemble_slp_scalar(s, "p1").matrix
    assert np.linalg.eigvalsh(v11).min() > 0
    v01 = assemble_slp_scalar(s, "p1", "p0").matrix
    np.testing.assert_allclose(v01.T, assemble_slp_scalar(s, "p0", "p1").matrix)
    # partition of unity links the three Grams
    ones_v = np.ones(s.dims["p1"])
    np.testing.assert_allclose(v01 @ ones_v, assemble_slp_scalar(s, "p0").matrix.sum(axis=1),
                               rtol=1e-12)
    with pytest.raises(ValueError):
        assemble_slp_scalar(s, "rwg")


def test_isolated_flat_panel_matches_oracle():
    t = MICRO_TRIANGLES[0]
    m = SurfaceMesh(MICRO_VERTICES[t], [[0, 1, 2]], closed=False)
    v = assemble_slp_scalar(TraceSpaceSet(m), "p0").matrix
    assert v.shape == (1, 1)
    assert v[0, 0] == pytest.approx(SELF_PANEL[0].sum(), rel=1e-6)


@settings(max_examples=5, deadline=None)
@given(scale=st.floats(0.2, 5.0))
def test_scaling_by_s_scales_entries_by_s_cubed(scale):
    base = operator_set(spaces("icosahedron"))
    big = OperatorSet(TraceSpaceSet(icosahedron().transformed(scale)))
    for name in ("V00", "V11", "Vvec"):
        want = scale**3 * getattr(base, name)
        np.testing.assert_allclose(getattr(big, name), want, rtol=1e-11, atol=1e-12 * np.abs(want).max())


def test_tangential_variants_agree_on_flat_patch():
    s = _flat_patch()
    t = assemble_slp_tangential(s, "T", "rwg").matrix
    r = assemble_slp_tangential(s, "R", "rwg").matrix
    assert np.abs(r - t).max() <= 1e-13 * np.abs(t).max()
    np.testing.assert_array_equal(assemble_slp_tangential(s, "R", "rot_rwg").matrix, t)
    with pytest.raises(ValueError):
        assemble_slp_tangential(s, "X")


def test_rwg_gram_spd_on_sphere():
    v = assemble_slp_tangential(spaces("sphere:1"), "T", "rwg").matrix
    assert _rel_sym(v) < 1e-13
    assert np.linalg.eigvalsh(0.5 * (v + v.T)).min() > 0


def test_zero_field_gives_zero_row():
    s = spaces("sphere:1")
    v = assemble_slp_tangential(s, "T").matrix
    assert not np.any(v @ np.zeros(s.dims["rwg"]))
    assert not np.any(assemble_BT(s).matrix @ np.zeros(s.dim_R))


@pytest.mark.parametrize("which", ["BT", "BR"])
def test_first_kind_operators_symmetric(which):
    b = (assemble_BT if which == "BT" else assemble_BR)(spaces("sphere:2"))
    assert b.symmetry_error() <= 1e-12
    assert b.shape == (spaces("sphere:2").dim_R,) * 2


def test_no_scalar_scalar_coupling_in_BT():
    s = spaces("sphere:1")
    b = assemble_BT(s)
    rng = np.random.default_rng(1)
    a = TraceR(rng.standard_normal(s.dims["p0"]), np.zeros(s.dims["rwg"]), np.zeros(s.dims["p1"]))
    c = TraceR(rng.standard_normal(s.dims["p0"]), np.zeros(s.dims["rwg"]), np.zeros(s.dims["p1"]))
    assert c.vector @ b.matrix @ a.vector == 0.0
    assert not b.block(0, 0).any() and not b.block(2, 2).any() and not b.block(0, 2).any()


def test_xi_intertwines_first_kind_operators():
    ops = operator_set(spaces("sphere:2"))
    x = ops.xi.toarray()
    conj = x.T @ ops.BT.matrix @ x
    assert np.abs(conj - ops.BR.matrix).max() <= 1e-10 * np.abs(ops.BR.matrix).max()


def test_xi_relates_data_functionals():
    ops = operator_set(spaces("sphere:1"))
    x = ops.xi.toarray()
    m = ops.mass.matrix
    rhs_r = 0.5 * m - ops.trace_R_of_LT.matrix
    rhs_t = 0.5 * m.T - ops.trace_T_of_LR.matrix
    assert np.abs(rhs_r @ x + x.T @ rhs_t).max() <= 1e-12 * np.abs(rhs_r).max()


def test_xi_map_basics():
    s = spaces("sphere:1")
    assert not xi_map(s, TraceT.zeros(s)).vector.any()
    x = operator_set(s).xi
    b = TraceT.from_vector(s, np.random.default_rng(3).standard_normal(s.dim_T))
    np.testing.assert_array_equal(xi_map(s, b).vector, x @ b.vector)


@settings(max_examples=25, deadline=None)
@given(v=arrays(float, 42 + 120 + 80, elements=st.floats(-1e6, 1e6)))
def test_xi_round_trip_exact(v):
    s = spaces("sphere:1")
    b = TraceT.from_vector(s, v)
    np.testing.assert_array_equal(xi_inverse(s, xi_map(s, b)).vector, v)


def test_rhs_blocks_finite_and_flat_self_terms_vanish():
    s = spaces("sphere:1")
    blocks = assemble_rhs_blocks(s)
    for b in blocks.values():
        assert np.all(np.isfinite(b.matrix))
    t = operator_set(s).tables
    idx = np.arange(s.mesh.n_triangles)
    assert not t.R[idx, idx].any()


def test_double_layer_against_pairwise_integrator():
    s = spaces("sphere:1")
    m = s.mesh
    k = operator_set(s).K01
    rng = np.random.default_rng(5)
    for t in rng.choice(m.n_triangles, 4, replace=False):
        v = int(rng.choice(m.n_vertices))
        # sum over panels containing v of the hat function's share
        direct = 0.0
        for tb in np.flatnonzero((m.triangles == v).any(axis=1)):
            fb = (m.triangles[tb] == v).astype(float)
            direct += integrate_kernel_pair(int(t), int(tb), [1, 1, 1], fb, "DoubleLayerNy", m)
        assert k[t, v] == pytest.approx(direct, rel=1e-10, abs=1e-14)


def test_adjoint_double_layer_is_minus_transpose():
    ops = operator_set(spaces("sphere:1"))
    assert np.abs(ops.K10p + ops.K01.T).max() <= 1e-13 * np.abs(ops.K01).max()


def test_constant_density_identity():
    s = spaces("sphere:2")
    k1 = operator_set(s).K01 @ np.ones(s.dims["p1"])
    assert np.abs(0.5 * s.mesh.areas - k1).max() < 1e-4 * s.mesh.areas.max()


def test_rhs_of_interior_data_is_consistent():
    s = spaces("sphere:2")
    a, _ = manufactured_traces(s, "constant-field")
    assert consistency_check(s, a) < 1e-6


def test_duality_mass():
    s = spaces("sphere:1")
    mass = assemble_duality_mass(s)
    v, e, f = s.dims["p1"], s.dims["rwg"], s.dims["p0"]
    assert mass.row_dims == (v, e, f) and mass.col_dims == (f, e, v)
    one_v, one_f = np.ones(v), np.ones(f)
    assert one_v @ mass.block(0, 0) @ one_f == pytest.approx(s.mesh.areas.sum(), rel=1e-14)
    np.testing.assert_array_equal(mass.block(2, 2), mass.block(0, 0).T)
    x = np.random.default_rng(2).standard_normal(s.dim_R)
    y = mass.matrix @ x
    np.testing.assert_allclose(mass.matrix @ (3.5 * x), 3.5 * y, rtol=0, atol=1e-14 * np.abs(y).max())


def test_duality_mass_rank_structure():
    # the scalar blocks have full rank min(V, F); the edge block is antisymmetric
    # and rank deficient on closed meshes
    s = spaces("sphere:2")
    block = assemble_duality_mass(s)
    mass = block.matrix
    v, e, f = s.dims["p1"], s.dims["rwg"], s.dims["p0"]
    assert np.linalg.matrix_rank(block.block(0, 0)) == min(v, f)
    mx = block.block(1, 1)
    assert np.abs(mx + mx.T).max() < 1e-15
    assert np.linalg.matrix_rank(mx) < e
    assert np.linalg.matrix_rank(mass) < min(s.dim_R, s.dim_T)


def test_operator_block_checks_and_export(tmp_path):
    with pytest.raises(ValueError):
        OperatorBlock(np.zeros((2, 3)), ("p0",), ("p1",), "bad", (2,), (2,))
    s = spaces("icosahedron")
    b = assemble_BR(s)
    csv_path, json_path = b.export(tmp_path / "BR", s.mesh)
    back = np.loadtxt(csv_path, delimiter=",")
    np.testing.assert_array_equal(back, b.matrix)
    head = json.loads(json_path.read_text())
    assert head["shape"] == list(b.shape) and head["mesh_hash"] == s.mesh.digest()
