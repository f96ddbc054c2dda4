from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diracbem.geometry import SurfaceMesh
from diracbem.operators import PanelPairTables
from diracbem.quadrature import (COINCIDENT, EDGE_ADJACENT, SEPARATED, VERTEX_ADJACENT, adjacency,
                                 classify_pair, gauss_triangle, integrate_kernel_pair,
                                 kernel_values, sauter_schwab, separated_order)

from conftest import mesh
from oracle_selfpanel import MICRO_TRIANGLES, MICRO_VERTICES
from reference_values import SELF_PANEL

ORDERS = (1, 2, 3, 4, 5, 6)


def _moment(a, b):
    # int_{ref triangle} x^a y^b
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_centroid_rule():
    q = gauss_triangle(1)
    np.testing.assert_allclose(q.points, [[1 / 3, 1 / 3]])
    np.testing.assert_allclose(q.weights, [0.5])


@pytest.mark.parametrize("order", ORDERS)
def test_weights_sum_to_half(order):
    assert gauss_triangle(order).weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.all(gauss_triangle(order).weights > 0)


def test_first_moment():
    q = gauss_triangle(2)
    assert q.weights @ q.points[:, 0] == pytest.approx(1 / 6, abs=1e-16)


def test_unknown_order():
    with pytest.raises(ValueError):
        gauss_triangle(99)


@settings(max_examples=60, deadline=None)
@given(order=st.sampled_from(ORDERS), data=st.data())
def test_rules_exact_to_their_order(order, data):
    a = data.draw(st.integers(0, order))
    b = data.draw(st.integers(0, order - a))
    q = gauss_triangle(order)
    got = q.weights @ (q.points[:, 0] ** a * q.points[:, 1] ** b)
    assert got == pytest.approx(_moment(a, b), rel=1e-13)


@pytest.mark.parametrize("tag", [COINCIDENT, EDGE_ADJACENT, VERTEX_ADJACENT])
def test_singular_weights_integrate_constant(tag):
    xh, yh, w = sauter_schwab(tag)
    assert w.sum() == pytest.approx(0.25, rel=1e-13)
    # nodes stay in {0 <= x2 <= x1 <= 1}
    for p in (xh, yh):
        assert np.all(p[:, 1] <= p[:, 0] + 1e-15) and np.all(p >= -1e-15) and np.all(p <= 1 + 1e-15)


def test_classification():
    m = mesh("sphere:2")
    assert classify_pair(5, 5, m).tag == COINCIDENT
    e = m.edge_triangles[0]
    assert classify_pair(e[0], e[1], m).tag == EDGE_ADJACENT
    # the panel whose centroid is most nearly antipodal
    far = int(np.argmin(m.centroids @ m.centroids[0]))
    assert classify_pair(0, far, m).tag == SEPARATED
    edge, vert = adjacency(m.triangles, m.n_vertices)
    assert len(edge) == m.n_edges
    for a, b in vert[:20]:
        assert classify_pair(a, b, m).tag == VERTEX_ADJACENT


def test_separated_order_bands():
    assert separated_order(1.0, 1.0) == 6
    assert separated_order(3.0, 1.0) == 4
    assert separated_order(10.0, 1.0) == 2


def test_far_field_matches_midpoint_oracle():
    m = mesh("sphere:3")
    checked = 0
    for ta in range(0, m.n_triangles, 97):
        d = np.linalg.norm(m.centroids - m.centroids[ta], axis=1)
        for tb in np.flatnonzero(d >= 10 * m.diameters.max())[::50]:
            got = integrate_kernel_pair(ta, int(tb), [1, 1, 1], [1, 1, 1], "SingleLayer", m)
            oracle = m.areas[ta] * m.areas[tb] / (4 * np.pi * d[tb])
            assert got == pytest.approx(oracle, rel=1e-3)
            checked += 1
    assert checked > 10


def _unit_right_triangle():
    return SurfaceMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], closed=False)


def test_coincident_unit_triangle_converged():
    m = _unit_right_triangle()
    vals = [integrate_kernel_pair(0, 0, [1, 1, 1], [1, 1, 1], "SingleLayer", m, n_singular=n)
            for n in (8, 9, 10)]
    assert vals[-1] > 0
    assert abs(vals[-1] - vals[-2]) < 1e-6 * vals[-1]
    assert abs(vals[-2] - vals[-3]) < 1e-6 * vals[-1]


def test_coincident_double_layer_vanishes():
    m = mesh("sphere:1")
    for k in ("DoubleLayerNy", "DoubleLayerNx"):
        assert integrate_kernel_pair(7, 7, [1, -2, 3], [0.5, 1, 4], k, m) == 0.0


@pytest.mark.parametrize("pick", ["coincident", "edge", "vertex"])
def test_singular_rule_convergence(pick):
    m = mesh("sphere:1")
    edge, vert = adjacency(m.triangles, m.n_vertices)
    ta, tb = {"coincident": (3, 3), "edge": tuple(edge[0]), "vertex": tuple(vert[0])}[pick]
    v = [integrate_kernel_pair(ta, tb, [1, 0.5, 2], [1, 1, 0.2], "SingleLayer", m, n_singular=n)
         for n in (2, 4, 8)]
    assert abs(v[1] - v[0]) >= 4 * abs(v[2] - v[1])


def test_guard_catches_coincident_points():
    x = np.zeros((1, 3))
    with pytest.raises(RuntimeError):
        kernel_values("SingleLayer", x, x, guard=1e-14)
    with pytest.raises(ValueError):
        kernel_values("Hypersingular", x, x + 1)


def test_unknown_kernel():
    with pytest.raises(ValueError):
        integrate_kernel_pair(0, 1, [1, 1, 1], [1, 1, 1], "Unknown", mesh("icosahedron"))


def test_micro_mesh_self_panels_match_oracle():
    m = SurfaceMesh(MICRO_VERTICES, MICRO_TRIANGLES, closed=False)
    tables = PanelPairTables(m)
    for t, ref in enumerate(SELF_PANEL):
        local = list(m.triangles[t])
        perm = [local.index(v) for v in MICRO_TRIANGLES[t]]
        got = tables.S[t, t][np.ix_(perm, perm)]
        np.testing.assert_allclose(got, ref, rtol=5e-7)
        # the one-pair integrator agrees with the table
        one = integrate_kernel_pair(t, t, [1, 0, 0], [0, 1, 0], "SingleLayer", m)
        assert one == pytest.approx(tables.S[t, t][0, 1], rel=1e-12)


@pytest.mark.slow
def test_oracle_reproduces_frozen_values():
    from oracle_selfpanel import extrapolated
    for t, ref in zip(MICRO_TRIANGLES, SELF_PANEL):
        np.testing.assert_allclose(extrapolated(MICRO_VERTICES[t], 6), ref, rtol=1e-13)


pairs = st.tuples(st.integers(0, 79), st.integers(0, 79))
vals3 = st.lists(st.floats(-5, 5), min_size=3, max_size=3)


@settings(max_examples=40, deadline=None)
@given(pair=pairs, fa=vals3, fb=vals3)
def test_single_layer_symmetry_is_exact(pair, fa, fb):
    m = mesh("sphere:1")
    ta, tb = pair
    assert (integrate_kernel_pair(ta, tb, fa, fb, "SingleLayer", m)
            == integrate_kernel_pair(tb, ta, fb, fa, "SingleLayer", m))
    assert (integrate_kernel_pair(ta, tb, fa, fb, "DoubleLayerNy", m)
            == -integrate_kernel_pair(tb, ta, fb, fa, "DoubleLayerNx", m))


@settings(max_examples=30, deadline=None)
@given(t=st.integers(0, 79), f=st.lists(st.floats(0, 10), min_size=3, max_size=3)
       .filter(lambda v: max(v) > 1e-3))
def test_self_panel_positive(t, f):
    assert integrate_kernel_pair(t, t, f, f, "SingleLayer", mesh("sphere:1")) > 0
