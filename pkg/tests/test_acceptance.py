"""Acceptance suite: one test and one PASS/FAIL line per criterion, at the
required tolerances. Lines are repeated in the pytest terminal summary."""
import time

import numpy as np
import pytest

from diracbem.geometry import SurfaceMesh, topology
from diracbem.operators import PanelPairTables, operator_set
from diracbem.potentials import (decay_probe, dirac_residual, fibonacci_directions, jump_probe,
                                 represent)
from diracbem.solve import (calderon_check, context, gap_ratio, kernel_structure, l2_gram_T,
                            manufactured_field, manufactured_traces, relative_l2_error,
                            smooth_probe_data, solve_bvp_R, solve_bvp_T)
from diracbem.spaces import curl_p1_to_rwg, surf_div_rwg

from acceptance_log import report
from conftest import spaces
from oracle_selfpanel import MICRO_TRIANGLES, MICRO_VERTICES
from reference_values import SELF_PANEL

LEVELS = (1, 2, 3)
KERNEL_CASES = (("sphere:2", 2), ("torus:12x12", 4), ("two-spheres:2", 4))
INTERIOR_PROBES = np.vstack([[0.0, 0.0, 0.0], 0.3 * fibonacci_directions(12)])


def _decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def _fmt(values):
    return "[" + ", ".join(f"{v:.3g}" for v in values) + "]"


def test_criterion_01_kernel_dimension_equals_betti_sum():
    rows, ok = [], True
    for name, expected in KERNEL_CASES:
        s = spaces(name)
        assert topology(s.mesh).betti_sum == expected
        for which in ("BT", "BR"):
            t0 = time.perf_counter()
            _, dim, sigma = context(s).kernel(which)
            elapsed = time.perf_counter() - t0
            gap = gap_ratio(sigma, dim)
            ok &= dim == expected and gap >= 100 and elapsed < 120
            rows.append(f"{name} {which} dim={dim} gap={gap:.1e}")
    assert report(1, "kernel dim = Betti sum", ok, "; ".join(rows))


def test_criterion_02_kernel_structure():
    worst, ok = {}, True
    for name, _ in KERNEL_CASES:
        s = spaces(name)
        for which in ("BT", "BR"):
            res = kernel_structure(s, which, context(s).kernel(which)[0])
            for k, v in res.items():
                worst[k] = max(worst.get(k, 0.0), v)
                ok &= v < 1e-6
    detail = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items())) + " (< 1e-6)"
    assert report(2, "kernel vectors satisfy div/curl/locally-constant", ok, detail)


def test_criterion_03_jump_relations():
    s = spaces("sphere:3")
    a, b = smooth_probe_data(s)
    jt = jump_probe("LT", s, a)
    jr = jump_probe("LR", s, b)
    values = {"[T]L_T": jt.error_T(), "[R]L_T-Id": jt.error_R(),
              "[R]L_R": jr.error_R(), "[T]L_R-Id": jr.error_T()}
    ok = (values["[T]L_T"] < 2e-2 and values["[R]L_R"] < 2e-2
          and values["[R]L_T-Id"] < 5e-2 and values["[T]L_R-Id"] < 5e-2)
    detail = ", ".join(f"{k}={v:.2e}" for k, v in values.items()) + " (zero < 2e-2, Id < 5e-2)"
    assert report(3, "jump relations on sphere subdiv 3", ok, detail)


def test_criterion_04_potentials_solve_dirac_equation():
    s = spaces("sphere:3")
    a, b = smooth_probe_data(s)
    pts = np.vstack([INTERIOR_PROBES[:5], 0.6 * fibonacci_directions(6)])
    rt = dirac_residual("LT", s, a, pts).max()
    rr = dirac_residual("LR", s, b, pts).max()
    ok = rt < 1e-4 and rr < 1e-4
    assert report(4, "finite-difference Dirac residual", ok, f"L_T {rt:.2e}, L_R {rr:.2e} (< 1e-4)")


def test_criterion_05_representation_formula():
    ok, parts = True, []
    for case in ("constant-field", "harmonic"):
        g = manufactured_field(case)(INTERIOR_PROBES)
        errs = []
        for lev in LEVELS:
            s = spaces(f"sphere:{lev}")
            u = represent(s, manufactured_traces(s, case), "Interior", INTERIOR_PROBES)
            errs.append(float(np.linalg.norm(u.values - np.pad(g, ((0, 0), (1, 4))))
                              / np.linalg.norm(g)))
        ok &= errs[-1] < 1e-2 and _decreasing(errs)
        parts.append(f"{case} {_fmt(errs)}")
    assert report(5, "representation formula, < 1% and decreasing", ok, "; ".join(parts))


def test_criterion_06_calderon_algebra():
    idem, sums = [], []
    for lev in LEVELS:
        s = spaces(f"sphere:{lev}")
        r = calderon_check(s, manufactured_traces(s, "constant-field"))
        idem.append(r["idempotency"])
        sums.append(r["sum_identity"])
    cauchy = r["cauchy_P_plus"]
    ok = all(v == 0.0 for v in sums) and _decreasing(idem) and cauchy < 5e-2
    detail = f"sum={max(sums)}, idempotency {_fmt(idem)}, P+ data {cauchy:.2e} (< 5e-2)"
    assert report(6, "Calderon projector algebra", ok, detail)


def test_criterion_07_first_kind_solve():
    ok, parts = True, []
    for case, bound in (("constant-field", 5e-2), ("harmonic", 5e-2)):
        errs, mult = [], []
        for lev in LEVELS:
            s = spaces(f"sphere:{lev}")
            a, b = manufactured_traces(s, case)
            sol = solve_bvp_R(s, a)
            errs.append(relative_l2_error(l2_gram_T(s), sol.vector, b.vector))
            mult.append(sol.multiplier_rel)
        ok &= errs[-1] < bound and _decreasing(errs) and max(mult) < 1e-6
        parts.append(f"{case} err {_fmt(errs)} multiplier {max(mult):.1e}")
    assert report(7, "Dirichlet-to-Neumann recovery", ok, "; ".join(parts))


def test_criterion_08_xi_duality():
    conj_err = []
    for lev in (2, 3):
        ops = operator_set(spaces(f"sphere:{lev}"))
        x = ops.xi.toarray()
        br = ops.BR.matrix
        conj_err.append(np.abs(x.T @ ops.BT.matrix @ x - br).max() / np.abs(br).max())
    s = spaces("sphere:3")
    path_err = []
    for case in ("constant-field", "harmonic"):
        _, b = manufactured_traces(s, case)
        d, v = solve_bvp_T(s, b), solve_bvp_T(s, b, path="xi")
        path_err.append(np.linalg.norm(d.vector - v.vector) / np.linalg.norm(d.vector))
    ok = max(conj_err) < 1e-10 and max(path_err) < 1e-8
    detail = f"conjugation {max(conj_err):.1e} (< 1e-10), paths {max(path_err):.1e} (< 1e-8)"
    assert report(8, "Xi intertwines B_T and B_R", ok, detail)


def test_criterion_09_symmetry_complex_decay():
    s = spaces("sphere:3")
    ops = operator_set(s)
    sym = max(ops.BT.symmetry_error(), ops.BR.symmetry_error())
    div, curl = surf_div_rwg(s), curl_p1_to_rwg(s)
    complex_err = np.abs((div @ curl).toarray()).max()
    a, b = smooth_probe_data(spaces("sphere:2"))
    radii = [4.0, 8.0, 16.0, 32.0]
    ex = [decay_probe("LT", spaces("sphere:2"), a, radii).exponent,
          decay_probe("LR", spaces("sphere:2"), b, radii).exponent]
    ok = sym <= 1e-12 and complex_err < 1e-13 and all(abs(e + 2.0) <= 0.2 for e in ex)
    detail = (f"symmetry {sym:.1e} (<= 1e-12), div.curl max entry {complex_err:.1e} (< 1e-13), "
              f"decay exponents {_fmt(ex)} (-2 +- 0.2)")
    assert report(9, "symmetry, discrete complex, decay", ok, detail)


def test_criterion_10_self_panel_oracle():
    m = SurfaceMesh(MICRO_VERTICES, MICRO_TRIANGLES, closed=False)
    tables = PanelPairTables(m)
    worst = 0.0
    for t, ref in enumerate(SELF_PANEL):
        local = list(m.triangles[t])
        perm = [local.index(v) for v in MICRO_TRIANGLES[t]]
        got = tables.S[t, t][np.ix_(perm, perm)]
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    ok = worst < 5e-7
    assert report(10, "self-panel entries vs independent oracle", ok,
                  f"max relative deviation {worst:.1e} (6 significant digits: < 5e-7)")
