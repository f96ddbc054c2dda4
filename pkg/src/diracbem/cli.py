"""Command line drivers. Every subcommand prints a JSON report.

Exit codes: 0 success, 1 usage or input error, 2 failed --check.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import MeshError, mesh_from_spec, sphere_mesh, topology, two_spheres
from .operators import assemble_duality_mass, operator_set
from .potentials import BASE_ORDER, decay_probe, jump_probe
from .solve import (KERNEL_REL_TOL, KernelGapError, MANUFACTURED, calderon_check,
                    gap_ratio, l2_gram_R, l2_gram_T, manufactured_traces, nullspace,
                    relative_l2_error, smooth_probe_data, solve_bvp_R, solve_bvp_T)
from .spaces import TraceSpaceSet

SUBCOMMANDS = ("topology", "assemble", "kernel-dim", "calderon", "solve", "convergence",
               "jump-test", "decay-test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_levels(text: str) -> list[int]:
    """'1..3' or '1,2,3' -> [1, 2, 3]."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            levels = list(range(int(lo), int(hi) + 1))
        else:
            levels = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --levels value {text!r}") from exc
    if not levels or min(levels) < 0:
        raise UsageError(f"bad --levels value {text!r}")
    return levels


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diracbem", description=__doc__)
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--mesh", default="sphere:2",
                   help="sphere:<n>, torus:<nu>x<nv>, two-spheres:<n>, icosahedron, or a .off/.msh "
                        "file; with --levels the family names sphere / two-spheres")
    p.add_argument("--levels", default=None, help="refinement levels, e.g. 1..3")
    p.add_argument("--order", type=int, default=BASE_ORDER,
                   help="triangle rule order for potential evaluation")
    p.add_argument("--tol", type=float, default=KERNEL_REL_TOL, help="kernel detection tolerance")
    p.add_argument("--operator", choices=("BT", "BR"), default="BR")
    p.add_argument("--case", choices=sorted(MANUFACTURED), default="constant-field")
    p.add_argument("--out", default=None, help="JSON report path; CSV artifacts go next to it")
    p.add_argument("--check", action="store_true", help="exit 2 when an acceptance check fails")
    return p


def _mesh_for(cfg, level: int | None = None):
    spec = cfg.mesh
    if level is not None:
        family = spec.split(":")[0]
        if family == "sphere":
            return sphere_mesh(level)
        if family == "two-spheres":
            return two_spheres(level)
        raise UsageError("--levels needs --mesh sphere or two-spheres")
    try:
        return mesh_from_spec(spec)
    except (OSError, MeshError, ValueError) as exc:
        raise UsageError(f"cannot load mesh {spec!r}: {exc}") from exc


def _levels(cfg) -> list[int]:
    return parse_levels(cfg.levels) if cfg.levels else [1, 2, 3]


def _monotone_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


# -- subcommands ------------------------------------------------------------------

def cmd_topology(cfg, out_dir):
    m = _mesh_for(cfg)
    t = topology(m)
    return {"beta": list(t.betti), "chi": t.euler, "betti_sum": t.betti_sum,
            "V": m.n_vertices, "E": m.n_edges, "F": m.n_triangles, "mesh_hash": m.digest()}, True


def cmd_assemble(cfg, out_dir):
    m = _mesh_for(cfg)
    s = TraceSpaceSet(m)
    ops = operator_set(s)
    block = ops.BR if cfg.operator == "BR" else ops.BT
    rep = {"operator": cfg.operator, "shape": list(block.shape), "mesh_hash": m.digest(),
           "symmetry_error": block.symmetry_error(), "dims": s.dims}
    if out_dir is not None:
        csv_path, json_path = block.export(out_dir / f"{cfg.operator}", m)
        mass = assemble_duality_mass(s)
        mass.export(out_dir / "duality_mass", m)
        rep["artifacts"] = [csv_path.name, json_path.name, "duality_mass.csv", "duality_mass.json"]
    return rep, block.symmetry_error() <= 1e-12


def cmd_kernel_dim(cfg, out_dir):
    m = _mesh_for(cfg)
    s = TraceSpaceSet(m)
    ops = operator_set(s)
    block = ops.BR if cfg.operator == "BR" else ops.BT
    t0 = time.perf_counter()
    try:
        _, dim, sigma = nullspace(block, rel_tol=cfg.tol, return_values=True)
    except KernelGapError as exc:
        return {"operator": cfg.operator, "error": str(exc),
                "tail": [float(x) for x in exc.singular_values[-8:]]}, False
    betti = topology(m).betti_sum
    rep = {"operator": cfg.operator, "kernel_dim": dim, "betti_sum": betti, "match": dim == betti,
           "gap_ratio": gap_ratio(sigma, dim), "mesh_hash": m.digest(),
           "svd_seconds": round(time.perf_counter() - t0, 3)}
    return rep, rep["match"] and rep["gap_ratio"] >= 100


def cmd_calderon(cfg, out_dir):
    rows = []
    for lev in _levels(cfg):
        m = _mesh_for(cfg, lev)
        s = TraceSpaceSet(m)
        r = calderon_check(s, manufactured_traces(s, cfg.case), smooth_probe_data(s))
        rows.append({"level": lev, "F": m.n_triangles, **r})
    idem = [r["idempotency"] for r in rows]
    ok = (_monotone_decreasing(idem) and all(r["sum_identity"] == 0.0 for r in rows)
          and rows[-1]["cauchy_P_plus"] < 5e-2)
    return {"case": cfg.case, "levels": rows, "idempotency_decreasing": _monotone_decreasing(idem)}, ok


def _solve_case(s, cfg):
    a, b = manufactured_traces(s, cfg.case)
    if cfg.operator == "BR":
        sol = solve_bvp_R(s, a)
        err = relative_l2_error(l2_gram_T(s), sol.vector, b.vector)
    else:
        sol = solve_bvp_T(s, b)
        err = relative_l2_error(l2_gram_R(s), sol.vector, a.vector)
    return sol, err


def cmd_solve(cfg, out_dir):
    m = _mesh_for(cfg)
    s = TraceSpaceSet(m)
    sol, err = _solve_case(s, cfg)
    rep = {"operator": cfg.operator, "case": cfg.case, "mesh_hash": m.digest(), "dims": s.dims,
           "kernel_dim": sol.kernel_dim, "residuals": sol.residuals,
           "multiplier_rel": sol.multiplier_rel, "error_vs_exact": err}
    if out_dir is not None:
        np.savetxt(out_dir / "solution.csv", sol.vector[None, :], delimiter=",", fmt="%.17g")
    return rep, err < 5e-2 and sol.multiplier_rel < 1e-6


def cmd_convergence(cfg, out_dir):
    rows = []
    for lev in _levels(cfg):
        m = _mesh_for(cfg, lev)
        s = TraceSpaceSet(m)
        sol, err = _solve_case(s, cfg)
        rows.append({"level": lev, "F": m.n_triangles, "error": err,
                     "multiplier_rel": sol.multiplier_rel})
    if out_dir is not None:
        with open(out_dir / "convergence.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    errors = [r["error"] for r in rows]
    return {"operator": cfg.operator, "case": cfg.case, "levels": rows,
            "monotone": _monotone_decreasing(errors)}, _monotone_decreasing(errors)


def _probe_densities(s):
    a, b = smooth_probe_data(s)
    return {"LT": a, "LR": b}


def cmd_jump_test(cfg, out_dir):
    m = _mesh_for(cfg)
    s = TraceSpaceSet(m)
    rep, ok = {"mesh_hash": m.digest()}, True
    for kind, dens in _probe_densities(s).items():
        j = jump_probe(kind, s, dens, order=cfg.order)
        et, er = j.error_T(), j.error_R()
        rep[kind] = {"jump_T_error": et, "jump_R_error": er}
        # the jump that should vanish gets the tight bound, the identity jump the loose one
        zero_err, id_err = (et, er) if kind == "LT" else (er, et)
        ok &= zero_err < 2e-2 and id_err < 5e-2
    return rep, ok


def cmd_decay_test(cfg, out_dir):
    m = _mesh_for(cfg)
    s = TraceSpaceSet(m)
    reach = np.linalg.norm(m.vertices - m.vertices.mean(axis=0), axis=1).max()
    radii = reach * np.array([4.0, 8.0, 16.0, 32.0])
    rep, ok = {"mesh_hash": m.digest(), "radii": radii.tolist()}, True
    for kind, dens in _probe_densities(s).items():
        d = decay_probe(kind, s, dens, radii, order=cfg.order)
        rep[kind] = {"exponent": d.exponent, "zero_field": d.zero_field}
        ok &= abs(d.exponent + 2.0) <= 0.2
    return rep, ok


HANDLERS = {"topology": cmd_topology, "assemble": cmd_assemble, "kernel-dim": cmd_kernel_dim,
            "calderon": cmd_calderon, "solve": cmd_solve, "convergence": cmd_convergence,
            "jump-test": cmd_jump_test, "decay-test": cmd_decay_test}


def main(argv=None) -> int:
    try:
        cfg = build_parser().parse_args(argv)
        out_path = Path(cfg.out) if cfg.out else None
        out_dir = None
        if out_path is not None:
            out_dir = out_path.parent
            out_dir.mkdir(parents=True, exist_ok=True)
        result, passed = HANDLERS[cfg.command](cfg, out_dir)
    except UsageError as exc:
        print(f"diracbem: error: {exc}", file=sys.stderr)
        return 1
    report = {**result, "command": cfg.command,
              "config": {k: v for k, v in sorted(vars(cfg).items())},
              "version": __version__, "passed": bool(passed),
              "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if out_path is not None:
        out_path.write_text(text + "\n", encoding="utf-8")
    if cfg.check and not passed:
        return 2
    return 0


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


if __name__ == "__main__":
    sys.exit(main())
