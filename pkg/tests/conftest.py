"""Shared, session-cached meshes and spaces. Assembly dominates test time, so
every mesh is built and assembled at most once per run."""
from functools import lru_cache

import numpy as np
import pytest

from diracbem.geometry import icosahedron, sphere_mesh, torus_mesh, two_spheres
from diracbem.spaces import TraceSpaceSet


@lru_cache(maxsize=None)
def mesh(name: str):
    kind, _, arg = name.partition(":")
    if kind == "sphere":
        return sphere_mesh(int(arg))
    if kind == "torus":
        nu, nv = (int(t) for t in arg.split("x"))
        return torus_mesh(nu, nv, 2.0, 0.7)
    if kind == "two-spheres":
        return two_spheres(int(arg))
    if kind == "icosahedron":
        return icosahedron()
    raise KeyError(name)


@lru_cache(maxsize=None)
def spaces(name: str) -> TraceSpaceSet:
    return TraceSpaceSet(mesh(name))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
