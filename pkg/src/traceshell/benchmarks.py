"""The three built-in benchmark shells: roof, hemisphere, gyroid.

Geometry, material and loading constants follow the standard shell obstacle
course setups; the cylindrical roof is loaded by gravity and supported by
rigid diaphragms, the hemisphere floats freely under four self-equilibrated
point loads, and the gyroid patch is clamped on its x = 0 boundary curve
under a global vertical surface load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import BCKind, BoundaryCondition, PointLoad
from .expressions import parse_expression
from .geometry import Box, LevelSet
from .problem import ShellProblem, Solution
from .shell import MaterialParams

BENCHMARKS = ("roof", "hemisphere", "gyroid")

_R_SIN40 = 25.0 * math.sin(40.0 / 180.0 * math.pi)
_R_COS40 = 25.0 * math.cos(40.0 / 180.0 * math.pi)


@dataclass
class BenchmarkSpec:
    name: str
    problem: ShellProblem
    probe_point: np.ndarray
    probe_kind: str          # "z" or "radial"
    reference: float         # tabulated displacement at a converged level

    def probe_value(self, solution: Solution) -> float:
        u = solution.probe(self.probe_point)
        if self.probe_kind == "z":
            return float(u[2])
        ls = self.problem.levelset
        n = ls.gradient(self.probe_point[None, :])[0]
        n = n / np.linalg.norm(n)
        return float(u @ n)


def _roof(q: int, max_depth: int) -> BenchmarkSpec:
    box = Box.from_bounds([(0.0, 50.0), (-_R_SIN40, _R_SIN40), (10.0, 31.25)])
    ls = LevelSet(parse_expression("y^2 + z^2 - 625"), box)
    mat = MaterialParams(e_modulus=4.32e8, poisson=0.0, thickness=0.25)
    bcs = [BoundaryCondition(face, BCKind.DISPLACEMENT, value=0.0, component=i)
           for face in ("x_min", "x_max") for i in (1, 2)]
    problem = ShellProblem(levelset=ls, material=mat,
                           body_force=(parse_expression("0"), parse_expression("0"),
                                       parse_expression("-90")),
                           bcs=bcs, q=q, max_depth=max_depth)
    # point A: middle of one free edge, on the 40-degree arc boundary
    probe = np.array([25.0, _R_SIN40, _R_COS40])
    return BenchmarkSpec("roof", problem, probe, "z", -0.30060)


def _hemisphere(q: int, max_depth: int) -> BenchmarkSpec:
    box = Box.from_bounds([(-12.5, 12.5), (-12.5, 12.5), (0.0, 12.5)])
    ls = LevelSet(parse_expression("x^2 + y^2 + z^2 - 100"), box)
    mat = MaterialParams(e_modulus=6.825e7, poisson=0.3, thickness=0.04)
    f = 2.0
    loads = [
        PointLoad([10.0, 0.0, 0.0], [f, 0.0, 0.0]),
        PointLoad([-10.0, 0.0, 0.0], [-f, 0.0, 0.0]),
        PointLoad([0.0, 10.0, 0.0], [0.0, -f, 0.0]),
        PointLoad([0.0, -10.0, 0.0], [0.0, f, 0.0]),
    ]
    problem = ShellProblem(levelset=ls, material=mat, point_loads=loads,
                           q=q, max_depth=max_depth)
    return BenchmarkSpec("hemisphere", problem, np.array([10.0, 0.0, 0.0]),
                         "radial", 0.09239)


def _gyroid(q: int, max_depth: int) -> BenchmarkSpec:
    box = Box.from_bounds([(0.0, 2.0), (-0.5, 0.5), (-0.5, 0.5)])
    phi = parse_expression(
        "sin(pi*x)*cos(pi*y) + sin(pi*y)*cos(pi*z) + sin(pi*z)*cos(pi*x)")
    ls = LevelSet(phi, box)
    mat = MaterialParams(e_modulus=7e10, poisson=0.3, thickness=0.03)
    bcs = [BoundaryCondition("x_min", BCKind.DISPLACEMENT, value=0.0, component=i)
           for i in range(3)]
    bcs.append(BoundaryCondition("x_min", BCKind.ROTATION_CLAMP, value=0.0))
    problem = ShellProblem(levelset=ls, material=mat,
                           body_force=(parse_expression("0"), parse_expression("0"),
                                       parse_expression("-1e7")),
                           bcs=bcs, q=q, max_depth=max_depth)
    return BenchmarkSpec("gyroid", problem, np.array([2.0, 0.5, -0.25]),
                         "z", -1.80891)


def benchmark(name: str, q: int = 6, max_depth: int = 8) -> BenchmarkSpec:
    try:
        return {"roof": _roof, "hemisphere": _hemisphere, "gyroid": _gyroid}[name](q, max_depth)
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")


def run_benchmark(name: str, levels, strategies=("nullspace",), alpha=None,
                  rank_tol=None, dense_limit=4096, q: int = 6, max_depth: int = 8):
    """Probe-displacement table rows for the requested levels and strategies."""
    import time as _time

    spec = benchmark(name, q=q, max_depth=max_depth)
    rows = []
    for level in levels:
        disc = spec.problem.discretize(level)
        for strategy in strategies:
            t0 = _time.perf_counter()
            kwargs = {"rank_tol": rank_tol, "dense_limit": dense_limit}
            if strategy == "penalty":
                kwargs["alpha"] = alpha
            sol = disc.solve(strategy, **kwargs)
            rows.append({
                "benchmark": name, "level": level, "strategy": strategy,
                "value": spec.probe_value(sol), "reference": spec.reference,
                "n_dofs": disc.system.n_dofs,
                "seconds": _time.perf_counter() - t0,
                "report": sol.report,
            })
    return rows
