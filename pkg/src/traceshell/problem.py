"""Problem definition, discretization and solution handles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import AssembledSystem, BoundaryCondition, PointLoad, assemble_system
from .geometry import LevelSet
from .hermite import BackgroundGrid, DofMap
from .quadrature import build_surface_rules
from .shell import MaterialParams
from .solvers import SolveReport, solve


@dataclass
class ShellProblem:
    """A complete shell problem on an implicitly defined mid-surface."""

    levelset: LevelSet
    material: MaterialParams
    body_force: tuple | None = None
    bcs: list = field(default_factory=list)
    point_loads: list = field(default_factory=list)
    q: int = 6
    max_depth: int = 8

    def discretize(self, level: int) -> "DiscreteShell":
        return DiscreteShell(self, level)


class DiscreteShell:
    """Grid, quadrature rules and assembled system at one refinement level."""

    def __init__(self, problem: ShellProblem, level: int):
        self.problem = problem
        self.level = level
        self.grid = BackgroundGrid(problem.levelset.box, level)
        self.dofmap = DofMap.from_levelset(self.grid, problem.levelset)
        self.rules = build_surface_rules(
            problem.levelset, self.grid, self.dofmap.cells,
            q=problem.q, max_depth=problem.max_depth)
        self.system: AssembledSystem = assemble_system(
            problem.levelset, self.grid, self.dofmap, problem.material, self.rules,
            body_force=problem.body_force, bcs=problem.bcs,
            point_loads=problem.point_loads, q=problem.q, max_depth=problem.max_depth)

    @property
    def n_active_cells(self) -> int:
        return len(self.dofmap.cells)

    def solve(self, strategy: str = "nullspace", **kwargs) -> "Solution":
        u_kept, report = solve(self.system, strategy, **kwargs)
        return Solution(self, self.system.expand(u_kept), report)

    def surface_points(self) -> np.ndarray:
        if not self.rules:
            return np.zeros((0, 3))
        return np.concatenate([self.rules[c].points for c in sorted(self.rules)])


class Solution:
    """A solved displacement field over the active DOFs."""

    def __init__(self, discrete: DiscreteShell, coeffs: np.ndarray, report: SolveReport):
        self.discrete = discrete
        self.coeffs = coeffs
        self.report = report

    def probe(self, x, tol: float = 1e-6) -> np.ndarray:
        return probe_displacement(self, x, tol=tol)

    def displacement_at_rule_points(self) -> np.ndarray:
        d = self.discrete
        parts = [d.dofmap.displacement(self.coeffs, c, d.rules[c].points)
                 for c in sorted(d.rules)]
        if not parts:
            return np.zeros((0, 3))
        return np.concatenate(parts)


def probe_displacement(solution: Solution, x, tol: float = 1e-6) -> np.ndarray:
    """u_h at a surface point, evaluated in its owning active cell."""
    x = np.asarray(x, float)
    d = solution.discrete
    ls = d.problem.levelset
    phi = float(ls.value(x[None, :])[0])
    scale = float(np.linalg.norm(ls.gradient(x[None, :])[0])) * d.grid.box.diam
    if abs(phi) > tol * max(scale, 1e-30):
        raise ValueError(f"probe point {x} is off the surface (phi={phi:g})")
    cell = d.dofmap.owning_cell(x)
    return d.dofmap.displacement(solution.coeffs, cell, x[None, :])[0]
