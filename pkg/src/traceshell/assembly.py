"""Assembly of the discrete stiffness, constraint and load forms.

The stiffness form is

    K(u, v) = t int gamma(v):E:gamma(u) + t^3/12 int rho(v):E:rho(u)

over the surface; Dirichlet data enters weakly through the constraint form

    M(u, v) = int_{G_Di} v.u + int_{G_Dc} [grad_S(n.v).mu][grad_S(n.u).mu]

on boundary curves, with matching right-hand sides f_N and f_D.  For a basis
function v = N_s e_c the strains factorize,

    gamma = 1/2 (P e_c (x) P grad N_s + sym),    rho = n_c (P hess N_s P - (grad N_s . n) W),

which turns the 192x192 cell matrix into a handful of einsum contractions
over the quadrature nodes.  Cells are processed in index order and local
blocks are symmetrized before scatter, so K = K^T exactly and results are
reproducible run to run.

Structurally zero rows/columns (DOFs whose basis functions never meet the
surface, boundary or loads) are identified after assembly and dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .expressions import Expr, as_expr
from .geometry import LevelSet
from .hermite import BackgroundGrid, DofMap
from .quadrature import LineRule, SurfaceRule, line_rule
from .shell import MaterialParams

log = logging.getLogger(__name__)

FACES = {
    "x_min": (0, 0), "x_max": (0, 1),
    "y_min": (1, 0), "y_max": (1, 1),
    "z_min": (2, 0), "z_max": (2, 1),
}


class BCKind(Enum):
    DISPLACEMENT = "displacement"       # u . e_i prescribed (Dirichlet)
    ROTATION_CLAMP = "rotation"         # grad_S(n.u).mu prescribed (Dirichlet)
    FORCE = "force"                     # boundary force component (Neumann)
    MOMENT_TANGENT = "moment_t"         # t.M.mu prescribed (Neumann)
    MOMENT_CONORMAL = "moment_mu"       # mu.M.mu prescribed (Neumann)


_DIRICHLET = (BCKind.DISPLACEMENT, BCKind.ROTATION_CLAMP)
_NEEDS_COMPONENT = (BCKind.DISPLACEMENT, BCKind.FORCE)


@dataclass
class BoundaryCondition:
    """One condition on (part of) a cuboid face of B.

    ``value`` is a constant, an expression of x, y, z, or a callable taking
    the LineRule and returning per-node data.  ``predicate`` restricts the
    region to points where the expression is positive.
    """

    face: str
    kind: BCKind
    value: object = 0.0
    component: int | None = None
    predicate: Expr | None = None

    def __post_init__(self):
        if self.face not in FACES:
            raise ValueError(f"unknown face {self.face!r}")
        if self.kind in _NEEDS_COMPONENT and self.component not in (0, 1, 2):
            raise ValueError(f"{self.kind.value} condition needs component 0..2")

    @property
    def is_dirichlet(self) -> bool:
        return self.kind in _DIRICHLET


@dataclass
class PointLoad:
    location: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        self.location = np.asarray(self.location, float)
        self.force = np.asarray(self.force, float)


@dataclass
class AssembledSystem:
    """K, M, f_N, f_D over the kept (structurally nonzero) active DOFs."""

    stiffness: sp.csr_matrix
    constraint: sp.csr_matrix
    f_n: np.ndarray
    f_d: np.ndarray
    dofmap: DofMap
    kept: np.ndarray                  # bool over the dofmap's active DOFs
    line_rules: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.f_n.shape[0]

    def expand(self, u: np.ndarray) -> np.ndarray:
        """Scatter a kept-DOF vector back to the full active-DOF numbering."""
        full = np.zeros(self.dofmap.n_dofs)
        full[np.flatnonzero(self.kept)] = u
        return full

    def restrict(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs[self.kept]


def _quantity_key(bc: BoundaryCondition):
    if bc.kind in (BCKind.DISPLACEMENT, BCKind.FORCE):
        return ("u", bc.component)
    if bc.kind in (BCKind.ROTATION_CLAMP, BCKind.MOMENT_CONORMAL):
        return ("rot_mu",)
    return ("rot_t",)


def _check_regions(bcs):
    seen = {}
    for bc in bcs:
        key = (bc.face, _quantity_key(bc))
        if key in seen and seen[key] != bc.is_dirichlet and bc.predicate is None:
            raise ValueError(
                f"Dirichlet and Neumann data for the same quantity on face {bc.face}")
        seen.setdefault(key, bc.is_dirichlet)


def _bc_values(value, rule: LineRule) -> np.ndarray:
    if callable(value) and not isinstance(value, Expr):
        return np.asarray(value(rule), float)
    if isinstance(value, Expr):
        return value(rule.points)
    return np.full(len(rule), float(value))


def _rotation_rows(be_values, be_grads, frames, direction) -> np.ndarray:
    """grad_S(n . v) . d for every local basis function v = N_s e_c.

    Using grad n = P hess(phi)/|grad phi| and tangential d this reduces to
    rot[q, s, c] = -N_s (W d)_c + n_c (grad N_s . d).
    """
    wd = np.einsum("qij,qj->qi", frames.W, direction)
    gd = np.einsum("qsj,qj->qs", be_grads, direction)
    return (-be_values[:, :, None] * wd[:, None, :]
            + gd[:, :, None] * frames.n[:, None, :])


def cell_stiffness(rule: SurfaceRule, be, mat: MaterialParams) -> np.ndarray:
    """Local 192x192 stiffness block of one cut cell (exactly symmetric)."""
    w = rule.weights
    fr = rule.frames
    P, W, H, n = fr.P, fr.W, fr.H, fr.n
    g = be.grads
    z = np.einsum("qij,qsj->qsi", P, g, optimize=True)
    a = np.einsum("qij,qsjk,qkl->qsil", P, be.hess, P, optimize=True)
    b = np.einsum("qsj,qj->qs", g, n)
    R = a - b[:, :, None, None] * W[:, None, :, :]
    tau = np.einsum("qsii->qs", a) - b * H[:, None]

    t = mat.thickness
    lam, mu = mat.lam, mat.mu
    wm = w * t
    wb = w * t**3 / 12.0

    dotz = np.einsum("qsi,qti->qst", z, z, optimize=True)
    dot_r = np.einsum("qsij,qtij->qst", R, R, optimize=True)
    ntau = tau[:, :, None] * n[:, None, :]  # (q, s, c)

    k = np.einsum("q,qsc,qtd->sctd", wm * lam, z, z, optimize=True)
    k += np.einsum("q,qst,qcd->sctd", wm * mu, dotz, P, optimize=True)
    k += np.einsum("q,qtc,qsd->sctd", wm * mu, z, z, optimize=True)
    k += np.einsum("q,qsc,qtd->sctd", wb * lam, ntau, ntau, optimize=True)
    k += np.einsum("q,qst,qc,qd->sctd", 2.0 * wb * mu, dot_r, n, n, optimize=True)
    k = k.reshape(192, 192)
    return 0.5 * (k + k.T)


def _coo_chunk_to_csr(rows, cols, vals, n):
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return m.tocsr()


def assemble_system(ls: LevelSet, grid: BackgroundGrid, dofmap: DofMap,
                    mat: MaterialParams, rules: dict, body_force=None,
                    bcs=(), point_loads=(), q: int = 6, max_depth: int = 8,
                    chunk_cells: int = 256, drop_zero_dofs: bool = True) -> AssembledSystem:
    """Assemble K, M, f_N, f_D over the active DOFs.

    ``rules`` maps active cell ids to SurfaceRules (cells with empty rules
    may be absent).  Boundary-curve rules are generated on demand for the
    faces named by the boundary conditions and cached on the result.
    """
    n = dofmap.n_dofs
    _check_regions(bcs)
    if not any(bc.is_dirichlet for bc in bcs):
        log.warning("no Dirichlet conditions: the system may retain rigid modes")

    f_n = np.zeros(n)
    f_d = np.zeros(n)

    # body force evaluated in one batch over all quadrature nodes: the
    # manufactured-force DAGs are large and per-cell walks would dominate
    cell_ids = sorted(rules.keys())
    b_all = None
    if body_force is not None and cell_ids:
        pts_all = np.concatenate([rules[c].points for c in cell_ids])
        b_all = np.stack([as_expr(e)(pts_all) for e in body_force], axis=1)

    stiffness = sp.csr_matrix((n, n))
    rows, cols, vals = [], [], []
    in_chunk = 0
    offset = 0
    for c in cell_ids:
        rule = rules[c]
        be = grid.cell_basis_eval(c, rule.points, max_deriv=2)
        k_local = cell_stiffness(rule, be, mat)
        dofs = dofmap.cell_dofs(c).astype(np.int32)
        rows.append(np.repeat(dofs, 192))
        cols.append(np.tile(dofs, 192))
        vals.append(k_local.ravel())
        if b_all is not None:
            b_cell = b_all[offset:offset + len(rule)]
            f_local = np.einsum("q,qs,qc->sc", rule.weights, be.values, b_cell)
            np.add.at(f_n, dofs, f_local.ravel())
        offset += len(rule)
        in_chunk += 1
        if in_chunk >= chunk_cells:
            stiffness = stiffness + _coo_chunk_to_csr(rows, cols, vals, n)
            rows, cols, vals = [], [], []
            in_chunk = 0
    if rows:
        stiffness = stiffness + _coo_chunk_to_csr(rows, cols, vals, n)

    # boundary terms
    line_rules: dict = {}
    m_rows, m_cols, m_vals = [], [], []
    for bc in bcs:
        axis, side = FACES[bc.face]
        outward = np.zeros(3)
        outward[axis] = 1.0 if side else -1.0
        for cell in grid.cells_on_face(axis, side):
            if not dofmap.is_active(cell):
                continue
            key = (cell, axis, side)
            lr = line_rules.get(key)
            if lr is None:
                lr = line_rule(ls, grid.face_box(cell, axis, side), outward,
                               q=q, max_depth=max_depth, cell_id=cell, axis=axis, side=side)
                line_rules[key] = lr
            if not len(lr):
                continue
            w = lr.weights
            if bc.predicate is not None:
                w = w * (bc.predicate(lr.points) > 0.0)
                if not np.any(w):
                    continue
            be = grid.cell_basis_eval(cell, lr.points, max_deriv=1)
            dofs = dofmap.cell_dofs(cell)
            data = _bc_values(bc.value, lr)

            if bc.kind == BCKind.DISPLACEMENT:
                i = bc.component
                di = dofs.reshape(64, 3)[:, i]
                m_local = np.einsum("q,qs,qt->st", w, be.values, be.values)
                m_local = 0.5 * (m_local + m_local.T)
                m_rows.append(np.repeat(di, 64))
                m_cols.append(np.tile(di, 64))
                m_vals.append(m_local.ravel())
                np.add.at(f_d, di, np.einsum("q,qs->s", w * data, be.values))
            elif bc.kind == BCKind.ROTATION_CLAMP:
                rot = _rotation_rows(be.values, be.grads, lr.frames, lr.mu)
                m_local = np.einsum("q,qsc,qtd->sctd", w, rot, rot,
                                    optimize=True).reshape(192, 192)
                m_local = 0.5 * (m_local + m_local.T)
                m_rows.append(np.repeat(dofs, 192))
                m_cols.append(np.tile(dofs, 192))
                m_vals.append(m_local.ravel())
                np.add.at(f_d, dofs, np.einsum("q,qsc->sc", w * data, rot).ravel())
            elif bc.kind == BCKind.FORCE:
                i = bc.component
                di = dofs.reshape(64, 3)[:, i]
                np.add.at(f_n, di, np.einsum("q,qs->s", w * data, be.values))
            elif bc.kind == BCKind.MOMENT_TANGENT:
                rot = _rotation_rows(be.values, be.grads, lr.frames, lr.tangent)
                np.add.at(f_n, dofs, -np.einsum("q,qsc->sc", w * data, rot).ravel())
            elif bc.kind == BCKind.MOMENT_CONORMAL:
                rot = _rotation_rows(be.values, be.grads, lr.frames, lr.mu)
                np.add.at(f_n, dofs, -np.einsum("q,qsc->sc", w * data, rot).ravel())

    if m_rows:
        constraint = _coo_chunk_to_csr(m_rows, m_cols, m_vals, n)
    else:
        constraint = sp.csr_matrix((n, n))

    # point loads: Dirac contribution v(x_P) . F
    for load in point_loads:
        x = load.location
        phi_here = float(ls.value(x[None, :])[0])
        g = np.linalg.norm(ls.gradient(x[None, :])[0])
        if abs(phi_here) > 1e-8 * max(1.0, g * grid.box.diam):
            raise ValueError(f"point load at {x} is not on the surface (phi={phi_here:g})")
        cell = dofmap.owning_cell(x)
        be = grid.cell_basis_eval(cell, x[None, :], max_deriv=0)
        dofs = dofmap.cell_dofs(cell)
        np.add.at(f_n, dofs, (be.values[0][:, None] * load.force).ravel())

    if drop_zero_dofs:
        row_k = np.asarray(np.abs(stiffness).sum(axis=1)).ravel()
        row_m = np.asarray(np.abs(constraint).sum(axis=1)).ravel()
        kept = (row_k > 0.0) | (row_m > 0.0) | (f_n != 0.0) | (f_d != 0.0)
    else:
        kept = np.ones(n, dtype=bool)
    idx = np.flatnonzero(kept)
    stiffness = stiffness[idx][:, idx].tocsr()
    constraint = constraint[idx][:, idx].tocsr()
    return AssembledSystem(
        stiffness=stiffness,
        constraint=constraint,
        f_n=f_n[idx],
        f_d=f_d[idx],
        dofmap=dofmap,
        kept=kept,
        line_rules=line_rules,
    )


def assemble_surface_mass(grid: BackgroundGrid, dofmap: DofMap, rules: dict) -> sp.csr_matrix:
    """Surface mass matrix of the trace basis (singular: traces are dependent)."""
    n = dofmap.n_dofs
    rows, cols, vals = [], [], []
    for c in sorted(rules.keys()):
        rule = rules[c]
        be = grid.cell_basis_eval(c, rule.points, max_deriv=0)
        m_scalar = np.einsum("q,qs,qt->st", rule.weights, be.values, be.values)
        m_scalar = 0.5 * (m_scalar + m_scalar.T)
        dofs = dofmap.cell_dofs(c).reshape(64, 3)
        for i in range(3):
            rows.append(np.repeat(dofs[:, i], 64))
            cols.append(np.tile(dofs[:, i], 64))
            vals.append(m_scalar.ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    return _coo_chunk_to_csr(rows, cols, vals, n)


def assemble_l2_rhs(grid: BackgroundGrid, dofmap: DofMap, rules: dict, u_exprs) -> np.ndarray:
    """Right-hand side int N_s u_i over the surface for the L2 projection."""
    n = dofmap.n_dofs
    rhs = np.zeros(n)
    cell_ids = sorted(rules.keys())
    if not cell_ids:
        return rhs
    pts_all = np.concatenate([rules[c].points for c in cell_ids])
    u_all = np.stack([as_expr(e)(pts_all) for e in u_exprs], axis=1)
    offset = 0
    for c in cell_ids:
        rule = rules[c]
        be = grid.cell_basis_eval(c, rule.points, max_deriv=0)
        u_cell = u_all[offset:offset + len(rule)]
        local = np.einsum("q,qs,qc->sc", rule.weights, be.values, u_cell)
        np.add.at(rhs, dofmap.cell_dofs(c), local.ravel())
        offset += len(rule)
    return rhs
