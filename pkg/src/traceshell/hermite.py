"""C1 tensor-product cubic Hermite basis on a structured background grid.

Each grid vertex carries 8 scalar degrees of freedom per displacement
component (value, the three first derivatives, the three mixed second
derivatives and the mixed third derivative), so a background cell supports
64 scalar shape functions and 192 vector degrees of freedom.  Derivative
DOFs are stored in physical units: the slope-type univariate functions are
pre-scaled by the cell width, which keeps conditioning uniform across
refinement levels.

Refinement level k tiles the cuboid with 2^k cells per axis; level 0 is a
single cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .expressions import Expr, IntervalDomainError, interval_eval
from .geometry import Box, LevelSet

# univariate cubics on [0, 1]: value/slope pairs at both ends
#   p1 = 1 + xi^2 (2 xi - 3)     value at 0
#   p2 = xi (xi (xi - 2) + 1)    slope at 0
#   p3 = -xi^2 (2 xi - 3)        value at 1
#   p4 = xi^2 (xi - 1)           slope at 1
_SHAPE_COEFFS = np.array(
    [
        [1.0, 0.0, -3.0, 2.0],
        [0.0, 1.0, -2.0, 1.0],
        [0.0, 0.0, 3.0, -2.0],
        [0.0, 0.0, -1.0, 1.0],
    ]
)

# per-axis local index a in 0..3 <-> (vertex bit, slope bit): a = 2*v + s
_AXIS_VERTEX = np.array([0, 0, 1, 1])
_AXIS_SLOPE = np.array([0, 1, 0, 1])

# local scalar shape s = a + 4*b + 16*c  <->  cell corner and derivative type
_S_AXIS = np.array([(s % 4, (s // 4) % 4, s // 16) for s in range(64)])
S_TO_VERTEX = (_AXIS_VERTEX[_S_AXIS[:, 0]]
               + 2 * _AXIS_VERTEX[_S_AXIS[:, 1]]
               + 4 * _AXIS_VERTEX[_S_AXIS[:, 2]])
S_TO_DTYPE = (_AXIS_SLOPE[_S_AXIS[:, 0]]
              + 2 * _AXIS_SLOPE[_S_AXIS[:, 1]]
              + 4 * _AXIS_SLOPE[_S_AXIS[:, 2]])

# derivative type d in 0..7 <-> multi-index bits (dx, dy, dz)
DTYPE_BITS = [(d & 1, (d >> 1) & 1, (d >> 2) & 1) for d in range(8)]

DOFS_PER_VERTEX = 24  # 8 derivative types x 3 displacement components


def shape_1d(i: int, xi, deriv: int = 0):
    """Univariate cubic Hermite form function i in 1..4 (or its derivative)."""
    if i not in (1, 2, 3, 4):
        raise ValueError("shape index must be 1..4")
    if deriv < 0 or deriv > 3:
        raise ValueError("derivative order must be 0..3")
    coeffs = np.polynomial.polynomial.polyder(_SHAPE_COEFFS[i - 1], deriv) if deriv else _SHAPE_COEFFS[i - 1]
    return np.polynomial.polynomial.polyval(np.asarray(xi, float), coeffs)


def _axis_tables(xi, h: float, max_deriv: int) -> np.ndarray:
    """(N, 4, max_deriv+1) table of the four per-axis functions.

    Slope-type entries carry the factor h so the DOFs are physical
    derivatives; each physical derivative divides by h once.
    """
    xi = np.asarray(xi, float)
    out = np.empty((xi.shape[0], 4, max_deriv + 1))
    for a in range(4):
        scale = h if _AXIS_SLOPE[a] else 1.0
        for r in range(max_deriv + 1):
            out[:, a, r] = scale * shape_1d(a + 1, xi, r) / h**r
    return out


@dataclass
class BasisEval:
    """Values/gradients/Hessians of the 64 scalar cell functions at N points."""

    values: np.ndarray            # (N, 64)
    grads: np.ndarray | None      # (N, 64, 3)
    hess: np.ndarray | None       # (N, 64, 3, 3)


class BackgroundGrid:
    """Uniform axis-aligned grid of 2^level cells per axis tiling the cuboid."""

    def __init__(self, box: Box, level: int):
        if level < 0:
            raise ValueError("refinement level must be non-negative")
        self.box = box
        self.level = level
        self.n = 2**level
        self.h = box.widths / self.n
        self.n_cells = self.n**3
        self.n_vertices = (self.n + 1) ** 3

    # -- indexing ------------------------------------------------------------

    def cell_index(self, triple) -> int:
        i, j, k = triple
        return int(i + self.n * (j + self.n * k))

    def cell_triple(self, cell_id: int):
        i = cell_id % self.n
        j = (cell_id // self.n) % self.n
        k = cell_id // (self.n * self.n)
        return i, j, k

    def vertex_id(self, triple) -> int:
        i, j, k = triple
        m = self.n + 1
        return int(i + m * (j + m * k))

    def vertex_coords(self, vertex_ids) -> np.ndarray:
        v = np.asarray(vertex_ids)
        m = self.n + 1
        ijk = np.stack([v % m, (v // m) % m, v // (m * m)], axis=-1)
        return self.box.lo + ijk * self.h

    def cell_vertices(self, cell_id: int) -> np.ndarray:
        """The 8 global vertex ids ordered by local corner bits (vx, vy, vz)."""
        i, j, k = self.cell_triple(cell_id)
        out = np.empty(8, dtype=np.int64)
        for v in range(8):
            out[v] = self.vertex_id((i + (v & 1), j + ((v >> 1) & 1), k + ((v >> 2) & 1)))
        return out

    def cell_box(self, cell_id: int) -> Box:
        ijk = np.asarray(self.cell_triple(cell_id))
        lo = self.box.lo + ijk * self.h
        return Box(lo, lo + self.h)

    def face_box(self, cell_id: int, axis: int, side: int) -> Box:
        """Degenerate box of one cell face; side 0 = lower, 1 = upper."""
        b = self.cell_box(cell_id)
        value = b.hi[axis] if side else b.lo[axis]
        return b.fix_axis(axis, value)

    def locate_cell(self, x) -> tuple:
        rel = (np.asarray(x, float) - self.box.lo) / self.h
        idx = np.clip(np.floor(rel).astype(int), 0, self.n - 1)
        return tuple(int(v) for v in idx)

    def cells_on_face(self, axis: int, side: int):
        """Cell ids of the grid layer touching one cuboid face of B."""
        fixed = self.n - 1 if side else 0
        ids = []
        for a in range(self.n):
            for b in range(self.n):
                triple = [0, 0, 0]
                triple[axis] = fixed
                triple[(axis + 1) % 3] = a
                triple[(axis + 2) % 3] = b
                ids.append(self.cell_index(triple))
        return ids

    @property
    def n_scalar_dofs_total(self) -> int:
        return self.n_vertices * DOFS_PER_VERTEX

    # -- basis ----------------------------------------------------------------

    def reference_coords(self, cell_id: int, pts: np.ndarray) -> np.ndarray:
        b = self.cell_box(cell_id)
        return (np.atleast_2d(pts) - b.lo) / self.h

    def cell_basis_eval(self, cell_id: int, pts, max_deriv: int = 2, tol: float = 1e-10) -> BasisEval:
        """All 64 scalar shape functions at points inside the closed cell."""
        pts = np.atleast_2d(np.asarray(pts, float))
        xi = self.reference_coords(cell_id, pts)
        if np.any(xi < -tol) or np.any(xi > 1.0 + tol):
            raise ValueError("point outside the requested cell")
        xi = np.clip(xi, 0.0, 1.0)
        t = [_axis_tables(xi[:, d], self.h[d], max_deriv) for d in range(3)]

        def combine(rx, ry, rz):
            m = np.einsum("qa,qb,qc->qcba", t[0][:, :, rx], t[1][:, :, ry], t[2][:, :, rz])
            return m.reshape(pts.shape[0], 64)

        values = combine(0, 0, 0)
        grads = hess = None
        if max_deriv >= 1:
            grads = np.stack([combine(1, 0, 0), combine(0, 1, 0), combine(0, 0, 1)], axis=-1)
        if max_deriv >= 2:
            hess = np.empty((pts.shape[0], 64, 3, 3))
            orders = {(0, 0): (2, 0, 0), (1, 1): (0, 2, 0), (2, 2): (0, 0, 2),
                      (0, 1): (1, 1, 0), (0, 2): (1, 0, 1), (1, 2): (0, 1, 1)}
            for (i, j), r in orders.items():
                hess[:, :, i, j] = hess[:, :, j, i] = combine(*r)
        return BasisEval(values, grads, hess)


def active_cells(grid: BackgroundGrid, ls: LevelSet) -> np.ndarray:
    """Cells whose interval evaluation of phi contains zero.

    Guaranteed superset of the truly intersected cells; extra cells only
    produce empty quadrature rules downstream.
    """
    n = grid.n
    idx = np.arange(grid.n_cells)
    i = idx % n
    j = (idx // n) % n
    k = idx // (n * n)
    ijk = np.stack([i, j, k], axis=1)
    lo = grid.box.lo + ijk * grid.h
    hi = lo + grid.h
    try:
        iv = interval_eval(ls.phi, [(lo[:, d], hi[:, d]) for d in range(3)])
        mask = iv.contains_zero()
        mask = np.broadcast_to(mask, idx.shape)
    except IntervalDomainError:
        mask = np.ones(grid.n_cells, dtype=bool)  # conservative fallback
    return idx[mask]


class DofMap:
    """Active cells, active vertices and the global numbering of active DOFs.

    A DOF is active iff at least one cell in its support is active; since
    every vertex of an active cell touches that cell, the active DOFs are
    exactly all 24 DOFs of every vertex of an active cell.
    """

    def __init__(self, grid: BackgroundGrid, cells):
        self.grid = grid
        self.cells = np.sort(np.asarray(cells, dtype=np.int64))
        vertex_ids = np.unique(np.concatenate([grid.cell_vertices(c) for c in self.cells])
                               if len(self.cells) else np.empty(0, dtype=np.int64))
        self.active_vertices = vertex_ids
        self._vert_index = np.full(grid.n_vertices, -1, dtype=np.int64)
        self._vert_index[vertex_ids] = np.arange(len(vertex_ids))
        self.n_dofs = DOFS_PER_VERTEX * len(vertex_ids)
        self._cell_dof_cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_levelset(cls, grid: BackgroundGrid, ls: LevelSet) -> "DofMap":
        return cls(grid, active_cells(grid, ls))

    def is_active(self, cell_id: int) -> bool:
        pos = np.searchsorted(self.cells, cell_id)
        return pos < len(self.cells) and self.cells[pos] == cell_id

    def cell_dofs(self, cell_id: int) -> np.ndarray:
        """(192,) global DOF ids ordered like the local kernel: L = 3 s + c."""
        cached = self._cell_dof_cache.get(cell_id)
        if cached is not None:
            return cached
        verts = self._vert_index[self.grid.cell_vertices(cell_id)]
        if np.any(verts < 0):
            raise KeyError(f"cell {cell_id} is not active")
        base = verts[S_TO_VERTEX] * DOFS_PER_VERTEX + S_TO_DTYPE * 3  # (64,)
        dofs = (base[:, None] + np.arange(3)).reshape(192)
        self._cell_dof_cache[cell_id] = dofs
        return dofs

    def owning_cell(self, x, require_active: bool = True):
        """An active cell containing x; points on shared faces may match several."""
        x = np.asarray(x, float)
        grid = self.grid
        base = grid.locate_cell(x)
        options = []
        for d in range(3):
            cands = [base[d]]
            lower_line = grid.box.lo[d] + base[d] * grid.h[d]
            if base[d] > 0 and abs(x[d] - lower_line) <= 1e-12 * max(1.0, abs(x[d])) + 1e-14 * grid.h[d]:
                cands.append(base[d] - 1)
            options.append(cands)
        for triple in product(*options):
            cid = grid.cell_index(triple)
            if not require_active or self.is_active(cid):
                return cid
        raise KeyError(f"no active cell owns point {x}")

    # -- field evaluation ------------------------------------------------------

    def displacement(self, coeffs, cell_id: int, pts, max_deriv: int = 0):
        """u (and optionally grad u, hess u) of a coefficient vector at points."""
        be = self.grid.cell_basis_eval(cell_id, pts, max_deriv=max_deriv)
        local = coeffs[self.cell_dofs(cell_id)].reshape(64, 3)
        u = np.einsum("qs,sc->qc", be.values, local)
        if max_deriv == 0:
            return u
        grad = np.einsum("qsj,sc->qcj", be.grads, local)
        if max_deriv == 1:
            return u, grad
        hess = np.einsum("qsjk,sc->qcjk", be.hess, local)
        return u, grad, hess


def hermite_interpolate(dofmap: DofMap, u_exprs) -> np.ndarray:
    """Hermite interpolant: DOFs are the exact derivatives at active vertices."""
    grid = dofmap.grid
    coords = grid.vertex_coords(dofmap.active_vertices)
    coeffs = np.zeros(dofmap.n_dofs)
    base = np.arange(len(dofmap.active_vertices)) * DOFS_PER_VERTEX
    for c, expr in enumerate(u_exprs):
        for d, bits in enumerate(DTYPE_BITS):
            vals = expr.diff_multi(bits)(coords)
            coeffs[base + d * 3 + c] = vals
    return coeffs
