"""Gaussian quadrature on implicitly defined surfaces and boundary curves.

The surface integral over one background cell is reduced to a graph
integral: interval arithmetic certifies an axis k along which phi is
strictly monotone, the wetted part of the cell base is itself an implicitly
defined 2D region (between the zero sets of phi restricted to the bottom and
top faces), and each base node is lifted to the surface by one-dimensional
root finding.  The same recursion one dimension lower produces curve rules
on cell faces.  Cells where no monotone direction can be certified are
subdivided, up to a depth limit; exhausting the limit aborts with a
diagnostic instead of silently dropping area.

Weights carry the graph surface-measure factor |grad phi| / |d phi / d x_k|
(curves: the in-face analog), so positive Gauss weights stay positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .expressions import Expr, IntervalDomainError, eval_scalar, interval_bounds
from .geometry import Box, FrameBatch, LevelSet, conormal_batch

_PIECE_TOL = 1e-13
_BISECT_ITERS = 47  # halves the bracket below 1e-14 of its width
_NEWTON_STEPS = 3


class QuadratureDepthError(RuntimeError):
    """Subdivision depth exhausted (tangential or degenerate intersection)."""

    def __init__(self, box: Box, what: str):
        super().__init__(f"{what}: no certified monotone direction on box "
                         f"[{box.lo}, {box.hi}] after exhausting subdivision depth")
        self.box = box


@lru_cache(maxsize=32)
def gauss_01(q: int):
    """q-point Gauss-Legendre rule mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class SurfaceRule:
    """Quadrature nodes on the surface piece inside one background cell."""

    cell_id: int
    points: np.ndarray    # (N, 3)
    weights: np.ndarray   # (N,)
    frames: FrameBatch

    def __len__(self):
        return self.points.shape[0]

    def nodes(self):
        for i in range(len(self)):
            yield self.points[i], self.weights[i], self.frames.frame(i)


@dataclass
class LineRule:
    """Quadrature nodes on the boundary curve piece inside one cell face."""

    cell_id: int
    axis: int
    side: int
    points: np.ndarray
    weights: np.ndarray
    mu: np.ndarray        # outward conormal at the nodes
    tangent: np.ndarray   # n x mu
    frames: FrameBatch

    def __len__(self):
        return self.points.shape[0]

    def nodes(self):
        for i in range(len(self)):
            yield self.points[i], self.weights[i], self.mu[i], self.tangent[i]


# ---------------------------------------------------------------------------
# interval certification
# ---------------------------------------------------------------------------

class _IV(NamedTuple):
    lo: float
    hi: float

    def excludes_zero(self) -> bool:
        return self.lo > 0.0 or self.hi < 0.0

    def min_abs(self) -> float:
        if self.lo <= 0.0 <= self.hi:
            return 0.0
        return min(abs(self.lo), abs(self.hi))


def _interval(expr: Expr, box: Box) -> _IV:
    return _IV(*interval_bounds(expr, box.intervals()))


def _monotone_axis(exprs, box: Box, free_axes):
    """Axis along which every expression has a certified-sign derivative.

    Returns (axis, sign of the first expression's derivative) with the
    largest minimum derivative magnitude, or None.
    """
    best = None
    for ax in free_axes:
        score = None
        sign = 0
        ok = True
        for e in exprs:
            try:
                iv = _interval(e.diff(ax), box)
            except IntervalDomainError:
                ok = False
                break
            if not iv.excludes_zero():
                ok = False
                break
            s = float(iv.min_abs())
            score = s if score is None else min(score, s)
            if sign == 0:
                sign = 1 if iv.lo > 0 else -1
        if ok and score is not None:
            if best is None or score > best[2]:
                best = (ax, sign, score)
    if best is None:
        return None
    return best[0], best[1]


def height_direction(ls: LevelSet, box: Box):
    """Certified height-function axis for the level set on a box, or None."""
    free = [d for d in range(3) if box.hi[d] > box.lo[d]]
    hit = _monotone_axis([ls.phi], box, free)
    return None if hit is None else hit[0]


# ---------------------------------------------------------------------------
# one-dimensional roots
# ---------------------------------------------------------------------------

def _bisect_on_axis(expr: Expr, base_pts: np.ndarray, axis: int, lo, hi, sign: int) -> np.ndarray:
    """Vectorized bracketed bisection + Newton polish along one axis.

    base_pts is (N, 3); the axis coordinate is replaced.  The function is
    certified monotone with the given sign, and every row brackets a root.
    """
    n = base_pts.shape[0]
    a = np.full(n, float(lo))
    b = np.full(n, float(hi))

    def f(t):
        pts = base_pts.copy()
        pts[:, axis] = t
        return expr(pts)

    fa = f(a)
    # with monotone sign, f(a)*sign < 0 < f(b)*sign up to roundoff
    done_a = fa == 0.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (a + b)
        fm = f(mid)
        left = (fm * sign) < 0.0
        a = np.where(left, mid, a)
        b = np.where(left, b, mid)
    x = 0.5 * (a + b)
    dexpr = expr.diff(axis)
    for _ in range(_NEWTON_STEPS):
        pts = base_pts.copy()
        pts[:, axis] = x
        fx = expr(pts)
        dfx = dexpr(pts)
        step = np.where(dfx != 0.0, fx / np.where(dfx == 0.0, 1.0, dfx), 0.0)
        x = np.clip(x - step, float(lo), float(hi))
    return np.where(done_a, float(lo), x)


def _scalar_on_line(expr: Expr, template: np.ndarray, axis: int, t: float) -> float:
    c = [float(template[0]), float(template[1]), float(template[2])]
    c[axis] = t
    return eval_scalar(expr, c[0], c[1], c[2])


def _bisect_scalar(expr: Expr, template: np.ndarray, axis: int, lo: float, hi: float,
                   sign: int) -> float:
    a, b = lo, hi
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (a + b)
        if _scalar_on_line(expr, template, axis, mid) * sign < 0.0:
            a = mid
        else:
            b = mid
    x = 0.5 * (a + b)
    dexpr = expr.diff(axis)
    for _ in range(_NEWTON_STEPS):
        fx = _scalar_on_line(expr, template, axis, x)
        dfx = _scalar_on_line(dexpr, template, axis, x)
        if dfx == 0.0:
            break
        x = min(max(x - fx / dfx, lo), hi)
    return x


def _roots_1d(expr: Expr, box: Box, axis: int, depth: int) -> list:
    """Sign-change points of expr along the single free axis of a degenerate box.

    Recursive isolation: boxes whose value interval excludes zero have no
    root; boxes with a certified-sign derivative hold at most one.  Grazing
    contact (the value interval touches zero from one side only) produces no
    sign change and is ignored; these points would otherwise trap the
    subdivision without affecting the decomposition.
    """
    lo, hi = float(box.lo[axis]), float(box.hi[axis])
    try:
        iv = _interval(expr, box)
        if iv.excludes_zero():
            return []
        slack = 32.0 * np.finfo(float).eps * max(abs(iv.lo), abs(iv.hi), 1e-30)
        if iv.lo >= -slack or iv.hi <= slack:
            return []
        certified = _interval(expr.diff(axis), box).excludes_zero()
    except IntervalDomainError:
        certified = False
    if certified:
        template = box.mid
        flo = _scalar_on_line(expr, template, axis, lo)
        fhi = _scalar_on_line(expr, template, axis, hi)
        if flo == 0.0:
            return [lo]
        if fhi == 0.0:
            return [hi]
        if flo * fhi > 0.0:
            return []
        sign = 1 if fhi > flo else -1
        return [_bisect_scalar(expr, template, axis, lo, hi, sign)]
    if depth == 0:
        # unresolvable crossing pattern inside a 2^-max_depth sliver: cut at
        # its midpoint; surplus cuts are harmless, they only split pieces
        return [0.5 * (lo + hi)]
    out = []
    for child in box.split((axis,)):
        out.extend(_roots_1d(expr, child, axis, depth - 1))
    out.sort()
    merged = []
    for r in out:
        if not merged or r - merged[-1] > _PIECE_TOL * max(1.0, hi - lo):
            merged.append(r)
    return merged


# ---------------------------------------------------------------------------
# implicitly bounded 2D regions (the base of the surface graph)
# ---------------------------------------------------------------------------

def _tensor_gauss_2d(box: Box, axes, q: int):
    xg, wg = gauss_01(q)
    i, j = axes
    wi = box.hi[i] - box.lo[i]
    wj = box.hi[j] - box.lo[j]
    ti = box.lo[i] + xg * wi
    tj = box.lo[j] + xg * wj
    pts = np.broadcast_to(box.lo, (q * q, 3)).copy()
    pts[:, i] = np.repeat(ti, q)
    pts[:, j] = np.tile(tj, q)
    w = np.repeat(wg * wi, q) * np.tile(wg * wj, q)
    return pts, w


def _region_nodes_2d(constraints, box: Box, axes, q: int, depth: int):
    """Gauss nodes over {x in box2 : s_i f_i(x) >= 0 for all i}.

    The box is degenerate outside the two ``axes``.  Constraints certified
    satisfied over the whole box are dropped; a certified-violated one makes
    the region empty.  Otherwise an axis m monotone for every remaining
    constraint is certified, the base interval is split at the roots of the
    constraints restricted to the two m-edges (which freezes the crossing
    pattern per piece), and each base node's m-line is partitioned by the
    constraint roots into kept and discarded segments.
    """
    remaining = []
    for f, s in constraints:
        try:
            iv = _interval(f, box)
        except IntervalDomainError:
            remaining.append((f, s))
            continue
        min_sf = iv.lo if s > 0 else -iv.hi
        max_sf = iv.hi if s > 0 else -iv.lo
        # slack of a few ulps of the value scale: a region thinner than
        # machine width (tangential corner contact) is measure zero and must
        # not trap the subdivision
        slack = 32.0 * np.finfo(float).eps * max(abs(float(iv.lo)), abs(float(iv.hi)), 1e-30)
        if min_sf >= -slack:
            continue
        if max_sf <= slack:
            return np.zeros((0, 3)), np.zeros(0)
        remaining.append((f, s))
    if not remaining:
        return _tensor_gauss_2d(box, axes, q)

    hit = _monotone_axis([f for f, _ in remaining], box, axes)
    if hit is None:
        if depth == 0:
            # restricted level sets generically have saddle points on their
            # zero curves (the gyroid does, exactly on grid vertices), where
            # no direction can ever be certified; classify the residual box,
            # whose extent is 2^-max_depth of the cell, by its midpoint sign
            mid = box.mid
            if all(s * eval_scalar(f, mid[0], mid[1], mid[2]) > 0.0 for f, s in remaining):
                return _tensor_gauss_2d(box, axes, q)
            return np.zeros((0, 3)), np.zeros(0)
        pts_list, w_list = [], []
        for child in box.split(axes):
            p, w = _region_nodes_2d(remaining, child, axes, q, depth - 1)
            pts_list.append(p)
            w_list.append(w)
        return np.concatenate(pts_list), np.concatenate(w_list)
    m, _ = hit
    t = axes[0] if axes[1] == m else axes[1]
    t0, t1 = float(box.lo[t]), float(box.hi[t])
    m0, m1 = float(box.lo[m]), float(box.hi[m])

    cuts = set()
    for f, _ in remaining:
        for side_val in (m0, m1):
            edge = box.fix_axis(m, side_val)
            cuts.update(_roots_1d(f, edge, t, depth))
    cuts = sorted(c for c in cuts if t0 + _PIECE_TOL * (t1 - t0) < c < t1 - _PIECE_TOL * (t1 - t0))
    bounds = [t0] + cuts + [t1]

    xg, wg = gauss_01(q)
    pts_list, w_list = [], []
    for p0, p1 in zip(bounds[:-1], bounds[1:]):
        if p1 - p0 <= _PIECE_TOL * (t1 - t0):
            continue
        t_nodes = p0 + xg * (p1 - p0)
        t_w = wg * (p1 - p0)
        base = np.broadcast_to(box.lo, (q, 3)).copy()
        base[:, t] = t_nodes
        tc = 0.5 * (p0 + p1)
        probe = box.lo.copy()
        probe[t] = tc

        # classify constraints on this piece: edge signs cannot change inside
        roots = []
        piece_dead = False
        for f, s in remaining:
            flo = _scalar_on_line(f, probe, m, m0)
            fhi = _scalar_on_line(f, probe, m, m1)
            if flo == 0.0 or fhi == 0.0 or flo * fhi < 0.0:
                sign = 1 if fhi > flo else -1
                roots.append(_bisect_on_axis(f, base, m, m0, m1, sign))
            elif s * flo < 0.0:
                piece_dead = True  # constraint violated along every m-line here
                break
        if piece_dead:
            continue
        if not roots:
            seg_bounds = np.tile(np.array([[m0, m1]]), (q, 1))
        else:
            r = np.sort(np.stack(roots, axis=1), axis=1)
            seg_bounds = np.concatenate(
                [np.full((q, 1), m0), np.clip(r, m0, m1), np.full((q, 1), m1)], axis=1
            )
        first = base[0].copy()
        for slot in range(seg_bounds.shape[1] - 1):
            a = seg_bounds[:, slot]
            b = seg_bounds[:, slot + 1]
            if b[0] - a[0] <= _PIECE_TOL * max(1.0, m1 - m0):
                continue
            mid = first.copy()
            mid[m] = 0.5 * (a[0] + b[0])
            keep = all(s * eval_scalar(f, mid[0], mid[1], mid[2]) > 0.0 for f, s in remaining)
            if not keep:
                continue
            seg_pts = np.repeat(base, q, axis=0)
            seg_pts[:, m] = (a[:, None] + xg[None, :] * (b - a)[:, None]).reshape(-1)
            seg_w = (t_w[:, None] * (wg[None, :] * (b - a)[:, None])).reshape(-1)
            pts_list.append(seg_pts)
            w_list.append(seg_w)
    if not pts_list:
        return np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts_list), np.concatenate(w_list)


# ---------------------------------------------------------------------------
# surface rules
# ---------------------------------------------------------------------------

def _surface_nodes(ls: LevelSet, box: Box, q: int, depth: int):
    try:
        if _interval(ls.phi, box).excludes_zero():
            return np.zeros((0, 3)), np.zeros(0)
    except IntervalDomainError:
        pass
    hit = _monotone_axis([ls.phi], box, (0, 1, 2))
    if hit is None:
        if depth == 0:
            raise QuadratureDepthError(box, "surface cell")
        pts_list, w_list = [], []
        for child in box.split((0, 1, 2)):
            p, w = _surface_nodes(ls, child, q, depth - 1)
            pts_list.append(p)
            w_list.append(w)
        return np.concatenate(pts_list), np.concatenate(w_list)
    k, sign = hit
    lo_k, hi_k = float(box.lo[k]), float(box.hi[k])
    psi_lo = ls.phi.substitute(k, lo_k)
    psi_hi = ls.phi.substitute(k, hi_k)
    base_axes = tuple(d for d in range(3) if d != k)
    base_box = box.fix_axis(k, lo_k)
    constraints = [(psi_lo, -sign), (psi_hi, +sign)]
    base_pts, base_w = _region_nodes_2d(constraints, base_box, base_axes, q, depth)
    if base_pts.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros(0)

    # lift the base nodes to the graph and apply the surface-measure factor
    flo = _column_eval(ls.phi, base_pts, k, lo_k)
    fhi = _column_eval(ls.phi, base_pts, k, hi_k)
    crossing = (flo == 0.0) | (fhi == 0.0) | (flo * fhi < 0.0)
    base_pts = base_pts[crossing]
    base_w = base_w[crossing]
    if base_pts.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros(0)
    roots = _bisect_on_axis(ls.phi, base_pts, k, lo_k, hi_k, sign)
    pts = base_pts.copy()
    pts[:, k] = roots
    grad = ls.gradient(pts)
    weights = base_w * np.linalg.norm(grad, axis=1) / np.abs(grad[:, k])
    return pts, weights


def _column_eval(expr: Expr, pts: np.ndarray, axis: int, value: float):
    p = pts.copy()
    p[:, axis] = value
    return expr(p)


def surface_rule(ls: LevelSet, cell_box: Box, q: int = 6, max_depth: int = 8,
                 cell_id: int = -1) -> SurfaceRule:
    """Quadrature rule for integrals over the surface piece inside a cell."""
    pts, w = _surface_nodes(ls, cell_box, q, max_depth)
    if pts.shape[0] == 0:
        return SurfaceRule(cell_id, pts, w,
                           FrameBatch.concatenate([]))
    frames = ls.frames(pts, scale=cell_box.diam)
    residual = np.abs(ls.value(pts))
    if np.any(residual > 1e-10 * cell_box.diam * np.maximum(frames.grad_norm, 1.0)):
        raise RuntimeError("surface node failed the on-surface tolerance")
    return SurfaceRule(cell_id, pts, w, frames)


def build_surface_rules(ls: LevelSet, grid, cells, q: int = 6, max_depth: int = 8) -> dict:
    """Rules for every listed cell, in index order; empty rules are dropped."""
    rules = {}
    for c in np.sort(np.asarray(cells)):
        rule = surface_rule(ls, grid.cell_box(int(c)), q=q, max_depth=max_depth, cell_id=int(c))
        if len(rule):
            rules[int(c)] = rule
    return rules


# ---------------------------------------------------------------------------
# boundary-curve rules on cell faces
# ---------------------------------------------------------------------------

def _curve_nodes(psi: Expr, box: Box, axes, q: int, depth: int):
    try:
        if _interval(psi, box).excludes_zero():
            return np.zeros((0, 3)), np.zeros(0)
    except IntervalDomainError:
        pass
    hit = _monotone_axis([psi], box, axes)
    if hit is None:
        if depth == 0:
            # residual sliver of extent 2^-max_depth of the face; a curve
            # piece inside it contributes O(diam) and cannot be certified
            return np.zeros((0, 3)), np.zeros(0)
        pts_list, w_list = [], []
        for child in box.split(axes):
            p, w = _curve_nodes(psi, child, axes, q, depth - 1)
            pts_list.append(p)
            w_list.append(w)
        return np.concatenate(pts_list), np.concatenate(w_list)
    m, sign = hit
    t = axes[0] if axes[1] == m else axes[1]
    t0, t1 = float(box.lo[t]), float(box.hi[t])
    m0, m1 = float(box.lo[m]), float(box.hi[m])

    cuts = set()
    for side_val in (m0, m1):
        cuts.update(_roots_1d(psi, box.fix_axis(m, side_val), t, depth))
    cuts = sorted(c for c in cuts if t0 + _PIECE_TOL * (t1 - t0) < c < t1 - _PIECE_TOL * (t1 - t0))
    bounds = [t0] + cuts + [t1]

    xg, wg = gauss_01(q)
    dpsi = [psi.diff(axes[0]), psi.diff(axes[1])]
    dm = psi.diff(m)
    pts_list, w_list = [], []
    for p0, p1 in zip(bounds[:-1], bounds[1:]):
        if p1 - p0 <= _PIECE_TOL * (t1 - t0):
            continue
        probe = box.lo.copy()
        probe[t] = 0.5 * (p0 + p1)
        flo = _scalar_on_line(psi, probe, m, m0)
        fhi = _scalar_on_line(psi, probe, m, m1)
        if not (flo == 0.0 or fhi == 0.0 or flo * fhi < 0.0):
            continue
        base = np.broadcast_to(box.lo, (q, 3)).copy()
        base[:, t] = p0 + xg * (p1 - p0)
        roots = _bisect_on_axis(psi, base, m, m0, m1, sign)
        pts = base.copy()
        pts[:, m] = roots
        g0 = dpsi[0](pts)
        g1 = dpsi[1](pts)
        gm = dm(pts)
        w = wg * (p1 - p0) * np.hypot(g0, g1) / np.abs(gm)
        pts_list.append(pts)
        w_list.append(w)
    if not pts_list:
        return np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts_list), np.concatenate(w_list)


def line_rule(ls: LevelSet, face_box: Box, outward, q: int = 6, max_depth: int = 8,
              cell_id: int = -1, axis: int | None = None, side: int = 0) -> LineRule:
    """Quadrature rule on the boundary-curve piece inside one cuboid face.

    ``face_box`` is degenerate along the face axis; ``outward`` is the
    outward normal of the cuboid face carrying the boundary curve.
    """
    outward = np.asarray(outward, float)
    if axis is None:
        axis = int(np.argmax(np.abs(outward)))
    value = float(face_box.lo[axis])
    psi = ls.phi.substitute(axis, value)
    face_axes = tuple(d for d in range(3) if d != axis)
    pts, w = _curve_nodes(psi, face_box, face_axes, q, max_depth)
    if pts.shape[0] == 0:
        empty = FrameBatch.concatenate([])
        return LineRule(cell_id, axis, side, pts, w, np.zeros((0, 3)), np.zeros((0, 3)), empty)
    frames = ls.frames(pts, scale=max(face_box.diam, 1e-30))
    mu, tangent = conormal_batch(frames, outward)
    if np.any(np.abs(ls.value(pts)) > 1e-10 * max(1.0, face_box.diam) * np.maximum(frames.grad_norm, 1.0)):
        raise RuntimeError("curve node failed the on-surface tolerance")
    return LineRule(cell_id, axis, side, pts, w, mu, tangent, frames)
