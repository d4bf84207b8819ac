"""Implicit-surface geometry: normals, projectors, curvature, surface calculus.

All quantities are parametrization-free and derived from the level-set
function alone:

    n = grad(phi)/|grad(phi)|         unit normal
    P = I - n (x) n                   tangential projector
    W = -P hess(phi) P / |grad(phi)|  extended Weingarten map
    H = tr W                          mean curvature

The surface gradient of a field f is grad(f) P and the surface divergence of
a tensor field T is grad(T):P + H T.n.  These operators are written with
plain products and sums so they accept float arrays (pointwise/batched) and
object arrays of expressions (symbolic) alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expressions import (
    Expr,
    IntervalDomainError,
    check_finite_on,
    gradient_exprs,
    hessian_exprs,
    interval_eval,
)


class DegenerateGradientError(ArithmeticError):
    """The level-set gradient is numerically zero at a requested point."""


class DegenerateConormalError(ArithmeticError):
    """The surface meets the face tangentially: P nu has no direction."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned cuboid; degenerate axes (lo == hi) are allowed."""

    lo: np.ndarray
    hi: np.ndarray

    @staticmethod
    def from_bounds(bounds) -> "Box":
        b = np.asarray(bounds, float)
        if b.shape != (3, 2):
            raise ValueError("bounds must be three (lo, hi) pairs")
        if np.any(b[:, 0] > b[:, 1]):
            raise ValueError("box has lo > hi")
        return Box(b[:, 0].copy(), b[:, 1].copy())

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.widths))

    def intervals(self):
        return [(self.lo[d], self.hi[d]) for d in range(3)]

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, float)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)

    def fix_axis(self, axis: int, value: float) -> "Box":
        lo = self.lo.copy()
        hi = self.hi.copy()
        lo[axis] = hi[axis] = value
        return Box(lo, hi)

    def split(self, free_axes) -> list:
        """Bisect simultaneously along the given axes (2^d children)."""
        children = [self]
        for ax in free_axes:
            nxt = []
            for b in children:
                m = 0.5 * (b.lo[ax] + b.hi[ax])
                lo1, hi1 = b.lo.copy(), b.hi.copy()
                hi1[ax] = m
                lo2, hi2 = b.lo.copy(), b.hi.copy()
                lo2[ax] = m
                nxt.append(Box(lo1, hi1))
                nxt.append(Box(lo2, hi2))
            children = nxt
        return children

    def random_points(self, n: int, rng) -> np.ndarray:
        return self.lo + rng.random((n, 3)) * self.widths


@dataclass(frozen=True)
class SurfaceFrame:
    """Per-point geometry bundle on the surface."""

    x: np.ndarray
    n: np.ndarray
    P: np.ndarray
    W: np.ndarray
    H: float

    def validate(self, tol: float = 1e-12):
        assert abs(np.linalg.norm(self.n) - 1.0) <= tol
        assert np.allclose(self.P, self.P.T, atol=tol)
        assert np.allclose(self.P @ self.P, self.P, atol=tol)
        assert np.allclose(self.P @ self.n, 0.0, atol=tol)
        assert np.allclose(self.W, self.W.T, atol=tol)
        assert np.allclose(self.W @ self.n, 0.0, atol=tol)
        assert abs(np.trace(self.W) - self.H) <= tol


@dataclass
class FrameBatch:
    """Arrays of frame data at many points (structure-of-arrays)."""

    x: np.ndarray          # (N, 3)
    n: np.ndarray          # (N, 3)
    P: np.ndarray          # (N, 3, 3)
    W: np.ndarray          # (N, 3, 3)
    H: np.ndarray          # (N,)
    grad_norm: np.ndarray  # (N,)

    def __len__(self):
        return self.x.shape[0]

    def frame(self, i: int) -> SurfaceFrame:
        return SurfaceFrame(self.x[i], self.n[i], self.P[i], self.W[i], float(self.H[i]))

    @staticmethod
    def concatenate(batches) -> "FrameBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            e = np.zeros((0, 3))
            return FrameBatch(e, e, np.zeros((0, 3, 3)), np.zeros((0, 3, 3)), np.zeros(0), np.zeros(0))
        return FrameBatch(*[np.concatenate([getattr(b, f) for b in batches]) for f in
                            ("x", "n", "P", "W", "H", "grad_norm")])


class LevelSet:
    """A level-set function phi together with its bounding cuboid."""

    def __init__(self, phi: Expr, box: Box, check: bool = True):
        self.phi = phi
        self.box = box
        self.grad = gradient_exprs(phi)
        self.hess = hessian_exprs(phi)
        if check:
            check_finite_on(phi, box.intervals())

    def value(self, pts) -> np.ndarray:
        return self.phi(pts)

    def gradient(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.stack([self.grad[d](pts) for d in range(3)], axis=-1)

    def hessian(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        out = np.empty((pts.shape[0], 3, 3))
        for i in range(3):
            for j in range(i, 3):
                out[:, i, j] = out[:, j, i] = self.hess[i, j](pts)
        return out

    def frames(self, pts, scale: float = 1.0) -> FrameBatch:
        """Frames at a batch of points (the points need not lie exactly on phi=0)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        g = self.gradient(pts)
        norm = np.linalg.norm(g, axis=1)
        if np.any(norm <= 1e-12 * scale):
            raise DegenerateGradientError("level-set gradient vanishes at a frame point")
        n = g / norm[:, None]
        P = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
        hess = self.hessian(pts)
        W = -np.einsum("qij,qjk,qkl->qil", P, hess, P) / norm[:, None, None]
        W = 0.5 * (W + np.swapaxes(W, 1, 2))  # symmetric up to roundoff; enforce exactly
        H = np.trace(W, axis1=1, axis2=2)
        return FrameBatch(pts, n, P, W, H, norm)

    def surface_frame(self, x, scale: float = 1.0) -> SurfaceFrame:
        return self.frames(np.asarray(x, float)[None, :], scale=scale).frame(0)

    def project_to_surface(self, pts, steps: int = 3) -> np.ndarray:
        """A few Newton steps toward phi = 0 along the gradient direction."""
        pts = np.array(np.atleast_2d(pts), float)
        for _ in range(steps):
            v = self.phi(pts)
            g = self.gradient(pts)
            g2 = np.einsum("qi,qi->q", g, g)
            pts = pts - (v / g2)[:, None] * g
        return pts

    def certify_regular(self, box: Box, depth: int = 5) -> bool:
        """Certified check that grad(phi) != 0 wherever phi can vanish in box.

        A box passes when the interval of phi excludes zero (no surface
        there) or the interval of |grad phi|^2 excludes zero; otherwise the
        box is subdivided.  Natural-extension overestimation makes the raw
        single-box test too conservative on coarse cells, so recursion is
        part of the contract here.
        """
        boxes = [(box, depth)]
        while boxes:
            b, d = boxes.pop()
            try:
                if interval_eval(self.phi, b.intervals()).excludes_zero():
                    continue
                g2 = None
                for k in range(3):
                    iv = interval_eval(self.grad[k], b.intervals())
                    term = iv * iv
                    g2 = term if g2 is None else g2 + term
                if g2.lo > 0.0:
                    continue
            except IntervalDomainError:
                pass
            if d == 0:
                return False
            boxes.extend((child, d - 1) for child in b.split((0, 1, 2)))
        return True


# ---------------------------------------------------------------------------
# surface calculus (works on float arrays and object arrays of Expr)
# ---------------------------------------------------------------------------

def surface_gradient(grad_f, P):
    """Tangential gradient: contract the derivative index of grad_f with P.

    grad_f has the derivative in its last axis; the result keeps the shape.
    """
    grad_f = np.asarray(grad_f)
    return (grad_f[..., :, None] * np.asarray(P)).sum(axis=-2)

def surface_divergence(T, grad_T, P, H, n):
    """div T = grad(T):P + H T.n, one tensor order lower than T.

    ``grad_T`` carries the derivative in its last axis, so for a matrix field
    grad_T[i, j, k] = d T_ij / d x_k and (div T)_i = T_ij,k P_jk + H T_ij n_j.
    """
    T = np.asarray(T)
    grad_T = np.asarray(grad_T)
    contracted = (grad_T * np.asarray(P)).sum(axis=(-2, -1))
    return contracted + H * (T * np.asarray(n)).sum(axis=-1)


def conormal(frame: SurfaceFrame, face_normal, tol: float = 1e-10) -> np.ndarray:
    """Outward conormal on a boundary curve lying in a cuboid face.

    mu = normalize(P nu) with nu the outward face normal; mu is tangential to
    the surface and points out of the shell since mu.nu = |P nu| > 0.
    """
    nu = np.asarray(face_normal, float)
    mu = frame.P @ nu
    norm = np.linalg.norm(mu)
    if norm <= tol:
        raise DegenerateConormalError("surface meets the face tangentially")
    return mu / norm


def conormal_batch(frames: FrameBatch, face_normal, tol: float = 1e-10):
    nu = np.asarray(face_normal, float)
    mu = frames.P @ nu
    norms = np.linalg.norm(mu, axis=1)
    if np.any(norms <= tol):
        raise DegenerateConormalError("surface meets the face tangentially")
    mu = mu / norms[:, None]
    tangent = np.cross(frames.n, mu)
    return mu, tangent


# ---------------------------------------------------------------------------
# symbolic frames (object arrays of Expr), for manufactured solutions/tests
# ---------------------------------------------------------------------------

@dataclass
class SymbolicFrame:
    n: np.ndarray       # (3,) object
    P: np.ndarray       # (3, 3) object
    W: np.ndarray       # (3, 3) object
    H: Expr
    grad_norm: Expr


def symbolic_jacobian(fields) -> np.ndarray:
    """Gradient of an object array of expressions; derivative index last."""
    fields = np.asarray(fields, dtype=object)
    out = np.empty(fields.shape + (3,), dtype=object)
    it = np.nditer(fields, flags=["multi_index", "refs_ok"])
    for f in it:
        for d in range(3):
            out[it.multi_index + (d,)] = f.item().diff(d)
    return out


def symbolic_frame(phi: Expr) -> SymbolicFrame:
    g = gradient_exprs(phi)
    norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    n = np.empty(3, dtype=object)
    for d in range(3):
        n[d] = g[d] / norm
    P = np.eye(3) - np.outer(n, n)
    hess = hessian_exprs(phi)
    W = -(P @ hess @ P) / norm
    H = W[0, 0] + W[1, 1] + W[2, 2]
    return SymbolicFrame(n=n, P=P, W=W, H=H, grad_norm=norm)


def evaluate_tensor(fields, pts) -> np.ndarray:
    """Evaluate an object array of expressions at (N, 3) points -> (N,) + shape."""
    fields = np.asarray(fields, dtype=object)
    pts = np.atleast_2d(np.asarray(pts, float))
    out = np.empty((pts.shape[0],) + fields.shape)
    it = np.nditer(fields, flags=["multi_index", "refs_ok"])
    for f in it:
        out[(slice(None),) + it.multi_index] = f.item()(pts)
    return out
