"""Pointwise Koiter shell operators.

Membrane strain gamma and bending strain rho are the linearized changes of
metric and curvature written without any parametrization:

    gamma(u) = 1/2 P (grad u + grad u^T) P
    rho(u)   = P (n . hess u) P - (n . grad u . n) W

The elasticity tensor acts on tangential symmetric tensors as
E:A = lam P tr(A) + 2 mu A with lam = 4 lam_bar mu / (lam_bar + 2 mu), and
the stress/moment resultants follow the constitutive set

    M = -t^3/12 E:rho,   Nbar = t E:gamma,   N = Nbar - W M,
    S = P div(M),        sigma = N + n (x) S.

All operators are written with shape-generic products so they accept float
arrays (single point or batched, leading axes broadcast) and object arrays
of expressions (symbolic route used to manufacture body forces).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import Expr
from .geometry import (
    LevelSet,
    SymbolicFrame,
    surface_divergence,
    symbolic_frame,
    symbolic_jacobian,
)


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic shell material: Young's modulus, Poisson ratio, thickness."""

    e_modulus: float
    poisson: float
    thickness: float

    def __post_init__(self):
        if self.e_modulus <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if self.thickness <= 0.0:
            raise ValueError("thickness must be positive")

    @property
    def mu(self) -> float:
        return self.e_modulus / (2.0 * (1.0 + self.poisson))

    @property
    def lam_bar(self) -> float:
        return self.e_modulus * self.poisson / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson))

    @property
    def lam(self) -> float:
        """Plane-stress-reduced first Lame parameter used by the shell law."""
        return 4.0 * self.lam_bar * self.mu / (self.lam_bar + 2.0 * self.mu)


@dataclass
class StrainState:
    """Membrane and bending strain at one point (or a batch)."""

    gamma: np.ndarray  # (..., 3, 3), dimensionless
    rho: np.ndarray    # (..., 3, 3), 1/length


@dataclass
class StressResultants:
    nbar: np.ndarray          # elastic in-plane force, force/length
    moment: np.ndarray        # tangential moment tensor, force
    n_stress: np.ndarray      # total in-plane force N = Nbar - W M
    shear: np.ndarray | None  # transverse shear S = P div M (needs 3rd derivatives)


def _sym_t(a):
    return np.swapaxes(np.asarray(a), -1, -2)


def _ddot(a, b):
    return (np.asarray(a) * np.asarray(b)).sum(axis=(-2, -1))


def _tr(a):
    a = np.asarray(a)
    return a[..., 0, 0] + a[..., 1, 1] + a[..., 2, 2]


def _as_matrix_scalar(s):
    # broadcast helper: batched floats need trailing matrix axes, a bare
    # Expr (symbolic route) broadcasts as an object scalar already
    return s[..., None, None] if isinstance(s, np.ndarray) else s


def membrane_strain(grad_u, P):
    """gamma(u) = 1/2 P (grad u + grad u^T) P; symmetric tangential."""
    grad_u = np.asarray(grad_u)
    return 0.5 * (np.asarray(P) @ (grad_u + _sym_t(grad_u)) @ np.asarray(P))


def bending_strain(grad_u, hess_u, n, P, W):
    """rho(u) = P (n . hess u) P - (n . grad u . n) W; symmetric tangential.

    hess_u[..., i, j, k] = d^2 u_i / dx_j dx_k; the normal contracts the
    component index.
    """
    n = np.asarray(n)
    hess_u = np.asarray(hess_u)
    grad_u = np.asarray(grad_u)
    n_hess = (hess_u * n[..., :, None, None]).sum(axis=-3)
    twist = (n[..., :, None] * grad_u * n[..., None, :]).sum(axis=(-2, -1))
    return np.asarray(P) @ n_hess @ np.asarray(P) - _as_matrix_scalar(twist) * np.asarray(W)


def elasticity_apply(A, mat: MaterialParams, P):
    """E:A = lam P tr(A) + 2 mu A for tangential symmetric A."""
    return mat.lam * np.asarray(P) * _as_matrix_scalar(_tr(A)) + 2.0 * mat.mu * np.asarray(A)


def energy_density(strain: StrainState, mat: MaterialParams):
    """Koiter energy per unit area: 1/2 [t g:E:g + t^3/12 r:E:r], >= 0."""
    t = mat.thickness
    g, r = strain.gamma, strain.rho
    mem = mat.lam * _tr(g) ** 2 + 2.0 * mat.mu * _ddot(g, g)
    ben = mat.lam * _tr(r) ** 2 + 2.0 * mat.mu * _ddot(r, r)
    return 0.5 * (t * mem + t**3 / 12.0 * ben)


def stress_resultants(strain: StrainState, mat: MaterialParams, P, W, H=None, n=None,
                      grad_moment=None) -> StressResultants:
    """Constitutive resultants; the shear S needs grad(M) (third derivatives).

    With the constitutive N the moment-equilibrium symmetry condition
    [-W M + N^T]_x = 0 holds identically.
    """
    t = mat.thickness
    moment = -(t**3 / 12.0) * elasticity_apply(strain.rho, mat, P)
    nbar = t * elasticity_apply(strain.gamma, mat, P)
    n_stress = nbar - np.asarray(W) @ moment
    shear = None
    if grad_moment is not None:
        if H is None or n is None:
            raise ValueError("shear needs H and n along with grad_moment")
        div_m = surface_divergence(moment, grad_moment, P, H, n)
        shear = (np.asarray(P) * div_m[..., None, :]).sum(axis=-1)
    return StressResultants(nbar=nbar, moment=moment, n_stress=n_stress, shear=shear)


def axial(A):
    """[A]_x: the axial vector A_ij e_i x e_j of a second-order tensor."""
    A = np.asarray(A)
    return np.stack(
        [A[..., 1, 2] - A[..., 2, 1], A[..., 2, 0] - A[..., 0, 2], A[..., 0, 1] - A[..., 1, 0]],
        axis=-1,
    )


def cross_vec_tensor(v, T):
    """(v x T)_mk = eps_ilm v_i T_lk (cross product against the first index)."""
    v = np.asarray(v)
    T = np.asarray(T)
    out = np.empty(np.broadcast(v[..., 0, None, None], T).shape, dtype=np.result_type(v, T))
    out[..., 0, :] = v[..., 1, None] * T[..., 2, :] - v[..., 2, None] * T[..., 1, :]
    out[..., 1, :] = v[..., 2, None] * T[..., 0, :] - v[..., 0, None] * T[..., 2, :]
    out[..., 2, :] = v[..., 0, None] * T[..., 1, :] - v[..., 1, None] * T[..., 0, :]
    return out


def scalar_cross(V, T):
    """V x. T = V_ij T_jk (e_i x e_k) = [V T]_x (the paper's scalar-cross)."""
    return axial(np.asarray(V) @ np.asarray(T))


# ---------------------------------------------------------------------------
# symbolic route: exact strong-form residual for manufactured solutions
# ---------------------------------------------------------------------------

@dataclass
class SymbolicShellState:
    """Exact symbolic stress chain of a displacement field on a level set."""

    frame: SymbolicFrame
    gamma: np.ndarray
    rho: np.ndarray
    moment: np.ndarray
    nbar: np.ndarray
    n_stress: np.ndarray
    shear: np.ndarray
    sigma: np.ndarray
    div_sigma: np.ndarray


def symbolic_shell_state(phi: Expr, u_exprs, mat: MaterialParams) -> SymbolicShellState:
    """Build gamma, rho, resultants, sigma and div(sigma) as expression DAGs.

    This is the manufactured-solution route: with b = -div(sigma(u_exact))
    the field u_exact solves the strong form exactly.
    """
    fr = symbolic_frame(phi)
    u = np.empty(3, dtype=object)
    for i, e in enumerate(u_exprs):
        u[i] = e
    grad_u = symbolic_jacobian(u)
    hess_u = symbolic_jacobian(grad_u)
    gamma = membrane_strain(grad_u, fr.P)
    rho = bending_strain(grad_u, hess_u, fr.n, fr.P, fr.W)
    strain = StrainState(gamma=gamma, rho=rho)
    grad_m_of = stress_resultants(strain, mat, fr.P, fr.W)
    moment = grad_m_of.moment
    grad_moment = symbolic_jacobian(moment)
    res = stress_resultants(strain, mat, fr.P, fr.W, H=fr.H, n=fr.n, grad_moment=grad_moment)
    sigma = res.n_stress + np.outer(fr.n, res.shear)
    grad_sigma = symbolic_jacobian(sigma)
    div_sigma = surface_divergence(sigma, grad_sigma, fr.P, fr.H, fr.n)
    return SymbolicShellState(
        frame=fr,
        gamma=gamma,
        rho=rho,
        moment=moment,
        nbar=res.nbar,
        n_stress=res.n_stress,
        shear=res.shear,
        sigma=sigma,
        div_sigma=div_sigma,
    )


def strong_residual(ls: LevelSet, u_exprs, mat: MaterialParams, pts) -> np.ndarray:
    """div(sigma) of a four-times differentiable field at surface points.

    The manufactured body force is the negative of this.
    """
    state = symbolic_shell_state(ls.phi, u_exprs, mat)
    pts = np.atleast_2d(np.asarray(pts, float))
    out = np.empty((pts.shape[0], 3))
    for i in range(3):
        out[:, i] = state.div_sigma[i](pts)
    return out
