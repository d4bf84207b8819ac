"""Manufactured-solution verification: forces, error norms, convergence.

A manufactured case fixes the level set and an exact displacement field,
generates the body force b = -div(sigma(u_exact)) symbolically, and imposes
the trace of u_exact as Dirichlet data on the whole boundary.  Every
generated force is cross-checked against a finite-difference composition of
the same stress chain before use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (
    BCKind,
    BoundaryCondition,
    assemble_l2_rhs,
    assemble_surface_mass,
)
from .expressions import X, Y, Z, eval_derivs, parse_expression
from .geometry import Box, LevelSet
from .hermite import hermite_interpolate
from .problem import ShellProblem
from .shell import (
    MaterialParams,
    StrainState,
    SymbolicShellState,
    bending_strain,
    elasticity_apply,
    membrane_strain,
    stress_resultants,
    symbolic_shell_state,
)
from .solvers import minnorm_solve

# 6th-order central stencils
_D1_OFFSETS = np.arange(-3, 4)
_D1_COEFFS = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D2_COEFFS = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0


def manufactured_force(ls: LevelSet, u_exprs, mat: MaterialParams):
    """Body force expressions b = -div(sigma(u_exact)) plus the stress chain."""
    state = symbolic_shell_state(ls.phi, u_exprs, mat)
    b = np.empty(3, dtype=object)
    for i in range(3):
        b[i] = -state.div_sigma[i]
    return b, state


def rigid_motion_exprs(translation, rotation):
    """u = c + omega x x as three expressions (zero strain by construction)."""
    c = np.asarray(translation, float)
    w = np.asarray(rotation, float)
    return (
        c[0] + w[1] * Z - w[2] * Y,
        c[1] + w[2] * X - w[0] * Z,
        c[2] + w[0] * Y - w[1] * X,
    )


# ---------------------------------------------------------------------------
# finite-difference oracle for the manufactured force
# ---------------------------------------------------------------------------

def _fd_tables(fn, pts, h: float, pure: bool):
    """Derivative tables up to order 2 at pts.

    ``pure`` uses 6th-order stencils of raw evaluations end to end; the
    default evaluates the (independently FD-verified) exact derivative
    expressions, which keeps the outer divergence differences well above the
    cancellation floor.
    """
    expr, _ = fn
    if not pure:
        return eval_derivs(expr, pts, 2)
    f = fn[1]
    pts = np.asarray(pts, float)
    table = {(0, 0, 0): f(pts)}
    shifted = {}
    for ax in range(3):
        vals = []
        for o in _D1_OFFSETS:
            p = pts.copy()
            p[:, ax] += o * h
            vals.append(f(p))
        vals = np.stack(vals)
        shifted[ax] = vals
        alpha = [0, 0, 0]
        alpha[ax] = 1
        table[tuple(alpha)] = np.tensordot(_D1_COEFFS, vals, axes=1) / h
        alpha[ax] = 2
        table[tuple(alpha)] = np.tensordot(_D2_COEFFS, vals, axes=1) / h**2
    for a1 in range(3):
        for a2 in range(a1 + 1, 3):
            acc = 0.0
            for i, o1 in enumerate(_D1_OFFSETS):
                if _D1_COEFFS[i] == 0.0:
                    continue
                p = np.repeat(pts[None, :, :], 7, axis=0)
                p[:, :, a1] += o1 * h
                p[:, :, a2] += (_D1_OFFSETS * h)[:, None]
                row = f(p.reshape(-1, 3)).reshape(7, -1)
                acc = acc + _D1_COEFFS[i] * np.tensordot(_D1_COEFFS, row, axes=1)
            alpha = [0, 0, 0]
            alpha[a1] = 1
            alpha[a2] = 1
            table[tuple(alpha)] = acc / h**2
    return table


def _tables_to_frame(t_phi):
    g = np.stack([t_phi[(1, 0, 0)], t_phi[(0, 1, 0)], t_phi[(0, 0, 1)]], axis=-1)
    hess = np.empty(g.shape[:-1] + (3, 3))
    order = {(0, 0): (2, 0, 0), (1, 1): (0, 2, 0), (2, 2): (0, 0, 2),
             (0, 1): (1, 1, 0), (0, 2): (1, 0, 1), (1, 2): (0, 1, 1)}
    for (i, j), a in order.items():
        hess[..., i, j] = hess[..., j, i] = t_phi[a]
    norm = np.linalg.norm(g, axis=-1)
    n = g / norm[..., None]
    p = np.eye(3) - n[..., :, None] * n[..., None, :]
    w = -(p @ hess @ p) / norm[..., None, None]
    w = 0.5 * (w + np.swapaxes(w, -1, -2))
    return n, p, w, np.trace(w, axis1=-2, axis2=-1)


def _tables_to_field(tables):
    grad = np.stack(
        [np.stack([t[(1, 0, 0)], t[(0, 1, 0)], t[(0, 0, 1)]], axis=-1) for t in tables],
        axis=-2,
    )
    hess = np.empty(grad.shape + (3,))
    order = {(0, 0): (2, 0, 0), (1, 1): (0, 2, 0), (2, 2): (0, 0, 2),
             (0, 1): (1, 1, 0), (0, 2): (1, 0, 1), (1, 2): (0, 1, 1)}
    for c, t in enumerate(tables):
        for (i, j), a in order.items():
            hess[..., c, i, j] = hess[..., c, j, i] = t[a]
    return grad, hess


def _fd_divergence(tensor_at, pts, h, P, H, n):
    """div T = grad(T):P + H T.n with grad(T) by 6th-order differences."""
    grads = []
    for ax in range(3):
        acc = 0.0
        for i, o in enumerate(_D1_OFFSETS):
            if _D1_COEFFS[i] == 0.0:
                continue
            p = pts.copy()
            p[:, ax] += o * h
            acc = acc + _D1_COEFFS[i] * tensor_at(p)
        grads.append(acc / h)
    grad_t = np.stack(grads, axis=-1)  # (..., 3, 3, 3): derivative last
    t_val = tensor_at(pts)
    return (grad_t * P[..., None, :, :]).sum(axis=(-2, -1)) + H[..., None] * (
        (t_val * n[..., None, :]).sum(axis=-1))


def strong_force_fd_oracle(ls: LevelSet, u_exprs, mat: MaterialParams, pts,
                           h: float = 1e-3, pure_tables: bool = False) -> np.ndarray:
    """-div(sigma) by finite differences through the same stress chain."""
    pts = np.atleast_2d(np.asarray(pts, float))
    phi_fn = (ls.phi, lambda p: ls.phi(p))
    u_fns = [(e, (lambda e: lambda p: e(p))(e)) for e in u_exprs]

    def moment_at(p):
        t_phi = _fd_tables(phi_fn, p, h, pure_tables)
        n, prj, w, _ = _tables_to_frame(t_phi)
        grad, hess = _tables_to_field([_fd_tables(f, p, h, pure_tables) for f in u_fns])
        rho = bending_strain(grad, hess, n, prj, w)
        return -(mat.thickness**3 / 12.0) * elasticity_apply(rho, mat, prj)

    def sigma_at(p):
        t_phi = _fd_tables(phi_fn, p, h, pure_tables)
        n, prj, w, mean_h = _tables_to_frame(t_phi)
        grad, hess = _tables_to_field([_fd_tables(f, p, h, pure_tables) for f in u_fns])
        gamma = membrane_strain(grad, prj)
        rho = bending_strain(grad, hess, n, prj, w)
        res = stress_resultants(StrainState(gamma, rho), mat, prj, w)
        div_m = _fd_divergence(moment_at, p, h, prj, mean_h, n)
        shear = (prj * div_m[..., None, :]).sum(axis=-1)
        return res.n_stress + n[..., :, None] * shear[..., None, :]

    t_phi = _fd_tables(phi_fn, pts, h, pure_tables)
    n, prj, w, mean_h = _tables_to_frame(t_phi)
    return -_fd_divergence(sigma_at, pts, h, prj, mean_h, n)


def random_surface_points(ls: LevelSet, n: int, rng, margin: float = 0.02,
                          max_tries: int = 200) -> np.ndarray:
    """Points on phi = 0 strictly inside the cuboid (Newton projection)."""
    out = []
    shrink = Box(ls.box.lo + margin * ls.box.widths, ls.box.hi - margin * ls.box.widths)
    for _ in range(max_tries):
        cand = shrink.random_points(4 * n, rng)
        proj = ls.project_to_surface(cand, steps=6)
        ok = shrink.contains(proj) & (np.abs(ls.value(proj)) < 1e-10)
        out.append(proj[ok])
        if sum(len(o) for o in out) >= n:
            break
    pts = np.concatenate(out)
    if pts.shape[0] < n:
        raise RuntimeError("could not sample enough surface points")
    return pts[:n]


# ---------------------------------------------------------------------------
# manufactured cases
# ---------------------------------------------------------------------------

@dataclass
class ManufacturedCase:
    """Level set + exact solution + generated force + full Dirichlet data."""

    name: str
    ls: LevelSet
    u_exact: tuple
    material: MaterialParams
    body_force: np.ndarray
    state: SymbolicShellState
    problem: ShellProblem

    @classmethod
    def build(cls, name: str, ls: LevelSet, u_exact, mat: MaterialParams,
              q: int = 6, max_depth: int = 8) -> "ManufacturedCase":
        body, state = manufactured_force(ls, u_exact, mat)
        n_dot_u = sum(state.frame.n[i] * u_exact[i] for i in range(3))
        omega = np.empty(3, dtype=object)
        for d in range(3):
            omega[d] = n_dot_u.diff(d)

        def rotation_data(rule):
            vals = np.stack([omega[d](rule.points) for d in range(3)], axis=1)
            return (vals * rule.mu).sum(axis=1)

        bcs = []
        for face in ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max"):
            for i in range(3):
                bcs.append(BoundaryCondition(face, BCKind.DISPLACEMENT,
                                             value=u_exact[i], component=i))
            bcs.append(BoundaryCondition(face, BCKind.ROTATION_CLAMP, value=rotation_data))
        problem = ShellProblem(levelset=ls, material=mat, body_force=tuple(body),
                               bcs=bcs, q=q, max_depth=max_depth)
        return cls(name=name, ls=ls, u_exact=tuple(u_exact), material=mat,
                   body_force=body, state=state, problem=problem)

    def validate_force(self, n_points: int = 100, seed: int = 0, h: float = 1e-3,
                       pure_check_points: int = 5) -> float:
        """Max relative deviation of b from the finite-difference oracle."""
        rng = np.random.default_rng(seed)
        pts = random_surface_points(self.ls, n_points, rng)
        b_sym = np.stack([self.body_force[i](pts) for i in range(3)], axis=1)
        b_fd = strong_force_fd_oracle(self.ls, self.u_exact, self.material, pts, h=h)
        scale = max(float(np.abs(b_sym).max()), 1e-300)
        err = float(np.abs(b_sym - b_fd).max()) / scale
        if pure_check_points:
            # coarse end-to-end check with raw-evaluation stencils: catches a
            # systematic error in the exact derivative tables themselves
            sub = pts[:pure_check_points]
            b_pure = strong_force_fd_oracle(self.ls, self.u_exact, self.material,
                                            sub, h=h, pure_tables=True)
            err_pure = float(np.abs(b_sym[:pure_check_points] - b_pure).max()) / scale
            if err_pure > 1e-3:
                raise AssertionError(
                    f"pure finite-difference check failed: {err_pure:.3e}")
        return err


def neumann_data_from_state(state: SymbolicShellState, mat: MaterialParams):
    """Boundary data callables from the exact stress chain.

    Returns force components e_i.(Nbar + n (x) S).mu and the two moment data
    t.M.mu and mu.M.mu for use in mixed manufactured problems.
    """
    nbar, shear, moment, n = state.nbar, state.shear, state.moment, state.frame.n

    def _eval_matrix(mexpr, pts):
        out = np.empty((pts.shape[0], 3, 3))
        for i in range(3):
            for j in range(3):
                out[:, i, j] = mexpr[i, j](pts)
        return out

    def _eval_vector(vexpr, pts):
        return np.stack([vexpr[i](pts) for i in range(3)], axis=1)

    def force(i):
        def data(rule):
            pts = rule.points
            tract = _eval_matrix(nbar, pts) + (_eval_vector(n, pts)[:, :, None]
                                               * _eval_vector(shear, pts)[:, None, :])
            return np.einsum("qj,qj->q", tract[:, i, :], rule.mu)
        return data

    def moment_t(rule):
        m = _eval_matrix(moment, rule.points)
        return np.einsum("qi,qij,qj->q", rule.tangent, m, rule.mu)

    def moment_mu(rule):
        m = _eval_matrix(moment, rule.points)
        return np.einsum("qi,qij,qj->q", rule.mu, m, rule.mu)

    return {"force": force, "moment_t": moment_t, "moment_mu": moment_mu}


# ---------------------------------------------------------------------------
# error norms and studies
# ---------------------------------------------------------------------------

def relative_l2_error(discrete, coeffs, u_exprs) -> float:
    """sqrt(int (u_h - u_ex)^2 / int u_ex^2) over the surface rules."""
    num = 0.0
    den = 0.0
    for c in sorted(discrete.rules):
        rule = discrete.rules[c]
        u_h = discrete.dofmap.displacement(coeffs, c, rule.points)
        u_ex = np.stack([e(rule.points) for e in u_exprs], axis=1)
        num += float(rule.weights @ ((u_h - u_ex) ** 2).sum(axis=1))
        den += float(rule.weights @ (u_ex**2).sum(axis=1))
    if den == 0.0:
        raise ZeroDivisionError("exact field vanishes on the surface")
    return float(np.sqrt(num / den))


def l2_project(discrete, u_exprs, dense_limit: int = 4096) -> np.ndarray:
    """Surface L2 projection onto the trace space (min-norm normal equations)."""
    mass = assemble_surface_mass(discrete.grid, discrete.dofmap, discrete.rules)
    rhs = assemble_l2_rhs(discrete.grid, discrete.dofmap, discrete.rules, u_exprs)
    return minnorm_solve(mass, rhs, dense_limit=dense_limit)


def convergence_study(case: ManufacturedCase, levels, strategies=("nullspace",),
                      alpha: float | None = None, include_baselines: bool = True,
                      dense_limit: int = 4096):
    """Error table rows (level, strategy, error, n_dofs, seconds)."""
    import time as _time

    rows = []
    for level in levels:
        t0 = _time.perf_counter()
        disc = case.problem.discretize(level)
        build_time = _time.perf_counter() - t0
        if include_baselines:
            t0 = _time.perf_counter()
            interp = hermite_interpolate(disc.dofmap, case.u_exact)
            rows.append({
                "level": level, "strategy": "interpolation",
                "error": relative_l2_error(disc, interp, case.u_exact),
                "n_dofs": disc.system.n_dofs,
                "seconds": build_time + _time.perf_counter() - t0,
            })
            t0 = _time.perf_counter()
            proj = l2_project(disc, case.u_exact, dense_limit=dense_limit)
            rows.append({
                "level": level, "strategy": "l2_projection",
                "error": relative_l2_error(disc, proj, case.u_exact),
                "n_dofs": disc.system.n_dofs,
                "seconds": build_time + _time.perf_counter() - t0,
            })
        for strategy in strategies:
            t0 = _time.perf_counter()
            sol = disc.solve(strategy, alpha=alpha, dense_limit=dense_limit) \
                if strategy == "penalty" else disc.solve(strategy, dense_limit=dense_limit)
            rows.append({
                "level": level, "strategy": strategy,
                "error": relative_l2_error(disc, sol.coeffs, case.u_exact),
                "n_dofs": disc.system.n_dofs,
                "seconds": build_time + _time.perf_counter() - t0,
                "report": sol.report,
            })
    return rows


# ---------------------------------------------------------------------------
# built-in configurations
# ---------------------------------------------------------------------------

_VERIFICATION_BOX = Box.from_bounds([(-0.4, 0.8), (0.0, 1.0), (-0.3, 1.0)])
_VERIFICATION_MAT = MaterialParams(e_modulus=10.0, poisson=0.4, thickness=0.25)

_GEOMETRIES = {
    "plane": "x + z - 0.7",
    "ellipsoid": "4*x^2 + 0.25*y^2 + z^2 - 0.7",
}

_FIELDS = {
    "u1": ("x^3", "y*x^3", "x*z*y^2 + x*(x - 1)*y*(y - 1)"),
    "u2": ("sin(16*y)*cos(16*x*z)", "cos(16*x*y*z)", "2*sin(16*x*y*z)"),
}

VERIFICATION_CASES = tuple(f"{g}-{f}" for g in _GEOMETRIES for f in _FIELDS)


def builtin_case(name: str, q: int = 6, max_depth: int = 8) -> ManufacturedCase:
    """The shipped verification cases: plane-u1, plane-u2, ellipsoid-u1/u2."""
    try:
        geom, fld = name.split("-")
        phi_text = _GEOMETRIES[geom]
        u_texts = _FIELDS[fld]
    except (ValueError, KeyError):
        raise ValueError(f"unknown case {name!r}; choose from {VERIFICATION_CASES}")
    ls = LevelSet(parse_expression(phi_text), _VERIFICATION_BOX)
    u = tuple(parse_expression(t) for t in u_texts)
    return ManufacturedCase.build(name, ls, u, _VERIFICATION_MAT, q=q, max_depth=max_depth)
