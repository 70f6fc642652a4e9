"""Full-order Evolve-Filter-Relax solver on a collocated Cartesian FV mesh.

The evolve step assembles the BDF2 momentum equations together with the
discrete continuity equation and solves the coupled system in one sparse LU
factorisation.  Continuity is imposed on momentum-interpolated face fluxes
(a Rhie-Chow style pressure correction of the central flux) so that the
collocated pressure has no checkerboard modes.  The same fluxes are carried to
the next step as the linearised convecting flux.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators as ops
from .mesh import OBSTACLE, CartesianMesh

log = logging.getLogger(__name__)

SOLVER_RTOL = 1e-12


class SolverFailure(RuntimeError):
    """Raised when a linear solve does not reach the requested residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class CFLWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EfrParams:
    rho: float
    mu: float
    dt: float
    alpha: float
    chi: float

    def __post_init__(self):
        if not (self.rho > 0 and self.mu > 0):
            raise ValueError("rho and mu must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        # chi = 0 is accepted: it is the plain Navier-Stokes limit
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError("chi must lie in [0, 1]")


@dataclass
class FomState:
    """Two-level velocity history plus the latest evolve/filter outputs."""

    u_prev: np.ndarray
    u_curr: np.ndarray
    v: np.ndarray
    p: np.ndarray
    a: np.ndarray
    vbar: np.ndarray
    flux_if: np.ndarray
    flux_bf: np.ndarray
    time: float
    step: int = 0

    @classmethod
    def at_rest(cls, mesh: CartesianMesh, t0: float = 0.0) -> "FomState":
        nc = mesh.n_cells
        z = np.zeros((nc, 2))
        return cls(z, z.copy(), z.copy(), np.zeros(nc), np.zeros(nc), z.copy(),
                   np.zeros(len(mesh.if_owner)), np.zeros(len(mesh.bf_owner)), float(t0), 0)

    def copy(self) -> "FomState":
        return replace(self, **{k: np.array(getattr(self, k)) for k in
                                ("u_prev", "u_curr", "v", "p", "a", "vbar", "flux_if", "flux_bf")})


# -- cached operator bundles -----------------------------------------------------

@dataclass(eq=False)
class _Evolve:
    """Time-step independent pieces of the coupled system."""

    mesh: CartesianMesh
    vdir: np.ndarray
    L: sp.csr_matrix
    Lb: sp.csr_matrix
    Gx: sp.csr_matrix
    Gy: sp.csr_matrix
    Fv_if: sp.csr_matrix
    Fv_bf: sp.csr_matrix
    Fp_if_unit: sp.csr_matrix  # pressure correction per unit tau
    Fp_bf_unit: sp.csr_matrix
    cache: dict = field(default_factory=dict)


def _evolve_ops(mesh: CartesianMesh) -> _Evolve:
    if "evolve" in mesh._cache:
        return mesh._cache["evolve"]
    inc = ops.incidence(mesh)
    vdir = ops.velocity_dirichlet_mask(mesh)
    pdir = ops.pressure_dirichlet_mask(mesh)
    L, Lb = ops.laplacian(mesh, vdir)
    (Gx, _), (Gy, _) = ops.gradient(mesh, pdir)
    Ax, Ay = sp.diags(mesh.if_area[:, 0]), sp.diags(mesh.if_area[:, 1])
    out = (~vdir).astype(float)
    Bx, By = sp.diags(mesh.bf_area[:, 0] * out), sp.diags(mesh.bf_area[:, 1] * out)
    Fv_if = sp.hstack([Ax @ inc.avg, Ay @ inc.avg]).tocsr()
    Fv_bf = sp.hstack([Bx @ inc.own, By @ inc.own]).tocsr()
    # face velocity correction  -tau * (compact grad p - interpolated cell grad p) . A
    Fp_if = -(sp.diags(mesh.if_mag / mesh.if_dist) @ inc.diff - Ax @ inc.avg @ Gx - Ay @ inc.avg @ Gy)
    Fp_bf = -(-sp.diags(mesh.bf_mag / mesh.bf_dist * out) @ inc.own - Bx @ inc.own @ Gx - By @ inc.own @ Gy)
    ev = _Evolve(mesh, vdir, L, Lb, Gx, Gy, Fv_if, Fv_bf, Fp_if.tocsr(), Fp_bf.tocsr())
    mesh._cache["evolve"] = ev
    return ev


def rhie_chow_tau(mesh: CartesianMesh, rho: float, mu: float, dt: Optional[float]) -> float:
    """Momentum-interpolation coefficient, the inverse of the momentum diagonal."""
    diag = 2.0 * mu * (1.0 / mesh.dx**2 + 1.0 / mesh.dy**2)
    if dt is not None:
        diag += 1.5 * rho / dt
    return 1.0 / diag


def face_fluxes(mesh: CartesianMesh, v: np.ndarray, p: np.ndarray, g: np.ndarray, tau: float):
    """Momentum-interpolated face fluxes of ``(v, p)`` with velocity boundary data ``g``."""
    ev = _evolve_ops(mesh)
    vs = np.r_[v[:, 0], v[:, 1]]
    flux_if = ev.Fv_if @ vs + tau * (ev.Fp_if_unit @ p)
    gA = np.einsum("ij,ij->i", g, mesh.bf_area) * ev.vdir
    flux_bf = ev.Fv_bf @ vs + tau * (ev.Fp_bf_unit @ p) + gA
    return flux_if, flux_bf


def continuity_residual(mesh: CartesianMesh, flux_if: np.ndarray, flux_bf: np.ndarray) -> np.ndarray:
    """Net outward flux per cell divided by the cell perimeter (velocity units)."""
    inc = ops.incidence(mesh)
    perim = 2.0 * (mesh.dx + mesh.dy)
    return (inc.S_if @ flux_if + inc.S_bf @ flux_bf) / perim


def _factor(A: sp.spmatrix):
    # symmetric-mode ordering keeps fill low on the saddle-point pattern
    return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                     options=dict(SymmetricMode=True))


def _solve(A: sp.spmatrix, rhs: np.ndarray, what: str) -> np.ndarray:
    lu = _factor(A)
    return _refine(A, lu, rhs, lu.solve(rhs), what)


class CoupledSolver:
    """Reuses one LU factorisation as a GMRES preconditioner across time steps.

    The convecting flux changes little from step to step, so a factorisation
    from a recent step keeps GMRES to a handful of iterations.  A new
    factorisation is made once GMRES needs more than half of ``max_iter``
    iterations, when it fails, or when the time-derivative coefficient changes.  The refactorisation schedule depends
    only on the sequence of systems, so runs are reproducible.
    """

    def __init__(self, max_iter: int = 20):
        self.max_iter = max_iter
        self.lu = None
        self.key = None
        self.factorizations = 0

    def solve(self, A: sp.spmatrix, rhs: np.ndarray, key=None) -> np.ndarray:
        if self.lu is None or key != self.key:
            return self._fresh(A, rhs, key)
        scale = np.linalg.norm(rhs)
        if scale == 0.0:
            return np.zeros_like(rhs)
        M = spla.LinearOperator(A.shape, self.lu.solve)
        its = [0]

        def count(_):
            its[0] += 1

        x, info = spla.gmres(A, rhs, M=M, rtol=0.1 * SOLVER_RTOL, atol=0.0, restart=self.max_iter,
                             maxiter=1, callback=count, callback_type="pr_norm")
        res = np.linalg.norm(rhs - A @ x) / scale
        if info != 0 or res > SOLVER_RTOL:
            return self._fresh(A, rhs, key)
        if its[0] > self.max_iter // 2:
            self.lu = None  # getting stale, refactor on the next call
        return x

    def _fresh(self, A, rhs, key):
        self.lu = _factor(A)
        self.key = key
        self.factorizations += 1
        return _refine(A, self.lu, rhs, self.lu.solve(rhs), "evolve")


def _refine(A, lu, rhs, x, what):
    scale = np.linalg.norm(rhs)
    if scale == 0.0:
        return x
    r = rhs - A @ x
    res = np.linalg.norm(r) / scale
    if res > SOLVER_RTOL:
        x = x + lu.solve(r)
        res = np.linalg.norm(rhs - A @ x) / scale
    if not np.isfinite(res) or res > 1e3 * SOLVER_RTOL:
        raise SolverFailure(f"{what} solve did not converge", res)
    return x


def cfl_number(mesh: CartesianMesh, v: np.ndarray, dt: float) -> float:
    return float(dt * np.max(np.abs(v[:, 0]) / mesh.dx + np.abs(v[:, 1]) / mesh.dy)) if len(v) else 0.0


# -- evolve ------------------------------------------------------------------------

def evolve_step(
    mesh: CartesianMesh,
    state: FomState,
    params: EfrParams,
    inflow: Optional[ops.ParabolicInflow],
    time: float,
    solver: Optional[CoupledSolver] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Solve the linearised BDF2 momentum/continuity system at ``time``.

    Returns ``(v, p, flux_if, flux_bf)``.  The first step (``state.step == 0``)
    uses BDF1.
    """
    ev = _evolve_ops(mesh)
    nc = mesh.n_cells
    rho, mu, dt = params.rho, params.mu, params.dt
    g = ops.inflow_data(mesh, inflow, time)

    if state.step == 0:
        c0 = rho / dt
        b = rho * state.u_curr / dt
    else:
        c0 = 1.5 * rho / dt
        b = rho * (4.0 * state.u_curr - state.u_prev) / (2.0 * dt)
    tau = rhie_chow_tau(mesh, rho, mu, dt)

    C, Cb = ops.convection(mesh, state.flux_if, state.flux_bf, ev.vdir)
    K = (c0 * sp.identity(nc) + rho * C - mu * ev.L).tocsr()
    inc = ops.incidence(mesh)
    Dv = inc.inv_vol @ (inc.S_if @ ev.Fv_if + inc.S_bf @ ev.Fv_bf)
    Dp = tau * (inc.inv_vol @ (inc.S_if @ ev.Fp_if_unit + inc.S_bf @ ev.Fp_bf_unit))
    A = sp.bmat([[K, None, ev.Gx], [None, K, ev.Gy], [Dv[:, :nc], Dv[:, nc:], Dp]], format="csc")

    gA = np.einsum("ij,ij->i", g, mesh.bf_area) * ev.vdir
    rhs = np.concatenate([
        b[:, 0] + mu * (ev.Lb @ g[:, 0]) - rho * (Cb @ g[:, 0]),
        b[:, 1] + mu * (ev.Lb @ g[:, 1]) - rho * (Cb @ g[:, 1]),
        -(inc.S_bf @ gA) / mesh.volumes,
    ])
    x = _solve(A, rhs, "evolve") if solver is None else solver.solve(A, rhs, key=c0)
    v = np.column_stack([x[:nc], x[nc:2 * nc]])
    p = x[2 * nc:]
    flux_if, flux_bf = face_fluxes(mesh, v, p, g, tau)

    cfl = cfl_number(mesh, v, dt)
    if cfl > 1.0:
        warnings.warn(f"CFL_max = {cfl:.3f} exceeds 1 at t = {time:.4f}", CFLWarning, stacklevel=2)
    return v, p, flux_if, flux_bf


# -- filters -----------------------------------------------------------------------

def _bc(mesh, g, dirichlet):
    if dirichlet is None:
        dirichlet = ops.velocity_dirichlet_mask(mesh)
    if g is None:
        g = np.zeros((len(mesh.bf_owner), 2))
    return np.asarray(g, float), np.asarray(dirichlet, bool)


def helmholtz_filter(mesh: CartesianMesh, v: np.ndarray, alpha: float,
                     g: Optional[np.ndarray] = None, dirichlet: Optional[np.ndarray] = None) -> np.ndarray:
    """Linear differential filter ``(I - alpha^2 Lap) v_tilde = v``.

    ``g`` holds the Dirichlet data on boundary faces selected by ``dirichlet``
    (default: all but the outflow); the other faces are zero-gradient.
    """
    if alpha == 0.0:
        return np.array(v, dtype=float)
    g, dirichlet = _bc(mesh, g, dirichlet)
    key = ("helmholtz", float(alpha), dirichlet.tobytes())
    cached = mesh._cache.get(key)
    if cached is None:
        L, Lb = ops.laplacian(mesh, dirichlet)
        A = (sp.identity(mesh.n_cells) - alpha**2 * L).tocsc()
        cached = (A, spla.splu(A), Lb)
        mesh._cache[key] = cached
    A, lu, Lb = cached
    rhs = np.asarray(v, float) + alpha**2 * (Lb @ g)
    x = lu.solve(rhs)
    return np.column_stack([_refine(A, lu, rhs[:, k], x[:, k], "helmholtz") for k in range(rhs.shape[1])]) \
        if rhs.ndim == 2 else _refine(A, lu, rhs, x, "helmholtz")


def indicator(mesh: CartesianMesh, v: np.ndarray, alpha: float,
              g: Optional[np.ndarray] = None, dirichlet: Optional[np.ndarray] = None) -> np.ndarray:
    """Deconvolution indicator ``|v - F(v)|`` with ``F`` the Helmholtz filter."""
    vt = helmholtz_filter(mesh, v, alpha, g, dirichlet)
    d = np.asarray(v, float) - vt
    return np.sqrt(np.sum(d * d, axis=1)) if d.ndim == 2 else np.abs(d)


def nonlinear_filter(mesh: CartesianMesh, v: np.ndarray, a: np.ndarray, alpha: float,
                     g: Optional[np.ndarray] = None, dirichlet: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve ``v_bar - alpha^2 div(a grad v_bar) = v``.

    The face coefficient is the arithmetic mean of the two adjacent cell values
    of ``a`` (owner value on boundary faces).
    """
    a = np.asarray(a, float)
    if alpha == 0.0 or not np.any(a):
        return np.array(v, dtype=float)
    if np.any(a < 0):
        raise ValueError("indicator must be non-negative")
    g, dirichlet = _bc(mesh, g, dirichlet)
    inc = ops.incidence(mesh)
    L, Lb = ops.laplacian(mesh, dirichlet, inc.avg @ a, a[mesh.bf_owner])
    A = (sp.identity(mesh.n_cells) - alpha**2 * L).tocsc()
    lu = spla.splu(A)
    rhs = np.asarray(v, float) + alpha**2 * (Lb @ g)
    x = lu.solve(rhs)
    if rhs.ndim == 1:
        return _refine(A, lu, rhs, x, "nonlinear filter")
    return np.column_stack([_refine(A, lu, rhs[:, k], x[:, k], "nonlinear filter") for k in range(rhs.shape[1])])


def relax(v: np.ndarray, vbar: np.ndarray, chi: float) -> np.ndarray:
    return (1.0 - chi) * v + chi * vbar


# -- full step -----------------------------------------------------------------------

def efr_step(mesh: CartesianMesh, state: FomState, params: EfrParams,
             inflow: Optional[ops.ParabolicInflow], solver: Optional[CoupledSolver] = None) -> FomState:
    """Advance one Evolve-Filter-Relax step and return the new state."""
    t_new = state.time + params.dt
    v, p, flux_if, flux_bf = evolve_step(mesh, state, params, inflow, t_new, solver)
    g = ops.inflow_data(mesh, inflow, t_new)
    a = indicator(mesh, v, params.alpha, g)
    vbar = nonlinear_filter(mesh, v, a, params.alpha, g)
    u = relax(v, vbar, params.chi)
    return FomState(state.u_curr, u, v, p, a, vbar, flux_if, flux_bf, t_new, state.step + 1)


def force_coefficients(mesh: CartesianMesh, u: np.ndarray, p: np.ndarray, rho: float, mu: float,
                       U_ref: float = 1.0, L_ref: float = 0.1) -> tuple[float, float]:
    """Drag and lift coefficients from the traction on the obstacle faces.

    Pressure uses the wall-adjacent cell value (zero normal gradient); the
    viscous traction uses the one-sided difference of the tangential
    velocity between the adjacent cell and the no-slip wall.
    """
    idx = mesh.boundary_faces(OBSTACLE)
    if len(idx) == 0:
        raise ValueError("mesh has no obstacle faces")
    own = mesh.bf_owner[idx]
    n = mesh.bf_normal[idx]  # points from the fluid into the body
    mag = mesh.bf_mag[idx]
    uo = u[own]
    u_t = uo - np.einsum("ij,ij->i", uo, n)[:, None] * n
    force = (p[own][:, None] * n + mu * u_t / mesh.bf_dist[idx][:, None]) * mag[:, None]
    F = force.sum(axis=0)
    scale = 2.0 / (rho * L_ref * U_ref**2)
    return float(scale * F[0]), float(scale * F[1])


def drag_lift(mesh: CartesianMesh, state: FomState, params: EfrParams,
              U_ref: float = 1.0, L_ref: float = 0.1) -> tuple[float, float]:
    """Drag and lift coefficients of the end-of-step velocity and current pressure."""
    return force_coefficients(mesh, state.u_curr, state.p, params.rho, params.mu, U_ref, L_ref)


def run_fom(mesh: CartesianMesh, params: EfrParams, inflow: Optional[ops.ParabolicInflow],
            t0: float, T: float, stride: int = 1, state: Optional[FomState] = None, on_sample=None):
    """March ``efr_step`` from ``t0`` to ``T``; call ``on_sample(state)`` every ``stride`` steps.

    Returns the final state and the number of steps taken.
    """
    state = FomState.at_rest(mesh, t0) if state is None else state
    n_steps = int(round((T - t0) / params.dt))
    solver = CoupledSolver()
    for k in range(1, n_steps + 1):
        state = efr_step(mesh, state, params, inflow, solver)
        if not (np.all(np.isfinite(state.u_curr)) and np.all(np.isfinite(state.p))):
            raise SolverFailure(f"solution diverged at t = {state.time:.6f}")
        if on_sample is not None and k % stride == 0:
            on_sample(state)
    return state, n_steps
