"""Online stage: reduced momentum + pressure Poisson system and reduced nonlinear filter.

Coefficient vectors held in :class:`RomState` cover the POD modes only.  The
lifting coefficient (index 0 of the augmented operators) is the inflow
amplitude ``u_bc(t)`` and is moved to the right-hand side of every solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la

from .fom import EfrParams
from .mesh import CartesianMesh
from .pod import LiftingFunction, PodBasis, project_field, reconstruct_field
from .rom_offline import RbfInterpolant, ReducedOperators, rbf_eval


class ReducedSolveError(RuntimeError):
    pass


@dataclass
class RomState:
    beta_prev: np.ndarray
    beta_curr: np.ndarray
    beta_bar_prev: np.ndarray
    beta_bar_curr: np.ndarray
    gamma: np.ndarray
    time: float
    delta: Optional[np.ndarray] = None
    step: int = 0


def rom_init(mesh: CartesianMesh, basis_v: PodBasis, fom_initial_v: np.ndarray,
             fom_initial_vbar: Optional[np.ndarray] = None, n_p: int = 0, t0: float = 0.0,
             basis_p: Optional[PodBasis] = None, fom_initial_p: Optional[np.ndarray] = None) -> RomState:
    """Project homogenized initial fields onto the velocity modes; ``beta^-1 := beta^0``.

    The initial pressure coefficients are zero unless both ``basis_p`` and
    ``fom_initial_p`` are given, in which case they are the projection of the
    initial pressure.  They only affect the reconstructed pressure at ``t0``;
    every step solves for new pressure coefficients.
    """
    v0 = np.asarray(fom_initial_v, float)
    if v0.shape != basis_v.modes.shape[1:]:
        raise ValueError(f"initial field shape {v0.shape} does not match modes {basis_v.modes.shape[1:]}")
    beta = project_field(mesh, v0, basis_v)
    vbar0 = v0 if fom_initial_vbar is None else np.asarray(fom_initial_vbar, float)
    if vbar0.shape != v0.shape:
        raise ValueError("filtered initial field has the wrong shape")
    bbar = project_field(mesh, vbar0, basis_v)
    gamma = np.zeros(n_p)
    if basis_p is not None and fom_initial_p is not None:
        p0 = np.asarray(fom_initial_p, float)
        if p0.shape != basis_p.modes.shape[1:] or basis_p.n_modes != n_p:
            raise ValueError("initial pressure does not match the pressure basis")
        gamma = project_field(mesh, p0, basis_p)
    return RomState(beta.copy(), beta, bbar.copy(), bbar, gamma, float(t0))


def _solve_dense(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        lu = la.lu_factor(A, check_finite=True)
    except (ValueError, la.LinAlgError) as exc:
        raise ReducedSolveError(f"{what}: {exc}") from exc
    if np.any(np.diag(lu[0]) == 0.0):
        raise ReducedSolveError(f"{what}: singular reduced matrix (cond = inf)")
    x = la.lu_solve(lu, b)
    if not np.all(np.isfinite(x)):
        raise ReducedSolveError(f"{what}: non-finite solution, cond = {np.linalg.cond(A):.3e}")
    return x


def momentum_system(ops: ReducedOperators, params: EfrParams, beta_conv: np.ndarray,
                    hist: np.ndarray, lift_new: float):
    """Stacked momentum/PPE matrix and right-hand side for ``(beta^{n+1}, gamma^{n+1})``.

    ``beta_conv`` and ``hist`` are augmented vectors (lifting coefficient at
    index 0); ``hist`` is ``4 u^n - u^{n-1}`` of the relaxed coefficients.
    """
    rho, mu, dt = params.rho, params.mu, params.dt
    c0 = 1.5 * rho / dt
    nv, npr = ops.n_v, ops.n_p
    Gc = np.einsum("ijk,j->ik", ops.G, beta_conv)
    Jc = np.einsum("ljk,j->lk", ops.J, beta_conv)
    Kv = c0 * ops.M + rho * Gc - mu * ops.A  # (V, V) rows over all test functions
    Kp = c0 * ops.F + rho * Jc - mu * ops.N  # (Np, V)
    src = 0.5 * rho / dt
    A = np.zeros((nv + npr, nv + npr))
    A[:nv, :nv] = Kv[1:, 1:]
    A[:nv, nv:] = ops.B[1:]
    A[nv:, :nv] = Kp[:, 1:]
    A[nv:, nv:] = ops.D
    b = np.concatenate([
        src * (ops.M[1:] @ hist) - Kv[1:, 0] * lift_new,
        src * (ops.F @ hist) - Kp[:, 0] * lift_new,
    ])
    return A, b


def filter_system(ops: ReducedOperators, alpha: float, delta: np.ndarray, beta_aug: np.ndarray):
    """Reduced nonlinear filter ``(M - alpha^2 delta . Afilt) beta_bar = M beta``."""
    Ad = np.einsum("ijk,j->ik", ops.Afilt, delta)
    K = ops.M - alpha**2 * Ad
    lift = beta_aug[0]
    A = K[1:, 1:]
    b = ops.M[1:] @ beta_aug - K[1:, 0] * lift
    return A, b


def rom_step(state: RomState, ops: ReducedOperators, interp: Optional[RbfInterpolant], params: EfrParams,
             u_bc: Callable[[float], float]) -> RomState:
    """Advance the reduced EFR system by one step of size ``params.dt``."""
    if len(state.beta_curr) != ops.n_v or len(state.gamma) not in (0, ops.n_p):
        raise ValueError("state dimensions do not match the reduced operators")
    chi, dt = params.chi, params.dt
    t_new = state.time + dt
    first = state.step == 0
    delta = np.zeros(ops.n_a) if interp is None else rbf_eval(interp, t_new)

    def aug(c, t):
        return np.r_[u_bc(t), c]

    u_curr = aug((1.0 - chi) * state.beta_curr + chi * state.beta_bar_curr, state.time)
    u_prev = aug((1.0 - chi) * state.beta_prev + chi * state.beta_bar_prev, state.time - dt)
    if first:
        u_prev = u_curr  # BDF bootstrap: beta^-1 := beta^0
    hist = 4.0 * u_curr - u_prev
    lift_new = u_bc(t_new)
    A, b = momentum_system(ops, params, aug(state.beta_curr, state.time), hist, lift_new)
    x = _solve_dense(A, b, f"momentum/PPE solve at t = {t_new:.6f}")
    beta_new, gamma_new = x[: ops.n_v], x[ops.n_v:]

    if params.alpha == 0.0 or not np.any(delta):
        beta_bar_new = beta_new.copy()
    else:
        Af, bf = filter_system(ops, params.alpha, delta, np.r_[lift_new, beta_new])
        beta_bar_new = _solve_dense(Af, bf, f"filter solve at t = {t_new:.6f}")

    return RomState(state.beta_curr, beta_new, state.beta_bar_curr, beta_bar_new, gamma_new,
                    t_new, delta, state.step + 1)


def run_rom(state: RomState, ops: ReducedOperators, interp: Optional[RbfInterpolant], params: EfrParams,
            u_bc: Callable[[float], float], n_steps: int, on_step=None) -> RomState:
    for _ in range(n_steps):
        state = rom_step(state, ops, interp, params, u_bc)
        if on_step is not None:
            on_step(state)
    return state


def reconstruct(state: RomState, basis_v: PodBasis, basis_p: PodBasis,
                lifting: Optional[LiftingFunction], t: float, chi: float):
    """End-of-step velocity ``lifting(t) + sum((1-chi) beta + chi beta_bar) phi`` and pressure."""
    coeff = (1.0 - chi) * state.beta_curr + chi * state.beta_bar_curr
    u = reconstruct_field(basis_v, coeff)
    if lifting is not None:
        u = u + lifting.field(t)
    p = reconstruct_field(basis_p, state.gamma) if len(state.gamma) else np.zeros(basis_p.modes.shape[1])
    return u, p


def reconstruct_intermediate(state: RomState, basis_v: PodBasis, lifting: Optional[LiftingFunction], t: float):
    v = reconstruct_field(basis_v, state.beta_curr)
    return v if lifting is None else v + lifting.field(t)
