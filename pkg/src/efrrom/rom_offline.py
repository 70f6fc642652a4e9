"""Galerkin projection of the discrete operators and RBF fits of the indicator coefficients.

The velocity trial space is augmented with the lifting field as function 0,
whose coefficient is the known inflow amplitude.  Every velocity-indexed axis
of the stored operators therefore has length ``N_v + 1``; the ``*_r``
properties return the blocks over the POD modes only.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from . import operators as ops
from .mesh import CartesianMesh
from .pod import LiftingFunction, PodBasis


class ExtrapolationWarning(UserWarning):
    pass


@dataclass
class ReducedOperators:
    M: np.ndarray  # (V, V)    (phi_i, phi_j)
    A: np.ndarray  # (V, V)    (phi_i, Lap phi_j)
    B: np.ndarray  # (V, Np)   (phi_i, grad psi_j)
    P: np.ndarray  # (Np, V)   (psi_i, div phi_j)
    G: np.ndarray  # (V, V, V) (phi_i, div(phi_j (x) phi_k))
    Afilt: np.ndarray  # (V, Na, V) (phi_i, div(eta_j grad phi_k))
    D: np.ndarray  # (Np, Np)  (grad psi_i, grad psi_j)
    N: np.ndarray  # (Np, V)   (grad psi_i, Lap phi_j)
    F: np.ndarray  # (Np, V)   (grad psi_i, phi_j)
    J: np.ndarray  # (Np, V, V) (grad psi_i, div(phi_j (x) phi_k))

    @property
    def n_v(self) -> int:
        return self.M.shape[0] - 1

    @property
    def n_p(self) -> int:
        return self.D.shape[0]

    @property
    def n_a(self) -> int:
        return self.Afilt.shape[1]

    M_r = property(lambda self: self.M[1:, 1:])
    A_r = property(lambda self: self.A[1:, 1:])
    B_r = property(lambda self: self.B[1:])
    P_r = property(lambda self: self.P[:, 1:])
    G_r = property(lambda self: self.G[1:, 1:, 1:])
    Afilt_r = property(lambda self: self.Afilt[1:, :, 1:])
    D_r = property(lambda self: self.D)
    N_r = property(lambda self: self.N[:, 1:])
    F_r = property(lambda self: self.F[:, 1:])
    J_r = property(lambda self: self.J[:, 1:, 1:])

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("M", "A", "B", "P", "G", "Afilt", "D", "N", "F", "J")}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def _velocity_trial(mesh: CartesianMesh, basis_v: PodBasis, lifting: Optional[LiftingFunction]):
    """Augmented velocity functions and their unit inflow amplitudes."""
    nc = mesh.n_cells
    lift = np.zeros((nc, 2)) if lifting is None else lifting.control_field
    funcs = np.concatenate([lift[None], basis_v.modes], axis=0)
    amps = np.zeros(len(funcs))
    if lifting is not None:
        amps[0] = 1.0
    unit = ops.unit_inflow_data(mesh, lifting.inflow.shape) if lifting is not None else np.zeros((len(mesh.bf_owner), 2))
    return funcs, amps, unit


def _weighted_dot(mesh, tests, fields):
    """``out[i, ...] = (tests[i], fields[...])`` for vector fields."""
    w = mesh.volumes
    return np.einsum("c,ick,...ck->i...", w, tests, fields)


def project_operators(mesh: CartesianMesh, basis_v: PodBasis, basis_p: PodBasis, basis_a: PodBasis,
                      lifting: Optional[LiftingFunction] = None) -> ReducedOperators:
    """Project the finite-volume stencils used by the full-order solver onto the bases."""
    nc = mesh.n_cells
    for b in (basis_v, basis_p, basis_a):
        if b.modes.shape[1] != nc:
            raise ValueError(f"basis {b.variable!r} does not live on this mesh")
    if lifting is not None and lifting.control_field.shape[0] != nc:
        raise ValueError("lifting does not live on this mesh")

    phi, amp, unit = _velocity_trial(mesh, basis_v, lifting)
    psi = basis_p.modes
    eta = basis_a.modes
    V = len(phi)
    vdir = ops.velocity_dirichlet_mask(mesh)
    pdir = ops.pressure_dirichlet_mask(mesh)
    g = amp[:, None, None] * unit[None]  # boundary data of each trial function

    L, Lb = ops.laplacian(mesh, vdir)
    lap_phi = np.stack([np.column_stack([L @ f[:, k] + Lb @ gb[:, k] for k in range(2)]) for f, gb in zip(phi, g)])
    D, Db = ops.divergence(mesh, vdir)
    div_phi = np.stack([D @ np.r_[f[:, 0], f[:, 1]] + Db @ np.r_[gb[:, 0], gb[:, 1]] for f, gb in zip(phi, g)])
    (Gx, _), (Gy, _) = ops.gradient(mesh, pdir)
    grad_psi = np.stack([np.column_stack([Gx @ q, Gy @ q]) for q in psi])

    Gt = np.empty((V, V, V))
    Jt = np.empty((len(psi), V, V))
    for j in range(V):
        # C(phi_j) phi_k for all k, convecting flux taken from phi_j
        fi, fb = ops.central_flux(mesh, phi[j], g[j], vdir)
        C, Cb = ops.convection(mesh, fi, fb, vdir)
        conv = np.stack([np.column_stack([C @ phi[k][:, c] + Cb @ g[k][:, c] for c in range(2)])
                         for k in range(V)])
        Gt[:, j, :] = _weighted_dot(mesh, phi, conv)
        Jt[:, j, :] = _weighted_dot(mesh, grad_psi, conv)

    inc = ops.incidence(mesh)
    Af = np.empty((V, len(eta), V))
    for j, e in enumerate(eta):
        Le, Lbe = ops.laplacian(mesh, vdir, inc.avg @ e, e[mesh.bf_owner])
        filt = np.stack([np.column_stack([Le @ phi[k][:, c] + Lbe @ g[k][:, c] for c in range(2)])
                         for k in range(V)])
        Af[:, j, :] = _weighted_dot(mesh, phi, filt)

    w = mesh.volumes
    return ReducedOperators(
        M=_weighted_dot(mesh, phi, phi),
        A=_weighted_dot(mesh, phi, lap_phi),
        B=_weighted_dot(mesh, phi, grad_psi),
        P=(psi * w) @ div_phi.T,
        G=Gt,
        Afilt=Af,
        D=_weighted_dot(mesh, grad_psi, grad_psi),
        N=_weighted_dot(mesh, grad_psi, lap_phi),
        F=_weighted_dot(mesh, grad_psi, phi),
        J=Jt,
    )


# -- RBF interpolation of the indicator coefficients --------------------------

@dataclass
class RbfInterpolant:
    centers: np.ndarray  # (N_s,)
    widths: np.ndarray  # (N_s,)
    weights: np.ndarray  # (N_a, N_s)
    reg: float = 0.0

    def kernel(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        r = t[:, None] - self.centers[None, :]
        return np.exp(-(r / self.widths[None, :]) ** 2)


def gaussian_width(times: np.ndarray, sigma_factor: float = 1.5) -> float:
    return float(sigma_factor * np.median(np.diff(times)))


def rbf_fit(training_times, delta_matrix, sigma_factor: float = 1.5, reg_scale: float = 1e-10,
            sigma: Optional[float] = None, sweeps: int = 2) -> RbfInterpolant:
    """Fit one Gaussian RBF interpolant in time per indicator mode.

    ``delta_matrix`` has shape ``(N_a, N_s)``.  The kernel system of every mode
    shares one matrix, regularised by ``reg_scale * trace / N_s`` on the
    diagonal.  ``sweeps`` rounds of iterated Tikhonov refinement then remove
    the regularisation bias along well-conditioned directions, so node values
    are reproduced to round-off whenever the kernel matrix allows it.
    """
    t = np.asarray(training_times, float)
    Y = np.atleast_2d(np.asarray(delta_matrix, float))
    if len(t) < 2:
        raise ValueError("need at least two training times")
    if np.any(np.diff(t) <= 0):
        raise ValueError("training times must be strictly increasing")
    if Y.shape[1] != len(t):
        raise ValueError("delta_matrix must have one column per training time")
    width = gaussian_width(t, sigma_factor) if sigma is None else float(sigma)
    interp = RbfInterpolant(t, np.full(len(t), width), np.zeros_like(Y))
    K = interp.kernel(t)
    lam = reg_scale * np.trace(K) / len(t)
    try:
        cf = la.cho_factor(K + lam * np.eye(len(t)))
    except la.LinAlgError as exc:
        raise la.LinAlgError("kernel matrix is singular after regularisation") from exc
    W = la.cho_solve(cf, Y.T)
    for _ in range(sweeps):
        W += la.cho_solve(cf, Y.T - K @ W)
    interp.weights = W.T
    interp.reg = lam
    return interp


def rbf_eval(interp: RbfInterpolant, t: float) -> np.ndarray:
    """Indicator coefficients ``delta(t)``; warns outside the training span."""
    lo = interp.centers[0] - interp.widths[0]
    hi = interp.centers[-1] + interp.widths[-1]
    if not lo <= t <= hi:
        warnings.warn(f"RBF evaluated at t = {t} outside [{lo}, {hi}]", ExtrapolationWarning, stacklevel=2)
    return interp.weights @ interp.kernel(t)[0]
