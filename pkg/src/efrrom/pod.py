"""Method of snapshots with lifting-function homogenisation.

All inner products are the volume-weighted cell sums of :func:`operators.inner`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import fom
from . import operators as ops
from .mesh import CartesianMesh

VELOCITY_VARIABLES = ("v", "u", "vbar")
EIG_FLOOR = 1e-12


class PodError(ValueError):
    pass


@dataclass
class SnapshotSet:
    """Snapshots of one variable; ``columns`` has shape ``(N_s, Nc)`` or ``(N_s, Nc, 2)``.

    ``bc_amplitude`` is the inflow amplitude carried by each velocity column
    (zero once the lifting has been subtracted).
    """

    variable: str
    times: np.ndarray
    columns: np.ndarray
    bc_amplitude: Optional[np.ndarray] = None
    homogenized: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.columns = np.asarray(self.columns, dtype=float)
        if len(self.times) != len(self.columns):
            raise PodError("one time per snapshot column is required")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise PodError("snapshot times must be strictly increasing")

    @property
    def n_snapshots(self) -> int:
        return len(self.times)

    @property
    def is_vector(self) -> bool:
        return self.columns.ndim == 3

    def select(self, mask) -> "SnapshotSet":
        amp = None if self.bc_amplitude is None else self.bc_amplitude[mask]
        return replace(self, times=self.times[mask], columns=self.columns[mask], bc_amplitude=amp)


@dataclass
class LiftingFunction:
    """Divergence-free control field for unit inflow, scaled in time by the inflow amplitude."""

    control_field: np.ndarray  # (Nc, 2)
    pressure: np.ndarray  # Stokes pressure that accompanies the control field
    inflow: ops.ParabolicInflow

    def coefficient(self, t) -> np.ndarray:
        return np.array([self.inflow.amplitude(float(s)) for s in np.atleast_1d(t)])

    def field(self, t: float) -> np.ndarray:
        return self.inflow.amplitude(t) * self.control_field


@dataclass
class PodBasis:
    variable: str
    modes: np.ndarray  # (N_r, Nc) or (N_r, Nc, 2)
    eigenvalues: np.ndarray  # full spectrum, descending
    threshold: float
    n_snapshots: int
    coefficients: np.ndarray = field(default=None, repr=False)  # (N_s, N_r) training projections

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def retained_energy(self) -> float:
        total = self.eigenvalues.sum()
        return float(self.eigenvalues[: self.n_modes].sum() / total) if total > 0 else 0.0

    def truncate(self, n: int) -> "PodBasis":
        n = min(n, self.n_modes)
        coeffs = None if self.coefficients is None else self.coefficients[:, :n]
        return replace(self, modes=self.modes[:n], coefficients=coeffs)


# -- lifting -------------------------------------------------------------------

def build_lifting(mesh: CartesianMesh, inflow: ops.ParabolicInflow, mu: float = 1.0) -> LiftingFunction:
    """Steady Stokes flow driven by the unit-amplitude inflow profile."""
    ev = fom._evolve_ops(mesh)
    inc = ops.incidence(mesh)
    nc = mesh.n_cells
    g = ops.unit_inflow_data(mesh, inflow.shape)
    tau = fom.rhie_chow_tau(mesh, 1.0, mu, None)
    K = -mu * ev.L
    Dv = inc.inv_vol @ (inc.S_if @ ev.Fv_if + inc.S_bf @ ev.Fv_bf)
    Dp = tau * (inc.inv_vol @ (inc.S_if @ ev.Fp_if_unit + inc.S_bf @ ev.Fp_bf_unit))
    A = sp.bmat([[K, None, ev.Gx], [None, K, ev.Gy], [Dv[:, :nc], Dv[:, nc:], Dp]], format="csc")
    gA = np.einsum("ij,ij->i", g, mesh.bf_area) * ev.vdir
    rhs = np.concatenate([mu * (ev.Lb @ g[:, 0]), mu * (ev.Lb @ g[:, 1]), -(inc.S_bf @ gA) / mesh.volumes])
    x = fom._solve(A, rhs, "lifting")
    v = np.column_stack([x[:nc], x[nc:2 * nc]])
    return LiftingFunction(v, x[2 * nc:], inflow)


def lifting_divergence(mesh: CartesianMesh, lift: LiftingFunction, mu: float = 1.0) -> np.ndarray:
    """Per-cell net momentum-interpolated flux of the control field."""
    g = ops.unit_inflow_data(mesh, lift.inflow.shape)
    tau = fom.rhie_chow_tau(mesh, 1.0, mu, None)
    fi, fb = fom.face_fluxes(mesh, lift.control_field, lift.pressure, g, tau)
    return fom.continuity_residual(mesh, fi, fb)


def homogenize(snaps: SnapshotSet, lift: LiftingFunction) -> SnapshotSet:
    """Subtract ``u_BC(t) * control_field`` from every velocity column."""
    if snaps.variable not in VELOCITY_VARIABLES:
        raise PodError(f"lifting applies to velocity snapshots, not {snaps.variable!r}")
    c = lift.coefficient(snaps.times)
    cols = snaps.columns - c[:, None, None] * lift.control_field[None]
    amp = snaps.bc_amplitude if snaps.bc_amplitude is not None else c
    return replace(snaps, columns=cols, bc_amplitude=amp - c, homogenized=True)


def dehomogenize(snaps: SnapshotSet, lift: LiftingFunction) -> SnapshotSet:
    if not snaps.homogenized:
        raise PodError("snapshots are not homogenized")
    c = lift.coefficient(snaps.times)
    cols = snaps.columns + c[:, None, None] * lift.control_field[None]
    amp = (snaps.bc_amplitude if snaps.bc_amplitude is not None else 0.0) + c
    return replace(snaps, columns=cols, bc_amplitude=amp, homogenized=False)


# -- correlation and POD ---------------------------------------------------------

def _weights(mesh: CartesianMesh, columns: np.ndarray) -> np.ndarray:
    w = mesh.volumes
    return np.repeat(w, 2) if columns.ndim == 3 else w


def _flat(columns: np.ndarray) -> np.ndarray:
    return columns.reshape(len(columns), -1)


def correlation_matrix(snaps: SnapshotSet, mesh: CartesianMesh) -> np.ndarray:
    """``C_ij = (Phi(t_i), Phi(t_j))`` with the volume-weighted inner product."""
    S = _flat(snaps.columns)
    C = (S * _weights(mesh, snaps.columns)) @ S.T
    return 0.5 * (C + C.T)


def _fix_sign(mode: np.ndarray) -> np.ndarray:
    flat = mode.ravel()
    big = np.flatnonzero(np.abs(flat) > 1e-12)
    if len(big) and flat[big[0]] < 0:
        return -mode
    return mode


def pod_compute(snaps: SnapshotSet, mesh: CartesianMesh, energy_threshold: float = 0.9999,
                max_modes: Optional[int] = None, method: str = "svd") -> PodBasis:
    """POD basis retaining the smallest number of modes reaching ``energy_threshold``.

    Eigenvalues are those of the correlation matrix divided by ``N_s``, so that
    the snapshot-averaged squared projection error with ``r`` modes equals the
    sum of the discarded eigenvalues.  ``method="svd"`` obtains the
    correlation eigenpairs from the thin SVD of the weighted snapshot matrix,
    which keeps small eigenvalues accurate; ``method="eigh"`` diagonalises the
    correlation matrix directly.
    """
    if not 0.0 < energy_threshold <= 1.0:
        raise PodError("energy threshold must lie in (0, 1]")
    ns = snaps.n_snapshots
    if ns == 0:
        raise PodError("empty snapshot set")
    S = _flat(snaps.columns)
    sw = np.sqrt(_weights(mesh, snaps.columns))
    if method == "svd":
        _, sig, Vt = la.svd((S * sw).T, full_matrices=False, lapack_driver="gesdd")
        eig = sig**2
        Q = Vt.T
    elif method == "eigh":
        eig, Q = la.eigh(correlation_matrix(snaps, mesh))
        eig, Q = eig[::-1], Q[:, ::-1]
    else:
        raise PodError(f"unknown method {method!r}")
    if eig[0] <= 0.0:
        raise PodError("all snapshots are zero")
    eig = np.where(eig < 0.0, 0.0, eig)  # clip round-off negatives

    usable = int(np.sum(eig >= EIG_FLOOR * eig[0]))
    cum = np.cumsum(eig) / eig.sum()
    n = int(np.searchsorted(cum, energy_threshold - 1e-14) + 1)
    n = min(n, usable, max_modes or usable)

    # zeta_i = sum_j Phi_j Q_ji / sqrt(N_s Lambda_i)
    Z = (Q[:, :n].T @ S) / np.sqrt(eig[:n])[:, None]
    # one weighted re-orthonormalisation pass removes round-off drift
    q, r = np.linalg.qr((Z * sw).T)
    Z = (q * np.sign(np.diag(r))).T / sw
    modes = np.array([_fix_sign(z) for z in Z]).reshape((n,) + snaps.columns.shape[1:])
    basis = PodBasis(snaps.variable, modes, eig / ns, float(energy_threshold), ns)
    basis.coefficients = np.array([project_field(mesh, c, basis) for c in snaps.columns])
    return basis


def project_field(mesh: CartesianMesh, field: np.ndarray, basis: PodBasis) -> np.ndarray:
    """L2 projection coefficients ``(field, zeta_i)``."""
    field = np.asarray(field, float)
    w = mesh.volumes
    if basis.modes.ndim == 3:
        return np.einsum("c,rck,ck->r", w, basis.modes, field)
    return basis.modes @ (w * field)


def reconstruct_field(basis: PodBasis, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, float)
    return np.tensordot(coeffs, basis.modes[: len(coeffs)], axes=1)


def projection_error(mesh: CartesianMesh, snaps: SnapshotSet, basis: PodBasis, n: int) -> float:
    """Snapshot-averaged squared L2 error of the projection onto the first ``n`` modes."""
    b = basis.truncate(n)
    total = 0.0
    for col in snaps.columns:
        r = col - reconstruct_field(b, project_field(mesh, col, b))
        total += ops.inner(mesh, r, r)
    return total / snaps.n_snapshots
