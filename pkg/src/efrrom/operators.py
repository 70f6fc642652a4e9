"""Two-point finite-volume stencils on a :class:`CartesianMesh`.

Every operator is returned as a pair ``(K, Kb)`` of sparse matrices acting on
cell values and on boundary-face values respectively, so that the discrete
operator applied to a field ``u`` with boundary data ``g`` is ``K @ u + Kb @ g``.
Results are per unit cell volume.  Which boundary faces carry Dirichlet data is
decided by a boolean mask over the boundary faces; the remaining faces are
zero-gradient (the face value is the owner cell value).

Cell fields are plain arrays: ``(Nc,)`` for scalars and ``(Nc, 2)`` for vectors.
Boundary data for a vector field is a ``(Nb, 2)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import INFLOW, OUTFLOW, CartesianMesh


# -- boundary conditions ------------------------------------------------------

def velocity_dirichlet_mask(mesh: CartesianMesh) -> np.ndarray:
    """Dirichlet on inflow, walls and obstacle; zero-gradient at the outflow."""
    return mesh.bf_tag != OUTFLOW


def pressure_dirichlet_mask(mesh: CartesianMesh) -> np.ndarray:
    """p = 0 at the outflow; zero normal gradient elsewhere."""
    return mesh.bf_tag == OUTFLOW


@dataclass(frozen=True)
class ParabolicInflow:
    """Parabolic inflow ``6 U y (H - y) / H**2`` scaled by ``sin(pi t / 8)``.

    ``mean_velocity`` is the bulk velocity ``U`` of the profile at unit
    amplitude, so the centreline velocity is ``1.5 U``.
    """

    height: float
    mean_velocity: float = 1.0
    unsteady: bool = True

    def shape(self, y):
        y = np.asarray(y, dtype=float)
        return 6.0 * self.mean_velocity * y * (self.height - y) / self.height**2

    def amplitude(self, t: float) -> float:
        return float(np.sin(np.pi * t / 8.0)) if self.unsteady else 1.0

    def __call__(self, y, t: float):
        return self.amplitude(t) * self.shape(y)


def unit_inflow_data(mesh: CartesianMesh, shape: Callable) -> np.ndarray:
    """Boundary data ``(Nb, 2)`` equal to the inflow shape on inflow faces, 0 elsewhere."""
    g = np.zeros((len(mesh.bf_owner), 2))
    idx = mesh.boundary_faces(INFLOW)
    g[idx, 0] = shape(mesh.bf_centroid[idx, 1])
    return g


def inflow_data(mesh: CartesianMesh, profile: Optional[ParabolicInflow], t: float) -> np.ndarray:
    if profile is None:
        return np.zeros((len(mesh.bf_owner), 2))
    return profile.amplitude(t) * unit_inflow_data(mesh, profile.shape)


# -- incidence helpers ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Incidence:
    S_if: sp.csr_matrix  # (Nc, Nif) +1 owner, -1 neighbour
    S_bf: sp.csr_matrix  # (Nc, Nb) +1 owner
    avg: sp.csr_matrix  # (Nif, Nc) arithmetic mean of the two cells
    diff: sp.csr_matrix  # (Nif, Nc) neighbour minus owner
    own: sp.csr_matrix  # (Nb, Nc) owner value
    inv_vol: sp.dia_matrix


def incidence(mesh: CartesianMesh) -> Incidence:
    key = "incidence"
    if key in mesh._cache:
        return mesh._cache[key]
    nc, nif, nb = mesh.n_cells, len(mesh.if_owner), len(mesh.bf_owner)
    fi = np.arange(nif)
    bi = np.arange(nb)
    S_if = sp.csr_matrix(
        (np.r_[np.ones(nif), -np.ones(nif)], (np.r_[mesh.if_owner, mesh.if_neighbor], np.r_[fi, fi])),
        shape=(nc, nif),
    )
    S_bf = sp.csr_matrix((np.ones(nb), (mesh.bf_owner, bi)), shape=(nc, nb))
    avg = sp.csr_matrix(
        (np.full(2 * nif, 0.5), (np.r_[fi, fi], np.r_[mesh.if_owner, mesh.if_neighbor])), shape=(nif, nc)
    )
    diff = sp.csr_matrix(
        (np.r_[-np.ones(nif), np.ones(nif)], (np.r_[fi, fi], np.r_[mesh.if_owner, mesh.if_neighbor])),
        shape=(nif, nc),
    )
    own = sp.csr_matrix((np.ones(nb), (bi, mesh.bf_owner)), shape=(nb, nc))
    inc = Incidence(S_if, S_bf, avg, diff, own, sp.diags(1.0 / mesh.volumes))
    mesh._cache[key] = inc
    return inc


def _face_sum(mesh, w_if, w_bf, dirichlet):
    """Operator ``(1/V) [sum_int w_f avg(u) + sum_bnd w_b u_b]``."""
    inc = incidence(mesh)
    neu = ~dirichlet
    K = inc.inv_vol @ (inc.S_if @ sp.diags(w_if) @ inc.avg + inc.S_bf @ sp.diags(w_bf * neu) @ inc.own)
    Kb = inc.inv_vol @ inc.S_bf @ sp.diags(w_bf * dirichlet)
    return K.tocsr(), Kb.tocsr()


# -- operators -------------------------------------------------------------------

def laplacian(mesh: CartesianMesh, dirichlet: np.ndarray, coeff_if=None, coeff_bf=None):
    """Variable-coefficient Laplacian ``div(k grad u)`` with two-point face gradients."""
    inc = incidence(mesh)
    k_if = np.ones(len(mesh.if_owner)) if coeff_if is None else np.asarray(coeff_if)
    k_bf = np.ones(len(mesh.bf_owner)) if coeff_bf is None else np.asarray(coeff_bf)
    t_if = k_if * mesh.if_mag / mesh.if_dist
    t_bf = k_bf * mesh.bf_mag / mesh.bf_dist * dirichlet
    K = inc.inv_vol @ (inc.S_if @ sp.diags(t_if) @ inc.diff - inc.S_bf @ sp.diags(t_bf) @ inc.own)
    Kb = inc.inv_vol @ inc.S_bf @ sp.diags(t_bf)
    return K.tocsr(), Kb.tocsr()


def gradient(mesh: CartesianMesh, dirichlet: np.ndarray):
    """Green-Gauss gradient of a scalar: ``((Gx, Gbx), (Gy, Gby))``."""
    return (
        _face_sum(mesh, mesh.if_area[:, 0], mesh.bf_area[:, 0], dirichlet),
        _face_sum(mesh, mesh.if_area[:, 1], mesh.bf_area[:, 1], dirichlet),
    )


def divergence(mesh: CartesianMesh, dirichlet: np.ndarray):
    """Divergence of a vector field with central face interpolation.

    Returns ``(D, Db)`` where ``D`` acts on the stacked ``[vx; vy]`` vector and
    ``Db`` on stacked boundary data ``[gx; gy]``.
    """
    (Dx, Dbx), (Dy, Dby) = gradient(mesh, dirichlet)
    return sp.hstack([Dx, Dy]).tocsr(), sp.hstack([Dbx, Dby]).tocsr()


def convection(mesh: CartesianMesh, flux_if: np.ndarray, flux_bf: np.ndarray, dirichlet: np.ndarray):
    """Central-difference convection ``(1/V) sum_f phi_f u_f`` of one component."""
    return _face_sum(mesh, flux_if, flux_bf, dirichlet)


def central_flux(mesh: CartesianMesh, v: np.ndarray, g: np.ndarray, dirichlet: np.ndarray):
    """Face fluxes ``avg(v) . A`` (interior) and ``v_b . A`` (boundary)."""
    inc = incidence(mesh)
    vf = inc.avg @ v
    flux_if = np.einsum("ij,ij->i", vf, mesh.if_area)
    vb = np.where(dirichlet[:, None], g, v[mesh.bf_owner])
    flux_bf = np.einsum("ij,ij->i", vb, mesh.bf_area)
    return flux_if, flux_bf


def apply_divergence(mesh: CartesianMesh, v: np.ndarray, g: Optional[np.ndarray] = None,
                     dirichlet: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-cell divergence of ``v`` with central face interpolation."""
    if dirichlet is None:
        dirichlet = velocity_dirichlet_mask(mesh)
    if g is None:
        g = np.zeros((len(mesh.bf_owner), 2))
    flux_if, flux_bf = central_flux(mesh, v, g, dirichlet)
    inc = incidence(mesh)
    return (inc.S_if @ flux_if + inc.S_bf @ flux_bf) / mesh.volumes


def inner(mesh: CartesianMesh, a: np.ndarray, b: np.ndarray) -> float:
    """Volume-weighted L2 inner product of two cell fields (scalar or vector)."""
    w = mesh.volumes
    if a.ndim == 1:
        return float(np.dot(w * a, b))
    return float(np.dot(w, np.einsum("ij,ij->i", a, b)))


def norm(mesh: CartesianMesh, a: np.ndarray) -> float:
    return float(np.sqrt(max(inner(mesh, a, a), 0.0)))
