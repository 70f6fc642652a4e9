"""Cartesian finite-volume mesh of a channel with a blanked square obstacle.

Cells are indexed in a compressed ordering over the active (fluid) cells only.
Faces are split into interior faces (two active cells) and boundary faces (one
active cell), each stored as flat numpy arrays so the discrete operators can be
assembled without Python loops.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

INFLOW, OUTFLOW, WALL, OBSTACLE = 0, 1, 2, 3
TAG_NAMES = {INFLOW: "Inflow", OUTFLOW: "Outflow", WALL: "Wall", OBSTACLE: "Obstacle"}


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class FaceRecord:
    """One mesh face. ``neighbor`` is None on the boundary."""

    owner: int
    neighbor: Optional[int]
    area_vector: tuple[float, float]
    centroid: tuple[float, float]
    tag: Optional[str] = None


@dataclass(frozen=True, eq=False)
class CartesianMesh:
    length: float
    height: float
    nx: int
    ny: int
    dx: float
    dy: float
    active_mask: np.ndarray  # (nx, ny) bool, True for fluid
    cell_ij: np.ndarray  # (Nc, 2) grid indices of active cells
    centers: np.ndarray  # (Nc, 2)
    # interior faces, area vector points owner -> neighbor
    if_owner: np.ndarray
    if_neighbor: np.ndarray
    if_area: np.ndarray  # (Nif, 2)
    if_centroid: np.ndarray
    if_dist: np.ndarray  # centroid-to-centroid distance
    # boundary faces, area vector points out of the fluid
    bf_owner: np.ndarray
    bf_area: np.ndarray
    bf_centroid: np.ndarray
    bf_dist: np.ndarray  # cell centroid to face distance
    bf_tag: np.ndarray
    obstacle_center: tuple[float, float] = (0.0, 0.0)
    obstacle_halfwidth: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_cells(self) -> int:
        return len(self.centers)

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.full(self.n_cells, self.dx * self.dy)

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def n_faces(self) -> int:
        return len(self.if_owner) + len(self.bf_owner)

    @cached_property
    def if_mag(self) -> np.ndarray:
        return np.hypot(self.if_area[:, 0], self.if_area[:, 1])

    @cached_property
    def bf_mag(self) -> np.ndarray:
        return np.hypot(self.bf_area[:, 0], self.bf_area[:, 1])

    @cached_property
    def bf_normal(self) -> np.ndarray:
        return self.bf_area / self.bf_mag[:, None]

    @cached_property
    def boundary_tags(self) -> list[str]:
        return [TAG_NAMES[int(t)] for t in self.bf_tag]

    @cached_property
    def faces(self) -> list[FaceRecord]:
        recs = [
            FaceRecord(int(o), int(n), tuple(a), tuple(c))
            for o, n, a, c in zip(self.if_owner, self.if_neighbor, self.if_area, self.if_centroid)
        ]
        recs += [
            FaceRecord(int(o), None, tuple(a), tuple(c), TAG_NAMES[int(t)])
            for o, a, c, t in zip(self.bf_owner, self.bf_area, self.bf_centroid, self.bf_tag)
        ]
        return recs

    def boundary_faces(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.bf_tag == tag)

    @property
    def has_obstacle(self) -> bool:
        return bool(np.any(self.bf_tag == OBSTACLE))

    @cached_property
    def digest(self) -> str:
        """Stable hash of the geometry, used to validate persisted artifacts."""
        h = hashlib.sha256()
        h.update(np.array([self.length, self.height, self.dx, self.dy], dtype="<f8").tobytes())
        h.update(np.array([self.nx, self.ny], dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.active_mask, dtype=np.uint8).tobytes())
        return h.hexdigest()[:16]

    def closure_residual(self) -> np.ndarray:
        """Per-cell sum of outward area vectors, shape (Nc, 2)."""
        out = np.zeros((self.n_cells, 2))
        np.add.at(out, self.if_owner, self.if_area)
        np.add.at(out, self.if_neighbor, -self.if_area)
        np.add.at(out, self.bf_owner, self.bf_area)
        return out


def build_channel_mesh(
    length: float,
    height: float,
    obstacle_center: tuple[float, float],
    obstacle_halfwidth: float,
    nx: int,
    ny: int,
) -> CartesianMesh:
    """Build a uniform ``nx`` x ``ny`` channel mesh with a blanked square obstacle.

    Left edge is the inflow, right edge the outflow, top and bottom are walls.
    Cells whose centroid lies strictly inside the square of side
    ``2 * obstacle_halfwidth`` are removed; ``obstacle_halfwidth = 0`` gives an
    empty channel.
    """
    if nx < 4 or ny < 4:
        raise MeshError(f"need at least 4 cells per axis, got {nx}x{ny}")
    if length <= 0 or height <= 0:
        raise MeshError("channel dimensions must be positive")
    cx, cy = obstacle_center
    hw = float(obstacle_halfwidth)
    if hw < 0:
        raise MeshError("obstacle half-width must be non-negative")
    if hw > 0 and not (cx - hw > 0 and cx + hw < length and cy - hw > 0 and cy + hw < height):
        raise MeshError("obstacle must fit strictly inside the channel")

    dx, dy = length / nx, height / ny
    xc = (np.arange(nx) + 0.5) * dx
    yc = (np.arange(ny) + 0.5) * dy
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    solid = (np.abs(X - cx) < hw) & (np.abs(Y - cy) < hw) if hw > 0 else np.zeros_like(X, bool)
    active = ~solid
    if not active.any():
        raise MeshError("mesh has no active cells")

    # row-major over (i, j) so neighbouring y-cells are adjacent in memory
    index = -np.ones((nx, ny), dtype=np.int64)
    ij = np.argwhere(active)
    index[ij[:, 0], ij[:, 1]] = np.arange(len(ij))
    centers = np.column_stack([xc[ij[:, 0]], yc[ij[:, 1]]])

    own, nbr, area, cent, dist = [], [], [], [], []
    b_own, b_area, b_cent, b_dist, b_tag = [], [], [], [], []

    # x-normal faces at x = i*dx, i = 0..nx
    for i in range(nx + 1):
        left = index[i - 1] if i > 0 else None
        right = index[i] if i < nx else None
        for j in range(ny):
            L = left[j] if left is not None else -1
            R = right[j] if right is not None else -1
            c = (i * dx, yc[j])
            if L >= 0 and R >= 0:
                own.append(L); nbr.append(R); area.append((dy, 0.0)); cent.append(c); dist.append(dx)
            elif L >= 0:
                tag = OUTFLOW if i == nx else OBSTACLE
                b_own.append(L); b_area.append((dy, 0.0)); b_cent.append(c); b_dist.append(dx / 2); b_tag.append(tag)
            elif R >= 0:
                tag = INFLOW if i == 0 else OBSTACLE
                b_own.append(R); b_area.append((-dy, 0.0)); b_cent.append(c); b_dist.append(dx / 2); b_tag.append(tag)
    # y-normal faces at y = j*dy, j = 0..ny
    for j in range(ny + 1):
        for i in range(nx):
            B = index[i, j - 1] if j > 0 else -1
            T = index[i, j] if j < ny else -1
            c = (xc[i], j * dy)
            if B >= 0 and T >= 0:
                own.append(B); nbr.append(T); area.append((0.0, dx)); cent.append(c); dist.append(dy)
            elif B >= 0:
                tag = WALL if j == ny else OBSTACLE
                b_own.append(B); b_area.append((0.0, dx)); b_cent.append(c); b_dist.append(dy / 2); b_tag.append(tag)
            elif T >= 0:
                tag = WALL if j == 0 else OBSTACLE
                b_own.append(T); b_area.append((0.0, -dx)); b_cent.append(c); b_dist.append(dy / 2); b_tag.append(tag)

    def arr(x, dtype=float, shape=None):
        a = np.asarray(x, dtype=dtype)
        return a.reshape(shape) if shape is not None else a

    return CartesianMesh(
        length=float(length), height=float(height), nx=nx, ny=ny, dx=dx, dy=dy,
        active_mask=active, cell_ij=ij, centers=centers,
        if_owner=arr(own, np.int64), if_neighbor=arr(nbr, np.int64),
        if_area=arr(area, shape=(-1, 2)), if_centroid=arr(cent, shape=(-1, 2)), if_dist=arr(dist),
        bf_owner=arr(b_own, np.int64), bf_area=arr(b_area, shape=(-1, 2)),
        bf_centroid=arr(b_cent, shape=(-1, 2)), bf_dist=arr(b_dist), bf_tag=arr(b_tag, np.int64),
        obstacle_center=(float(cx), float(cy)), obstacle_halfwidth=hw,
    )


def mesh_metrics(mesh: CartesianMesh) -> tuple[float, float, float, int]:
    """Return ``(h_min, h_avg, h_max, N_c)`` using the cell diagonal as diameter."""
    diam = np.full(mesh.n_cells, np.hypot(mesh.dx, mesh.dy))
    h_min, h_max = float(diam.min()), float(diam.max())
    # summation round-off can push the mean of equal values past the extremes
    h_avg = min(max(float(diam.mean()), h_min), h_max)
    return h_min, h_avg, h_max, mesh.n_cells


def mesh_report(mesh: CartesianMesh) -> str:
    h_min, h_avg, h_max, nc = mesh_metrics(mesh)
    counts = {name: int(np.sum(mesh.bf_tag == t)) for t, name in TAG_NAMES.items()}
    lines = [
        f"mesh_hash = {mesh.digest}",
        f"domain = {mesh.length!r} x {mesh.height!r}",
        f"grid = {mesh.nx} x {mesh.ny}",
        f"dx = {mesh.dx!r}",
        f"dy = {mesh.dy!r}",
        f"active_cells = {nc}",
        f"blanked_cells = {mesh.nx * mesh.ny - nc}",
        f"interior_faces = {len(mesh.if_owner)}",
        f"boundary_faces = {len(mesh.bf_owner)}",
    ]
    lines += [f"faces_{k.lower()} = {v}" for k, v in counts.items()]
    lines += [f"h_min = {h_min!r}", f"h_avg = {h_avg!r}", f"h_max = {h_max!r}"]
    return "\n".join(lines) + "\n"
