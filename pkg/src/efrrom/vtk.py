"""Legacy-VTK ASCII export of the active cells and cell-centred fields."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .mesh import CartesianMesh

VTK_QUAD = 9


def _num(x: float) -> str:
    return repr(float(x))


def write_vtk(path, mesh: CartesianMesh, fields: Optional[dict[str, np.ndarray]] = None,
              title: str = "efrrom") -> None:
    """Write the active cells as quads, with optional scalar/vector cell data."""
    nxp, nyp = mesh.nx + 1, mesh.ny + 1
    i, j = mesh.cell_ij[:, 0], mesh.cell_ij[:, 1]
    corners = np.stack([i * nyp + j, (i + 1) * nyp + j, (i + 1) * nyp + j + 1, i * nyp + j + 1], axis=1)
    used, inverse = np.unique(corners, return_inverse=True)
    corners = inverse.reshape(corners.shape)
    px = (used // nyp) * mesh.dx
    py = (used % nyp) * mesh.dy

    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(used)} double"]
    lines += [f"{_num(x)} {_num(y)} 0.0" for x, y in zip(px, py)]
    nc = mesh.n_cells
    lines.append(f"CELLS {nc} {5 * nc}")
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in corners]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_QUAD)] * nc
    if fields:
        lines.append(f"CELL_DATA {nc}")
        for name, arr in fields.items():
            arr = np.asarray(arr, float)
            if arr.shape == (nc,):
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_num(v) for v in arr]
            elif arr.shape == (nc, 2):
                lines.append(f"VECTORS {name} double")
                lines += [f"{_num(a)} {_num(b)} 0.0" for a, b in arr]
            else:
                raise ValueError(f"field {name!r} has shape {arr.shape}, expected ({nc},) or ({nc}, 2)")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
