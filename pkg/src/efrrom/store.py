"""On-disk artifact layout.

Every artifact directory holds a ``manifest.txt`` of ``key = value`` lines and
one ``.bin`` file per array.  A ``.bin`` file is an 8-byte little-endian
unsigned count followed by that many little-endian float64 values in
row-major order; array shapes live in the manifest.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .mesh import CartesianMesh
from .operators import ParabolicInflow
from .pod import LiftingFunction, PodBasis, SnapshotSet
from .rom_offline import RbfInterpolant, ReducedOperators

MANIFEST = "manifest.txt"


class StoreError(RuntimeError):
    pass


# -- primitives ------------------------------------------------------------------

def write_array(path, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", data.size))
        fh.write(data.tobytes())


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise StoreError(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", head)
        body = fh.read()
    if len(body) != 8 * n:
        raise StoreError(f"{path}: expected {n} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(float)


def _fmt(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_manifest(directory, entries: dict) -> None:
    lines = [f"{k} = {_fmt(v)}" for k, v in entries.items()]
    Path(directory, MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(directory) -> dict[str, str]:
    path = Path(directory, MANIFEST)
    if not path.is_file():
        raise StoreError(f"missing manifest in {directory}")
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _floats(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",")]) if text else np.zeros(0)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",")) if text else ()


def _prepare(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("*.bin"):
        old.unlink()
    return d


def _check_mesh(meta: dict, mesh: Optional[CartesianMesh], where) -> None:
    if mesh is not None and meta.get("mesh_hash") != mesh.digest:
        raise StoreError(
            f"{where}: artifact was built on mesh {meta.get('mesh_hash')}, current mesh is {mesh.digest}"
        )


def save_arrays(directory, arrays: dict[str, np.ndarray], meta: dict) -> None:
    d = _prepare(directory)
    for name, arr in arrays.items():
        write_array(d / f"{name}.bin", arr)
    shapes = {f"shape_{k}": list(np.shape(v)) for k, v in arrays.items()}
    write_manifest(d, {**meta, "arrays": list(arrays), **shapes})


def load_arrays(directory, mesh: Optional[CartesianMesh] = None) -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    meta = read_manifest(d)
    _check_mesh(meta, mesh, d)
    out = {}
    for name in [s.strip() for s in meta.get("arrays", "").split(",") if s.strip()]:
        out[name] = read_array(d / f"{name}.bin").reshape(_ints(meta[f"shape_{name}"]))
    return out, meta


# -- snapshots -------------------------------------------------------------------

class SnapshotWriter:
    """Stream snapshot columns of one variable to disk; the manifest is written on close."""

    def __init__(self, directory, variable: str, mesh: CartesianMesh, cadence: float, units: str = ""):
        self.directory = _prepare(directory)
        self.variable = variable
        self.mesh = mesh
        self.cadence = cadence
        self.units = units
        self.times: list[float] = []
        self.shape: Optional[tuple[int, ...]] = None

    def append(self, t: float, column: np.ndarray) -> None:
        column = np.asarray(column, float)
        if self.shape is None:
            self.shape = column.shape
        elif column.shape != self.shape:
            raise StoreError(f"column shape {column.shape} differs from {self.shape}")
        write_array(self.directory / f"col_{len(self.times):05d}.bin", column)
        self.times.append(float(t))

    def close(self) -> None:
        write_manifest(self.directory, {
            "mesh_hash": self.mesh.digest,
            "variable": self.variable,
            "count": len(self.times),
            "cadence": self.cadence,
            "units": self.units,
            "column_shape": list(self.shape or (self.mesh.n_cells,)),
            "times": self.times,
        })


def save_snapshots(directory, snaps: SnapshotSet, mesh: CartesianMesh, cadence: float, units: str = "") -> None:
    w = SnapshotWriter(directory, snaps.variable, mesh, cadence, units)
    for t, col in zip(snaps.times, snaps.columns):
        w.append(t, col)
    if w.shape is None and snaps.columns.ndim > 1:
        w.shape = snaps.columns.shape[1:]
    w.close()


def load_snapshots(directory, mesh: Optional[CartesianMesh] = None) -> SnapshotSet:
    d = Path(directory)
    meta = read_manifest(d)
    _check_mesh(meta, mesh, d)
    files = sorted(d.glob("col_*.bin"))
    count = int(meta["count"])
    if count != len(files):
        raise StoreError(f"{d}: manifest lists {count} columns, found {len(files)} files")
    shape = _ints(meta["column_shape"])
    cols = np.empty((count,) + shape)
    for k, f in enumerate(files):
        cols[k] = read_array(f).reshape(shape)
    return SnapshotSet(meta["variable"], _floats(meta["times"]), cols)


def snapshot_count(directory) -> int:
    return int(read_manifest(directory)["count"])


# -- bases, lifting, reduced operators -------------------------------------------

def save_basis(directory, basis: PodBasis, mesh: CartesianMesh) -> None:
    save_arrays(directory, {"modes": basis.modes, "coefficients": basis.coefficients}, {
        "mesh_hash": mesh.digest,
        "variable": basis.variable,
        "n_snapshots": basis.n_snapshots,
        "n_modes": basis.n_modes,
        "threshold": basis.threshold,
        "retained_energy": basis.retained_energy,
        "eigenvalues": list(basis.eigenvalues),
    })


def load_basis(directory, mesh: Optional[CartesianMesh] = None) -> PodBasis:
    arrays, meta = load_arrays(directory, mesh)
    return PodBasis(meta["variable"], arrays["modes"], _floats(meta["eigenvalues"]), float(meta["threshold"]),
                    int(meta["n_snapshots"]), arrays["coefficients"])


def save_lifting(directory, lift: LiftingFunction, mesh: CartesianMesh) -> None:
    save_arrays(directory, {"control_field": lift.control_field, "pressure": lift.pressure}, {
        "mesh_hash": mesh.digest,
        "height": lift.inflow.height,
        "mean_velocity": lift.inflow.mean_velocity,
        "unsteady": int(lift.inflow.unsteady),
    })


def load_lifting(directory, mesh: Optional[CartesianMesh] = None) -> LiftingFunction:
    arrays, meta = load_arrays(directory, mesh)
    inflow = ParabolicInflow(float(meta["height"]), float(meta["mean_velocity"]), bool(int(meta["unsteady"])))
    return LiftingFunction(arrays["control_field"], arrays["pressure"], inflow)


def save_reduced(directory, red: ReducedOperators, interp: RbfInterpolant, mesh: CartesianMesh,
                 extra: Optional[dict] = None) -> None:
    arrays = dict(red.arrays())
    arrays.update(rbf_centers=interp.centers, rbf_widths=interp.widths, rbf_weights=interp.weights)
    save_arrays(directory, arrays, {
        "mesh_hash": mesh.digest,
        "n_v": red.n_v,
        "n_p": red.n_p,
        "n_a": red.n_a,
        "sigma": float(interp.widths[0]),
        "lambda_reg": interp.reg,
        "checksum": red.checksum(),
        **(extra or {}),
    })


def load_reduced(directory, mesh: Optional[CartesianMesh] = None) -> tuple[ReducedOperators, RbfInterpolant, dict]:
    arrays, meta = load_arrays(directory, mesh)
    red = ReducedOperators(**{k: arrays[k] for k in ("M", "A", "B", "P", "G", "Afilt", "D", "N", "F", "J")})
    if red.checksum() != meta["checksum"]:
        raise StoreError(f"{directory}: reduced operator checksum mismatch")
    interp = RbfInterpolant(arrays["rbf_centers"], arrays["rbf_widths"], arrays["rbf_weights"],
                            float(meta["lambda_reg"]))
    return red, interp, meta


def workdir_from(config_value: Optional[str], env_var: str = "EFRROM_WORKDIR", default: str = "run") -> Path:
    """Config value wins over the environment override, which wins over the default."""
    if config_value:
        return Path(config_value)
    return Path(os.environ.get(env_var) or default)


def list_bins(directory) -> Iterable[Path]:
    return sorted(Path(directory).glob("*.bin"))
