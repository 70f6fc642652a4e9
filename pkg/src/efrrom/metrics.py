"""Error and mass-conservation diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import operators as ops
from .mesh import CartesianMesh

DEFAULT_FLOWRATE_STATIONS = (0.5, 1.0, 1.5, 2.0)


@dataclass
class ErrorSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same length")
        if np.any(self.values < 0):
            raise ValueError("error values must be non-negative")

    @property
    def max(self) -> float:
        return float(self.values.max()) if len(self.values) else 0.0


def relative_l2_error(mesh: CartesianMesh, fom_field: np.ndarray, rom_field: np.ndarray) -> float:
    """``||fom - rom|| / ||fom||`` in the volume-weighted L2 norm."""
    ref = ops.norm(mesh, np.asarray(fom_field, float))
    if ref == 0.0:
        raise ValueError("reference field has zero norm")
    return ops.norm(mesh, np.asarray(fom_field, float) - np.asarray(rom_field, float)) / ref


def _window(times, series, window):
    t = np.asarray(times, float)
    s = np.asarray(series, float)
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise ValueError(f"fewer than two samples in window {window}")
    return t[sel], s[sel]


def time_l2_norm(times, series, window=(-np.inf, np.inf)) -> float:
    """Trapezoidal L2 norm of a time series restricted to ``window``."""
    t, s = _window(times, series, window)
    return float(np.sqrt(np.trapezoid(s**2, t)))


def lift_error(times, cl_fom, cl_rom, window=(4.0, 8.0)) -> float:
    """Relative time-L2 error of the lift coefficient over ``window``."""
    cl_fom = np.asarray(cl_fom, float)
    cl_rom = np.asarray(cl_rom, float)
    if cl_fom.shape != cl_rom.shape:
        raise ValueError("lift series must share one time grid")
    ref = time_l2_norm(times, cl_fom, window)
    if ref == 0.0:
        raise ValueError("reference lift series vanishes on the window")
    return time_l2_norm(times, cl_fom - cl_rom, window) / ref


def mass_error_volume(mesh: CartesianMesh, field: np.ndarray, g: Optional[np.ndarray] = None,
                      dirichlet: Optional[np.ndarray] = None, absolute: bool = False) -> float:
    """Domain average of the discrete divergence (central face interpolation).

    ``absolute=True`` averages ``|div|`` per cell instead; the signed value
    reduces to the net boundary flux over the domain volume.
    """
    div = ops.apply_divergence(mesh, np.asarray(field, float), g, dirichlet)
    if absolute:
        div = np.abs(div)
    return float(np.dot(mesh.volumes, div) / mesh.total_volume)


def flowrate(mesh: CartesianMesh, field: np.ndarray, x_location: float, g: Optional[np.ndarray] = None) -> float:
    """Axial flow rate through the column of x-faces nearest ``x_location``.

    Interior faces use the mean of the two cells; faces on the domain or
    obstacle boundary use the boundary data ``g`` when given, else the
    adjacent cell value.
    """
    if not 0.0 <= x_location <= mesh.length:
        raise ValueError(f"x = {x_location} lies outside the channel [0, {mesh.length}]")
    field = np.asarray(field, float)
    i = int(np.clip(np.rint(x_location / mesh.dx), 0, mesh.nx))
    xf = i * mesh.dx
    tol = 1e-9 * mesh.dx
    sel = np.abs(mesh.if_centroid[:, 0] - xf) < tol
    sel &= mesh.if_area[:, 0] != 0
    q = np.sum(0.5 * (field[mesh.if_owner[sel], 0] + field[mesh.if_neighbor[sel], 0]) * mesh.if_area[sel, 0])
    bsel = np.flatnonzero((np.abs(mesh.bf_centroid[:, 0] - xf) < tol) & (mesh.bf_area[:, 0] != 0))
    if len(bsel) == 0 and not sel.any():
        raise ValueError(f"no active faces at x = {x_location}")
    vb = field[mesh.bf_owner[bsel], 0] if g is None else np.asarray(g)[bsel, 0]
    q += np.sum(vb * np.abs(mesh.bf_area[bsel, 0]))
    return float(q)


def mass_error_flowrate(mesh: CartesianMesh, field: np.ndarray, x_location: float, exact_flowrate: float,
                        g: Optional[np.ndarray] = None) -> float:
    """Relative flow-rate error ``(Q - Q_exact) / Q_exact``."""
    if exact_flowrate == 0.0:
        raise ValueError("exact flow rate must be nonzero")
    return (flowrate(mesh, field, x_location, g) - exact_flowrate) / exact_flowrate


def write_series_csv(path, times: Sequence[float], columns: dict[str, Sequence[float]]) -> None:
    """Write ``time,<name>...`` rows with full float precision."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *names])
        for k, t in enumerate(times):
            w.writerow([repr(float(t)), *(repr(float(columns[n][k])) for n in names)])


def write_error_csv(path, series: ErrorSeries) -> None:
    write_series_csv(path, series.times, {"value": series.values})
