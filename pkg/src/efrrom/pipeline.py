"""Offline/online pipeline stages operating on a work directory.

Layout of the work directory::

    mesh_report.txt
    fom/forces.csv, fom/mass.csv, fom/timing.txt
    snapshots/<v|p|a|u|vbar>/
    lifting/
    pod/spectrum_<var>.csv, pod/<tag>/<v|p|a>/
    rom/<tag>/operators/, rom/<tag>/coefficients.csv, rom/<tag>/timing.txt
    compare/<tag>/errors_u.csv, errors_p.csv, lift.csv, report.txt, speedup.txt
    export/*.vtk

Files named ``timing.txt`` and ``speedup.txt`` carry wall-clock measurements
and are the only outputs that differ between identical runs.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fom, metrics, pod, rom_offline, rom_online, store, vtk
from .config import RunConfig
from .mesh import CartesianMesh, mesh_report

log = logging.getLogger(__name__)

SNAPSHOT_VARIABLES = ("v", "p", "a", "u", "vbar")
UNITS = {"v": "m/s", "p": "Pa m^3/kg", "a": "m/s", "u": "m/s", "vbar": "m/s"}


class PrerequisiteError(RuntimeError):
    pass


def threshold_tag(th: tuple[float, float, float]) -> str:
    tv, tp, ta = th
    return f"v{tv:g}_p{tp:g}_a{ta:g}"


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"missing {what} at {path}; run the earlier stage first")
    return path


def _write_kv(path: Path, entries: dict) -> None:
    path.write_text("".join(f"{k} = {store._fmt(v)}\n" for k, v in entries.items()))


def _read_kv(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


@dataclass
class Context:
    cfg: RunConfig
    workdir: Path

    def __post_init__(self):
        self.mesh: CartesianMesh = self.cfg.mesh()
        self.params = self.cfg.efr_params(self.mesh)
        self.inflow = self.cfg.inflow()

    def path(self, *parts) -> Path:
        return self.workdir.joinpath(*parts)


# -- FOM -------------------------------------------------------------------------

def stage_fom(ctx: Context) -> dict:
    """Run the EFR solver from rest and stream snapshots, forces and mass errors."""
    cfg, mesh, params = ctx.cfg, ctx.mesh, ctx.params
    ctx.workdir.mkdir(parents=True, exist_ok=True)
    ctx.path("mesh_report.txt").write_text(mesh_report(mesh))
    out = ctx.path("fom")
    out.mkdir(exist_ok=True)
    writers = {k: store.SnapshotWriter(ctx.path("snapshots", k), k, mesh, cfg.snapshot_cadence, UNITS[k])
               for k in SNAPSHOT_VARIABLES}
    n_steps = int(round((cfg.T - cfg.t0) / params.dt))
    if n_steps == 0:
        warnings.warn("T equals t0: no time steps taken, snapshot store left empty", stacklevel=2)
    vdir = fom.ops.velocity_dirichlet_mask(mesh)
    stations = [x for x in metrics.DEFAULT_FLOWRATE_STATIONS if x <= mesh.length]
    forces = {"cd": [], "cl": []}
    mass = {k: [] for k in ("eps_v", "eps_u", "abs_v", "abs_u", "cfl", "a_max")}
    mass.update({f"eq_x{x:g}": [] for x in stations})
    times: list[float] = []
    elapsed = 0.0

    state = fom.FomState.at_rest(mesh, cfg.t0)
    solver = fom.CoupledSolver()
    for k in range(1, n_steps + 1):
        t_start = time.perf_counter()
        try:
            state = fom.efr_step(mesh, state, params, ctx.inflow, solver)
        except fom.SolverFailure as exc:
            raise fom.SolverFailure(f"{exc} (last stable time {state.time:.6f})", exc.residual) from exc
        if not (np.all(np.isfinite(state.u_curr)) and np.all(np.isfinite(state.p))):
            raise fom.SolverFailure(f"solution diverged at t = {state.time:.6f}; last stable time "
                                    f"{state.time - params.dt:.6f}")
        elapsed += time.perf_counter() - t_start
        if k % cfg.snapshot_stride:
            continue
        t = state.time
        times.append(t)
        for name, f in (("v", state.v), ("p", state.p), ("a", state.a), ("u", state.u_curr), ("vbar", state.vbar)):
            writers[name].append(t, f)
        if mesh.has_obstacle:
            cd, cl = fom.drag_lift(mesh, state, params)
        else:
            cd = cl = 0.0
        forces["cd"].append(cd)
        forces["cl"].append(cl)
        g = fom.ops.inflow_data(mesh, ctx.inflow, t)
        mass["eps_v"].append(metrics.mass_error_volume(mesh, state.v, g, vdir))
        mass["eps_u"].append(metrics.mass_error_volume(mesh, state.u_curr, g, vdir))
        mass["abs_v"].append(metrics.mass_error_volume(mesh, state.v, g, vdir, absolute=True))
        mass["abs_u"].append(metrics.mass_error_volume(mesh, state.u_curr, g, vdir, absolute=True))
        mass["cfl"].append(fom.cfl_number(mesh, state.v, params.dt))
        mass["a_max"].append(float(state.a.max()))
        q_exact = ctx.inflow.amplitude(t) * ctx.inflow.mean_velocity * mesh.height
        for x in stations:
            val = (metrics.mass_error_flowrate(mesh, state.u_curr, x, q_exact, g)
                   if abs(q_exact) > 1e-8 * mesh.height else float("nan"))
            mass[f"eq_x{x:g}"].append(val)

    for w in writers.values():
        w.close()
    metrics.write_series_csv(out / "forces.csv", times, forces)
    metrics.write_series_csv(out / "mass.csv", times, mass)
    per_step = elapsed / n_steps if n_steps else 0.0
    _write_kv(out / "timing.txt", {"wall_time": elapsed, "steps": n_steps, "per_step": per_step,
                                   "factorizations": solver.factorizations})
    log.info("FOM: %d steps, %d snapshots, %.3f s per step", n_steps, len(times), per_step)
    return {"steps": n_steps, "snapshots": len(times), "per_step": per_step}


# -- POD ---------------------------------------------------------------------------

def training_mask(times: np.ndarray, cfg: RunConfig) -> np.ndarray:
    tol = 1e-6 * cfg.dt
    inside = np.flatnonzero((times >= cfg.train_t0 - tol) & (times <= cfg.train_T + tol))
    mask = np.zeros(len(times), bool)
    mask[inside[:: cfg.train_every]] = True
    return mask


def load_training(ctx: Context) -> dict[str, pod.SnapshotSet]:
    sets = {}
    for k in ("v", "p", "a"):
        d = _need(ctx.path("snapshots", k, store.MANIFEST), f"{k} snapshots").parent
        sets[k] = store.load_snapshots(d, ctx.mesh)
    if sets["v"].n_snapshots == 0:
        raise PrerequisiteError("snapshot store is empty")
    mask = training_mask(sets["v"].times, ctx.cfg)
    if mask.sum() < 2:
        raise PrerequisiteError("fewer than two snapshots in the training window")
    return {k: s.select(mask) for k, s in sets.items()}


def stage_pod(ctx: Context) -> dict:
    cfg, mesh = ctx.cfg, ctx.mesh
    train = load_training(ctx)
    lift = pod.build_lifting(mesh, ctx.inflow)
    store.save_lifting(ctx.path("lifting"), lift, mesh)
    train["v"] = pod.homogenize(train["v"], lift)
    out = ctx.path("pod")
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for var, s in train.items():
        full = pod.pod_compute(s, mesh, 1.0)
        lam = full.eigenvalues
        cum = np.cumsum(lam) / lam.sum()
        rows = np.arange(1, len(lam) + 1)
        with open(out / f"spectrum_{var}.csv", "w") as fh:
            fh.write("index,eigenvalue,cumulative_energy\n")
            for i, l, c in zip(rows, lam, cum):
                fh.write(f"{i},{float(l)!r},{float(c)!r}\n")
    for th in cfg.thresholds:
        tag = threshold_tag(th)
        counts = []
        for var, thv in zip(("v", "p", "a"), th):
            b = pod.pod_compute(train[var], mesh, thv, cfg.max_modes)
            store.save_basis(ctx.path("pod", tag, var), b, mesh)
            counts.append(b.n_modes)
        summary[tag] = tuple(counts)
        log.info("POD %s: modes v=%d p=%d a=%d", tag, *counts)
    return summary


# -- offline -------------------------------------------------------------------------

def _load_bases(ctx: Context, tag: str):
    return tuple(store.load_basis(_need(ctx.path("pod", tag, v), f"{v} basis for {tag}"), ctx.mesh)
                 for v in ("v", "p", "a"))


def stage_rom_offline(ctx: Context) -> dict:
    lift = store.load_lifting(_need(ctx.path("lifting"), "lifting function"), ctx.mesh)
    train_times = store.load_snapshots(ctx.path("snapshots", "a"), ctx.mesh).times
    train_times = train_times[training_mask(train_times, ctx.cfg)]
    out = {}
    for th in ctx.cfg.thresholds:
        tag = threshold_tag(th)
        bv, bp, ba = _load_bases(ctx, tag)
        red = rom_offline.project_operators(ctx.mesh, bv, bp, ba, lift)
        interp = rom_offline.rbf_fit(train_times, ba.coefficients.T, ctx.cfg.sigma_factor, ctx.cfg.reg_scale)
        store.save_reduced(ctx.path("rom", tag, "operators"), red, interp, ctx.mesh)
        out[tag] = red.checksum()
    return out


# -- online ----------------------------------------------------------------------------

def _nearest(times: np.ndarray, t: float, tol: float) -> int:
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > tol:
        raise PrerequisiteError(f"no snapshot within {tol:g} of t = {t:g}")
    return k


def coefficient_header(n_v: int, n_p: int, n_a: int) -> list[str]:
    return (["time"] + [f"beta_{i}" for i in range(1, n_v + 1)] + [f"gamma_{i}" for i in range(1, n_p + 1)]
            + [f"delta_{i}" for i in range(1, n_a + 1)] + [f"betabar_{i}" for i in range(1, n_v + 1)])


def run_online(ctx: Context, tag: str):
    """Run the reduced model for one threshold set; returns (times, states, wall time, steps)."""
    cfg = ctx.cfg
    lift = store.load_lifting(_need(ctx.path("lifting"), "lifting function"), ctx.mesh)
    red, interp, _ = store.load_reduced(_need(ctx.path("rom", tag, "operators"), f"operators for {tag}"), ctx.mesh)
    bv = store.load_basis(ctx.path("pod", tag, "v"), ctx.mesh)
    bp = store.load_basis(ctx.path("pod", tag, "p"), ctx.mesh)
    snaps_v = store.load_snapshots(ctx.path("snapshots", "v"), ctx.mesh)
    snaps_p = store.load_snapshots(ctx.path("snapshots", "p"), ctx.mesh)
    snaps_vb = store.load_snapshots(ctx.path("snapshots", "vbar"), ctx.mesh)
    k0 = _nearest(snaps_v.times, cfg.rom_t0, 0.5 * ctx.params.dt)
    t0 = float(snaps_v.times[k0])
    c = lift.inflow.amplitude(t0)
    state = rom_online.rom_init(ctx.mesh, bv, snaps_v.columns[k0] - c * lift.control_field,
                                snaps_vb.columns[k0] - c * lift.control_field, red.n_p, t0,
                                bp, snaps_p.columns[k0])
    n_steps = int(round((cfg.rom_T - t0) / ctx.params.dt))
    record = [state]
    stride = cfg.snapshot_stride
    t_start = time.perf_counter()
    for k in range(1, n_steps + 1):
        state = rom_online.rom_step(state, red, interp, ctx.params, lift.inflow.amplitude)
        if k % stride == 0:
            record.append(state)
    wall = time.perf_counter() - t_start
    return record, wall, n_steps, (bv, lift, red)


def stage_rom_online(ctx: Context) -> dict:
    out = {}
    for th in ctx.cfg.thresholds:
        tag = threshold_tag(th)
        record, wall, n_steps, (bv, lift, red) = run_online(ctx, tag)
        bp = store.load_basis(ctx.path("pod", tag, "p"), ctx.mesh)
        d = ctx.path("rom", tag)
        with open(d / "coefficients.csv", "w") as fh:
            fh.write(",".join(coefficient_header(red.n_v, red.n_p, red.n_a)) + "\n")
            for s in record:
                delta = s.delta if s.delta is not None else np.full(red.n_a, np.nan)
                gamma = s.gamma if len(s.gamma) else np.zeros(red.n_p)
                vals = np.concatenate([[s.time], s.beta_curr, gamma, delta, s.beta_bar_curr])
                fh.write(",".join(repr(float(x)) for x in vals) + "\n")
        for t in ctx.cfg.export_times:
            s = min(record, key=lambda r: abs(r.time - t))
            u, p = rom_online.reconstruct(s, bv, bp, lift, s.time, ctx.params.chi)
            vtk.write_vtk(d / f"rom_t{t:g}.vtk", ctx.mesh, {"u": u, "p": p})
        per_step = wall / n_steps if n_steps else 0.0
        _write_kv(d / "timing.txt", {"wall_time": wall, "steps": n_steps, "per_step": per_step})
        out[tag] = per_step
    return out


def read_coefficients(path: Path, n_v: int, n_p: int, n_a: int):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    beta = data[:, 1:1 + n_v]
    gamma = data[:, 1 + n_v:1 + n_v + n_p]
    delta = data[:, 1 + n_v + n_p:1 + n_v + n_p + n_a]
    bbar = data[:, 1 + n_v + n_p + n_a:]
    return t, beta, gamma, delta, bbar


# -- compare ---------------------------------------------------------------------------

@dataclass
class Comparison:
    times: np.ndarray
    err_u: np.ndarray
    err_p: np.ndarray
    cl_fom: np.ndarray
    cl_rom: np.ndarray

    @property
    def lift_error(self) -> float:
        w = (self.times.min(), self.times.max())
        return metrics.lift_error(self.times, self.cl_fom, self.cl_rom, w)


def compare_fields(mesh: CartesianMesh, params: fom.EfrParams, times, u_ref, p_ref, u_test, p_test) -> Comparison:
    eu = np.array([metrics.relative_l2_error(mesh, a, b) for a, b in zip(u_ref, u_test)])
    ep = np.array([metrics.relative_l2_error(mesh, a, b) for a, b in zip(p_ref, p_test)])
    if mesh.has_obstacle:
        cf = np.array([fom.force_coefficients(mesh, u, p, params.rho, params.mu)[1] for u, p in zip(u_ref, p_ref)])
        cr = np.array([fom.force_coefficients(mesh, u, p, params.rho, params.mu)[1] for u, p in zip(u_test, p_test)])
    else:
        cf = cr = np.zeros(len(eu))
    return Comparison(np.asarray(times, float), eu, ep, cf, cr)


def compare_threshold(ctx: Context, tag: str) -> Comparison:
    red_meta = store.read_manifest(_need(ctx.path("rom", tag, "operators"), f"operators for {tag}"))
    n_v, n_p, n_a = (int(red_meta[k]) for k in ("n_v", "n_p", "n_a"))
    t, beta, gamma, _, bbar = read_coefficients(_need(ctx.path("rom", tag, "coefficients.csv"), "coefficients"),
                                                n_v, n_p, n_a)
    bv = store.load_basis(ctx.path("pod", tag, "v"), ctx.mesh)
    bp = store.load_basis(ctx.path("pod", tag, "p"), ctx.mesh)
    lift = store.load_lifting(ctx.path("lifting"), ctx.mesh)
    su = store.load_snapshots(ctx.path("snapshots", "u"), ctx.mesh)
    sp_ = store.load_snapshots(ctx.path("snapshots", "p"), ctx.mesh)
    chi = ctx.params.chi
    idx = [_nearest(su.times, s, 0.5 * ctx.params.dt) for s in t]
    u_rom = [pod.reconstruct_field(bv, (1 - chi) * b + chi * bb) + lift.field(s)
             for s, b, bb in zip(t, beta, bbar)]
    p_rom = [pod.reconstruct_field(bp, g) for g in gamma]
    return compare_fields(ctx.mesh, ctx.params, su.times[idx], su.columns[idx], sp_.columns[idx], u_rom, p_rom)


def stage_compare(ctx: Context) -> dict:
    fom_timing = _read_kv(_need(ctx.path("fom", "timing.txt"), "FOM timing"))
    out = {}
    for th in ctx.cfg.thresholds:
        tag = threshold_tag(th)
        cmp = compare_threshold(ctx, tag)
        d = ctx.path("compare", tag)
        d.mkdir(parents=True, exist_ok=True)
        metrics.write_error_csv(d / "errors_u.csv", metrics.ErrorSeries(cmp.times, cmp.err_u))
        metrics.write_error_csv(d / "errors_p.csv", metrics.ErrorSeries(cmp.times, cmp.err_p))
        metrics.write_series_csv(d / "lift.csv", cmp.times, {"cl_fom": cmp.cl_fom, "cl_rom": cmp.cl_rom})
        e_cl = cmp.lift_error if np.any(cmp.cl_fom) else 0.0
        report = {"max_error_u": cmp.err_u.max(), "max_error_p": cmp.err_p.max(),
                  "mean_error_u": cmp.err_u.mean(), "mean_error_p": cmp.err_p.mean(), "lift_error": e_cl}
        _write_kv(d / "report.txt", report)
        rom_timing = _read_kv(ctx.path("rom", tag, "timing.txt"))
        fps, rps = float(fom_timing["per_step"]), float(rom_timing["per_step"])
        speedup = fps / rps if rps > 0 else float("inf")
        _write_kv(d / "speedup.txt", {"fom_per_step": fps, "rom_per_step": rps, "speedup": speedup})
        out[tag] = {**report, "speedup": speedup}
    return out


# -- export -----------------------------------------------------------------------------

def stage_export(ctx: Context) -> list[Path]:
    d = ctx.path("export")
    d.mkdir(parents=True, exist_ok=True)
    written = [d / "mesh.vtk", d / "mesh_report.txt"]
    vtk.write_vtk(written[0], ctx.mesh)
    written[1].write_text(mesh_report(ctx.mesh))
    if ctx.cfg.export_times:
        sets = {k: store.load_snapshots(_need(ctx.path("snapshots", k), f"{k} snapshots"), ctx.mesh)
                for k in ("u", "p", "a")}
        for t in ctx.cfg.export_times:
            k = _nearest(sets["u"].times, t, 0.5 * ctx.cfg.snapshot_cadence)
            path = d / f"fom_t{t:g}.vtk"
            vtk.write_vtk(path, ctx.mesh, {name: s.columns[k] for name, s in sets.items()})
            written.append(path)
    return written
