"""Run configuration: an INI file with fixed sections and keys.

Unknown sections or keys are rejected so that a typo cannot silently fall
back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .fom import EfrParams
from .mesh import CartesianMesh, build_channel_mesh, mesh_metrics
from .operators import ParabolicInflow


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "geometry": {
        "length": "2.2",
        "height": "0.41",
        "obstacle_x": "0.2",
        "obstacle_y": "0.2",
        "obstacle_halfwidth": "0.05",
        "nx": "160",
        "ny": "40",
    },
    "physics": {"rho": "1.0", "mu": "1e-3", "mean_velocity": "1.0", "unsteady": "true"},
    "efr": {
        "dt": "0.0025",
        "alpha_mode": "h_avg",
        "alpha_value": "0.0",
        "chi_mode": "dt",
        "chi_value": "0.0",
    },
    "time": {
        "t0": "0.0",
        "T": "8.0",
        "snapshot_stride": "4",
        "rom_t0": "4.0",
        "rom_T": "8.0",
        "export_times": "",
    },
    "pod": {
        "energy_threshold_v": "0.99, 0.999, 0.9999",
        "energy_threshold_p": "0.99, 0.999, 0.9999",
        "energy_threshold_a": "0.99, 0.999, 0.9999",
        "max_modes": "0",
        "train_t0": "4.0",
        "train_T": "8.0",
        "train_every": "2",
    },
    "rbf": {"sigma_factor": "1.5", "reg_scale": "1e-10"},
    "paths": {"workdir": ""},
}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


@dataclass
class RunConfig:
    length: float
    height: float
    obstacle_center: tuple[float, float]
    obstacle_halfwidth: float
    nx: int
    ny: int
    rho: float
    mu: float
    mean_velocity: float
    unsteady: bool
    dt: float
    alpha_mode: str
    alpha_value: float
    chi_mode: str
    chi_value: float
    t0: float
    T: float
    snapshot_stride: int
    rom_t0: float
    rom_T: float
    export_times: list[float]
    thresholds_v: list[float]
    thresholds_p: list[float]
    thresholds_a: list[float]
    max_modes: Optional[int]
    train_t0: float
    train_T: float
    train_every: int
    sigma_factor: float
    reg_scale: float
    workdir: str = ""
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        lists = (self.thresholds_v, self.thresholds_p, self.thresholds_a)
        if len({len(x) for x in lists}) != 1 or not self.thresholds_v:
            raise ConfigError("energy_threshold_v/p/a must list the same number of thresholds")
        for th in (t for x in lists for t in x):
            if not 0.0 < th <= 1.0:
                raise ConfigError(f"energy threshold {th} outside (0, 1]")
        if self.snapshot_stride < 1 or self.train_every < 1:
            raise ConfigError("strides must be >= 1")
        if self.T < self.t0:
            raise ConfigError("T must not precede t0")
        if self.dt <= 0 or self.rho <= 0 or self.mu <= 0:
            raise ConfigError("dt, rho and mu must be positive")
        if self.alpha_mode not in ("h_avg", "explicit"):
            raise ConfigError(f"alpha_mode must be h_avg or explicit, got {self.alpha_mode!r}")
        if self.chi_mode not in ("dt", "explicit"):
            raise ConfigError(f"chi_mode must be dt or explicit, got {self.chi_mode!r}")
        chi = self.dt if self.chi_mode == "dt" else self.chi_value
        if not 0.0 <= chi <= 1.0:
            raise ConfigError(f"relaxation parameter chi = {chi:g} outside [0, 1]")
        if self.rom_T < self.rom_t0:
            raise ConfigError("rom_T must not precede rom_t0")

    @property
    def thresholds(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds_v, self.thresholds_p, self.thresholds_a))

    def mesh(self) -> CartesianMesh:
        return build_channel_mesh(self.length, self.height, self.obstacle_center, self.obstacle_halfwidth,
                                  self.nx, self.ny)

    def inflow(self) -> ParabolicInflow:
        return ParabolicInflow(self.height, self.mean_velocity, self.unsteady)

    def efr_params(self, mesh: CartesianMesh) -> EfrParams:
        alpha = mesh_metrics(mesh)[1] if self.alpha_mode == "h_avg" else self.alpha_value
        chi = self.dt if self.chi_mode == "dt" else self.chi_value
        try:
            return EfrParams(self.rho, self.mu, self.dt, alpha, chi)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def snapshot_cadence(self) -> float:
        return self.dt * self.snapshot_stride


def _parse(cp: configparser.ConfigParser) -> RunConfig:
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in {k.lower() for k in DEFAULTS[sec]}:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    v = {sec: {k: cp.get(sec, k.lower(), fallback=d) for k, d in keys.items()} for sec, keys in DEFAULTS.items()}
    try:
        g, ph, e, t, p, r = (v[s] for s in ("geometry", "physics", "efr", "time", "pod", "rbf"))
        max_modes = int(p["max_modes"])
        return RunConfig(
            length=float(g["length"]), height=float(g["height"]),
            obstacle_center=(float(g["obstacle_x"]), float(g["obstacle_y"])),
            obstacle_halfwidth=float(g["obstacle_halfwidth"]), nx=int(g["nx"]), ny=int(g["ny"]),
            rho=float(ph["rho"]), mu=float(ph["mu"]), mean_velocity=float(ph["mean_velocity"]),
            unsteady=_bool(ph["unsteady"]),
            dt=float(e["dt"]), alpha_mode=e["alpha_mode"], alpha_value=float(e["alpha_value"]),
            chi_mode=e["chi_mode"], chi_value=float(e["chi_value"]),
            t0=float(t["t0"]), T=float(t["T"]), snapshot_stride=int(t["snapshot_stride"]),
            rom_t0=float(t["rom_t0"]), rom_T=float(t["rom_T"]), export_times=_floats(t["export_times"]),
            thresholds_v=_floats(p["energy_threshold_v"]), thresholds_p=_floats(p["energy_threshold_p"]),
            thresholds_a=_floats(p["energy_threshold_a"]), max_modes=max_modes if max_modes > 0 else None,
            train_t0=float(p["train_t0"]), train_T=float(p["train_T"]), train_every=int(p["train_every"]),
            sigma_factor=float(r["sigma_factor"]), reg_scale=float(r["reg_scale"]),
            workdir=v["paths"]["workdir"],
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _bool(text: str) -> bool:
    states = configparser.ConfigParser.BOOLEAN_STATES
    if text.lower() not in states:
        raise ConfigError(f"not a boolean: {text!r}")
    return states[text.lower()]


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    path = Path(path)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    cfg = _parse(cp)
    cfg.source = path
    return cfg


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return _parse(cp)


def default_config_text() -> str:
    out = []
    for sec, keys in DEFAULTS.items():
        out.append(f"[{sec}]")
        out += [f"{k} = {v}" for k, v in keys.items()]
        out.append("")
    return "\n".join(out)
