import struct
import warnings
from pathlib import Path

import numpy as np
import pytest

from efrrom import cli, pipeline, pod, store
from efrrom.config import ConfigError, load_config, parse_config
from efrrom.mesh import build_channel_mesh

SMALL = """\
[geometry]
nx = 44
ny = 12

[efr]
dt = 0.01

[time]
T = 0.6
snapshot_stride = 5
rom_t0 = 0.3
rom_T = 0.6
export_times = 0.6

[pod]
energy_threshold_v = 0.99, 0.9999
energy_threshold_p = 0.99, 0.9999
energy_threshold_a = 0.99, 0.9999
train_t0 = 0.3
train_T = 0.6
train_every = 1
"""

STAGES = ["fom-run", "pod", "rom-offline", "rom-online", "compare", "export"]
NONDETERMINISTIC = {"timing.txt", "speedup.txt"}


def _write_cfg(tmp_path, text=SMALL, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in NONDETERMINISTIC}


# -- binary store -------------------------------------------------------------------

def test_array_format(tmp_path):
    a = np.arange(6.0).reshape(3, 2) / 7
    store.write_array(tmp_path / "x.bin", a)
    raw = (tmp_path / "x.bin").read_bytes()
    assert struct.unpack("<Q", raw[:8])[0] == 6
    assert np.array_equal(np.frombuffer(raw[8:], "<f8"), a.ravel())
    assert np.array_equal(store.read_array(tmp_path / "x.bin"), a.ravel())
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(store.StoreError):
        store.read_array(tmp_path / "bad.bin")


def test_snapshot_roundtrip_and_mesh_check(tmp_path, small_channel, rng):
    cols = rng.normal(size=(4, small_channel.n_cells, 2))
    snaps = pod.SnapshotSet("v", np.array([0.1, 0.2, 0.3, 0.4]), cols)
    store.save_snapshots(tmp_path / "v", snaps, small_channel, 0.1, "m/s")
    back = store.load_snapshots(tmp_path / "v", small_channel)
    assert np.array_equal(back.columns, cols)
    assert np.array_equal(back.times, snaps.times)
    meta = store.read_manifest(tmp_path / "v")
    assert meta["count"] == "4" and meta["units"] == "m/s" and meta["mesh_hash"] == small_channel.digest
    other = build_channel_mesh(2.2, 0.41, (0.2, 0.2), 0.05, 44, 14)
    with pytest.raises(store.StoreError, match="mesh"):
        store.load_snapshots(tmp_path / "v", other)
    (tmp_path / "v" / "col_00003.bin").unlink()
    with pytest.raises(store.StoreError, match="columns"):
        store.load_snapshots(tmp_path / "v")


def test_basis_roundtrip(tmp_path, small_channel, rng):
    s = pod.SnapshotSet("p", np.arange(5.0), rng.normal(size=(5, small_channel.n_cells)))
    b = pod.pod_compute(s, small_channel, 0.9)
    store.save_basis(tmp_path / "b", b, small_channel)
    back = store.load_basis(tmp_path / "b", small_channel)
    assert np.array_equal(back.modes, b.modes)
    assert np.array_equal(back.eigenvalues, b.eigenvalues)
    assert np.array_equal(back.coefficients, b.coefficients)
    assert back.threshold == b.threshold


def test_workdir_precedence(monkeypatch):
    monkeypatch.setenv("EFRROM_WORKDIR", "/tmp/from_env")
    assert store.workdir_from("cfg_dir") == Path("cfg_dir")
    assert store.workdir_from("") == Path("/tmp/from_env")
    monkeypatch.delenv("EFRROM_WORKDIR")
    assert store.workdir_from(None) == Path("run")


# -- config ------------------------------------------------------------------------

def test_config_defaults():
    cfg = parse_config("")
    assert (cfg.nx, cfg.ny, cfg.dt, cfg.mu) == (160, 40, 0.0025, 1e-3)
    assert cfg.thresholds == [(0.99, 0.99, 0.99), (0.999, 0.999, 0.999), (0.9999, 0.9999, 0.9999)]
    assert cfg.snapshot_cadence == pytest.approx(0.01)


def test_config_modes(tmp_path):
    cfg = parse_config(SMALL)
    mesh = cfg.mesh()
    params = cfg.efr_params(mesh)
    assert params.chi == cfg.dt
    from efrrom.mesh import mesh_metrics
    assert params.alpha == mesh_metrics(mesh)[1]
    cfg2 = parse_config(SMALL + "\n[physics]\nmu = 0.01\n")
    assert cfg2.mu == 0.01
    cfg3 = parse_config("[efr]\nalpha_mode = explicit\nalpha_value = 0.03\nchi_mode = explicit\nchi_value = 0.2\n")
    p3 = cfg3.efr_params(build_channel_mesh(2.2, 0.41, (0.2, 0.2), 0.05, 44, 12))
    assert (p3.alpha, p3.chi) == (0.03, 0.2)


@pytest.mark.parametrize("text", [
    "[geometry]\nnxx = 10\n",
    "[solver]\nfoo = 1\n",
    "[pod]\nenergy_threshold_v = 1.2\n",
    "[pod]\nenergy_threshold_v = 0.9, 0.99\n",
    "[time]\nsnapshot_stride = 0\n",
    "[time]\nT = -1\n",
    "[efr]\nalpha_mode = fancy\n",
    "[geometry]\nnx = ten\n",
    "[efr]\ndt = 2.0\n",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_default_config_text_parses(capsys):
    assert cli.main(["default-config"]) == 0
    assert parse_config(capsys.readouterr().out) == parse_config("")


# -- CLI ---------------------------------------------------------------------------

def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == 1
    bad = _write_cfg(tmp_path, "[geometry]\nbogus = 1\n", "bad.ini")
    assert cli.main(["fom-run", str(bad), "--workdir", str(tmp_path / "w")]) == 1
    assert "bogus" in capsys.readouterr().err
    assert cli.main(["fom-run", str(tmp_path / "missing.ini")]) == 1


def test_missing_prerequisites(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    for stage in STAGES[1:5]:
        assert cli.main([stage, str(cfg), "--workdir", str(tmp_path / "empty")]) == 1
    assert "missing" in capsys.readouterr().err


def test_empty_run(tmp_path):
    cfg = _write_cfg(tmp_path, SMALL.replace("\nT = 0.6", "\nT = 0.0"))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert cli.main(["fom-run", str(cfg), "--workdir", str(tmp_path / "w")]) == 0
    assert any("T equals t0" in str(w.message) for w in rec)
    for var in pipeline.SNAPSHOT_VARIABLES:
        assert store.snapshot_count(tmp_path / "w" / "snapshots" / var) == 0
    assert cli.main(["pod", str(cfg), "--workdir", str(tmp_path / "w")]) == 1


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    # poison the solver after a few steps so the run diverges
    from efrrom import fom
    real = fom.efr_step

    def diverging(mesh, state, *args, **kw):
        new = real(mesh, state, *args, **kw)
        if new.step >= 3:
            new.u_curr = np.full_like(new.u_curr, np.nan)
        return new

    monkeypatch.setattr(fom, "efr_step", diverging)
    cfg = _write_cfg(tmp_path)
    assert cli.main(["fom-run", str(cfg), "--workdir", str(tmp_path / "w")]) == 2
    err = capsys.readouterr().err
    assert "numerical failure" in err and "last stable time 0.02" in err


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_cfg(root)
    for name in ("a", "b"):
        for stage in STAGES:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert cli.main([stage, str(cfg), "--workdir", str(root / name)]) == 0, stage
    return root / "a", root / "b"


def test_pipeline_artifacts(two_runs):
    wd, _ = two_runs
    assert store.snapshot_count(wd / "snapshots" / "v") == 12
    spectrum = (wd / "pod" / "spectrum_v.csv").read_text().splitlines()
    assert spectrum[0] == "index,eigenvalue,cumulative_energy" and len(spectrum) == 1 + 7
    tag = pipeline.threshold_tag((0.9999, 0.9999, 0.9999))
    head = (wd / "rom" / tag / "coefficients.csv").read_text().splitlines()[0].split(",")
    assert head[0] == "time" and head[1] == "beta_1" and "gamma_1" in head and "delta_1" in head
    assert head[-1].startswith("betabar_")
    for f in ("errors_u.csv", "errors_p.csv", "lift.csv", "report.txt", "speedup.txt"):
        assert (wd / "compare" / tag / f).is_file()
    assert (wd / "export" / "fom_t0.6.vtk").read_text().startswith("# vtk DataFile")
    assert (wd / "rom" / tag / "rom_t0.6.vtk").is_file()
    for line in (wd / "fom" / "forces.csv", wd / "fom" / "mass.csv"):
        assert line.read_text().startswith("time,")


def test_rerun_is_byte_identical(two_runs):
    a, b = two_runs
    ta, tb = _tree(a), _tree(b)
    assert ta.keys() == tb.keys()
    assert [k for k in ta if ta[k] != tb[k]] == []


def test_stage_rerun_in_place_is_idempotent(two_runs, tmp_path):
    wd, _ = two_runs
    before = _tree(wd)
    cfg = _write_cfg(tmp_path)
    for stage in STAGES[1:]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert cli.main([stage, str(cfg), "--workdir", str(wd)]) == 0
    assert _tree(wd) == before


def test_compare_against_itself_is_zero(two_runs):
    wd, _ = two_runs
    ctx = pipeline.Context(load_config(_write_cfg(wd.parent, name="self.ini")), wd)
    su = store.load_snapshots(wd / "snapshots" / "u", ctx.mesh)
    sp = store.load_snapshots(wd / "snapshots" / "p", ctx.mesh)
    cmp = pipeline.compare_fields(ctx.mesh, ctx.params, su.times, su.columns, sp.columns, su.columns, sp.columns)
    assert not cmp.err_u.any() and not cmp.err_p.any()
    assert cmp.lift_error == 0.0


def test_mesh_mismatch_is_rejected(two_runs, tmp_path, capsys):
    wd, _ = two_runs
    cfg = _write_cfg(tmp_path, SMALL.replace("ny = 12", "ny = 14"))
    assert cli.main(["pod", str(cfg), "--workdir", str(wd)]) == 1
    assert "mesh" in capsys.readouterr().err
