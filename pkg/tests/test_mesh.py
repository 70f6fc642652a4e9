import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from efrrom.mesh import (INFLOW, OBSTACLE, OUTFLOW, WALL, MeshError, build_channel_mesh, mesh_metrics,
                         mesh_report)


def brute_force_faces(active):
    """Enumerate faces of a masked grid by visiting every cell edge."""
    nx, ny = active.shape
    interior = boundary = 0
    edges = set()
    for i, j in itertools.product(range(nx), range(ny)):
        if not active[i, j]:
            continue
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            inside = 0 <= a < nx and 0 <= b < ny and active[a, b]
            key = tuple(sorted([(i, j), (a, b)]))
            if inside:
                if key not in edges:
                    edges.add(key)
                    interior += 1
            else:
                boundary += 1
    return interior, boundary


def test_four_by_four_counts():
    m = build_channel_mesh(1.0, 1.0, (0.5, 0.5), 0.0, 4, 4)
    assert m.n_cells == 16
    assert m.n_faces == 40
    assert len(m.faces) == 40
    assert mesh_metrics(m)[3] == 16


@pytest.mark.parametrize("nx,ny", [(4, 4), (4, 5), (5, 5), (5, 4)])
@pytest.mark.parametrize("hw", [0.0, 0.2, 0.3])
def test_face_count_matches_enumeration(nx, ny, hw):
    m = build_channel_mesh(1.0, 1.0, (0.5, 0.5), hw, nx, ny)
    interior, boundary = brute_force_faces(m.active_mask)
    assert len(m.if_owner) == interior
    assert len(m.bf_owner) == boundary


def test_closure_fine_mesh():
    m = build_channel_mesh(2.2, 0.41, (0.2, 0.2), 0.05, 220, 41)
    perim = 2 * (m.dx + m.dy)
    assert np.abs(m.closure_residual()).max() <= 1e-14 * perim
    h_min, h_avg, h_max, nc = mesh_metrics(m)
    assert h_min <= h_avg <= h_max
    assert 0.005 < h_avg < 0.02
    assert nc != 15900 and abs(nc - 15900) / 15900 < 0.5


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(4, 30), ny=st.integers(4, 30), hw=st.floats(0.0, 0.2),
       cx=st.floats(0.3, 0.7), cy=st.floats(0.3, 0.7))
def test_closure_property(nx, ny, hw, cx, cy):
    m = build_channel_mesh(1.0, 1.0, (cx, cy), hw, nx, ny)
    perim = 2 * (m.dx + m.dy)
    assert np.abs(m.closure_residual()).max() <= 1e-14 * perim
    h_min, h_avg, h_max, _ = mesh_metrics(m)
    assert h_min <= h_avg <= h_max


def test_uniform_metrics():
    m = build_channel_mesh(1.0, 1.0, (0.5, 0.5), 0.0, 10, 10)
    h = mesh_metrics(m)
    assert h[0] == pytest.approx(0.1 * np.sqrt(2), rel=1e-14)
    assert h[1] == pytest.approx(0.1 * np.sqrt(2), rel=1e-14)
    assert h[2] == pytest.approx(0.1 * np.sqrt(2), rel=1e-14)


def test_face_orientation_and_tags():
    m = build_channel_mesh(2.2, 0.41, (0.2, 0.2), 0.05, 44, 12)
    d = m.centers[m.if_neighbor] - m.centers[m.if_owner]
    assert np.all(np.einsum("ij,ij->i", d, m.if_area) > 0)
    out = m.bf_centroid - m.centers[m.bf_owner]
    assert np.all(np.einsum("ij,ij->i", out, m.bf_area) > 0)
    assert set(np.unique(m.bf_tag)) == {INFLOW, OUTFLOW, WALL, OBSTACLE}
    assert np.allclose(m.bf_centroid[m.bf_tag == INFLOW, 0], 0.0)
    assert np.allclose(m.bf_centroid[m.bf_tag == OUTFLOW, 0], 2.2)
    assert set(m.boundary_tags) == {"Inflow", "Outflow", "Wall", "Obstacle"}
    # blanked cells are those with centroids strictly inside the square
    X = (np.arange(44) + 0.5) * m.dx
    Y = (np.arange(12) + 0.5) * m.dy
    inside = (np.abs(X[:, None] - 0.2) < 0.05) & (np.abs(Y[None, :] - 0.2) < 0.05)
    assert np.array_equal(~inside, m.active_mask)


def test_every_face_joins_active_cells():
    m = build_channel_mesh(2.2, 0.41, (0.2, 0.2), 0.05, 44, 12)
    for rec in m.faces:
        i, j = m.cell_ij[rec.owner]
        assert m.active_mask[i, j]
        if rec.neighbor is not None:
            i, j = m.cell_ij[rec.neighbor]
            assert m.active_mask[i, j]
            assert rec.tag is None
        else:
            assert rec.tag in ("Inflow", "Outflow", "Wall", "Obstacle")


@pytest.mark.parametrize("kwargs", [
    dict(obstacle_center=(0.05, 0.2), obstacle_halfwidth=0.1),
    dict(obstacle_center=(0.5, 0.5), obstacle_halfwidth=0.1, ny=3),
    dict(obstacle_center=(0.5, 0.5), obstacle_halfwidth=-0.1),
])
def test_invalid_geometry(kwargs):
    base = dict(length=1.0, height=1.0, nx=10, ny=10)
    base.update(kwargs)
    with pytest.raises(MeshError):
        build_channel_mesh(**base)


def test_report_and_digest():
    a = build_channel_mesh(1.0, 1.0, (0.5, 0.5), 0.2, 10, 10)
    b = build_channel_mesh(1.0, 1.0, (0.5, 0.5), 0.2, 10, 10)
    c = build_channel_mesh(1.0, 1.0, (0.5, 0.5), 0.2, 10, 11)
    assert a.digest == b.digest != c.digest
    text = mesh_report(a)
    assert f"active_cells = {a.n_cells}" in text
    assert "h_avg" in text
