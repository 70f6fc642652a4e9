"""Face-loop reference implementations, written independently of the sparse operators."""

import numpy as np


class Loops:
    def __init__(self, mesh):
        self.m = mesh
        self.faces = list(mesh.faces)

    def _vel_face(self, f, field, g, bi):
        """Face value of a velocity field; ``bi`` is the boundary-face index."""
        if f.neighbor is not None:
            return 0.5 * (field[f.owner] + field[f.neighbor])
        if f.tag == "Outflow":
            return field[f.owner]
        return g[bi]

    def _iter(self):
        bi = 0
        for f in self.faces:
            yield f, (None if f.neighbor is not None else bi)
            if f.neighbor is None:
                bi += 1

    def lap(self, u, g, coef=None):
        m = self.m
        out = np.zeros_like(u)
        for f, bi in self._iter():
            A = np.hypot(*f.area_vector)
            if f.neighbor is not None:
                k = 1.0 if coef is None else 0.5 * (coef[f.owner] + coef[f.neighbor])
                d = np.hypot(*(m.centers[f.neighbor] - m.centers[f.owner]))
                flux = k * A / d * (u[f.neighbor] - u[f.owner])
                out[f.owner] += flux
                out[f.neighbor] -= flux
            elif f.tag != "Outflow":
                k = 1.0 if coef is None else coef[f.owner]
                d = np.hypot(*(np.array(f.centroid) - m.centers[f.owner]))
                out[f.owner] += k * A / d * (g[bi] - u[f.owner])
        return out / m.cell_volume

    def grad(self, q):
        out = np.zeros((self.m.n_cells, 2))
        for f, bi in self._iter():
            a = np.array(f.area_vector)
            if f.neighbor is not None:
                qf = 0.5 * (q[f.owner] + q[f.neighbor])
                out[f.owner] += qf * a
                out[f.neighbor] -= qf * a
            else:
                qf = 0.0 if f.tag == "Outflow" else q[f.owner]
                out[f.owner] += qf * a
        return out / self.m.cell_volume

    def div(self, v, g):
        out = np.zeros(self.m.n_cells)
        for f, bi in self._iter():
            a = np.array(f.area_vector)
            flux = self._vel_face(f, v, g, bi) @ a
            out[f.owner] += flux
            if f.neighbor is not None:
                out[f.neighbor] -= flux
        return out / self.m.cell_volume

    def conv(self, w, gw, u, gu):
        out = np.zeros_like(u)
        for f, bi in self._iter():
            a = np.array(f.area_vector)
            flux = self._vel_face(f, w, gw, bi) @ a
            val = self._vel_face(f, u, gu, bi)
            out[f.owner] += flux * val
            if f.neighbor is not None:
                out[f.neighbor] -= flux * val
        return out / self.m.cell_volume

    def dot(self, a, b):
        return float(np.sum(self.m.cell_volume * a * b))
