"""Characteristics-Galerkin transport: backward map and field composition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import QUAD7
from .mesh import PointLocator


@dataclass(frozen=True)
class BackwardMap:
    """``Y(x) = x - dt u(x)`` for a P1 velocity ``u`` on ``mesh``."""

    mesh: object
    u: np.ndarray
    dt: float

    def at_vertices(self):
        return self.mesh.vertices - self.dt * np.asarray(self.u)

    def at_quadrature(self, rule=QUAD7, elements=None):
        tri = self.mesh.triangles if elements is None else self.mesh.triangles[elements]
        lam, _ = rule
        x = np.einsum("qk,mkd->mqd", lam, self.mesh.vertices[tri])
        ux = np.einsum("qk,mkd->mqd", lam, np.asarray(self.u)[tri])
        return x - self.dt * ux


def compose_field(field_old, mesh_old, bmap, at="quadrature", elements=None, rule=QUAD7,
                  exit_tolerance=None):
    """Values of ``field_old o Y`` on the mesh of ``bmap``.

    Parameters
    ----------
    field_old : (N_old,) or (N_old, k) per-vertex values on ``mesh_old``.
    at : {"quadrature", "vertices"}
        Evaluate at quadrature points of each element (result (M, nq, ...))
        or at the vertices (result (N, ...)).
    elements : optional subset of elements for ``at="quadrature"``.
    exit_tolerance : float, optional
        Feet outside ``mesh_old`` closer than this are moved to the nearest
        boundary point; farther ones raise ``PointOutsideError``. Defaults to
        ``1e-6`` times the height of ``mesh_old``.
    """
    loc = PointLocator(mesh_old, tolerance=exit_tolerance)
    f = np.asarray(field_old)
    if at == "vertices":
        return loc.evaluate(f, bmap.at_vertices())
    if at != "quadrature":
        raise ValueError(f"unknown evaluation mode {at!r}")
    feet = bmap.at_quadrature(rule, elements)
    m, nq = feet.shape[:2]
    vals = loc.evaluate(f, feet.reshape(-1, 2))
    return vals.reshape((m, nq) + f.shape[1:])


def displacement_update_by_vertex_motion(d_old, u_new, dt):
    """``d_new[i] = d_old[i] + dt u_new[i]`` on vertices that moved with ``u_new``."""
    d_old = np.asarray(d_old, dtype=float)
    u_new = np.asarray(u_new, dtype=float)
    if d_old.shape != u_new.shape:
        raise ValueError(f"length mismatch: d has shape {d_old.shape}, u has {u_new.shape}")
    return d_old + dt * u_new
