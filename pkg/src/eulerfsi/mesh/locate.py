"""Point location by walking, and P1 interpolation between meshes."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import MeshError

PROJECTION_TOL = 1e-6  # relative to the mesh height


class PointOutsideError(MeshError):
    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


def barycentric(vertices, triangles, t, pts):
    """Barycentric coordinates of ``pts[i]`` in triangle ``t[i]``."""
    p = vertices[triangles[t]]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    v0 = b - a
    v1 = c - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    w = pts - a
    l1 = (w[:, 0] * v1[:, 1] - w[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * w[:, 1] - v0[:, 1] * w[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


class PointLocator:
    """Locate points in a fixed mesh.

    Each query walks from a starting triangle (the caller's hint, else the
    triangle with the nearest centroid) towards the point, crossing the
    edge with the most negative barycentric coordinate. Walks that hit the
    domain boundary or exceed ``max_steps`` fall back to a scan over the
    triangles nearest the point, then over all triangles. Points outside the
    mesh are projected onto the nearest boundary edge when they lie within
    ``tolerance``.
    """

    def __init__(self, mesh, tolerance=None, max_steps=64):
        self.mesh = mesh
        self.tolerance = PROJECTION_TOL * mesh.height if tolerance is None else tolerance
        self.max_steps = max_steps
        self._tree = cKDTree(mesh.centroids())

    def locate(self, pts, hint=None, tolerance=None):
        """Return ``(tri, bary)``; projected points get coordinates on the boundary edge."""
        mesh = self.mesh
        tol = self.tolerance if tolerance is None else tolerance
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        n = len(pts)
        if hint is None:
            _, t = self._tree.query(pts)
            t = np.asarray(t, dtype=np.int64)
        else:
            t = np.array(hint, dtype=np.int64)
        bary = np.zeros((n, 3))
        done = np.zeros(n, bool)
        active = np.arange(n)
        nb = mesh.neighbors
        eps = -1e-12
        for _ in range(self.max_steps):
            if active.size == 0:
                break
            lam = barycentric(mesh.vertices, mesh.triangles, t[active], pts[active])
            k = np.argmin(lam, axis=1)
            inside = lam[np.arange(active.size), k] >= eps
            bary[active[inside]] = lam[inside]
            done[active[inside]] = True
            move = active[~inside]
            nxt = nb[t[move], k[~inside]]
            hit_boundary = nxt < 0
            t[move[~hit_boundary]] = nxt[~hit_boundary]
            active = move[~hit_boundary]
        rest = np.nonzero(~done)[0]
        if rest.size:
            t_r, b_r = self._scan(pts[rest], tol)
            t[rest] = t_r
            bary[rest] = b_r
        return t, bary

    def _scan(self, pts, tol):
        mesh = self.mesh
        n = len(pts)
        k = min(mesh.n_triangles, 24)
        _, cand = self._tree.query(pts, k=k)
        cand = np.asarray(cand).reshape(n, k)
        lam = barycentric(mesh.vertices, mesh.triangles, cand.ravel(),
                          np.repeat(pts, k, axis=0)).reshape(n, k, 3)
        hit = lam.min(axis=2) >= -1e-12
        found = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        t_out = cand[np.arange(n), first]
        b_out = lam[np.arange(n), first]
        miss = np.nonzero(~found)[0]
        if miss.size:
            j, q, dist, outside = self._nearest_boundary(pts[miss])
            for i, jj, qq, dd, out in zip(miss, j, q, dist, outside):
                if not out:
                    # possibly inside but away from the nearest centroids
                    lam_all = barycentric(mesh.vertices, mesh.triangles, np.arange(mesh.n_triangles),
                                          np.broadcast_to(pts[i], (mesh.n_triangles, 2)))
                    ok = np.nonzero(lam_all.min(axis=1) >= -1e-12)[0]
                    if ok.size:
                        t_out[i], b_out[i] = ok[0], lam_all[ok[0]]
                        continue
                t_out[i], b_out[i] = self._snap(pts[i], jj, qq, dd, tol)
        return t_out, b_out

    def _nearest_boundary(self, pts, chunk=2048):
        """Nearest boundary edge, closest point, distance and an outside flag per point."""
        edges, _ = self.mesh.domain_boundary
        a = self.mesh.vertices[edges[:, 0]]
        ab = self.mesh.vertices[edges[:, 1]] - a
        ab2 = np.einsum("ij,ij->i", ab, ab)
        j_all, q_all, d_all, out_all = [], [], [], []
        for lo in range(0, len(pts), chunk):
            p = pts[lo:lo + chunk]
            w = p[:, None, :] - a[None]
            s = np.clip(np.einsum("pij,ij->pi", w, ab) / ab2, 0.0, 1.0)
            q = a[None] + s[..., None] * ab[None]
            dist = np.linalg.norm(q - p[:, None, :], axis=2)
            j = np.argmin(dist, axis=1)
            r = np.arange(len(p))
            cross = ab[j, 0] * w[r, j, 1] - ab[j, 1] * w[r, j, 0]
            j_all.append(j)
            q_all.append(q[r, j])
            d_all.append(dist[r, j])
            out_all.append(cross < 0)      # the domain lies to the left of each edge
        return (np.concatenate(j_all), np.concatenate(q_all), np.concatenate(d_all),
                np.concatenate(out_all))

    def _snap(self, p, j, q, dist, tol):
        mesh = self.mesh
        if dist > tol:
            raise PointOutsideError(
                f"point ({p[0]:.6g}, {p[1]:.6g}) lies {dist:.3g} outside the mesh (tolerance {tol:.3g})",
                p)
        _, owner = mesh.domain_boundary
        t = owner[j]
        lam = barycentric(mesh.vertices, mesh.triangles, np.array([t]), q[None])[0]
        lam = np.clip(lam, 0.0, None)
        return t, lam / lam.sum()

    def evaluate(self, values, pts, hint=None, tolerance=None):
        """P1 interpolation of per-vertex ``values`` (shape (N,) or (N, k)) at ``pts``."""
        t, lam = self.locate(pts, hint=hint, tolerance=tolerance)
        vals = np.asarray(values)[self.mesh.triangles[t]]
        if vals.ndim == 2:
            return np.einsum("ij,ij->i", lam, vals)
        return np.einsum("ij,ijk->ik", lam, vals)


def interpolate_to_new_mesh(old, fields, new, tolerance=None):
    """Transfer per-vertex P1 fields from ``old`` to ``new``.

    Vertices present in both meshes (same id) copy their values exactly;
    the others are interpolated at their position in ``old``.

    Parameters
    ----------
    fields : array or dict of arrays
        Per-vertex values on ``old``, shape (N_old,) or (N_old, k).
    """
    single = not isinstance(fields, dict)
    fdict = {"_": fields} if single else fields
    lookup = old.index_of_id
    src = np.array([lookup.get(int(i), -1) for i in new.vertex_ids], dtype=np.int64)
    shared = src >= 0
    out = {}
    need = np.nonzero(~shared)[0]
    if need.size:
        loc = PointLocator(old, tolerance=tolerance)
        t, lam = loc.locate(new.vertices[need])
        tri = old.triangles[t]
    for name, f in fdict.items():
        f = np.asarray(f)
        res = np.empty((new.n_vertices,) + f.shape[1:], dtype=f.dtype)
        res[shared] = f[src[shared]]
        if need.size:
            vals = f[tri]
            if f.ndim == 1:
                res[need] = np.einsum("ij,ij->i", lam, vals)
            else:
                res[need] = np.einsum("ij,ijk->ik", lam, vals)
        out[name] = res
    return out["_"] if single else out
