"""Constrained Delaunay regeneration of the fluid region."""
from __future__ import annotations

import numpy as np
import triangle

from .core import (FLUID, SIGMA, SOLID, Mesh, MeshError, check_valid, interface_edges)
from .flustruk import size_function
from .locate import PointLocator


class RemeshError(MeshError):
    pass


def _segments_intersect(p, segs):
    """Indices of pairs of non-adjacent segments that cross or touch."""
    a = p[segs[:, 0]]
    b = p[segs[:, 1]]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    bad = []
    order = np.argsort(lo[:, 0])
    lo_s, hi_s = lo[order], hi[order]
    for ii, i in enumerate(order):
        # sweep over x: candidates start before segment i ends
        j_end = np.searchsorted(lo_s[:, 0], hi_s[ii, 0], side="right")
        cand = order[ii + 1:j_end]
        if cand.size == 0:
            continue
        cand = cand[(lo[cand, 1] <= hi[i, 1]) & (hi[cand, 1] >= lo[i, 1])]
        share = np.any(segs[cand][:, :, None] == segs[i][None, None, :], axis=(1, 2))
        cand = cand[~share]
        if cand.size == 0:
            continue
        d1 = _orient(a[i], b[i], a[cand])
        d2 = _orient(a[i], b[i], b[cand])
        d3 = _orient(a[cand], b[cand], a[i])
        d4 = _orient(a[cand], b[cand], b[i])
        hit = (d1 * d2 <= 0) & (d3 * d4 <= 0)
        for j in cand[hit]:
            bad.append((int(i), int(j)))
    return bad


def _orient(a, b, c):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    c = np.atleast_2d(c)
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def _hole_seeds(mesh, edges, owner):
    """One point inside every hole of the fluid region.

    Solid components get the centroid of one of their triangles; boundary
    loops oriented clockwise (cavities such as the cylinder) get a point
    just across one of their edges.
    """
    seeds = []
    solid = np.nonzero(mesh.solid_mask)[0]
    if solid.size:
        nb = mesh.neighbors
        label = -np.ones(mesh.n_triangles, np.int64)
        for s in solid:
            if label[s] >= 0:
                continue
            label[s] = s
            stack = [s]
            while stack:
                t = stack.pop()
                for q in nb[t]:
                    if q >= 0 and label[q] < 0 and mesh.regions[q] == SOLID:
                        label[q] = s
                        stack.append(q)
            seeds.append(mesh.vertices[mesh.triangles[s]].mean(axis=0))
    succ = {int(a): int(b) for a, b in edges}
    seen = set()
    v = mesh.vertices
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        nxt = succ[start]
        while nxt != start and nxt in succ and len(loop) <= len(succ):
            loop.append(nxt)
            nxt = succ[nxt]
        seen.update(loop)
        pts = v[loop]
        q = np.roll(pts, -1, axis=0)
        area = 0.5 * np.sum(pts[:, 0] * q[:, 1] - pts[:, 1] * q[:, 0])
        if area < 0:
            # longest edge, pushed to its right (outside the domain)
            d = q - pts
            k = int(np.argmax(np.hypot(d[:, 0], d[:, 1])))
            mid = 0.5 * (pts[k] + q[k])
            n = np.array([d[k, 1], -d[k, 0]])
            seeds.append(mid + 1e-3 * n)
    return np.array(seeds).reshape(-1, 2)


def remesh_fluid(mesh, quality=25.0, sizing=None, passes=2):
    """Regenerate the fluid triangulation from the current boundary and interface.

    Solid triangles and every boundary or interface vertex are kept bitwise;
    no vertex is added on boundary or interface edges. New interior fluid
    vertices receive fresh ids.

    Parameters
    ----------
    quality : float
        Minimum angle in degrees requested from the generator.
    sizing : callable, optional
        ``h(points) -> edge length``. Defaults to ``mesh.sizing`` when set,
        otherwise to the local triangle size of ``mesh``.
    """
    if mesh.n_fixed != int(np.count_nonzero(mesh.fixed_mask[:mesh.n_fixed])):
        raise RemeshError("fixed vertices must lead the vertex array")
    solid_ok = check_valid(mesh, region=SOLID)
    if not solid_ok:
        raise RemeshError(f"solid sub-mesh invalid ({solid_ok.bad_triangles.size} triangles)")
    if not mesh.fluid_mask.any():
        return mesh
    n_fixed = mesh.n_fixed
    bnd_edges, owner = mesh.domain_boundary
    sigma = interface_edges(mesh)
    fluid_bnd = bnd_edges[mesh.regions[owner] == FLUID]
    all_segs = np.concatenate([bnd_edges, sigma]) if len(sigma) else bnd_edges
    seg_vertices = np.unique(all_segs)
    local = -np.ones(mesh.n_vertices, np.int64)
    local[seg_vertices] = np.arange(seg_vertices.size)
    # the fluid region is bounded by fluid-side boundary edges and the interface
    segs = local[np.concatenate([fluid_bnd, sigma]) if len(sigma) else fluid_bnd]
    pts = mesh.vertices[seg_vertices]
    crossings = _segments_intersect(pts, segs)
    if crossings:
        raise RemeshError(f"boundary self-intersection ({len(crossings)} crossing pair(s))")
    holes = _hole_seeds(mesh, bnd_edges, owner)
    size = _resolve_sizing(mesh, sizing)
    opts = f"pq{quality:g}YYQ"
    pslg = dict(vertices=pts, segments=segs)
    if len(holes):
        pslg["holes"] = holes
    fluid_area = float(mesh.signed_areas[mesh.fluid_mask].sum())
    h_ref = float(np.max(size(mesh.vertices[seg_vertices])))
    amax = max(np.sqrt(3) / 4 * h_ref**2, 1e-12 * fluid_area)
    t = triangle.triangulate(pslg, opts + f"a{amax:.10g}")
    for _ in range(passes):
        cen = t["vertices"][t["triangles"]].mean(axis=1)
        area = np.sqrt(3) / 4 * size(cen) ** 2
        refine = dict(vertices=t["vertices"], triangles=t["triangles"], segments=segs,
                      triangle_max_area=area)
        if len(holes):
            refine["holes"] = holes
        t = triangle.triangulate(refine, "r" + opts)
    out_v = t["vertices"]
    out_t = np.asarray(t["triangles"], dtype=np.int64)
    n_in = pts.shape[0]
    if not np.array_equal(out_v[:n_in], pts):
        raise RemeshError("mesh generator altered constrained vertices")
    n_new = len(out_v) - n_in
    remap = np.concatenate([seg_vertices, n_fixed + np.arange(n_new)])
    fluid_tri = remap[out_t]
    keep_v = mesh.vertices[:n_fixed]
    solid_tri = mesh.triangles[mesh.solid_mask]
    if solid_tri.size and solid_tri.max() >= n_fixed:
        raise RemeshError("solid triangle references a non-fixed vertex")
    next_id = int(mesh.meta.get("next_id", int(mesh.vertex_ids.max()) + 1))
    new_ids = np.arange(next_id, next_id + n_new)
    vertices = np.concatenate([keep_v, out_v[n_in:]])
    triangles = np.concatenate([solid_tri, fluid_tri])
    regions = np.concatenate([np.full(len(solid_tri), SOLID, np.int8),
                              np.full(len(fluid_tri), FLUID, np.int8)])
    meta = dict(mesh.meta)
    meta["next_id"] = next_id + n_new
    new = Mesh(vertices=vertices, triangles=triangles, regions=regions,
               boundary_edges=mesh.boundary_edges, edge_labels=mesh.edge_labels,
               vertex_ids=np.concatenate([mesh.vertex_ids[:n_fixed], new_ids]),
               sizing=mesh.sizing, meta=meta)
    verdict = check_valid(new)
    if not verdict:
        raise RemeshError(f"remeshed fluid contains {verdict.bad_triangles.size} degenerate triangle(s)")
    return new


def _resolve_sizing(mesh, sizing):
    if sizing is not None:
        return sizing
    spec = mesh.sizing
    if spec is not None and spec.feature_ids:
        return size_function(spec, mesh.vertices[mesh.indices_of(spec.feature_ids)])
    # local size of the current mesh: equilateral edge with the same area
    loc = PointLocator(mesh)
    h_tri = np.sqrt(4.0 / np.sqrt(3) * np.abs(mesh.signed_areas))

    def h(p):
        t, _ = loc.locate(np.asarray(p).reshape(-1, 2), tolerance=np.inf)
        return h_tri[t]
    return h


def relabel_sigma(mesh):
    """Boundary edge list with Sigma edges recomputed from the topology."""
    keep = mesh.edge_labels != SIGMA
    sig = interface_edges(mesh)
    edges = np.concatenate([mesh.boundary_edges[keep], sig])
    labels = np.concatenate([mesh.edge_labels[keep], np.full(len(sig), SIGMA, np.int8)])
    return edges, labels
