"""Simple polygonal domains for verification runs and tests."""
from __future__ import annotations

import numpy as np
import triangle

from .core import FLUID, GAMMA_IN, GAMMA_OUT, GAMMA_WALL, SOLID, Mesh, fixed_first


def _polyline(points, h):
    pts = [np.asarray(points[0], float)]
    for a, b in zip(points[:-1], points[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / h - 1e-9)))
        for k in range(1, n + 1):
            pts.append(a + (b - a) * k / n)
    return pts


def polygon_mesh(outer, outer_labels, h, solids=(), quality=25.0):
    """Triangulate a polygon (CCW corner list) with optional solid polygons inside.

    ``outer_labels[k]`` labels the side from corner k to corner k+1. Sides
    are split uniformly with spacing about ``h``; interior size is the
    equilateral area of edge ``h``.
    """
    verts, segs, labels = [], [], []
    index = {}

    def vid(p):
        key = (round(float(p[0]), 12), round(float(p[1]), 12))
        if key not in index:
            index[key] = len(verts)
            verts.append((float(p[0]), float(p[1])))
        return index[key]

    corners = list(outer) + [outer[0]]
    for k, lab in enumerate(outer_labels):
        ids = [vid(p) for p in _polyline(corners[k:k + 2], h)]
        segs += list(zip(ids[:-1], ids[1:]))
        labels += [lab] * (len(ids) - 1)
    regions = [[*np.mean(outer, axis=0), FLUID, 0.0]]
    seeds = []
    sigma_pairs = []
    for poly in solids:
        c = list(poly) + [poly[0]]
        ids = [vid(p) for p in _polyline(c, h)]
        sigma_pairs += list(zip(ids[:-1], ids[1:]))
        seeds.append([*np.mean(poly, axis=0), SOLID, 0.0])
    allsegs = np.array(segs + sigma_pairs)
    if seeds:
        # fluid seed just inside the outer boundary, away from solids
        regions = [[*(np.asarray(outer[0]) * 0.98 + np.mean(outer, axis=0) * 0.02), FLUID, 0.0]] + seeds
    amax = np.sqrt(3) / 4 * h * h
    t = triangle.triangulate(dict(vertices=np.array(verts), segments=allsegs, regions=regions),
                             f"pq{quality:g}AYYQa{amax:.10g}")
    v = t["vertices"]
    tri = np.asarray(t["triangles"], np.int64)
    reg = np.rint(t["triangle_attributes"][:, 0]).astype(np.int8)
    edges = np.array(segs, np.int64)
    lab = np.array(labels, np.int8)
    mesh = Mesh(v, tri, reg, edges, lab, np.arange(len(v)))
    from .remesh import relabel_sigma
    edges, lab = relabel_sigma(mesh)
    order, inv = fixed_first(v, tri, edges, reg)
    return Mesh(v[order], inv[tri], reg, inv[edges], lab, np.arange(len(v)))


def channel_mesh(L, H, h, quality=25.0):
    """Fluid-only channel with inflow on the left, outflow on the right."""
    return polygon_mesh([(0, 0), (L, 0), (L, H), (0, H)],
                        [GAMMA_WALL, GAMMA_OUT, GAMMA_WALL, GAMMA_IN], h, quality=quality)


def box_mesh(h, size=1.0, solids=(), label=GAMMA_WALL):
    """Square box with a single boundary label, optionally with solid polygons."""
    s = size
    return polygon_mesh([(0, 0), (s, 0), (s, s), (0, s)], [label] * 4, h, solids=solids)
