"""Region-labelled triangulations and the operations that keep them valid."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

FLUID, SOLID = 0, 1
REGION_NAMES = ("fluid", "solid")

GAMMA_IN, GAMMA_OUT, GAMMA_WALL, SIGMA = 0, 1, 2, 3
EDGE_LABELS = ("Gamma_in", "Gamma_out", "Gamma_wall", "Sigma")

AREA_FLOOR = 1e-14


class MeshError(RuntimeError):
    pass


class FlipOverError(MeshError):
    """Moving the solid vertices inverted or collapsed a solid triangle."""

    def __init__(self, message, triangles=()):
        super().__init__(message)
        self.triangles = np.asarray(triangles, dtype=int)


class TopologyError(MeshError):
    pass


@dataclass(frozen=True)
class SizingSpec:
    """Target edge length ``min(h_max, h_min + grade * dist)``.

    ``dist`` is the distance to the current position of the vertices listed
    in ``feature_ids`` (cylinder and flag outline for the benchmark).
    """

    h_min: float
    grade: float
    h_max: float
    feature_ids: tuple = ()


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with fluid/solid regions and labelled boundary.

    Vertices that lie on a solid triangle or on a boundary edge are *fixed*:
    remeshing never moves or renumbers them. Meshes produced by this package
    keep them as the leading ``n_fixed`` rows of ``vertices``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    boundary_edges: np.ndarray
    edge_labels: np.ndarray
    vertex_ids: np.ndarray
    sizing: SizingSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        conv = dict(vertices=float, triangles=np.int64, regions=np.int8,
                    boundary_edges=np.int64, edge_labels=np.int8, vertex_ids=np.int64)
        for name, dtype in conv.items():
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.boundary_edges.size == 0:
            object.__setattr__(self, "boundary_edges", np.zeros((0, 2), np.int64))
        if self.triangles.size == 0:
            object.__setattr__(self, "triangles", np.zeros((0, 3), np.int64))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def with_vertices(self, vertices):
        return replace(self, vertices=vertices)

    @cached_property
    def signed_areas(self):
        return signed_areas(self.vertices, self.triangles)

    @cached_property
    def solid_mask(self):
        return self.regions == SOLID

    @cached_property
    def fluid_mask(self):
        return self.regions == FLUID

    @cached_property
    def solid_vertices(self):
        """Sorted indices of vertices touching a solid triangle."""
        return np.unique(self.triangles[self.solid_mask])

    @cached_property
    def fluid_vertices(self):
        return np.unique(self.triangles[self.fluid_mask])

    @cached_property
    def fixed_mask(self):
        m = np.zeros(self.n_vertices, bool)
        m[self.solid_vertices] = True
        m[self.boundary_edges.ravel()] = True
        return m

    @cached_property
    def n_fixed(self):
        return int(self.fixed_mask.sum())

    @cached_property
    def index_of_id(self):
        return {int(v): i for i, v in enumerate(self.vertex_ids)}

    def indices_of(self, ids):
        lookup = self.index_of_id
        try:
            return np.array([lookup[int(i)] for i in np.atleast_1d(ids)], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"vertex id {exc.args[0]} not in mesh") from None

    def edges_with_label(self, label):
        return self.boundary_edges[self.edge_labels == label]

    @cached_property
    def neighbors(self):
        """``neighbors[t, k]`` is the triangle across the edge opposite local vertex k, or -1."""
        return _neighbors(self.triangles)

    @cached_property
    def edge_multiplicity(self):
        tri = self.triangles
        e = np.sort(np.concatenate([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    @cached_property
    def domain_boundary(self):
        """Edges with a single adjacent triangle, oriented with that triangle on the left.

        Returns ``(edges, owner)`` with ``owner`` the adjacent triangle index.
        """
        nb = self.neighbors
        t, k = np.nonzero(nb < 0)
        tri = self.triangles
        a = tri[t, (k + 1) % 3]
        b = tri[t, (k + 2) % 3]
        return np.column_stack([a, b]), t

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def mean_edge_length(self, region=None):
        tri = self.triangles if region is None else self.triangles[self.regions == region]
        if len(tri) == 0:
            return 0.0
        e = np.unique(np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]),
                              axis=1), axis=0)
        return float(np.mean(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @property
    def height(self):
        return float(np.ptp(self.vertices[:, 1])) if self.n_vertices else 0.0


def signed_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _neighbors(tri):
    m = len(tri)
    nb = -np.ones((m, 3), dtype=np.int64)
    if m == 0:
        return nb
    # edge k of triangle t is opposite local vertex k
    e = np.concatenate([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]])
    owner = np.tile(np.arange(m), 3)
    local = np.repeat(np.arange(3), m)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    i = np.nonzero(same)[0]
    a, b = order[i], order[i + 1]
    nb[owner[a], local[a]] = owner[b]
    nb[owner[b], local[b]] = owner[a]
    return nb


class Validity(NamedTuple):
    ok: bool
    bad_triangles: np.ndarray

    def __bool__(self):
        return self.ok


def check_valid(mesh, area_floor=AREA_FLOOR, region=None):
    """Report triangles whose signed area is not above ``area_floor``."""
    areas = mesh.signed_areas
    sel = np.ones(len(areas), bool) if region is None else mesh.regions == region
    bad = np.nonzero(sel & ~(areas > area_floor))[0]
    return Validity(bad.size == 0, bad)


def boundary_polygon_area(mesh):
    """Area enclosed by the boundary loops (shoelace over oriented boundary edges)."""
    edges, _ = mesh.domain_boundary
    p = mesh.vertices[edges[:, 0]]
    q = mesh.vertices[edges[:, 1]]
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]))


def move_solid_vertices(mesh, u, dt, area_floor=AREA_FLOOR):
    """Displace every vertex of the solid sub-mesh by ``dt * u``.

    ``u`` holds one velocity per mesh vertex. Only solid vertices (including
    those on the interface and the clamped root) move.

    Raises
    ------
    FlipOverError
        If a solid triangle ends up with area at or below ``area_floor``.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != mesh.vertices.shape:
        raise ValueError(f"velocity shape {u.shape} does not match vertices {mesh.vertices.shape}")
    idx = mesh.solid_vertices
    v = np.array(mesh.vertices)
    v[idx] = v[idx] + dt * u[idx]
    moved = mesh.with_vertices(v)
    verdict = check_valid(moved, area_floor, region=SOLID)
    if not verdict.ok:
        raise FlipOverError(f"{verdict.bad_triangles.size} solid triangle(s) flipped or collapsed",
                            verdict.bad_triangles)
    return moved


class Polyline(NamedTuple):
    vertex_ids: np.ndarray
    closed: bool


def interface_edges(mesh):
    """Edges shared by one fluid and one solid triangle, fluid triangle on the left."""
    if np.any(mesh.edge_multiplicity > 2):
        raise TopologyError("non-manifold mesh: an edge is shared by more than two triangles")
    nb = mesh.neighbors
    t, k = np.nonzero(nb >= 0)
    other = nb[t, k]
    sel = (mesh.regions[t] == FLUID) & (mesh.regions[other] == SOLID)
    t, k = t[sel], k[sel]
    tri = mesh.triangles
    return np.column_stack([tri[t, (k + 1) % 3], tri[t, (k + 2) % 3]])


def extract_interface(mesh):
    """Connected components of the fluid-solid interface as ordered polylines.

    Each polyline lists vertex ids with the fluid on the left. Closed loops
    do not repeat their first vertex. Components are sorted by first id.
    """
    edges = interface_edges(mesh)
    if len(edges) == 0:
        return []
    succ = {}
    pred = {}
    for a, b in edges.tolist():
        if a in succ or b in pred:
            raise TopologyError(f"interface branches at vertex index {a if a in succ else b}")
        succ[a] = b
        pred[b] = a
    ids = mesh.vertex_ids
    lines = []
    seen = set()
    starts = sorted((a for a in succ if a not in pred), key=lambda i: ids[i])
    for s in starts:
        chain = [s]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        seen.update(chain)
        lines.append(Polyline(ids[np.array(chain)], False))
    rest = sorted((a for a in succ if a not in seen), key=lambda i: ids[i])
    for s in rest:
        if s in seen:
            continue
        chain = [s]
        nxt = succ[s]
        while nxt != s:
            chain.append(nxt)
            nxt = succ[nxt]
        seen.update(chain)
        # start each loop at its smallest id so the result is canonical
        cid = ids[np.array(chain)]
        j = int(np.argmin(cid))
        lines.append(Polyline(np.roll(cid, -j), True))
    lines.sort(key=lambda p: int(p.vertex_ids[0]))
    return lines


def fixed_first(vertices, triangles, boundary_edges, regions):
    """Permutation putting solid and boundary vertices first, stable in each group."""
    n = len(vertices)
    fixed = np.zeros(n, bool)
    fixed[np.unique(triangles[regions == SOLID])] = True
    fixed[np.asarray(boundary_edges).ravel()] = True
    order = np.concatenate([np.nonzero(fixed)[0], np.nonzero(~fixed)[0]])
    inverse = np.empty(n, np.int64)
    inverse[order] = np.arange(n)
    return order, inverse
