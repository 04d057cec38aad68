"""Stabilized P1-P1 discretization of the monolithic fluid-structure system.

Unknowns are ordered ``[u_x0, u_y0, u_x1, u_y1, ..., p_0, p_1, ...]``: two
velocity components per mesh vertex followed by one pressure per vertex of
the fluid region. The pressure equation carries the Brezzi-Pitkaranta term,
so the saddle-point matrix reads ``[[A, B^T], [B, -eps K]]`` and the discrete
continuity equation is ``-eps Lap p + div u = 0``.

Gradients follow ``(grad v)[i, j] = d v_j / d x_i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FLUID, GAMMA_IN, GAMMA_OUT, GAMMA_WALL, SIGMA, SOLID

log = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


class BoundaryConditionError(ValueError):
    pass


# Quadrature on the reference triangle: barycentric points and weights summing to 1.
_A1, _A2 = 0.470142064105115, 0.101286507323456
_W1, _W2 = 0.132394152788506, 0.125939180544827
QUAD7 = (np.array([[1 / 3, 1 / 3, 1 / 3],
                   [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
                   [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2]]),
         np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2]))
QUAD3 = (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
         np.full(3, 1 / 3))


def quadrature_points(mesh, rule=QUAD7):
    """Physical coordinates of the quadrature points, shape (M, nq, 2)."""
    lam, _ = rule
    return np.einsum("qk,mkd->mqd", lam, mesh.vertices[mesh.triangles])


def p1_gradients(vertices, triangles):
    """Constant basis gradients (M, 3, 2) and positive areas (M,)."""
    p = vertices[triangles]
    x, y = p[..., 0], p[..., 1]
    # gradient of barycentric k is the rotated opposite edge over 2*area
    dx = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    dy = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.stack([dy, dx], axis=2) / area2[:, None, None]
    return grads, 0.5 * area2


def element_gradient(grads, triangles, nodal):
    """Element-constant gradient of a P1 vector field, ``G[m, i, j] = d v_j / d x_i``."""
    return np.einsum("mki,mkj->mij", grads, nodal[triangles])


@dataclass(frozen=True)
class DofMap:
    n_vertices: int
    pressure_vertices: np.ndarray  # mesh vertex index of each pressure dof
    pressure_index: np.ndarray     # per vertex: pressure dof offset or -1

    @classmethod
    def for_mesh(cls, mesh):
        pv = mesh.fluid_vertices
        pidx = -np.ones(mesh.n_vertices, np.int64)
        pidx[pv] = np.arange(pv.size)
        return cls(mesh.n_vertices, pv, pidx)

    @property
    def n_u(self):
        return 2 * self.n_vertices

    @property
    def n_p(self):
        return int(self.pressure_vertices.size)

    @property
    def size(self):
        return self.n_u + self.n_p

    def split(self, x):
        u = np.asarray(x[:self.n_u]).reshape(-1, 2)
        p = np.zeros(self.n_vertices)
        p[self.pressure_vertices] = x[self.n_u:]
        return u, p


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    symmetric: bool = False
    dirichlet: dict = field(default_factory=dict)

    def dump(self, path):
        scipy.io.mmwrite(path, self.matrix)


@dataclass(frozen=True)
class InflowProfile:
    """Parabolic inflow ``ubar * 6 / H^2 * (y - y0)(y0 + H - y)``, flux ``ubar * H``."""

    ubar: float
    H: float
    y0: float = 0.0
    scale: float = 1.0

    def __call__(self, y):
        s = np.asarray(y, dtype=float) - self.y0
        return self.scale * self.ubar * 6.0 / self.H**2 * s * (self.H - s)


@dataclass
class SolidData:
    """Per-element solid data for one assembly.

    ``d_tilde`` is nodal (N, 2); ``b``, ``c`` are per element (zero on the
    fluid); ``u_lag`` is the velocity iterate used to linearize the
    ``dt^2`` term (None disables it).
    """

    d_tilde: np.ndarray
    b: np.ndarray
    c: np.ndarray
    u_lag: np.ndarray | None = None


def _local_blocks(grads):
    """Gradients of the six vector basis functions: (M, 6, 2, 2), dof order (a, alpha)."""
    m = grads.shape[0]
    Gphi = np.zeros((m, 6, 2, 2))
    for a in range(3):
        for al in range(2):
            Gphi[:, 2 * a + al, :, al] = grads[:, a, :]
    return Gphi


def _T(M):
    return np.swapaxes(M, -1, -2)


def assemble_monolithic(mesh, mat, dt, rho, u_prev_composed, solid=None, *,
                        energy_stable=True, gravity=None, hydrostatic_ref=None,
                        rule=QUAD7):
    """Assemble matrix and right-hand side of one linearized step.

    Parameters
    ----------
    rho : (M,) per-element density used in the transport and solid terms.
    u_prev_composed : (N, 2) nodal or (M, nq, 2) per-quadrature-point values
        of the previous velocity composed with the backward map.
    solid : SolidData, optional
        Displacement and coefficients on solid elements.
    energy_stable : bool
        Adds the linearized ``-dt^2 rho b (grad u_lag grad^T u) : D v`` term
        when ``solid.u_lag`` is given.
    gravity : 2-vector, optional
        Body acceleration. The fluid's hydrostatic part is absorbed in the
        pressure: the solid receives ``rho g`` and the interface the traction
        of the hydrostatic pressure ``rho_f g . (x - hydrostatic_ref)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tri = mesh.triangles
    m = len(tri)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (m,):
        raise AssemblyError(f"rho must have one value per element ({m}), got {rho.shape}")
    bad = np.nonzero(~np.isfinite(rho) | (rho <= 0))[0]
    if bad.size:
        raise AssemblyError(f"element {bad[0]} has invalid density {rho[bad[0]]!r}")
    grads, area = p1_gradients(mesh.vertices, tri)
    dm = DofMap.for_mesh(mesh)
    fl = mesh.regions == FLUID
    so = ~fl
    Gphi = _local_blocks(grads)
    Dphi = Gphi + _T(Gphi)
    div = np.einsum("maii->ma", Gphi)
    vdofs = (2 * tri[:, :, None] + np.arange(2)).reshape(m, 6)

    lam_q, w_q = rule
    # mass: exact P1 x P1
    Mloc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    K = np.zeros((m, 6, 6))
    for al in range(2):
        K[:, al::2, al::2] += (rho * area / dt)[:, None, None] * Mloc
    rhs = np.zeros(dm.size)

    # transport right-hand side
    up = np.asarray(u_prev_composed, dtype=float)
    if up.ndim == 2:
        vals = up[tri]  # (M, 3, 2)
        loc = np.einsum("ab,mbd->mad", Mloc, vals) * (rho * area / dt)[:, None, None]
    else:
        if up.shape[:2] != (m, len(w_q)):
            raise AssemblyError("composed field does not match quadrature layout")
        loc = np.einsum("q,qa,mqd->mad", w_q, lam_q, up) * (rho * area / dt)[:, None, None]
    np.add.at(rhs, vdofs, loc.reshape(m, 6))

    # fluid viscosity (mu_f/2) Du:Dv
    if mat.mu_f > 0 and fl.any():
        K[fl] += 0.5 * mat.mu_f * area[fl, None, None] * np.einsum("maij,mbij->mab", Dphi[fl], Dphi[fl])

    if solid is not None and so.any():
        s = np.nonzero(so)[0]
        Gd = element_gradient(grads[s], tri[s], np.asarray(solid.d_tilde, dtype=float))
        b = np.asarray(solid.b, dtype=float)[s]
        c = np.asarray(solid.c, dtype=float)[s]
        for name, arr in (("b", b), ("c", c)):
            nf = np.nonzero(~np.isfinite(arr))[0]
            if nf.size:
                raise AssemblyError(f"element {s[nf[0]]} has non-finite coefficient {name}")
        Gu = Gphi[s]
        X = Gu + _T(Gu) - Gd[:, None] @ _T(Gu) - Gu @ _T(Gd)[:, None]
        if energy_stable and solid.u_lag is not None:
            Gw = element_gradient(grads[s], tri[s], np.asarray(solid.u_lag, dtype=float))
            X = X - dt * (Gw[:, None] @ _T(Gu))
        coef = rho[s] * dt * area[s]
        K[s] += (coef * b)[:, None, None] * np.einsum("mbij,maij->mab", X, Dphi[s])
        K[s] += (coef * mat.lambda_s)[:, None, None] * div[s][:, :, None] * div[s][:, None, :]
        # explicit elastic load
        trGd = Gd[:, 0, 0] + Gd[:, 1, 1]
        Cd = Gd + _T(Gd) - Gd @ _T(Gd)
        load = (b[:, None] * np.einsum("mij,maij->ma", Cd, Dphi[s])
                + (c + mat.lambda_s * trGd)[:, None] * div[s])
        np.add.at(rhs, vdofs[s], -(rho[s] * area[s])[:, None] * load)

    if gravity is not None and np.any(np.asarray(gravity) != 0) and so.any():
        g = np.asarray(gravity, dtype=float)
        s = np.nonzero(so)[0]
        f = (rho[s] * area[s] / 3.0)[:, None, None] * g[None, None, :]
        np.add.at(rhs, vdofs[s], np.broadcast_to(f, (len(s), 3, 2)).reshape(len(s), 6))
        _hydrostatic_traction(mesh, mat, g, hydrostatic_ref, rhs)

    rows = np.repeat(vdofs, 6, axis=1).ravel()
    cols = np.tile(vdofs, (1, 6)).ravel()
    data = K.ravel()

    # pressure coupling on fluid elements
    f_idx = np.nonzero(fl)[0]
    if f_idx.size:
        pd = dm.n_u + dm.pressure_index[tri[f_idx]]  # (Mf, 3)
        # B[a, (b, beta)] = -area/3 * d_beta phi_b
        Bloc = -(area[f_idx] / 3.0)[:, None, None] * np.broadcast_to(
            div[f_idx][:, None, :], (f_idx.size, 3, 6))
        pr = np.repeat(pd, 6, axis=1).ravel()
        vc = np.tile(vdofs[f_idx], (1, 3)).ravel()
        Sloc = -mat.epsilon_stab * area[f_idx, None, None] * np.einsum(
            "mki,mli->mkl", grads[f_idx], grads[f_idx])
        rows = np.concatenate([rows, pr, vc, np.repeat(pd, 3, axis=1).ravel()])
        cols = np.concatenate([cols, vc, pr, np.tile(pd, (1, 3)).ravel()])
        data = np.concatenate([data, Bloc.ravel(), Bloc.ravel(), Sloc.ravel()])
    A = sp.csr_matrix((data, (rows, cols)), shape=(dm.size, dm.size))
    A.sum_duplicates()
    lagged = solid is not None and so.any()
    return AssembledSystem(A, rhs, dm, symmetric=not lagged)


def _hydrostatic_traction(mesh, mat, g, ref, rhs):
    """Add int_Sigma p_h n_f . v with p_h = rho_f g . (x - ref) linear along each edge.

    ``n_f`` is the fluid's outward normal (pointing into the solid), so the
    solid feels the buoyancy of the fluid it displaces. The dropped outflow
    term amounts to a total pressure equal to ``p_h`` on ``Gamma_out``.
    """
    from .mesh import interface_edges
    e = interface_edges(mesh)
    if len(e) == 0:
        return
    ref = np.zeros(2) if ref is None else np.asarray(ref, dtype=float)
    pa = mesh.vertices[e[:, 0]]
    pb = mesh.vertices[e[:, 1]]
    t = pb - pa
    # fluid lies to the left of (a -> b); its outward normal points right
    n_len = np.column_stack([t[:, 1], -t[:, 0]])
    ph_a = mat.rho0_f * (pa - ref) @ g
    ph_b = mat.rho0_f * (pb - ref) @ g
    # exact integral of linear p times linear hat over the edge
    fa = ((2 * ph_a + ph_b) / 6.0)[:, None] * n_len
    fb = ((ph_a + 2 * ph_b) / 6.0)[:, None] * n_len
    for col in range(2):
        np.add.at(rhs, 2 * e[:, 0] + col, fa[:, col])
        np.add.at(rhs, 2 * e[:, 1] + col, fb[:, col])


def boundary_vertices(mesh, label):
    return np.unique(mesh.edges_with_label(label).ravel())


def dirichlet_values(mesh, inflow=None, clamp_labels=(GAMMA_WALL,), extra=None):
    """Prescribed velocity dofs ``{dof: value}``.

    Walls (and the flag root, which lies on the cylinder) are no-slip; the
    inflow profile is imposed on ``Gamma_in`` vertices that are not on a wall.
    ``extra`` maps vertex index to a prescribed 2-vector and takes precedence.
    """
    vals = {}
    if inflow is not None:
        inlet = boundary_vertices(mesh, GAMMA_IN)
        if inlet.size == 0:
            raise BoundaryConditionError("inflow profile given but the mesh has no Gamma_in edges")
        ux = inflow(mesh.vertices[inlet, 1])
        for v, x in zip(inlet.tolist(), ux.tolist()):
            vals[2 * v] = x
            vals[2 * v + 1] = 0.0
    for lab in clamp_labels:
        for v in boundary_vertices(mesh, lab).tolist():
            vals[2 * v] = 0.0
            vals[2 * v + 1] = 0.0
    if extra:
        for v, (x, y) in extra.items():
            vals[2 * int(v)] = float(x)
            vals[2 * int(v) + 1] = float(y)
    return vals


def apply_boundary_conditions(sys, mesh, inflow=None, extra=None, pin_pressure=None):
    """Eliminate Dirichlet velocity dofs symmetrically.

    Known values move to the right-hand side; their rows and columns are
    replaced by identity. When the mesh has no outflow boundary the pressure
    is only defined up to a constant, and its first dof is pinned to zero
    (``pin_pressure`` overrides the automatic choice).
    """
    vals = dirichlet_values(mesh, inflow=inflow, extra=extra)
    dm = sys.dofmap
    if pin_pressure is None:
        pin_pressure = len(mesh.edges_with_label(GAMMA_OUT)) == 0 and dm.n_p > 0
    if pin_pressure:
        vals[dm.n_u] = 0.0
    dofs = np.array(sorted(vals), dtype=np.int64)
    g = np.zeros(dm.size)
    g[dofs] = [vals[d] for d in dofs]
    A = sys.matrix
    rhs = sys.rhs - A @ g
    keep = np.ones(dm.size)
    keep[dofs] = 0.0
    Dk = sp.diags(keep)
    A2 = (Dk @ A @ Dk + sp.diags(1.0 - keep)).tocsr()
    rhs[dofs] = g[dofs]
    return AssembledSystem(A2, rhs, dm, sys.symmetric, dict(zip(dofs.tolist(), g[dofs].tolist())))


def solve(sys, rtol=1e-10, cache=None):
    """Direct sparse solve; returns ``(u (N, 2), p (N,))``.

    When ``cache`` (a dict) holds the factors of an earlier matrix with the
    same sparsity, they precondition GMRES instead of refactoring; the new
    factors are stored there otherwise. Callers must clear the cache when
    the mesh changes.

    Raises
    ------
    SolverError
        On a singular factorization or a residual above ``rtol``.
    """
    A = sys.matrix.tocsc()
    b = sys.rhs
    bn = np.linalg.norm(b)
    scale = bn if bn > 0 else 1.0
    lu = None if cache is None else cache.get("lu")
    if lu is not None and lu.shape == A.shape:
        M = spla.LinearOperator(A.shape, lu.solve)
        x, info = spla.gmres(A, b, x0=cache.get("x"), M=M, rtol=0.1 * rtol, atol=0.0,
                             restart=40, maxiter=2)
        if info == 0 and np.linalg.norm(b - A @ x) <= rtol * scale:
            cache["x"] = x
            return sys.dofmap.split(x)
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed ({exc}); check for an unconstrained pressure mode") from exc
    x = lu.solve(b)
    r = b - A @ x
    for _ in range(2):
        if np.linalg.norm(r) <= rtol * scale:
            break
        x = x + lu.solve(r)
        r = b - A @ x
    res = np.linalg.norm(r) / scale
    if not np.isfinite(res) or (bn > 0 and res > rtol):
        raise SolverError(f"linear solve residual {res:.3e} exceeds {rtol:g}")
    if cache is not None:
        cache["lu"], cache["x"] = lu, x
    return sys.dofmap.split(x)


def stabilization_epsilon(mesh, mu_f, eps0=1e-2):
    """``eps0 * hbar^2 / mu_f`` with ``hbar`` the mean fluid edge length."""
    hbar = mesh.mean_edge_length(FLUID)
    return eps0 * hbar**2 / max(mu_f, 1e-300)
