"""Time loop: fixed point over velocity and geometry, state update, energy audit."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .constitutive import (SingularDeformationError, coefficients, kinematics_from_grad, psi)
from .fem import QUAD7, SolidData, element_gradient, p1_gradients
from .mesh import (FLUID, GAMMA_WALL, SOLID, FlipOverError, Mesh, MeshError, check_valid,
                   interpolate_to_new_mesh, move_solid_vertices, read_mesh_text, remesh_fluid,
                   write_mesh_text)
from .transport import BackwardMap, compose_field, displacement_update_by_vertex_motion

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ContactImminent(RuntimeError):
    pass


@dataclass(frozen=True)
class State:
    """Snapshot at ``t_n``.

    ``u``, ``p`` and ``d`` are per vertex of ``mesh`` (``d`` is zero off the
    solid, ``p`` off the fluid); ``rho`` is per element.
    ``reference_solid`` holds the t=0 positions of the leading (fixed)
    vertices and the solid triangles, in the same numbering as ``mesh``.
    """

    mesh: Mesh
    u: np.ndarray
    p: np.ndarray
    d: np.ndarray
    rho: np.ndarray
    reference_solid: Mesh
    time: float = 0.0
    step_index: int = 0
    dissipation: float = 0.0


@dataclass(frozen=True)
class FixedPointOptions:
    tolerance: float = 1e-6
    max_iter: int = 30
    remesh_every_iteration: bool = False
    quality: float = 25.0
    anderson_depth: int = 5


@dataclass
class FixedPointReport:
    iterations: int = 0
    increment: float = np.inf
    rebuilds: int = 0
    converged: bool = False
    increments: list = field(default_factory=list)


@dataclass(frozen=True)
class Forcing:
    """Inflow and body force for one step."""

    inflow: object = None          # fem.InflowProfile or None
    gravity: tuple | None = None
    hydrostatic_ref: tuple | None = None

    @property
    def is_free(self):
        no_g = self.gravity is None or not np.any(np.asarray(self.gravity) != 0)
        no_in = self.inflow is None or self.inflow.ubar * self.inflow.scale == 0
        return no_g and no_in


def solid_element_density(mesh, d, rho0):
    """``rho0 det(I - grad d)`` on solid elements, NaN elsewhere."""
    grads, _ = p1_gradients(mesh.vertices, mesh.triangles)
    s = mesh.solid_mask
    out = np.full(mesh.n_triangles, np.nan)
    G = element_gradient(grads[s], mesh.triangles[s], d)
    out[s] = rho0 * ((1 - G[:, 0, 0]) * (1 - G[:, 1, 1]) - G[:, 0, 1] * G[:, 1, 0])
    return out


def initial_state(mesh, mat, d0=None, u0=None, quality=25.0):
    """State at rest (or with a prescribed initial displacement of the solid).

    ``d0`` maps reference positions ``(n, 2)`` to displacements; the solid
    vertices are moved accordingly and the fluid is remeshed around them.
    """
    ref = Mesh(vertices=mesh.vertices[:mesh.n_fixed],
               triangles=mesh.triangles[mesh.solid_mask],
               regions=np.full(int(mesh.solid_mask.sum()), SOLID, np.int8),
               boundary_edges=np.zeros((0, 2), np.int64), edge_labels=np.zeros(0, np.int8),
               vertex_ids=mesh.vertex_ids[:mesh.n_fixed])
    d = np.zeros_like(mesh.vertices)
    if d0 is not None:
        sv = mesh.solid_vertices
        d[sv] = d0(mesh.vertices[sv])
        moved = move_solid_vertices(mesh, d, 1.0)
        mesh = remesh_fluid(moved, quality=quality)
        d = np.concatenate([d[:mesh.n_fixed], np.zeros((mesh.n_vertices - mesh.n_fixed, 2))])
    u = np.zeros_like(mesh.vertices) if u0 is None else np.asarray(u0(mesh.vertices), float)
    rho = np.full(mesh.n_triangles, mat.rho0_f)
    rho[mesh.solid_mask] = solid_element_density(mesh, d, mat.rho0_s)[mesh.solid_mask]
    return State(mesh, u, np.zeros(mesh.n_vertices), d, rho, ref)


def _pad(arr, n_fixed, n):
    out = np.zeros((n,) + arr.shape[1:])
    out[:n_fixed] = arr[:n_fixed]
    return out


def _solid_coefficients(mesh, d_eval, mat):
    grads, _ = p1_gradients(mesh.vertices, mesh.triangles)
    s = np.nonzero(mesh.solid_mask)[0]
    G = element_gradient(grads[s], mesh.triangles[s], d_eval)
    try:
        kin = kinematics_from_grad(G)
    except SingularDeformationError as exc:
        raise StepFailure(f"solid element {s[exc.indices[0]]} collapsed") from exc
    coef = coefficients(kin, mat)
    b = np.zeros(mesh.n_triangles)
    c = np.zeros(mesh.n_triangles)
    rho = np.zeros(mesh.n_triangles)
    b[s], c[s] = coef.b, coef.c
    rho[s] = mat.rho0_s / kin.J
    return b, c, rho


def _anderson(history, x, g, depth):
    """Next iterate of the fixed point ``x -> g(x)`` by Anderson mixing."""
    if depth <= 0:
        return g
    history.append((x.ravel().copy(), g.ravel().copy()))
    del history[:-(depth + 1)]
    if len(history) < 2:
        return g
    X = np.array([h[0] for h in history])
    Gs = np.array([h[1] for h in history])
    F = Gs - X
    dF = np.diff(F, axis=0)
    dG = np.diff(Gs, axis=0)
    coef, *_ = np.linalg.lstsq(dF.T, F[-1], rcond=None)
    return (Gs[-1] - coef @ dG).reshape(g.shape)


def advance(state, mat, dt, fp=FixedPointOptions(), energy_stable=True, forcing=Forcing(),
            compose_at="quadrature"):
    """One time step of the coupled scheme.

    Returns ``(new_state, report)``.

    Raises
    ------
    StepFailure
        On fixed-point non-convergence, flip-over, collapsed elements or a
        failed remesh or solve.
    """
    mesh_n = state.mesh
    nf = mesh_n.n_fixed
    report = FixedPointReport()
    u_k = state.u
    mesh_k = mesh_n
    u_new = p_new = None
    lam_q, _ = QUAD7
    history = []
    factors = {}
    rebuilds_seen = 0
    try:
        for it in range(fp.max_iter):
            report.iterations = it + 1
            # geometry from the current iterate: solid vertices follow u_k
            u_move = _pad(u_k, nf, mesh_n.n_vertices)
            moved = move_solid_vertices(mesh_n, u_move, dt)
            if fp.remesh_every_iteration or it == 0:
                mesh_new = remesh_fluid(moved, quality=fp.quality)
                report.rebuilds += 1
            else:
                mesh_new = mesh_k.with_vertices(np.concatenate(
                    [moved.vertices[:nf], mesh_k.vertices[nf:]]))
                if not check_valid(mesh_new):
                    mesh_new = remesh_fluid(moved, quality=fp.quality)
                    report.rebuilds += 1
            u_lag = interpolate_to_new_mesh(mesh_k, u_k, mesh_new)
            n = mesh_new.n_vertices
            d_tilde = _pad(state.d, nf, n)
            d_eval = d_tilde + dt * u_lag if energy_stable else d_tilde
            b, c, rho_s = _solid_coefficients(mesh_new, d_eval, mat)
            rho = np.where(mesh_new.solid_mask, rho_s, mat.rho0_f)
            # previous velocity composed with Y: vertex identity in the solid
            tri = mesh_new.triangles
            up = np.empty((mesh_new.n_triangles, len(lam_q), 2))
            s = mesh_new.solid_mask
            up[s] = np.einsum("qk,mkd->mqd", lam_q, state.u[tri[s]])
            f_el = np.nonzero(~s)[0]
            bmap = BackwardMap(mesh_new, u_lag, dt)
            # feet leave the domain by at most dt |u| through inflow boundaries
            exit_tol = 1.01 * dt * float(np.max(np.abs(u_lag), initial=0.0)) + 1e-6 * mesh_n.height
            if compose_at == "vertices":
                uv = compose_field(state.u, mesh_n, bmap, at="vertices", exit_tolerance=exit_tol)
                sv = mesh_new.solid_vertices
                uv[sv] = state.u[sv]
                up[f_el] = np.einsum("qk,mkd->mqd", lam_q, uv[tri[f_el]])
            else:
                up[f_el] = compose_field(state.u, mesh_n, bmap, elements=f_el,
                                         exit_tolerance=exit_tol)
            solid = SolidData(d_tilde=d_tilde, b=b, c=c, u_lag=u_lag if energy_stable else None)
            sys = fem.assemble_monolithic(mesh_new, mat, dt, rho, up, solid,
                                          energy_stable=energy_stable, gravity=forcing.gravity,
                                          hydrostatic_ref=forcing.hydrostatic_ref)
            sys = fem.apply_boundary_conditions(sys, mesh_new, inflow=forcing.inflow)
            if report.rebuilds != rebuilds_seen:
                factors.clear()
            u_new, p_new = fem.solve(sys, cache=factors)
            inc = float(np.max(np.abs(u_new - u_lag), initial=0.0))
            inc /= max(1.0, float(np.max(np.abs(u_new), initial=0.0)))
            report.increment = inc
            report.increments.append(inc)
            if report.rebuilds != rebuilds_seen:
                history.clear()
                rebuilds_seen = report.rebuilds
            u_k = _anderson(history, u_lag, u_new, fp.anderson_depth)
            mesh_k = mesh_new
            if inc <= fp.tolerance:
                report.converged = True
                break
    except (MeshError, fem.SolverError, fem.AssemblyError) as exc:
        raise StepFailure(f"{type(exc).__name__}: {exc}", report) from exc
    if not report.converged:
        raise StepFailure(f"fixed point not converged after {fp.max_iter} iterations "
                          f"(increment {report.increment:.3e})", report)
    # final geometry uses the converged velocity exactly
    try:
        moved = move_solid_vertices(mesh_n, _pad(u_new, nf, mesh_n.n_vertices), dt)
    except FlipOverError as exc:
        raise StepFailure(str(exc), report) from exc
    mesh_f = mesh_k.with_vertices(np.concatenate([moved.vertices[:nf], mesh_k.vertices[nf:]]))
    if not check_valid(mesh_f):
        try:
            mesh_g = remesh_fluid(moved, quality=fp.quality)
        except MeshError as exc:
            raise StepFailure(str(exc), report) from exc
        u_new = interpolate_to_new_mesh(mesh_f, u_new, mesh_g)
        p_new = interpolate_to_new_mesh(mesh_f, p_new, mesh_g)
        report.rebuilds += 1
        mesh_f = mesh_g
    n = mesh_f.n_vertices
    d_new = _pad(state.d, nf, n)
    sv = mesh_f.solid_vertices
    d_new[sv] = displacement_update_by_vertex_motion(d_new[sv], u_new[sv], dt)
    rho_new = np.full(mesh_f.n_triangles, mat.rho0_f)
    rho_new[mesh_f.solid_mask] = solid_element_density(mesh_f, d_new, mat.rho0_s)[mesh_f.solid_mask]
    diss = step_dissipation(mesh_f, u_new, p_new, mat, dt)
    new = State(mesh_f, u_new, p_new, d_new, rho_new, state.reference_solid,
                time=state.time + dt, step_index=state.step_index + 1,
                dissipation=state.dissipation + diss)
    return new, report


def advance_with_retry(state, mat, dt, max_halvings=3, **kw):
    """Advance by ``dt``, splitting into halves on failure up to ``max_halvings`` times.

    Returns ``(state, reports)``.
    """
    try:
        new, rep = advance(state, mat, dt, **kw)
        return new, [rep]
    except StepFailure as exc:
        if max_halvings <= 0:
            raise
        log.warning("step at t=%.6g failed (%s); retrying with dt=%.3g", state.time, exc, dt / 2)
    mid, r1 = advance_with_retry(state, mat, dt / 2, max_halvings - 1, **kw)
    end, r2 = advance_with_retry(mid, mat, dt / 2, max_halvings - 1, **kw)
    return end, r1 + r2


# -- energy ---------------------------------------------------------------

def kinetic_energy(mesh, u, rho):
    _, area = p1_gradients(mesh.vertices, mesh.triangles)
    ue = u[mesh.triangles]  # (M, 3, 2)
    Mloc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    q = np.einsum("mad,ab,mbd->m", ue, Mloc, ue)
    return 0.5 * float(np.sum(rho * area * q))


def elastic_energy(mesh, d, mat):
    """``rho0_s * int Psi`` over the reference solid, evaluated on the current mesh."""
    s = mesh.solid_mask
    if not s.any():
        return 0.0
    grads, area = p1_gradients(mesh.vertices, mesh.triangles)
    G = element_gradient(grads[s], mesh.triangles[s], d)
    kin = kinematics_from_grad(G)
    detA = 1.0 / kin.J
    return float(mat.rho0_s * np.sum(area[s] * detA * psi(kin, mat)))


def step_dissipation(mesh, u, p, mat, dt):
    """``dt int_f (mu_f/2)|Du|^2 + dt eps int_f |grad p|^2``."""
    f = mesh.fluid_mask
    if not f.any():
        return 0.0
    grads, area = p1_gradients(mesh.vertices[:, :], mesh.triangles[f])
    Gu = element_gradient(grads, mesh.triangles[f], u)
    Du = Gu + np.swapaxes(Gu, 1, 2)
    gp = np.einsum("mki,mk->mi", grads, p[mesh.triangles[f]])
    visc = 0.5 * mat.mu_f * np.sum(area * np.sum(Du * Du, axis=(1, 2)))
    stab = mat.epsilon_stab * np.sum(area * np.sum(gp * gp, axis=1))
    return float(dt * (visc + stab))


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    elastic: float
    dissipation_step: float
    dissipation_cumulative: float
    total: float
    verdict: str = "NOT-APPLICABLE"


def energy_of(state, mat, dissipation_step=0.0):
    k = kinetic_energy(state.mesh, state.u, state.rho)
    e = elastic_energy(state.mesh, state.d, mat)
    return EnergyReport(k, e, dissipation_step, state.dissipation, k + e + state.dissipation)


def energy_audit(state_prev, state_new, mat, dt, forcing=Forcing(), tol=1e-6):
    """Energy components of ``state_new`` and the non-increase verdict.

    The verdict is PASS when the total (kinetic + elastic + cumulative
    dissipation) did not grow by more than ``tol`` relative, FAIL otherwise,
    and NOT-APPLICABLE when inflow or body forces supply energy.
    """
    prev = energy_of(state_prev, mat)
    step = state_new.dissipation - state_prev.dissipation
    new = energy_of(state_new, mat, step)
    if not forcing.is_free:
        verdict = "NOT-APPLICABLE"
    else:
        verdict = "PASS" if new.total <= prev.total * (1 + tol) + 1e-300 else "FAIL"
    return replace(new, verdict=verdict)


# -- diagnostics -----------------------------------------------------------

def tip_tracker(state, tip_vertex_id):
    idx = state.mesh.indices_of([tip_vertex_id])[0]
    return tuple(float(x) for x in state.mesh.vertices[idx])


def min_solid_area_ratio(state):
    """Smallest current/reference area ratio over solid elements."""
    mesh = state.mesh
    s = mesh.solid_mask
    if not s.any():
        return 1.0
    ref = state.reference_solid
    cur = mesh.signed_areas[s]
    return float(np.min(cur / ref.signed_areas))


def wall_gap(mesh):
    """Distance from the free solid vertices to the outer no-slip walls."""
    sv = mesh.solid_vertices
    edges, owner = mesh.domain_boundary
    if sv.size == 0:
        return np.inf
    walls = mesh.edges_with_label(GAMMA_WALL)
    # keep wall edges on the outer loop (the one with the largest extent)
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    on_box = lambda p: (np.abs(p[:, 1] - lo[1]) < 1e-12) | (np.abs(p[:, 1] - hi[1]) < 1e-12)
    walls = walls[on_box(v[walls[:, 0]]) & on_box(v[walls[:, 1]])]
    if len(walls) == 0:
        return np.inf
    clamped = np.unique(mesh.edges_with_label(GAMMA_WALL).ravel())
    free = np.setdiff1d(sv, clamped)
    p = v[free]
    a = v[walls[:, 0]]
    b = v[walls[:, 1]]
    ab = b - a
    t = np.clip(np.einsum("pjd,jd->pj", p[:, None, :] - a[None], ab) / np.sum(ab * ab, axis=1), 0, 1)
    q = a[None] + t[..., None] * ab[None]
    return float(np.min(np.linalg.norm(p[:, None, :] - q, axis=2)))


# -- checkpoint ------------------------------------------------------------

def save_state(state, directory):
    os.makedirs(directory, exist_ok=True)
    write_mesh_text(state.mesh, os.path.join(directory, "mesh.txt"))
    write_mesh_text(state.reference_solid, os.path.join(directory, "reference.txt"))
    fmt = "%.17g"
    np.savetxt(os.path.join(directory, "u.txt"), state.u, fmt=fmt)
    np.savetxt(os.path.join(directory, "p.txt"), state.p, fmt=fmt)
    np.savetxt(os.path.join(directory, "d.txt"), state.d, fmt=fmt)
    np.savetxt(os.path.join(directory, "rho.txt"), state.rho, fmt=fmt)
    with open(os.path.join(directory, "scalars.txt"), "w") as fh:
        fh.write(f"time {state.time!r}\nstep_index {state.step_index}\n"
                 f"dissipation {state.dissipation!r}\n")


def load_state(directory):
    mesh = read_mesh_text(os.path.join(directory, "mesh.txt"))
    ref = read_mesh_text(os.path.join(directory, "reference.txt"))
    load = lambda name: np.loadtxt(os.path.join(directory, name), ndmin=1)
    u = load("u.txt").reshape(-1, 2)
    d = load("d.txt").reshape(-1, 2)
    sc = {}
    with open(os.path.join(directory, "scalars.txt")) as fh:
        for line in fh:
            k, v = line.split()
            sc[k] = v
    return State(mesh, u, load("p.txt"), d, load("rho.txt"), ref, time=float(sc["time"]),
                 step_index=int(sc["step_index"]), dissipation=float(sc["dissipation"]))
