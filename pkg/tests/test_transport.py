import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerfsi.fem import QUAD7, element_gradient, p1_gradients
from eulerfsi.mesh import PointOutsideError, box_mesh, channel_mesh, move_solid_vertices
from eulerfsi.transport import (BackwardMap, compose_field,
                                displacement_update_by_vertex_motion)


@pytest.fixture(scope="module")
def channel():
    return channel_mesh(2.0, 1.0, 0.1)


def test_zero_velocity_is_identity(channel):
    f = np.sin(channel.vertices[:, 0]) + channel.vertices[:, 1] ** 2
    bmap = BackwardMap(channel, np.zeros_like(channel.vertices), 0.3)
    np.testing.assert_array_equal(bmap.at_vertices(), channel.vertices)
    np.testing.assert_allclose(compose_field(f, channel, bmap, at="vertices"), f, atol=1e-13)


def test_uniform_translation_of_linear_field(channel):
    x, y = channel.vertices.T
    u = np.tile([1.0, 0.0], (channel.n_vertices, 1))
    bmap = BackwardMap(channel, u, 0.1)
    inner = (x > 0.15) & (x < 1.85)
    got = compose_field(x, channel, bmap, at="vertices", exit_tolerance=0.2)
    np.testing.assert_allclose(got[inner], x[inner] - 0.1, atol=1e-12)
    lam, _ = QUAD7
    xq = np.einsum("qk,mk->mq", lam, x[channel.triangles])
    comp_q = compose_field(x, channel, bmap, exit_tolerance=0.2)
    cent = channel.centroids()[:, 0]
    keep = (cent > 0.2) & (cent < 1.8)
    np.testing.assert_allclose(comp_q[keep], xq[keep] - 0.1, atol=1e-12)


def test_exit_beyond_tolerance_raises(channel):
    u = np.tile([1.0, 0.0], (channel.n_vertices, 1))
    with pytest.raises(PointOutsideError):
        compose_field(channel.vertices[:, 0], channel, BackwardMap(channel, u, 0.1), at="vertices")


def test_unknown_mode_rejected(channel):
    bmap = BackwardMap(channel, np.zeros_like(channel.vertices), 0.1)
    with pytest.raises(ValueError):
        compose_field(channel.vertices[:, 0], channel, bmap, at="edges")


def _rotation_error(h, dt=0.05):
    mesh = box_mesh(h)
    v = mesh.vertices
    # solid rotation about the centre, vanishing at the walls through a bump
    r = v - 0.5
    bump = (16 * v[:, 0] * (1 - v[:, 0]) * v[:, 1] * (1 - v[:, 1])) ** 2
    u = np.column_stack([-r[:, 1], r[:, 0]]) * bump[:, None]
    f = lambda p: np.sin(3 * p[..., 0]) * np.cos(2 * p[..., 1])
    bmap = BackwardMap(mesh, u, dt)
    got = compose_field(f(v), mesh, bmap)
    exact = f(bmap.at_quadrature())
    _, w = QUAD7
    area = np.abs(mesh.signed_areas)
    return np.sqrt(np.sum(area[:, None] * w[None] * (got - exact) ** 2))


def test_rotating_field_second_order():
    e1, e2 = _rotation_error(0.08), _rotation_error(0.04)
    assert 2.8 < e1 / e2 < 5.5


def test_constants_preserved(channel, rng):
    u = rng.normal(scale=0.2, size=channel.vertices.shape)
    bmap = BackwardMap(channel, u, 0.05)
    got = compose_field(np.full(channel.n_vertices, 2.5), channel, bmap, exit_tolerance=0.5)
    np.testing.assert_allclose(got, 2.5, rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_composition_respects_bounds(seed):
    mesh = box_mesh(0.2)
    rng = np.random.default_rng(seed)
    f = rng.uniform(-1, 3, mesh.n_vertices)
    u = rng.normal(scale=0.5, size=mesh.vertices.shape)
    got = compose_field(f, mesh, BackwardMap(mesh, u, 0.1), exit_tolerance=1.0)
    assert got.min() >= f.min() - 1e-12 and got.max() <= f.max() + 1e-12


def test_vector_fields_compose_componentwise(channel):
    x, y = channel.vertices.T
    u = np.column_stack([0.5 * np.ones_like(x), np.zeros_like(x)])
    F = np.column_stack([x, 2 * y])
    bmap = BackwardMap(channel, u, 0.1)
    got = compose_field(F, channel, bmap, at="vertices", exit_tolerance=0.1)
    inner = x > 0.1
    np.testing.assert_allclose(got[inner, 0], x[inner] - 0.05, atol=1e-12)
    np.testing.assert_allclose(got[inner, 1], 2 * y[inner], atol=1e-12)


def test_displacement_update_examples():
    d_old = np.array([[0.1, -0.2], [0.0, 0.3]])
    np.testing.assert_array_equal(
        displacement_update_by_vertex_motion(d_old, np.zeros_like(d_old), 0.005), d_old)
    got = displacement_update_by_vertex_motion(np.zeros((4, 2)), np.tile([1.0, 0.0], (4, 1)), 0.005)
    np.testing.assert_array_equal(got, np.tile([0.005, 0.0], (4, 1)))


def test_displacement_update_length_mismatch():
    with pytest.raises(ValueError):
        displacement_update_by_vertex_motion(np.zeros((3, 2)), np.zeros((4, 2)), 0.1)


def test_area_ratio_consistency(two_squares):
    mesh = two_squares
    v = mesh.vertices
    u = np.column_stack([0.3 * v[:, 1] ** 2, -0.2 * np.sin(3 * v[:, 0])])
    sv = mesh.solid_vertices
    u_s = np.zeros_like(v)
    u_s[sv] = u[sv]
    moved = move_solid_vertices(mesh, u_s, 0.1)
    d = np.zeros_like(v)
    d[sv] = displacement_update_by_vertex_motion(d[sv], u[sv], 0.1)
    s = mesh.solid_mask
    grads, area = p1_gradients(moved.vertices, moved.triangles[s])
    G = element_gradient(grads, moved.triangles[s], d)
    F = np.linalg.inv(np.eye(2) - G).transpose(0, 2, 1)
    ratio = moved.signed_areas[s] / mesh.signed_areas[s]
    np.testing.assert_allclose(np.linalg.det(F), ratio, rtol=1e-10)
