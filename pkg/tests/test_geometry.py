import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partforge import geometry, rng


KIND = st.sampled_from(geometry.KINDS)
SIZE = st.tuples(*[st.floats(0.05, 0.5) for _ in range(3)]).map(np.array)


def test_box_mesh_is_closed_cube():
    v, f = geometry.tessellate("box", np.array([0.5, 0.5, 0.5]))
    assert len(f) == 12
    assert np.allclose(np.abs(v).max(axis=0), 0.5)
    # closed surface: every edge shared by exactly two triangles
    edges = {}
    for tri in f:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges[frozenset((a, b))] = edges.get(frozenset((a, b)), 0) + 1
    assert set(edges.values()) == {2}


@settings(max_examples=20, deadline=None)
@given(KIND, SIZE, st.integers(0, 10 ** 6))
def test_surface_samples_lie_near_surface(kind, size, seed):
    rs = rng.stream(seed, "surf")
    pts = geometry.sample_surface_local(kind, size, 128, rs)
    v, f = geometry.tessellate(kind, size)
    d = geometry.point_triangle_distances(pts, v, f)
    # tessellation error only; sphere/cylinder/cone chords at 16 segments
    assert d.max() < 0.05


@settings(max_examples=20, deadline=None)
@given(KIND, SIZE, st.integers(0, 10 ** 6))
def test_inside_test_matches_analytic(kind, size, seed):
    rs = rng.stream(seed, "inside")
    pts = rs.uniform(-0.7, 0.7, size=(256, 3))
    v, f = geometry.tessellate(kind, size)
    mesh_in = geometry.points_inside_mesh(pts, v, f)
    ana_in = geometry.contains_local(kind, size, pts)
    # disagreement only in the thin tessellation-error shell
    diff = mesh_in != ana_in
    if diff.any():
        d = geometry.point_triangle_distances(pts[diff], v, f)
        assert d.max() < 0.05


def test_ray_hits_unit_box():
    v, f = geometry.tessellate("box", np.array([0.5, 0.5, 0.5]))
    origins = np.array([[0.0, 0.0, -5.0], [2.0, 2.0, -5.0]])
    t, hit = geometry.ray_mesh_hits(origins, np.array([0.0, 0.0, 1.0]), v, f)
    t0 = np.where(hit[0], t[0], np.inf).min()
    assert np.isclose(t0, 4.5)
    assert not hit[1].any()


def test_apply_pose_scales_about_origin():
    pts = np.array([[1.0, 0.0, 0.0]])
    out = geometry.apply_pose(pts, np.array([1.0, 2.0, 3.0]), 2.0)
    assert np.allclose(out, [[3.0, 2.0, 3.0]])


def test_view_basis_is_orthonormal():
    for az, el in [(0, 0), (45, 20), (120, -30), (300, 85)]:
        r, u, fwd = geometry.view_basis(az, el)
        m = np.stack([r, u, fwd])
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)


def test_point_triangle_distance_exact_cases():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    f = np.array([[0, 1, 2]])
    pts = np.array([
        [0.25, 0.25, 1.0],   # above interior -> 1
        [2.0, 0.0, 0.0],     # beyond vertex -> 1
        [0.5, -1.0, 0.0],    # beyond edge -> 1
    ])
    d = geometry.point_triangle_distances(pts, v, f)
    assert np.allclose(d, [1.0, 1.0, 1.0])


def test_sample_mesh_surface_normals_unit():
    v, f = geometry.tessellate("cylinder", np.array([0.3, 0.3, 0.4]))
    pts, nrm = geometry.sample_mesh_surface(v, f, 64, rng.stream(0, "n"))
    assert pts.shape == (64, 3)
    assert np.allclose(np.linalg.norm(nrm, axis=1), 1.0)
