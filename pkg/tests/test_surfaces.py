import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.cluster import DBSCAN

from surfplace.fixtures import SHELF_LEVELS, bookcase_mesh
from surfplace.geometry import DegenerateGeometryError
from surfplace.scene import TriMesh, box_mesh, merge_meshes, uv_sphere_mesh
from surfplace.surfaces import (
    BBOX_FACE,
    MESH_CLUSTER,
    Direction,
    ExtractionConfig,
    InteractionSurface,
    build_hull,
    cluster_by_level,
    extract_surfaces,
    filter_faces,
    merge_surfaces,
)

CUBE = box_mesh((1, 1, 1))


def test_direction_vectors():
    assert np.array_equal(Direction.UP.vector, [0, 0, 1])
    assert np.array_equal(Direction.FRONT.vector, [0, -1, 0])
    assert np.array_equal(Direction.RIGHT.vector, [1, 0, 0])
    assert Direction.parse(" UP ") is Direction.UP
    with pytest.raises(ValueError):
        Direction.parse("none")


def test_filter_faces_cube():
    top = filter_faces(CUBE, Direction.UP, 0.95)
    assert len(top) == 2 and np.allclose(CUBE.face_normals[top], [0, 0, 1])
    assert len(filter_faces(CUBE, Direction.UP, 0.5)) == 2
    with pytest.raises(ValueError):
        filter_faces(CUBE, Direction.UP, 0.0)


def test_filter_faces_sphere_cap():
    sphere = uv_sphere_mesh(1.0)
    faces = filter_faces(sphere, Direction.UP, 0.95)
    angles = np.degrees(np.arccos(np.clip(sphere.face_normals[faces] @ [0, 0, 1], -1, 1)))
    assert len(faces) > 0 and angles.max() <= 18.2


def test_cluster_by_level_two_planes():
    planes = merge_meshes([box_mesh((1, 1, 0.01), (0, 0, 0.3)), box_mesh((1, 1, 0.01), (0, 0, 0.6))])
    faces = filter_faces(planes, Direction.UP, 0.95)
    clusters = cluster_by_level(planes, faces, Direction.UP, 0.05)
    assert len(clusters) == 2
    assert cluster_by_level(planes, [], Direction.UP, 0.05) == []
    assert len(cluster_by_level(CUBE, filter_faces(CUBE, Direction.UP, 0.95), Direction.UP, 0.05)) == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=60), st.floats(0.01, 0.5))
def test_cluster_by_level_matches_dbscan(levels, eps):
    # one tiny upward triangle per level
    v, f = [], []
    for i, z in enumerate(levels):
        v += [[i, 0, z], [i + 0.1, 0, z], [i, 0.1, z]]
        f.append([3 * i, 3 * i + 1, 3 * i + 2])
    mesh = TriMesh(np.array(v, float), np.array(f))
    ours = cluster_by_level(mesh, np.arange(len(levels)), Direction.UP, eps)
    labels = DBSCAN(eps=eps, min_samples=1).fit(mesh.face_centers[:, 2:3]).labels_
    theirs = {frozenset(np.flatnonzero(labels == k).tolist()) for k in set(labels)}
    # the boundary case d == eps counts as connected in both
    assert {frozenset(c.tolist()) for c in ours} == theirs


def test_build_hull_cube_top():
    s = build_hull(CUBE, filter_faces(CUBE, Direction.UP, 0.95), Direction.UP)
    assert s.area == pytest.approx(1.0, abs=1e-6)
    assert s.source == MESH_CLUSTER
    assert np.allclose(s.polygon[:, 2], 0.5)


def test_build_hull_l_shape_circumscribes():
    l_desk = merge_meshes([box_mesh((2, 0.5, 0.05), (0, 0, 0.75)), box_mesh((0.5, 1.5, 0.05), (-0.75, 1.0, 0.75))])
    faces = filter_faces(l_desk, Direction.UP, 0.95)
    s = build_hull(l_desk, faces, Direction.UP)
    assert s.area > l_desk.face_areas[faces].sum() + 1e-6


def test_build_hull_single_triangle_and_degenerate():
    tri = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])
    assert build_hull(tri, [0], Direction.UP).area == pytest.approx(0.5)
    with pytest.raises(ValueError):
        build_hull(tri, [], Direction.UP)
    sliver = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1.0]]), [[0, 1, 2]])
    with pytest.raises(DegenerateGeometryError):
        build_hull(sliver, [0], Direction.UP)


def test_merge_surfaces_keeps_larger():
    big = InteractionSurface(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.0]]), (0, 0, 1))
    small = InteractionSurface(np.array([[0.2, 0.2, 0], [0.7, 0.2, 0], [0.7, 0.7, 0], [0.2, 0.7, 0.0]]), (0, 0, 1))
    assert merge_surfaces([small, big], 0.01) == [big]
    assert merge_surfaces([], 0.01) == []


def test_extract_surfaces_cube():
    found = extract_surfaces(CUBE, Direction.UP)
    assert [s.source for s in found] == [MESH_CLUSTER, BBOX_FACE]
    assert np.allclose(np.sort(found[0].polygon, axis=0), np.sort(found[1].polygon, axis=0))
    assert found[0].area == pytest.approx(1.0, abs=1e-6)


def test_extract_surfaces_bookcase_levels():
    found = extract_surfaces(bookcase_mesh(), Direction.UP)
    clusters = [s for s in found if s.source == MESH_CLUSTER]
    levels = {round(s.level, 6) for s in clusters}
    assert set(SHELF_LEVELS) <= levels
    assert sum(s.source == BBOX_FACE for s in found) == 1
    assert [s.area for s in found] == sorted((s.area for s in found), reverse=True)


def test_extract_surfaces_sphere_down():
    found = extract_surfaces(uv_sphere_mesh(1.0), Direction.DOWN)
    assert sorted(s.source for s in found) == [BBOX_FACE, MESH_CLUSTER]


def test_bbox_only_and_no_matching_faces():
    found = extract_surfaces(bookcase_mesh(), Direction.UP, ExtractionConfig(bbox_only=True))
    assert [s.source for s in found] == [BBOX_FACE]
    wedge = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1.0], [0, 1, 0]]), [[0, 1, 2]])
    assert [s.source for s in extract_surfaces(wedge, Direction.UP)] == [BBOX_FACE]
    with pytest.raises(ValueError):
        extract_surfaces(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), Direction.UP)


@pytest.mark.parametrize("direction", list(Direction))
def test_surface_invariants(direction):
    mesh = bookcase_mesh()
    cfg = ExtractionConfig()
    found = extract_surfaces(mesh, direction, cfg)
    faces = filter_faces(mesh, direction, cfg.cos_threshold)
    for s in found:
        assert np.array_equal(s.normal, direction.vector)
        assert s.area > 0
        assert np.abs((s.polygon - s.polygon[0]) @ s.normal).max() <= 1e-6
        # counterclockwise seen from the normal side, convex
        p = s.polygon
        turns = [np.cross(p[(i + 1) % len(p)] - p[i], p[(i + 2) % len(p)] - p[(i + 1) % len(p)]) @ s.normal
                 for i in range(len(p))]
        assert min(turns) > 0
    # every face center of a kept cluster projects inside its hull
    eps = cfg.eps_frac * float(np.linalg.norm(np.subtract(*mesh.bounds()[::-1])))
    for cluster in cluster_by_level(mesh, faces, direction, eps):
        s = build_hull(mesh, cluster, direction)
        c = mesh.face_centers[cluster]
        foot = c - ((c - s.polygon[0]) @ s.normal)[:, None] * s.normal
        for i in range(len(s.polygon)):
            a, b = s.polygon[i], s.polygon[(i + 1) % len(s.polygon)]
            assert (np.cross(b - a, foot - a) @ s.normal >= -1e-9).all()
    assert [s.to_json() for s in extract_surfaces(mesh, direction, cfg)] == [s.to_json() for s in found]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.99), st.floats(0.0, 0.5))
def test_filter_faces_monotone(lo, step):
    mesh = uv_sphere_mesh(1.0)
    hi = min(lo + step, 1.0)
    assert len(filter_faces(mesh, Direction.UP, hi)) <= len(filter_faces(mesh, Direction.UP, lo))
