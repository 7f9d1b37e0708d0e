"""Capsule SDF, brute/BVH equivalence, analytic object SDFs, mesh fidelity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbm.errors import ContractViolation
from wbm.geometry import (
    PosedCapsules,
    Bvh,
    bench_queries,
    box_mesh,
    brute_query,
    build_bvh,
    bvh_query,
    capsule_aabb,
    capsules_from_spec,
    min_sdf_batch,
    object_sdf,
    point_box_sdf,
    point_capsule_sdf,
    point_cylinder_sdf,
    point_sphere_sdf,
    query_all_links,
    random_capsule_set,
)
from wbm.robot import fk_batch, neutral_state


def test_capsule_sdf_axis_point():
    a, b = np.zeros(3), np.array([0.0, 0.0, 1.0])
    assert point_capsule_sdf(np.array([0.0, 0.0, 0.5]), a, b, 0.1) == pytest.approx(-0.1)


def test_capsule_sdf_radial_offset():
    a, b = np.zeros(3), np.array([0.0, 0.0, 1.0])
    assert point_capsule_sdf(np.array([0.2, 0.0, 0.5]), a, b, 0.1) == pytest.approx(0.1)


def test_capsule_sdf_beyond_endpoint():
    a, b = np.zeros(3), np.array([0.0, 0.0, 1.0])
    assert point_capsule_sdf(np.array([0.0, 0.0, 2.0]), a, b, 0.1) == pytest.approx(0.9)


def test_capsule_sdf_degenerate_is_sphere(rng):
    c = rng.standard_normal(3)
    p = rng.standard_normal((16, 3))
    got = point_capsule_sdf(p, c, c, 0.25)
    want = np.linalg.norm(p - c, axis=1) - 0.25
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_capsule_sdf_rejects_bad_radius():
    with pytest.raises(ContractViolation):
        point_capsule_sdf(np.zeros(3), np.zeros(3), np.ones(3), -0.1)


def test_query_all_links_single_link():
    posed = PosedCapsules(
        seg_a=np.array([[0.0, 0.0, 0.0]]),
        seg_b=np.array([[0.0, 0.0, 1.0]]),
        radii=np.array([0.1]),
    )
    res = query_all_links(posed, np.array([0.0, 0.0, 0.5]))
    assert res.per_link_distance.shape == (1,)
    assert res.per_link_distance[0] == pytest.approx(-0.1)
    assert res.nearest_link == 0
    # surface point is radius away from the axis
    assert np.linalg.norm(res.nearest_point_on_surface - [0, 0, 0.5]) == pytest.approx(0.1)


def test_query_all_links_matches_loop(spec, rng):
    st0 = neutral_state(spec)
    q = rng.uniform(spec.lower_limits, spec.upper_limits)
    pos, quat = fk_batch(spec, st0.root_pos[None], st0.root_quat[None], q[None])
    posed = capsules_from_spec(spec, pos[0], quat[0], spec.upper_body_links)
    assert posed.count == 15
    for _ in range(20):
        p = rng.uniform(-2, 2, 3)
        res = query_all_links(posed, p)
        loop = np.array(
            [
                point_capsule_sdf(p, posed.seg_a[i], posed.seg_b[i], posed.radii[i])
                for i in range(posed.count)
            ]
        )
        np.testing.assert_allclose(res.per_link_distance, loop, atol=1e-9)
        assert res.nearest_link == int(np.argmin(loop))
        assert res.per_link_distance.min() == pytest.approx(
            res.per_link_distance[res.nearest_link]
        )


def test_far_query_all_positive(spec):
    st0 = neutral_state(spec)
    pos, quat = fk_batch(spec, st0.root_pos[None], st0.root_quat[None], st0.q[None])
    posed = capsules_from_spec(spec, pos[0], quat[0])
    res = query_all_links(posed, np.array([1e3, 0.0, 0.0]))
    assert np.all(res.per_link_distance > 0)
    assert np.all(res.per_link_distance > 900.0)


def test_empty_link_set_rejected():
    with pytest.raises(ContractViolation):
        PosedCapsules(seg_a=np.zeros((0, 3)), seg_b=np.zeros((0, 3)), radii=np.zeros(0))


def test_nearest_tie_break_lowest_index():
    # two identical capsules: exact tie must resolve to index 0
    posed = PosedCapsules(
        seg_a=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        seg_b=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]),
        radii=np.array([0.1, 0.1]),
    )
    res = query_all_links(posed, np.array([0.5, 0.0, 0.5]))
    assert res.nearest_link == 0
    _, idx = bvh_query(build_bvh(posed), np.array([[0.5, 0.0, 0.5]]))
    assert idx[0] == 0


def test_sign_correctness(rng):
    posed = random_capsule_set(24, rng)
    # points strictly inside a capsule: sample on-axis spots
    for j in range(posed.count):
        mid = 0.5 * (posed.seg_a[j] + posed.seg_b[j])
        d, _ = min_sdf_batch(posed, mid[None])
        assert d[0] < 0
    # far-outside points are positive
    far = rng.uniform(50, 60, size=(20, 3))
    d, _ = min_sdf_batch(posed, far)
    assert np.all(d > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_min_field_is_1_lipschitz(seed):
    rng = np.random.default_rng(seed)
    posed = random_capsule_set(12, rng)
    p = rng.uniform(-5, 5, size=(2, 3))
    d, _ = min_sdf_batch(posed, p)
    assert abs(d[0] - d[1]) <= np.linalg.norm(p[0] - p[1]) + 1e-12


def test_bvh_single_primitive():
    posed = PosedCapsules(
        seg_a=np.array([[0.0, 0.0, 0.0]]),
        seg_b=np.array([[1.0, 0.0, 0.0]]),
        radii=np.array([0.2]),
    )
    bvh = build_bvh(posed)
    assert bvh.node_count[0] == 1
    lo, hi = capsule_aabb(posed)
    np.testing.assert_allclose(bvh.node_min[0], lo[0], atol=1e-15)
    np.testing.assert_allclose(bvh.node_max[0], hi[0], atol=1e-15)


def test_bvh_two_disjoint():
    posed = PosedCapsules(
        seg_a=np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]),
        seg_b=np.array([[1.0, 0.0, 0.0], [6.0, 0.0, 0.0]]),
        radii=np.array([0.1, 0.1]),
    )
    bvh = build_bvh(posed, leaf_size=1)
    lo, hi = capsule_aabb(posed)
    np.testing.assert_allclose(bvh.node_min[0], lo.min(axis=0), atol=1e-15)
    np.testing.assert_allclose(bvh.node_max[0], hi.max(axis=0), atol=1e-15)
    root_children = {int(bvh.node_left[0]), int(bvh.node_right[0])}
    assert len(root_children) == 2 and -1 not in root_children
    assert sorted(bvh.perm.tolist()) == [0, 1]


def test_bvh_every_primitive_in_one_leaf(rng):
    posed = random_capsule_set(37, rng)
    bvh = build_bvh(posed)
    seen = []
    for n in range(bvh.node_min.shape[0]):
        if bvh.node_count[n] > 0:
            s, c = int(bvh.node_start[n]), int(bvh.node_count[n])
            seen += bvh.perm[s : s + c].tolist()
    assert sorted(seen) == list(range(37))
    # parent AABB contains children
    for n in range(bvh.node_min.shape[0]):
        if bvh.node_count[n] == 0:
            for ch in (int(bvh.node_left[n]), int(bvh.node_right[n])):
                assert np.all(bvh.node_min[n] <= bvh.node_min[ch] + 1e-15)
                assert np.all(bvh.node_max[n] >= bvh.node_max[ch] - 1e-15)


def test_bvh_matches_brute_256(rng):
    posed = random_capsule_set(256, rng)
    bvh = build_bvh(posed)
    pts = rng.uniform(-6, 6, size=(1000, 3))
    bd, bi = brute_query(posed, pts)
    vd, vi = bvh_query(bvh, pts)
    np.testing.assert_allclose(vd, bd, atol=1e-9)
    assert np.array_equal(bi, vi)
    # and both equal the vectorized oracle
    od, oi = min_sdf_batch(posed, pts)
    np.testing.assert_allclose(bd, od, atol=1e-12)


def test_bvh_deterministic(rng):
    posed = random_capsule_set(64, rng)
    b1 = build_bvh(posed)
    b2 = build_bvh(posed)
    np.testing.assert_array_equal(b1.perm, b2.perm)
    np.testing.assert_array_equal(b1.node_min, b2.node_min)


def test_bench_rows_shape():
    rows = bench_queries([8, 16], 200, seed=0, repeats=1)
    assert [r["primitives"] for r in rows] == [8, 16]
    for r in rows:
        assert r["max_abs_err"] <= 1e-9
        assert r["brute_ns"] > 0 and r["bvh_ns"] > 0


# ---------------------------------------------------------------------------
# Analytic object SDFs


def test_cylinder_sdf_cases():
    assert point_cylinder_sdf(np.zeros(3), 0.21, 0.4) == pytest.approx(-0.2)  # cap nearer
    assert point_cylinder_sdf(np.array([0.5, 0.0, 0.0]), 0.21, 0.4) == pytest.approx(0.29)
    assert point_cylinder_sdf(np.array([0.0, 0.0, 0.5]), 0.21, 0.4) == pytest.approx(0.3)
    # corner region: radial and axial excess combine in quadrature
    got = point_cylinder_sdf(np.array([0.31, 0.0, 0.3]), 0.21, 0.4)
    assert got == pytest.approx(np.hypot(0.1, 0.1))


def test_box_sdf_cases():
    he = np.array([0.2, 0.3, 0.4])
    assert point_box_sdf(np.zeros(3), he) == pytest.approx(-0.2)
    assert point_box_sdf(np.array([0.5, 0.0, 0.0]), he) == pytest.approx(0.3)
    got = point_box_sdf(np.array([0.3, 0.4, 0.5]), he)
    assert got == pytest.approx(np.linalg.norm([0.1, 0.1, 0.1]))


def test_sphere_sdf():
    assert point_sphere_sdf(np.array([0.0, 3.0, 4.0]), 1.0) == pytest.approx(4.0)
    assert object_sdf("sphere", np.array([1.0]), np.zeros(3)) == pytest.approx(-1.0)


def test_object_sdf_unknown_shape():
    with pytest.raises(ContractViolation):
        object_sdf("torus", np.array([1.0]), np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_box_mesh_matches_analytic_box(seed):
    rng = np.random.default_rng(seed)
    he = np.array([0.3, 0.2, 0.25])
    mesh = box_mesh(he)
    p = rng.uniform(-0.6, 0.6, 3)
    got = mesh.signed_distance(p)
    want = point_box_sdf(p, he)
    assert got == pytest.approx(want, abs=1e-12)
