"""Exact signed-distance queries against posed link capsules.

Distances are metric (meters), negative inside. The brute-force path is the
ground-truth oracle; the BVH path accelerates nearest-link queries and must
agree with brute force to 1e-9. Analytic primitive SDFs for the manipulated
object (cylinder, cuboid, sphere) live here too, plus a small triangle-mesh
distance used only in fidelity tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ContractViolation
from .rotations import quat_rotate, quat_rotate_inv


def point_capsule_sdf(p: np.ndarray, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Signed distance from point(s) to a capsule (segment a-b, radius r).

    Exact: distance(p, segment) - radius. Degenerate segments (a == b) reduce
    to a sphere. p may be (3,) or (N,3); returns scalar or (N,).
    """
    if radius <= 0.0:
        raise ContractViolation(f"capsule radius must be > 0, got {radius}")
    p = np.asarray(p, dtype=np.float64)
    ab = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    pa = p - np.asarray(a, dtype=np.float64)
    denom = float(ab @ ab)
    if denom == 0.0:
        h = np.zeros(p.shape[:-1])
    else:
        h = np.clip((pa @ ab) / denom, 0.0, 1.0)
    closest = np.multiply.outer(h, ab)
    return np.linalg.norm(pa - closest, axis=-1) - radius


@dataclass(frozen=True)
class PosedCapsules:
    """World-frame capsule set for one robot pose; immutable, read-shared."""

    seg_a: np.ndarray  # (L,3)
    seg_b: np.ndarray  # (L,3)
    radii: np.ndarray  # (L,)

    def __post_init__(self):
        if self.seg_a.shape[0] == 0:
            raise ContractViolation("empty link set")
        if np.any(self.radii <= 0.0):
            raise ContractViolation("all capsule radii must be > 0")

    @property
    def count(self) -> int:
        return self.seg_a.shape[0]


def pose_capsules(
    caps_a: np.ndarray,
    caps_b: np.ndarray,
    radii: np.ndarray,
    link_pos: np.ndarray,
    link_quat: np.ndarray,
) -> PosedCapsules:
    """Transform link-local capsule segments into world frame."""
    return PosedCapsules(
        seg_a=link_pos + quat_rotate(link_quat, caps_a),
        seg_b=link_pos + quat_rotate(link_quat, caps_b),
        radii=np.asarray(radii, dtype=np.float64),
    )


def capsules_from_spec(spec, link_pos: np.ndarray, link_quat: np.ndarray, link_ids=None) -> PosedCapsules:
    ids = list(range(spec.dof_count)) if link_ids is None else list(link_ids)
    a = np.stack([spec.links[i].capsule.a for i in ids])
    b = np.stack([spec.links[i].capsule.b for i in ids])
    r = np.array([spec.links[i].capsule.radius for i in ids])
    return pose_capsules(a, b, r, link_pos[ids], link_quat[ids])


@dataclass(frozen=True)
class DistanceResult:
    per_link_distance: np.ndarray
    nearest_link: int
    nearest_point_on_surface: np.ndarray


def _segment_sdf_batch(posed: PosedCapsules, p: np.ndarray) -> np.ndarray:
    """Vectorized (N,L) signed distances; the production oracle path."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    ab = posed.seg_b - posed.seg_a  # (L,3)
    pa = pts[:, None, :] - posed.seg_a[None]  # (N,L,3)
    denom = np.einsum("ld,ld->l", ab, ab)  # (L,)
    num = np.einsum("nld,ld->nl", pa, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(denom > 0.0, num / denom, 0.0)
    h = np.clip(h, 0.0, 1.0)
    diff = pa - h[..., None] * ab[None]
    return np.linalg.norm(diff, axis=-1) - posed.radii[None]


def query_all_links(posed: PosedCapsules, p: np.ndarray) -> DistanceResult:
    """Per-link signed distances for one query point; argmin tie-break = lowest index."""
    d = _segment_sdf_batch(posed, p)[0]
    idx = int(np.argmin(d))
    a, b = posed.seg_a[idx], posed.seg_b[idx]
    ab = b - a
    denom = float(ab @ ab)
    h = 0.0 if denom == 0.0 else float(np.clip(((p - a) @ ab) / denom, 0.0, 1.0))
    axis_pt = a + h * ab
    u = np.asarray(p, dtype=np.float64) - axis_pt
    norm = float(np.linalg.norm(u))
    if norm < 1e-12:
        # on-axis query: pick a deterministic radial direction
        seg_dir = ab / np.sqrt(denom) if denom > 0.0 else np.array([0.0, 0.0, 1.0])
        u = np.cross(seg_dir, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(seg_dir, np.array([0.0, 1.0, 0.0]))
        u /= np.linalg.norm(u)
    else:
        u /= norm
    surface = axis_pt + posed.radii[idx] * u
    return DistanceResult(per_link_distance=d, nearest_link=idx, nearest_point_on_surface=surface)


def min_sdf_batch(posed: PosedCapsules, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(min signed distance, argmin link) for many points, brute force."""
    d = _segment_sdf_batch(posed, pts)
    idx = np.argmin(d, axis=1)
    return d[np.arange(d.shape[0]), idx], idx


# ---------------------------------------------------------------------------
# BVH


@dataclass(frozen=True)
class Bvh:
    """Median-split BVH over capsules; flat node arrays, leaf size <= 2.

    Node AABBs include the capsule radius inflation, so for a point outside a
    node's box the box distance lower-bounds the SDF of everything inside;
    inside the box the bound falls back to -(max subtree radius).
    """

    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    node_max_radius: np.ndarray
    perm: np.ndarray
    posed: PosedCapsules


def capsule_aabb(posed: PosedCapsules) -> tuple[np.ndarray, np.ndarray]:
    lo = np.minimum(posed.seg_a, posed.seg_b) - posed.radii[:, None]
    hi = np.maximum(posed.seg_a, posed.seg_b) + posed.radii[:, None]
    return lo, hi


def build_bvh(posed: PosedCapsules, leaf_size: int = 2) -> Bvh:
    """Deterministic top-down median split on centroids along the widest axis."""
    n = posed.count
    if n < 1:
        raise ContractViolation("cannot build BVH over zero primitives")
    prim_lo, prim_hi = capsule_aabb(posed)
    centroid = 0.5 * (prim_lo + prim_hi)

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count, node_maxr = [], [], []
    perm = np.arange(n)

    def rec(start: int, count: int) -> int:
        ids = perm[start : start + count]
        lo = prim_lo[ids].min(axis=0)
        hi = prim_hi[ids].max(axis=0)
        my = len(node_min)
        node_min.append(lo)
        node_max.append(hi)
        node_left.append(-1)
        node_right.append(-1)
        node_maxr.append(float(posed.radii[ids].max()))
        if count <= leaf_size:
            node_start.append(start)
            node_count.append(count)
            return my
        node_start.append(-1)
        node_count.append(0)
        c = centroid[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps construction deterministic under centroid ties
        order = np.argsort(c[:, axis], kind="stable")
        perm[start : start + count] = ids[order]
        half = count // 2
        node_left[my] = rec(start, half)
        node_right[my] = rec(start + half, count - half)
        node_maxr[my] = max(node_maxr[node_left[my]], node_maxr[node_right[my]])
        return my

    rec(0, n)
    return Bvh(
        node_min=np.array(node_min),
        node_max=np.array(node_max),
        node_left=np.array(node_left, dtype=np.int64),
        node_right=np.array(node_right, dtype=np.int64),
        node_start=np.array(node_start, dtype=np.int64),
        node_count=np.array(node_count, dtype=np.int64),
        node_max_radius=np.array(node_maxr),
        perm=perm,
        posed=posed,
    )


@numba.njit(cache=True, fastmath=False)
def _capsule_sdf_scalar(px, py, pz, ax, ay, az, bx, by, bz, r):
    abx, aby, abz = bx - ax, by - ay, bz - az
    pax, pay, paz = px - ax, py - ay, pz - az
    denom = abx * abx + aby * aby + abz * abz
    if denom > 0.0:
        h = (pax * abx + pay * aby + paz * abz) / denom
        if h < 0.0:
            h = 0.0
        elif h > 1.0:
            h = 1.0
    else:
        h = 0.0
    dx = pax - h * abx
    dy = pay - h * aby
    dz = paz - h * abz
    return np.sqrt(dx * dx + dy * dy + dz * dz) - r


@numba.njit(cache=True, fastmath=False)
def brute_query_kernel(seg_a, seg_b, radii, pts, out_d, out_idx):
    n = pts.shape[0]
    m = seg_a.shape[0]
    for i in range(n):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        best = 1e30
        best_j = -1
        for j in range(m):
            d = _capsule_sdf_scalar(
                px, py, pz,
                seg_a[j, 0], seg_a[j, 1], seg_a[j, 2],
                seg_b[j, 0], seg_b[j, 1], seg_b[j, 2],
                radii[j],
            )
            if d < best:
                best = d
                best_j = j
        out_d[i] = best
        out_idx[i] = best_j


@numba.njit(cache=True, fastmath=False)
def _aabb_dist(px, py, pz, lo, hi):
    dx = max(lo[0] - px, 0.0, px - hi[0])
    dy = max(lo[1] - py, 0.0, py - hi[1])
    dz = max(lo[2] - pz, 0.0, pz - hi[2])
    return np.sqrt(dx * dx + dy * dy + dz * dz)


@numba.njit(cache=True, fastmath=False)
def bvh_query_kernel(
    node_min, node_max, node_left, node_right, node_start, node_count,
    node_maxr, perm, seg_a, seg_b, radii, pts, out_d, out_idx,
):
    n = pts.shape[0]
    stack = np.empty(128, dtype=np.int64)
    for i in range(n):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        best = 1e30
        best_j = -1
        top = 0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            d_box = _aabb_dist(px, py, pz, node_min[node], node_max[node])
            lb = d_box if d_box > 0.0 else -node_maxr[node]
            if lb > best:
                continue
            if node_count[node] > 0:
                s = node_start[node]
                for k in range(node_count[node]):
                    j = perm[s + k]
                    d = _capsule_sdf_scalar(
                        px, py, pz,
                        seg_a[j, 0], seg_a[j, 1], seg_a[j, 2],
                        seg_b[j, 0], seg_b[j, 1], seg_b[j, 2],
                        radii[j],
                    )
                    # exact ties resolve to the lowest primitive index
                    if d < best or (d == best and j < best_j):
                        best = d
                        best_j = j
            else:
                l, r = node_left[node], node_right[node]
                dl = _aabb_dist(px, py, pz, node_min[l], node_max[l])
                dr = _aabb_dist(px, py, pz, node_min[r], node_max[r])
                # push the farther child first so the nearer is explored first
                if dl <= dr:
                    stack[top] = r
                    top += 1
                    stack[top] = l
                    top += 1
                else:
                    stack[top] = l
                    top += 1
                    stack[top] = r
                    top += 1
        out_d[i] = best
        out_idx[i] = best_j


def bvh_query(bvh: Bvh, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest (signed distance, link index) per point via BVH traversal."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    out_d = np.empty(pts.shape[0])
    out_idx = np.empty(pts.shape[0], dtype=np.int64)
    bvh_query_kernel(
        bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
        bvh.node_start, bvh.node_count, bvh.node_max_radius, bvh.perm,
        bvh.posed.seg_a, bvh.posed.seg_b, bvh.posed.radii, pts, out_d, out_idx,
    )
    return out_d, out_idx


def brute_query(posed: PosedCapsules, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest (signed distance, link index) per point via the jitted brute loop."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    out_d = np.empty(pts.shape[0])
    out_idx = np.empty(pts.shape[0], dtype=np.int64)
    brute_query_kernel(posed.seg_a, posed.seg_b, posed.radii, pts, out_d, out_idx)
    return out_d, out_idx


def random_capsule_set(n: int, rng: np.random.Generator, box: float = 4.0) -> PosedCapsules:
    a = rng.uniform(-box, box, size=(n, 3))
    b = a + rng.uniform(-0.5, 0.5, size=(n, 3))
    r = rng.uniform(0.02, 0.15, size=n)
    return PosedCapsules(seg_a=a, seg_b=b, radii=r)


def bench_queries(prim_counts, n_points: int, seed: int, repeats: int = 3) -> list[dict]:
    """Time brute vs BVH nearest queries; returns one row dict per size.

    brute_ns / bvh_ns are best-of-repeats nanoseconds per query point.
    """
    import time

    rng = np.random.default_rng(seed)
    rows = []
    for m in prim_counts:
        posed = random_capsule_set(int(m), rng)
        pts = rng.uniform(-5.0, 5.0, size=(n_points, 3))
        bvh = build_bvh(posed)
        brute_query(posed, pts[:8])  # jit warmup
        bvh_query(bvh, pts[:8])
        best_brute = best_bvh = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            bd, bi = brute_query(posed, pts)
            best_brute = min(best_brute, (time.perf_counter_ns() - t0) / n_points)
            t0 = time.perf_counter_ns()
            vd, vi = bvh_query(bvh, pts)
            best_bvh = min(best_bvh, (time.perf_counter_ns() - t0) / n_points)
        rows.append(
            {
                "primitives": int(m),
                "points": int(n_points),
                "brute_ns": best_brute,
                "bvh_ns": best_bvh,
                "max_abs_err": float(np.abs(bd - vd).max()),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Analytic object SDFs (object-local frame, z up through the center)


def point_cylinder_sdf(p: np.ndarray, radius: float, height: float) -> np.ndarray:
    """Exact SDF of a z-axis cylinder centered at the origin."""
    p = np.asarray(p, dtype=np.float64)
    dr = np.hypot(p[..., 0], p[..., 1]) - radius
    dz = np.abs(p[..., 2]) - 0.5 * height
    outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
    inside = np.minimum(np.maximum(dr, dz), 0.0)
    return outside + inside


def point_box_sdf(p: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """Exact SDF of an origin-centered axis-aligned box."""
    p = np.asarray(p, dtype=np.float64)
    q = np.abs(p) - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def point_sphere_sdf(p: np.ndarray, radius: float) -> np.ndarray:
    return np.linalg.norm(np.asarray(p, dtype=np.float64), axis=-1) - radius


def object_sdf(shape: str, dims: np.ndarray, p_local: np.ndarray) -> np.ndarray:
    """Dispatch on shape tag; dims: cylinder (radius, height), cuboid (3 half
    extents), sphere (radius,)."""
    if shape == "cylinder":
        return point_cylinder_sdf(p_local, float(dims[0]), float(dims[1]))
    if shape == "cuboid":
        return point_box_sdf(p_local, np.asarray(dims[:3]))
    if shape == "sphere":
        return point_sphere_sdf(p_local, float(dims[0]))
    raise ContractViolation(f"unknown object shape {shape!r}")


def object_sdf_world(shape: str, dims, obj_pos: np.ndarray, obj_quat: np.ndarray, p_world: np.ndarray) -> np.ndarray:
    local = quat_rotate_inv(obj_quat, np.asarray(p_world, dtype=np.float64) - obj_pos)
    return object_sdf(shape, np.asarray(dims, dtype=np.float64), local)


# ---------------------------------------------------------------------------
# Triangle mesh (fidelity tests only)


class TriangleMesh:
    """Closed triangle soup with angle-weighted pseudo-normal signed distance."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        if self.faces.shape[0] < 4:
            raise ContractViolation("mesh must be a closed surface (>= 4 faces)")
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        fn = np.cross(e1, e2)
        norms = np.linalg.norm(fn, axis=1, keepdims=True)
        if np.any(norms < 1e-15):
            raise ContractViolation("degenerate triangle in mesh")
        self.face_normals = fn / norms

        # angle-weighted vertex pseudo-normals
        vn = np.zeros_like(v)
        for k in range(3):
            p0 = v[f[:, k]]
            pa = v[f[:, (k + 1) % 3]] - p0
            pb = v[f[:, (k + 2) % 3]] - p0
            cosang = np.sum(pa * pb, axis=1) / (
                np.linalg.norm(pa, axis=1) * np.linalg.norm(pb, axis=1)
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vn, f[:, k], ang[:, None] * self.face_normals)
        self.vertex_normals = vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)

        # edge pseudo-normals: sum of the two adjacent face normals
        edge_map: dict[tuple[int, int], np.ndarray] = {}
        for fi in range(f.shape[0]):
            for k in range(3):
                key = tuple(sorted((int(f[fi, k]), int(f[fi, (k + 1) % 3]))))
                edge_map[key] = edge_map.get(key, np.zeros(3)) + self.face_normals[fi]
        self.edge_normals = edge_map

    def signed_distance(self, p: np.ndarray) -> float:
        p = np.asarray(p, dtype=np.float64)
        best_d2 = np.inf
        best_pt = None
        best_normal = None
        v, f = self.vertices, self.faces
        for fi in range(f.shape[0]):
            cp, feature = _closest_point_triangle(p, v[f[fi, 0]], v[f[fi, 1]], v[f[fi, 2]])
            d2 = float(np.sum((p - cp) ** 2))
            if d2 < best_d2 - 1e-15:
                best_d2 = d2
                best_pt = cp
                best_normal = self._feature_normal(fi, feature)
        sign = 1.0 if float((p - best_pt) @ best_normal) >= 0.0 else -1.0
        return sign * np.sqrt(best_d2)

    def _feature_normal(self, fi: int, feature: tuple) -> np.ndarray:
        kind, ids = feature
        f = self.faces[fi]
        if kind == "face":
            return self.face_normals[fi]
        if kind == "vertex":
            return self.vertex_normals[f[ids[0]]]
        key = tuple(sorted((int(f[ids[0]]), int(f[ids[1]]))))
        return self.edge_normals[key]


def _closest_point_triangle(p, a, b, c):
    """Closest point on triangle abc plus the feature it lies on."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = float(ab @ ap)
    d2 = float(ac @ ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return a, ("vertex", (0,))
    bp = p - b
    d3 = float(ab @ bp)
    d4 = float(ac @ bp)
    if d3 >= 0.0 and d4 <= d3:
        return b, ("vertex", (1,))
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return a + t * ab, ("edge", (0, 1))
    cp = p - c
    d5 = float(ab @ cp)
    d6 = float(ac @ cp)
    if d6 >= 0.0 and d5 <= d6:
        return c, ("vertex", (2,))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return a + t * ac, ("edge", (0, 2))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + t * (c - b), ("edge", (1, 2))
    denom = 1.0 / (va + vb + vc)
    u = vb * denom
    w = vc * denom
    return a + ab * u + ac * w, ("face", ())


def box_mesh(half_extents: np.ndarray) -> TriangleMesh:
    """Axis-aligned box as 12 triangles, outward winding."""
    hx, hy, hz = [float(x) for x in half_extents]
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (z-)
            [4, 5, 6], [4, 6, 7],  # top (z+)
            [0, 1, 5], [0, 5, 4],  # y-
            [2, 3, 7], [2, 7, 6],  # y+
            [1, 2, 6], [1, 6, 5],  # x+
            [3, 0, 4], [3, 4, 7],  # x-
        ]
    )
    return TriangleMesh(v, f)
