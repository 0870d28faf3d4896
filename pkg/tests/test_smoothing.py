import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial import ConvexHull

from conftest import sphere_rms
from pcdenoise.contamination import add_gaussian_perturbation
from pcdenoise.geometry import PointCloud
from pcdenoise.octree import build_adaptive_octree
from pcdenoise.smoothing import (
    N_GROUPS,
    RepresentativeSet,
    SmoothingConfig,
    boundary_square,
    build_representatives,
    compute_iteration_cap,
    select_neighbors,
    smooth,
    smooth_step,
)
from pcdenoise.synthetic import sample_sphere


def reps_from(positions, size=1.0):
    positions = np.asarray(positions, dtype=np.float64)
    return RepresentativeSet(positions, np.full(len(positions), size))


def ray_square(d, side=1.0):
    """Ray-cast oracle: face with the smallest positive exit parameter,
    then the quadrant of the hit point on that face."""
    d = np.asarray(d, dtype=np.float64)
    best, face = math.inf, None
    for a in range(3):  # x, y, z order wins equal parameters
        if d[a] != 0:
            t = (side / 2) / abs(d[a])
            if t < best:
                best, face = t, a
    hit = best * d
    u, v = (face + 1) % 3, (face + 2) % 3
    return face * 8 + (hit[face] >= 0) * 4 + (hit[u] >= 0) * 2 + (hit[v] >= 0)


# ------------------------------------------------------------ representatives


def test_leaf_mean():
    cloud = PointCloud([[0, 0, 0], [2, 0, 0], [100, 100, 100]])
    reps = build_representatives(cloud)
    assert len(reps) == 2
    assert any(np.allclose(p, [1, 0, 0]) for p in reps.positions)


def test_one_point_per_leaf():
    pts = np.random.default_rng(0).uniform(0, 1, (300, 3))
    reps = build_representatives(PointCloud(pts))
    assert len(reps) == 300
    order = np.lexsort(reps.positions.T)
    np.testing.assert_allclose(reps.positions[order], pts[np.lexsort(pts.T)], rtol=0, atol=1e-15)


def test_means_recomputed_per_leaf():
    pts = np.random.default_rng(1).normal(0, 1, (5000, 3)) ** 3
    reps = build_representatives(PointCloud(pts))
    tree = build_adaptive_octree(PointCloud(pts))
    assert len(reps) == tree.n_occupied
    for leaf in range(0, tree.n_occupied, 37):
        own = pts[tree.occupied_points(leaf)]
        np.testing.assert_allclose(reps.positions[leaf], own.mean(axis=0), rtol=1e-12, atol=1e-12)
        assert np.all(reps.positions[leaf] >= own.min(axis=0) - 1e-12)
        assert np.all(reps.positions[leaf] <= own.max(axis=0) + 1e-12)
        assert reps.leaf_sizes[leaf] == tree.occupied_sizes[leaf]


def test_uniform_q_option():
    cloud = sample_sphere(3000, seed=4)
    reps = build_representatives(cloud, uniform=True)
    assert np.unique(reps.leaf_sizes).size == 1
    assert len(reps) <= len(cloud)


# ------------------------------------------------------------ neighbour groups


def test_collinear_keeps_nearer():
    reps = select_neighbors(reps_from([[0, 0, 0], [0.5, 0.1, 0.1], [1.0, 0.2, 0.2]]))
    assert reps.neighbors(0).tolist() == [1]


def test_six_axis_candidates():
    axis = [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    reps = select_neighbors(reps_from(axis))
    assert sorted(reps.neighbors(0).tolist()) == [1, 2, 3, 4, 5, 6]
    assert len(set(boundary_square(np.array(axis[1:], dtype=float)).tolist())) == 6


def test_ball_radius():
    reps = select_neighbors(reps_from([[0, 0, 0], [4.01, 0, 0], [0, 3.99, 0]]))
    assert reps.neighbors(0).tolist() == [2]


def test_coincident_skipped():
    reps = select_neighbors(reps_from([[0, 0, 0], [0, 0, 0], [1, 0, 0]]))
    assert reps.neighbors(0).tolist() == [2]


def test_tie_goes_to_smaller_id():
    reps = select_neighbors(reps_from([[0, 0, 0], [1, 0.2, 0.2], [1, 0.2, 0.2]]))
    # 1 and 2 coincide with each other, equal distance from 0, same square
    assert reps.neighbors(0).tolist() == [1]


@settings(max_examples=300, deadline=None)
@given(
    arrays(
        np.float64,
        3,
        elements=st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6), st.sampled_from([1.0, -1.0])),
    ).filter(lambda d: np.any(d != 0))
)
def test_boundary_square_matches_ray_cast(d):
    assert boundary_square(d)[0] == ray_square(d)
    assert boundary_square(d * 3.7)[0] == boundary_square(d)[0]


def test_boundary_square_covers_24():
    d = np.random.default_rng(0).normal(size=(5000, 3))
    assert set(boundary_square(d).tolist()) == set(range(N_GROUPS))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 400))
def test_neighbor_bound_and_ball(seed, n):
    rng = np.random.default_rng(seed)
    reps = reps_from(rng.uniform(0, 1, (n, 3)), size=0.2)
    select_neighbors(reps)
    assert reps.neighbor_counts.max() <= 24
    src, dst = reps.pair_arrays()
    assert np.all(src != dst)
    assert np.all(np.linalg.norm(reps.positions[dst] - reps.positions[src], axis=1) <= 0.8 + 1e-12)
    # one per square, and it is the nearest candidate there
    for i in range(0, n, max(1, n // 10)):
        diff = reps.positions - reps.positions[i]
        dist = np.linalg.norm(diff, axis=1)
        cand = np.flatnonzero((dist <= 0.8) & (np.arange(n) != i))
        expect = {}
        for j in cand:
            g = ray_square(diff[j])
            if g not in expect or (dist[j], j) < (dist[expect[g]], expect[g]):
                expect[g] = j
        assert sorted(expect.values()) == sorted(reps.neighbors(i).tolist())


def test_brute_force_and_tree_agree(monkeypatch):
    import pcdenoise.smoothing as sm

    pts = np.random.default_rng(3).uniform(0, 1, (1500, 3))
    tree_rows = select_neighbors(reps_from(pts, 0.05))
    monkeypatch.setattr(sm, "_BRUTE_FORCE_BELOW", 10**9)
    monkeypatch.setattr(sm, "_CHUNK", 256)
    brute_rows = select_neighbors(reps_from(pts, 0.05))
    np.testing.assert_array_equal(tree_rows.indptr, brute_rows.indptr)
    np.testing.assert_array_equal(tree_rows.indices, brute_rows.indices)


# ------------------------------------------------------------ smoothing step


def test_symmetric_neighbors_fixpoint():
    pts = [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 0.5, 0.5], [0, -0.5, -0.5]]
    reps = select_neighbors(reps_from(pts))
    step = smooth_step(reps, reps.positions, SmoothingConfig())
    np.testing.assert_allclose(step.positions[0], 0, atol=1e-12)


def test_single_neighbor_closed_form():
    reps = reps_from([[0, 0, 0], [0.8, 0, 0]])
    reps.indptr = np.array([0, 1, 1])
    reps.indices = np.array([1])
    step = smooth_step(reps, reps.positions, SmoothingConfig(0.25, 40))
    np.testing.assert_allclose(step.positions[0], [0.2, 0, 0], rtol=1e-15)
    assert step.moved == 1
    np.testing.assert_array_equal(step.positions[1], [0.8, 0, 0])


def test_empty_and_coincident_neighbors_frozen():
    reps = reps_from([[0, 0, 0], [0, 0, 0], [5, 5, 5]])
    reps.indptr = np.array([0, 1, 1, 1])
    reps.indices = np.array([1])
    step = smooth_step(reps, reps.positions, SmoothingConfig())
    assert step.moved == 0
    np.testing.assert_array_equal(step.positions, reps.positions)


def test_config_validation():
    for bad in ({"lam": 0}, {"lam": 1.5}, {"gamma": 0.5}, {"max_iterations": -1}):
        with pytest.raises(ValueError):
            SmoothingConfig(**bad)


def noisy_circle(n=1000, sigma=0.02, seed=0):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 2 * np.pi, n)
    r = 1 + rng.normal(0, sigma, n)
    return np.stack([r * np.cos(t), r * np.sin(t), np.zeros(n)], axis=1)


def test_noisy_circle_improves():
    pts = noisy_circle()
    reps = select_neighbors(build_representatives(PointCloud(pts)))
    before = np.sqrt(np.mean((np.hypot(reps.positions[:, 0], reps.positions[:, 1]) - 1) ** 2))
    out = smooth(reps, SmoothingConfig(max_iterations=10)).positions
    after = np.sqrt(np.mean((np.hypot(out[:, 0], out[:, 1]) - 1) ** 2))
    assert after < before


# ------------------------------------------------------------ iteration cap


def test_cap_single_rep():
    reps = select_neighbors(reps_from([[1, 2, 3]]))
    assert compute_iteration_cap(reps) == 0


def test_cap_arithmetic():
    # 1000 reps in 500 pairs 1/8 apart inside a side-2 cube: d_avg = 1/8
    lattice = np.array([(i, j, k) for i in range(8) for j in range(8) for k in range(8)], dtype=float)
    centers = -0.9375 + lattice[:500] * (1.875 / 7)
    half = np.array([1 / 16, 0, 0])
    pts = np.vstack([centers - half, centers + half])
    assert np.max(pts.max(0) - pts.min(0)) == 2.0
    reps = select_neighbors(reps_from(pts, size=1 / 30))
    assert np.all(reps.neighbor_counts == 1)
    assert compute_iteration_cap(reps) == math.floor((1 / 8) ** 2 * 1000 / 2) == 7


def cap_oracle(reps):
    """Normalize a copy of Q into the origin-centred side-2 cube, then apply the formula."""
    q = reps.positions.copy()
    lo, hi = q.min(axis=0), q.max(axis=0)
    q = (q - (lo + hi) / 2) * (2.0 / np.max(hi - lo))
    d = []
    for i in range(len(q)):
        nb = reps.neighbors(i)
        if len(nb):
            d.append(np.mean(np.linalg.norm(q[nb] - q[i], axis=1)))
    d_avg = float(np.mean(d))
    return math.floor(d_avg**2 * len(q) / 2)


@pytest.mark.parametrize("seed", range(3))
def test_cap_matches_normalization_oracle(seed):
    cloud = add_gaussian_perturbation(sample_sphere(4000, radius=3.0, seed=seed), 0.005, seed=seed)
    reps = select_neighbors(build_representatives(cloud))
    assert compute_iteration_cap(reps) == cap_oracle(reps)


# ------------------------------------------------------------ full smoothing


def test_tiny_lambda_single_step_identity():
    reps = select_neighbors(build_representatives(sample_sphere(2000, seed=1)))
    res = smooth(reps, SmoothingConfig(lam=1e-9, max_iterations=50))
    assert res.iterations == 1 and res.moved == [0]
    np.testing.assert_array_equal(res.positions, reps.positions)


def test_zero_cap_identity():
    reps = select_neighbors(build_representatives(sample_sphere(2000, seed=1)))
    res = smooth(reps, SmoothingConfig(max_iterations=0))
    assert res.iterations == 0
    np.testing.assert_array_equal(res.positions, reps.positions)


@pytest.fixture(scope="module")
def noisy_sphere_reps():
    cloud = add_gaussian_perturbation(sample_sphere(5000, seed=8), 0.01, seed=9)
    return select_neighbors(build_representatives(cloud))


def test_defaults_on_noisy_sphere(noisy_sphere_reps):
    reps = noisy_sphere_reps
    res = smooth(reps)
    assert res.iterations <= res.cap == compute_iteration_cap(reps)
    assert sphere_rms(res.positions) < sphere_rms(reps.positions)


def test_weights_and_hull(noisy_sphere_reps):
    reps = noisy_sphere_reps
    hull = ConvexHull(reps.positions)
    seen = []

    def check(it, prev, step):
        seen.append(it)
        assert step.weights.min() >= math.exp(-1) - 1e-15
        assert step.weights.max() <= 1.0
        slack = hull.equations[:, :3] @ step.positions.T + hull.equations[:, 3:]
        assert slack.max() <= 1e-12

    smooth(reps, callback=check)
    assert seen


def test_jacobi_order_independent(noisy_sphere_reps):
    reps = noisy_sphere_reps
    perm = np.random.default_rng(0).permutation(len(reps))
    a = smooth(reps).positions
    b = smooth(reps.permuted(perm)).positions
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


def test_translation_equivariant(noisy_sphere_reps):
    reps = noisy_sphere_reps
    t = np.array([10.0, -3.0, 7.5])
    moved = RepresentativeSet(reps.positions + t, reps.leaf_sizes, reps.indptr, reps.indices)
    a = smooth(reps, SmoothingConfig(max_iterations=5)).positions
    b = smooth(moved, SmoothingConfig(max_iterations=5)).positions
    np.testing.assert_allclose(b - t, a, rtol=0, atol=1e-9 * np.abs(t).max())
