"""Seeded synthetic contamination: perturbation, white noise, outlier clusters.

All randomness comes from one ``numpy.random.Generator`` per call, so a
given seed reproduces the output bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Label, PointCloud, diagonal_length


@dataclass
class NoiseSpec:
    gaussian_sigma_fraction: float = 0.0
    white_noise_count: int | None = 5000
    white_noise_fraction: float | None = None
    cluster_probability: float = 0.05
    isolation_radius_fraction: float = 0.05
    cluster_max_count: int = 400
    cluster_radius_scale: float = 0.001
    isolation_against: str = "perturbed"  # or "original"
    replace_seed_point: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("gaussian_sigma_fraction", "isolation_radius_fraction", "cluster_radius_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.white_noise_fraction is not None and self.white_noise_fraction < 0:
            raise ValueError("white_noise_fraction must be >= 0")
        if self.white_noise_count is not None and self.white_noise_count < 0:
            raise ValueError("white_noise_count must be >= 0")
        if not 0 <= self.cluster_probability <= 1:
            raise ValueError("cluster_probability must be in [0, 1]")
        if self.cluster_max_count < 1:
            raise ValueError("cluster_max_count must be >= 1")
        if self.isolation_against not in ("perturbed", "original"):
            raise ValueError("isolation_against must be 'perturbed' or 'original'")

    def white_noise_for(self, n_surface: int) -> int:
        if self.white_noise_fraction is not None:
            return int(round(self.white_noise_fraction * n_surface))
        return int(self.white_noise_count or 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OutlierCluster:
    seed_index: int
    center: np.ndarray
    count: int
    radius: float
    first: int  # index of the first cluster point in the output cloud


def _labels(cloud: PointCloud) -> np.ndarray:
    if cloud.labels is not None:
        return cloud.labels
    return np.full(len(cloud), Label.SURFACE, dtype=np.int8)


def random_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    norm = np.linalg.norm(v, axis=1)
    while np.any(norm == 0):
        bad = norm == 0
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        norm = np.linalg.norm(v, axis=1)
    return v / norm[:, None]


def add_gaussian_perturbation(cloud: PointCloud, x: float, seed: int = 0, diagonal: float | None = None) -> PointCloud:
    """Move every point by s * u, u uniform on the sphere and s ~ N(0, x * D)."""
    if x < 0:
        raise ValueError("x must be >= 0")
    pts = cloud.points
    labels = np.full(len(pts), Label.SURFACE, dtype=np.int8)
    if x == 0 or len(pts) == 0:
        return PointCloud(pts.copy(), labels)
    D = diagonal_length(cloud) if diagonal is None else diagonal
    rng = np.random.default_rng(seed)
    u = random_directions(rng, len(pts))
    s = rng.normal(0.0, x * D, size=len(pts))
    return PointCloud(pts + s[:, None] * u, labels)


def add_white_noise(cloud: PointCloud, count: int, seed: int = 0, box: tuple | None = None) -> PointCloud:
    """Append ``count`` points uniform in ``box`` (default: the cloud's bounding box)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    labels = _labels(cloud)
    if count == 0:
        return PointCloud(cloud.points.copy(), labels.copy())
    if box is None:
        lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    rng = np.random.default_rng(seed)
    noise = lo + rng.random((count, 3)) * (hi - lo)
    return PointCloud(
        np.vstack([cloud.points, noise]),
        np.concatenate([labels, np.full(count, Label.WHITE_NOISE, dtype=np.int8)]),
    )


def sample_ball(rng: np.random.Generator, center: np.ndarray, radius: float, n: int) -> np.ndarray:
    """``n`` points uniform in a ball, by rejection from its bounding cube."""
    out = np.empty((0, 3))
    while len(out) < n:
        cand = rng.uniform(-1.0, 1.0, size=(2 * (n - len(out)) + 8, 3))
        cand = cand[np.einsum("ij,ij->i", cand, cand) <= 1.0]
        out = np.vstack([out, cand])
    return center + radius * out[:n]


def spawn_outlier_clusters(
    cloud: PointCloud,
    spec: NoiseSpec,
    seed: int = 0,
    diagonal: float | None = None,
    reference: np.ndarray | None = None,
    return_clusters: bool = False,
):
    """Grow outlier clusters around isolated white-noise points.

    A white-noise point is isolated when no reference point (by default the
    surface-labelled points of ``cloud``) lies within
    ``isolation_radius_fraction * D`` of it. Each isolated point becomes a
    cluster with probability ``cluster_probability``: r1 ~ U{1..R} points
    uniform in a ball of radius ``cluster_radius_scale * r2 * D``, r2 ~ U[0, 1].
    """
    labels = _labels(cloud)
    pts = cloud.points
    D = diagonal_length(cloud) if diagonal is None else diagonal
    if reference is None:
        reference = pts[labels == Label.SURFACE]
    noise_idx = np.flatnonzero(labels == Label.WHITE_NOISE)
    clusters: list[OutlierCluster] = []
    new_pts: list[np.ndarray] = []
    if spec.cluster_probability > 0 and len(noise_idx):
        radius = spec.isolation_radius_fraction * D
        if len(reference):
            nearest, _ = cKDTree(reference).query(pts[noise_idx], k=1)
            isolated = noise_idx[nearest >= radius]
        else:
            isolated = noise_idx
        rng = np.random.default_rng(seed)
        n_out = len(pts)
        for p in isolated.tolist():
            if rng.random() >= spec.cluster_probability:
                continue
            r1 = int(rng.integers(1, spec.cluster_max_count + 1))
            r2 = float(rng.random())
            ball_r = spec.cluster_radius_scale * r2 * D
            blob = sample_ball(rng, pts[p], ball_r, r1)
            clusters.append(OutlierCluster(p, pts[p].copy(), r1, ball_r, n_out))
            new_pts.append(blob)
            n_out += r1
    if new_pts:
        extra = np.vstack(new_pts)
        out_pts = np.vstack([pts, extra])
        out_labels = np.concatenate([labels, np.full(len(extra), Label.OUTLIER, dtype=np.int8)])
    else:
        out_pts, out_labels = pts.copy(), labels.copy()
    out = PointCloud(out_pts, out_labels)
    if spec.replace_seed_point and clusters:
        keep = np.ones(len(out), dtype=bool)
        keep[[c.seed_index for c in clusters]] = False
        shift = np.cumsum(~keep)
        for c in clusters:
            c.first -= int(shift[c.first - 1])
        out = out.subset(keep)
    if return_clusters:
        return out, clusters
    return out


@dataclass
class ContaminationResult:
    cloud: PointCloud
    clusters: list[OutlierCluster]
    diagonal: float
    n_isolated: int


def count_isolated(cloud: PointCloud, spec: NoiseSpec, diagonal: float, reference: np.ndarray | None = None) -> int:
    labels = _labels(cloud)
    if reference is None:
        reference = cloud.points[labels == Label.SURFACE]
    noise = cloud.points[labels == Label.WHITE_NOISE]
    if len(noise) == 0:
        return 0
    if len(reference) == 0:
        return len(noise)
    nearest, _ = cKDTree(reference).query(noise, k=1)
    return int(np.count_nonzero(nearest >= spec.isolation_radius_fraction * diagonal))


def contaminate(clean: PointCloud, spec: NoiseSpec) -> ContaminationResult:
    """Full protocol: perturb, add white noise in the clean bounding box, spawn clusters.

    D and the white-noise box come from the clean input. The three stages use
    independent streams derived from ``spec.seed``.
    """
    clean.validate()
    D = diagonal_length(clean)
    box = (clean.points.min(axis=0), clean.points.max(axis=0))
    s_perturb, s_noise, s_clusters = np.random.SeedSequence(spec.seed).generate_state(3)
    perturbed = add_gaussian_perturbation(clean, spec.gaussian_sigma_fraction, int(s_perturb), diagonal=D)
    noisy = add_white_noise(perturbed, spec.white_noise_for(len(clean)), int(s_noise), box=box)
    reference = clean.points if spec.isolation_against == "original" else None
    n_isolated = count_isolated(noisy, spec, D, reference)
    out, clusters = spawn_outlier_clusters(
        noisy, spec, int(s_clusters), diagonal=D, reference=reference, return_clusters=True
    )
    return ContaminationResult(out, clusters, D, n_isolated)
