"""End-to-end denoising driver, run report and evaluation metrics."""

from __future__ import annotations

import logging
import math
import re
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .clustering import build_leaf_graph, connected_components
from .density import prune_very_noisy
from .geometry import Label, PointCloud
from .octree import build_adaptive_octree, mean_leaf_size, uniformize
from .smoothing import SmoothingConfig, build_representatives, select_neighbors, smooth

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    alpha: float = 2.0
    beta: float = 2.0
    lam: float = 0.25
    gamma: float = 40.0
    epsilon: float = 10.0
    k: int = 1
    seed: int = 0
    max_iterations: int | None = None
    uniform_q: bool = False
    remove_outliers: bool = True
    filter_noisy: bool = True
    smooth: bool = True

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        SmoothingConfig(self.lam, self.gamma, self.max_iterations)


@dataclass
class ComponentReport:
    cells: int
    n_extracted: int
    n_filtered: int
    n_representatives: int
    density_iterations: int
    density_guard: str | None
    n_avg: float
    n_sd: float
    iterations: int
    iteration_cap: int


@dataclass
class RunReport:
    n_input: int = 0
    n_extracted: int = 0
    n_filtered: int = 0
    n_representatives: int = 0
    n_output: int = 0
    l_avg: float = 0.0
    l_p: float = 0.0
    grid_level: int = 0
    n_cells: int = 0
    n_components: int = 0
    component_cell_counts: list[int] = field(default_factory=list)
    components: list[ComponentReport] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    guard_events: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    label_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return sum(c.iterations for c in self.components)

    @property
    def iteration_cap(self) -> int:
        return sum(c.iteration_cap for c in self.components)

    def to_dict(self, timings: bool = True) -> dict:
        out = asdict(self)
        if not timings:
            out.pop("stage_seconds")
        return out


@contextmanager
def _stage(name: str, report: RunReport):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        report.stage_seconds[name] = report.stage_seconds.get(name, 0.0) + time.perf_counter() - start


def _label_counts(cloud: PointCloud) -> dict[str, int]:
    if cloud.labels is None:
        return {}
    return {lab.name.lower(): cloud.count(lab) for lab in Label}


def run_pipeline(cloud: PointCloud, config: PipelineConfig | None = None) -> tuple[PointCloud, RunReport]:
    """Denoise ``cloud``; returns the smoothed representatives and a report.

    With k > 1 every extracted component is filtered and smoothed on its
    own; outputs are concatenated in component rank order and the per-
    component sizes are in ``report.components``.
    """
    config = config or PipelineConfig()
    report = RunReport(n_input=len(cloud))
    with _stage("validate", report):
        cloud.validate()
    report.label_counts["input"] = _label_counts(cloud)

    with _stage("octree", report):
        tree = build_adaptive_octree(cloud)
        report.l_avg = mean_leaf_size(tree)
        grid = uniformize(tree, cloud, config.alpha)
        report.l_p = grid.cell_size
        report.grid_level = grid.level
        report.n_cells = grid.n_cells
    del tree

    with _stage("clustering", report):
        if config.remove_outliers:
            labeling = connected_components(build_leaf_graph(grid))
            report.n_components = labeling.n_components
            report.component_cell_counts = labeling.sizes[: max(config.k, 10)].tolist()
            if config.k >= labeling.n_components:
                report.notes.append(
                    f"k={config.k} >= {labeling.n_components} components: every point kept"
                )
            subgrids = [grid.select_cells(labeling.labels == c) for c in range(min(config.k, labeling.n_components))]
        else:
            report.n_components = 1
            report.component_cell_counts = [grid.n_cells]
            subgrids = [grid]
    extracted = np.sort(np.concatenate([g.point_indices for g in subgrids]))
    report.n_extracted = len(extracted)
    report.label_counts["extracted"] = _label_counts(cloud.subset(extracted))

    outputs = []
    filtered_all = []
    smoothing = SmoothingConfig(config.lam, config.gamma, config.max_iterations)
    for rank, sub in enumerate(subgrids):
        with _stage("density_filter", report):
            if config.filter_noisy:
                res = prune_very_noisy(sub, config.beta)
                if res.guard:
                    report.guard_events.append(f"component {rank}: density filter guard '{res.guard}'")
                kept, iters, guard, stats = res.grid, res.iterations, res.guard, res.stats
                n_avg, n_sd = stats.n_avg, stats.n_sd
            else:
                kept, iters, guard, n_avg, n_sd = sub, 0, None, math.nan, math.nan
            filtered = np.sort(kept.point_indices)
            filtered_all.append(filtered)
        with _stage("smoothing", report):
            reps = build_representatives(cloud.subset(filtered), uniform=config.uniform_q, alpha=config.alpha)
            select_neighbors(reps)
            if config.smooth:
                result = smooth(reps, smoothing)
                positions, n_iter, cap = result.positions, result.iterations, result.cap
            else:
                positions, n_iter, cap = reps.positions.copy(), 0, 0
        outputs.append(positions)
        report.components.append(
            ComponentReport(
                cells=sub.n_cells,
                n_extracted=sub.n_points,
                n_filtered=len(filtered),
                n_representatives=len(reps),
                density_iterations=iters,
                density_guard=guard,
                n_avg=n_avg,
                n_sd=n_sd,
                iterations=n_iter,
                iteration_cap=cap,
            )
        )
    filtered_idx = np.sort(np.concatenate(filtered_all))
    report.n_filtered = len(filtered_idx)
    report.label_counts["filtered"] = _label_counts(cloud.subset(filtered_idx))
    report.n_representatives = sum(c.n_representatives for c in report.components)
    final = PointCloud(np.vstack(outputs))
    report.n_output = len(final)
    return final, report


def stage_subsets(cloud: PointCloud, config: PipelineConfig | None = None) -> dict[str, np.ndarray]:
    """Indices of the points retained after outlier removal and after density filtering."""
    config = config or PipelineConfig()
    tree = build_adaptive_octree(cloud)
    grid = uniformize(tree, cloud, config.alpha)
    labeling = connected_components(build_leaf_graph(grid))
    subs = [grid.select_cells(labeling.labels == c) for c in range(min(config.k, labeling.n_components))]
    extracted = np.sort(np.concatenate([g.point_indices for g in subs]))
    filtered = np.sort(np.concatenate([prune_very_noisy(g, config.beta).grid.point_indices for g in subs]))
    return {"extracted": extracted, "filtered": filtered}


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class AnalyticSurface:
    kind: str
    params: dict

    def distance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        c = np.array([self.params.get("cx", 0.0), self.params.get("cy", 0.0), self.params.get("cz", 0.0)])
        q = p - c
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(q, axis=1) - self.params.get("r", 1.0))
        if self.kind == "torus":
            big, small = self.params.get("R", 1.0), self.params.get("r", 0.25)
            ring = np.hypot(q[:, 0], q[:, 1]) - big
            return np.abs(np.hypot(ring, q[:, 2]) - small)
        if self.kind == "plane":
            n = np.array([self.params.get("nx", 0.0), self.params.get("ny", 0.0), self.params.get("nz", 1.0)])
            n = n / np.linalg.norm(n)
            return np.abs(p @ n - self.params.get("d", 0.0))
        raise ValueError(f"unknown surface kind {self.kind!r}")


_SURFACE_RE = re.compile(r"^(sphere|torus|plane)(?::(.*))?$")


def parse_surface(text: str) -> AnalyticSurface:
    """Parse descriptors such as ``sphere:r=1`` or ``torus:R=1,r=0.3,cz=0.5``."""
    m = _SURFACE_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad surface descriptor {text!r}")
    params = {}
    if m.group(2):
        for item in m.group(2).split(","):
            key, _, val = item.partition("=")
            if not _:
                raise ValueError(f"bad surface parameter {item!r}")
            params[key.strip()] = float(val)
    return AnalyticSurface(m.group(1), params)


def distance_metrics(dist: np.ndarray) -> dict[str, float]:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.size == 0:
        return {"n": 0, "rms": math.nan, "mean": math.nan, "max": math.nan}
    return {
        "n": int(dist.size),
        "rms": float(np.sqrt(np.mean(dist * dist))),
        "mean": float(dist.mean()),
        "max": float(dist.max()),
    }


def removal_metrics(input_labels: np.ndarray, kept_labels: np.ndarray) -> dict[str, float]:
    """Surface recall, noise removal rate and surface precision of a removal stage."""
    inp = np.asarray(input_labels)
    kept = np.asarray(kept_labels)
    n_surf = np.count_nonzero(inp == Label.SURFACE)
    n_noise = inp.size - n_surf
    kept_surf = np.count_nonzero(kept == Label.SURFACE)
    kept_noise = kept.size - kept_surf
    return {
        "surface_recall": kept_surf / n_surf if n_surf else math.nan,
        "noise_removed": 1.0 - kept_noise / n_noise if n_noise else math.nan,
        "precision": kept_surf / kept.size if kept.size else math.nan,
    }


def evaluate(points, surface: AnalyticSurface | str | None = None, reference=None) -> dict[str, float]:
    """Distance statistics of ``points`` to an analytic surface or a reference cloud.

    With a reference cloud the distance is one-sided: from each point to its
    nearest reference point.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    if surface is not None:
        if isinstance(surface, str):
            surface = parse_surface(surface)
        return distance_metrics(surface.distance(pts))
    if reference is not None:
        ref = reference.points if isinstance(reference, PointCloud) else np.asarray(reference)
        dist, _ = cKDTree(ref).query(pts, k=1)
        return distance_metrics(dist)
    raise ValueError("need a surface descriptor or a reference cloud")
