"""Command-line entry point: ``pcdenoise <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .contamination import NoiseSpec, contaminate
from .geometry import PointCloud
from .mesh import mesh_laplacian_smooth, prune_large_triangles
from .octree import build_adaptive_octree, leaf_statistics
from .pipeline import PipelineConfig, StageError, evaluate, run_pipeline

logger = logging.getLogger("pcdenoise")


def _write_json(path, payload) -> None:
    io.ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _read(path, stage="read"):
    try:
        return io.read_point_cloud(path)
    except (OSError, ValueError) as exc:
        raise StageError(stage, exc) from exc


def cmd_denoise(args) -> int:
    cloud = _read(args.input)
    config = PipelineConfig(
        alpha=args.alpha,
        beta=args.beta,
        lam=args.lam,
        gamma=args.gamma,
        k=args.k,
        seed=args.seed,
        max_iterations=args.max_iters,
        uniform_q=args.uniform_q,
    )
    out, report = run_pipeline(cloud, config)
    try:
        io.ensure_parent(args.output)
        io.write_point_cloud(args.output, out)
    except (OSError, ValueError) as exc:
        raise StageError("write", exc) from exc
    if args.report:
        payload = report.to_dict(timings=not args.no_timings)
        payload["config"] = vars(config)
        payload["iterations"] = report.iterations
        payload["iteration_cap"] = report.iteration_cap
        _write_json(args.report, payload)
    for event in report.guard_events:
        logger.warning(event)
    print(
        f"{report.n_input} -> {report.n_extracted} extracted -> {report.n_filtered} filtered "
        f"-> {report.n_output} representatives ({report.iterations} smoothing iterations)"
    )
    return 0


def cmd_contaminate(args) -> int:
    clean = _read(args.input)
    clean = PointCloud(clean.points)
    spec = NoiseSpec(
        gaussian_sigma_fraction=args.sigma_pct / 100.0,
        white_noise_count=args.white_noise,
        white_noise_fraction=None if args.white_noise_pct is None else args.white_noise_pct / 100.0,
        cluster_max_count=args.cluster_max,
        seed=args.seed,
    )
    try:
        result = contaminate(clean, spec)
    except ValueError as exc:
        raise StageError("contaminate", exc) from exc
    io.ensure_parent(args.output)
    io.write_ply(args.output, result.cloud.points, result.cloud.labels, binary=args.binary)
    sidecar = args.sidecar or f"{args.output}.json"
    _write_json(
        sidecar,
        {
            "spec": spec.to_dict(),
            "diagonal": result.diagonal,
            "n_isolated": result.n_isolated,
            "n_clusters": len(result.clusters),
            "counts": {lab: int(n) for lab, n in zip(("surface", "white_noise", "outlier"), np.bincount(result.cloud.labels, minlength=3))},
        },
    )
    print(f"wrote {len(result.cloud)} points ({len(result.clusters)} clusters) to {args.output}")
    return 0


def cmd_octree_stats(args) -> int:
    cloud = _read(args.input)
    try:
        tree = build_adaptive_octree(cloud)
    except Exception as exc:
        raise StageError("octree", exc) from exc
    print(leaf_statistics(tree, args.alpha))
    return 0


def cmd_mesh_post(args) -> int:
    try:
        mesh = io.read_mesh(args.input)
    except (OSError, ValueError) as exc:
        raise StageError("read", exc) from exc
    n_before = len(mesh.triangles)
    try:
        if not args.skip_prune:
            mesh = prune_large_triangles(mesh, args.epsilon)
        if args.iterations:
            mesh = mesh_laplacian_smooth(mesh, args.iterations, args.step)
        if args.compact:
            mesh = mesh.compact()
    except ValueError as exc:
        raise StageError("mesh_post", exc) from exc
    io.ensure_parent(args.output)
    io.write_mesh(args.output, mesh)
    print(f"{n_before} -> {len(mesh.triangles)} triangles")
    return 0


def cmd_eval(args) -> int:
    cloud = _read(args.input)
    ref = _read(args.ref) if args.ref else None
    try:
        metrics = evaluate(cloud, surface=args.surface, reference=ref)
    except ValueError as exc:
        raise StageError("eval", exc) from exc
    print(json.dumps(metrics, indent=2, sort_keys=True, default=_json_default))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcdenoise", description="Octree-based point-cloud denoising.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="run the full denoising pipeline")
    d.add_argument("input")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--alpha", type=float, default=2.0)
    d.add_argument("--beta", type=float, default=2.0)
    d.add_argument("--lambda", dest="lam", type=float, default=0.25)
    d.add_argument("--gamma", type=float, default=40.0)
    d.add_argument("-k", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--max-iters", type=int, default=None)
    d.add_argument("--uniform-q", action="store_true", help="smooth per uniform-grid cell instead of per octree leaf")
    d.add_argument("--report", help="write the JSON run report here")
    d.add_argument("--no-timings", action="store_true", help="omit wall-clock timings from the report")
    d.set_defaults(func=cmd_denoise)

    c = sub.add_parser("contaminate", help="add synthetic noise to a clean cloud")
    c.add_argument("input")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--sigma-pct", type=float, default=0.0, help="Gaussian sigma in percent of the diagonal")
    c.add_argument("--white-noise", type=int, default=5000)
    c.add_argument("--white-noise-pct", type=float, default=None, help="white noise as percent of the input size")
    c.add_argument("--cluster-max", type=int, default=400)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--sidecar", help="JSON sidecar path (default: <output>.json)")
    c.add_argument("--binary", action="store_true")
    c.set_defaults(func=cmd_contaminate)

    o = sub.add_parser("octree-stats", help="print adaptive octree statistics")
    o.add_argument("input")
    o.add_argument("--alpha", type=float, default=2.0)
    o.set_defaults(func=cmd_octree_stats)

    m = sub.add_parser("mesh-post", help="prune oversized triangles and optionally smooth")
    m.add_argument("input")
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--epsilon", type=float, default=10.0)
    m.add_argument("--skip-prune", action="store_true")
    m.add_argument("--iterations", type=int, default=3, help="1-ring smoothing passes after pruning (0 disables)")
    m.add_argument("--step", type=float, default=0.5)
    m.add_argument("--compact", action="store_true")
    m.set_defaults(func=cmd_mesh_post)

    e = sub.add_parser("eval", help="distance of a cloud to ground truth")
    e.add_argument("input")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--surface", help="e.g. sphere:r=1, torus:R=1,r=0.3, plane:nz=1,d=0")
    g.add_argument("--ref", help="reference cloud for one-sided nearest distances")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: stage 'config': {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
