"""Command-line pipeline driver and ablation harness.

Subcommands cover the full workflow: mesh sampling, clustering, training,
reconstruction, likelihood scoring, evaluation, and the two ablation sweeps
(number of reference points; kernel choice).

Exit codes: 0 success, 1 domain error (bad data, failed fit), 2 usage or
file error.  Heavy imports happen inside the command functions so that
``--threads`` can cap BLAS pools before numpy is first loaded.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

ALL_KERNEL_KINDS = ("rq", "rbf", "matern", "periodic", "linear", "polynomial")


def _log(message):
    print(message, file=sys.stderr)


def _load_config(args):
    """RunConfig from --config file (if any) with CLI flags layered on top."""
    from .io import RunConfig, apply_overrides, load_run_config

    config = load_run_config(args.config) if args.config else RunConfig()
    return apply_overrides(
        config,
        k=getattr(args, "k", None),
        kernel=getattr(args, "kernel", None),
        overlap=getattr(args, "overlap", None),
        seed=getattr(args, "seed", None),
        tau=getattr(args, "tau", None),
        queries=getattr(args, "queries", None),
        centers=getattr(args, "centers", None),
        clustering="manual" if getattr(args, "centers", None) else None,
    )


def _kernel_from_config(config):
    from .kernels import make_kernel

    try:
        return make_kernel(config.kernel, config.distance_mode, **config.kernel_params)
    except TypeError:
        raise ValueError(
            f"kernel {config.kernel!r} does not accept parameters "
            f"{sorted(config.kernel_params)}"
        ) from None


def _optimizer_from_config(config):
    from .gp import OptimizerConfig

    return OptimizerConfig(initial_lr=config.initial_lr, max_iters=config.max_iters)


def _build_refs(points, config):
    import numpy as np

    from .io import load_point_cloud
    from .partition import ReferenceSet, em_gmm, kmeans

    if config.clustering == "manual":
        centers = np.atleast_2d(load_point_cloud(config.centers))
        return ReferenceSet.manual(centers)
    if config.clustering == "em":
        return em_gmm(points, config.k, seed=config.seed)
    return kmeans(points, config.k, seed=config.seed)


def _train_model(points, config):
    """Train a mixture per ``config``; returns (model, wall_seconds)."""
    from .mixture import train

    start = time.perf_counter()
    refs = _build_refs(points, config)
    model = train(
        points,
        refs,
        _kernel_from_config(config),
        config=_optimizer_from_config(config),
        overlap_fraction=config.overlap,
        seed=config.seed,
        auto_lengthscale=config.auto_lengthscale,
    )
    return model, time.perf_counter() - start


def _reconstruct_cloud(model, total_queries):
    """Reconstruct with the total query budget split evenly over clusters."""
    from .mixture import reconstruct

    per_cluster = -(-total_queries // model.n_clusters)  # ceil division
    return reconstruct(model, per_cluster)


def cmd_sample(args):
    from .geometry import TriangleMesh, normalize_to_unit_sphere, sample_surface
    from .io import disjoint_subsample, load_mesh, save_normalization, save_xyz

    mesh = load_mesh(args.mesh)
    vertices, center, scale = normalize_to_unit_sphere(mesh.vertices)
    normalized = TriangleMesh(vertices=vertices, faces=mesh.faces)
    dense = sample_surface(normalized, n_cameras=args.cameras, rays_per_camera=args.rays)
    _log(f"sampled {len(dense)} unique surface points from {mesh.n_faces} faces")
    if len(dense) < args.train_size + args.test_size:
        raise ValueError(
            f"dense cloud has {len(dense)} points; need {args.train_size + args.test_size} "
            "for disjoint train/test splits (increase --cameras or --rays)"
        )
    train_pts, test_pts = disjoint_subsample(
        dense, args.train_size, args.test_size, seed=args.seed
    )
    os.makedirs(args.out, exist_ok=True)
    save_xyz(os.path.join(args.out, "dense.xyz"), dense)
    save_xyz(os.path.join(args.out, "train.xyz"), train_pts)
    save_xyz(os.path.join(args.out, "test.xyz"), test_pts)
    save_normalization(os.path.join(args.out, "normalization.txt"), center, scale)
    _log(f"wrote dense/train/test clouds and normalization sidecar to {args.out}")
    return 0


def cmd_cluster(args):
    from .io import apply_overrides, load_point_cloud, save_xyz

    config = _load_config(args)
    config = apply_overrides(config, clustering=args.method)
    points = load_point_cloud(args.input)
    refs = _build_refs(points, config)
    save_xyz(args.out, refs.centers)
    _log(f"wrote {len(refs.centers)} {refs.source} centers to {args.out}")
    return 0


def cmd_train(args):
    import dataclasses

    from .gp import log_marginal_likelihood
    from .io import load_normalization, load_point_cloud, save_model
    from .mixture import Normalization

    config = _load_config(args)
    points = load_point_cloud(args.input)
    model, seconds = _train_model(points, config)
    if args.normalization:
        center, scale = load_normalization(args.normalization)
        model = dataclasses.replace(
            model, normalization=Normalization(center=center, scale=scale)
        )
    meta = model.training_meta
    for k, regressor in enumerate(model.regressors):
        _log(
            f"cluster {k}: {meta.primary_counts[k]} members "
            f"({meta.training_counts[k]} with overlap), "
            f"kernel {regressor.kernel.kind}, "
            f"LML {log_marginal_likelihood(regressor):.3f}"
        )
    _log(f"trained {model.n_clusters} regressors in {seconds:.1f}s")
    save_model(args.out, model)
    _log(f"wrote model to {args.out}")
    return 0


def cmd_reconstruct(args):
    from .io import load_model, save_ply, save_xyz
    from .mixture import de_normalize

    model = load_model(args.model)
    cloud = _reconstruct_cloud(model, args.queries)
    if args.denormalize:
        cloud = de_normalize(cloud, model)
    writer = save_ply if str(args.out).lower().endswith(".ply") else save_xyz
    writer(args.out, cloud.points)
    _log(f"wrote {len(cloud)} reconstructed points to {args.out}")
    return 0


def cmd_likelihood(args):
    import numpy as np

    from .io import load_model, load_point_cloud
    from .mixture import point_likelihoods

    model = load_model(args.model)
    points = load_point_cloud(args.input)
    values = point_likelihoods(points, model)
    lines = "".join(f"{v:.9g}\n" for v in values)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(lines)
        _log(f"wrote {len(values)} likelihoods to {args.out}")
    else:
        sys.stdout.write(lines)
    _log(
        f"likelihood: min {values.min():.4g}, median {np.median(values):.4g}, "
        f"max {values.max():.4g}"
    )
    return 0


def cmd_eval(args):
    from .io import load_model, load_point_cloud, save_heatmap_ply
    from .metrics import error_heatmap, evaluate

    model = load_model(args.model)
    gt = load_point_cloud(args.test)
    cloud = _reconstruct_cloud(model, args.queries)
    report = evaluate(gt, cloud.points, tau=args.tau, seed=args.seed)
    line = report.to_json()
    print(line)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(line + "\n")
        _log(f"wrote report to {args.report}")
    if args.heatmap:
        save_heatmap_ply(args.heatmap, gt, error_heatmap(gt, cloud.points))
        _log(f"wrote heatmap over {len(gt)} ground-truth points to {args.heatmap}")
    return 0


_ABLATION_FIELDS = ("chamfer", "precision", "recall", "fscore", "train_seconds", "status")


def _evaluate_run(points_test, model, seconds, config):
    from .metrics import evaluate

    cloud = _reconstruct_cloud(model, config.queries)
    report = evaluate(points_test, cloud.points, tau=config.tau, seed=config.seed)
    return {
        "chamfer": f"{report.chamfer:.9g}",
        "precision": f"{report.precision:.6f}",
        "recall": f"{report.recall:.6f}",
        "fscore": f"{report.fscore:.6f}",
        "train_seconds": f"{seconds:.2f}",
        "status": "ok",
    }


def _failed_row(exc):
    row = {field: "" for field in _ABLATION_FIELDS}
    row["status"] = "error"
    _log(f"run failed: {exc}")
    return row


def cmd_ablate_k(args):
    import dataclasses

    from .io import load_point_cloud

    config = _load_config(args)
    k_list = [int(v) for v in args.k_list.split(",") if v.strip()]
    if not k_list:
        raise ValueError("--k-list must name at least one cluster count")
    points_train = load_point_cloud(args.train)
    points_test = load_point_cloud(args.test)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("k",) + _ABLATION_FIELDS)
        writer.writeheader()
        for k in k_list:
            _log(f"=== K = {k} ===")
            try:
                run_config = dataclasses.replace(config, k=k)
                model, seconds = _train_model(points_train, run_config)
                row = _evaluate_run(points_test, model, seconds, run_config)
            except (ValueError, FloatingPointError) as exc:
                row = _failed_row(exc)
            writer.writerow({"k": k, **row})
    _log(f"wrote {len(k_list)} rows to {args.out}")
    return 0


def cmd_ablate_kernel(args):
    import dataclasses

    from .io import load_point_cloud
    from .mixture import train

    config = _load_config(args)
    kinds = (
        [v.strip() for v in args.kernels.split(",") if v.strip()]
        if args.kernels
        else list(ALL_KERNEL_KINDS)
    )
    points_train = load_point_cloud(args.train)
    points_test = load_point_cloud(args.test)
    # One set of reference points, shared by every kernel run.
    refs = _build_refs(points_train, config)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("kernel",) + _ABLATION_FIELDS)
        writer.writeheader()
        for kind in kinds:
            _log(f"=== kernel = {kind} ===")
            try:
                run_config = dataclasses.replace(config, kernel=kind)
                start = time.perf_counter()
                model = train(
                    points_train,
                    refs,
                    _kernel_from_config(run_config),
                    config=_optimizer_from_config(run_config),
                    overlap_fraction=run_config.overlap,
                    seed=run_config.seed,
                    auto_lengthscale=run_config.auto_lengthscale,
                )
                seconds = time.perf_counter() - start
                row = _evaluate_run(points_test, model, seconds, run_config)
            except (ValueError, FloatingPointError) as exc:
                row = _failed_row(exc)
            writer.writerow({"kernel": kind, **row})
    _log(f"wrote {len(kinds)} rows to {args.out}")
    return 0


def cmd_inspect(args):
    from .gp import log_marginal_likelihood
    from .io import load_model

    model = load_model(args.model)
    norm = model.normalization
    print(f"clusters: {model.n_clusters}")
    print(f"reference source: {model.refs.source}")
    print(
        f"normalization: center ({norm.center[0]:.6g}, {norm.center[1]:.6g}, "
        f"{norm.center[2]:.6g}), scale {norm.scale:.6g}"
    )
    for k, regressor in enumerate(model.regressors):
        center = model.refs.centers[k]
        hypers = ", ".join(
            f"{name}={value:.4g}" for name, value in regressor.kernel.hyperparams().items()
        )
        print(
            f"cluster {k}: center ({center[0]:.4g}, {center[1]:.4g}, {center[2]:.4g}), "
            f"kernel {regressor.kernel.kind}[{regressor.kernel.distance_mode}] ({hypers}), "
            f"M={len(regressor.training)}, jitter={regressor.jitter:.1g}, "
            f"LML={log_marginal_likelihood(regressor):.3f}"
        )
    return 0


def _add_common_flags(parser):
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--seed", type=int, help="seed for all randomness")
    parser.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gpshape",
        description="Train and evaluate mixtures of GP directional distance fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="raycast a mesh into dense + train/test clouds")
    p.add_argument("--mesh", required=True, help="input OBJ mesh")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cameras", type=int, default=64)
    p.add_argument("--rays", type=int, default=4096, help="rays per camera")
    p.add_argument("--train-size", type=int, default=10_000)
    p.add_argument("--test-size", type=int, default=30_000)
    _add_common_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("cluster", help="compute reference points for a cloud")
    p.add_argument("--input", required=True, help="point cloud (xyz/ply/obj)")
    p.add_argument("--out", required=True, help="output centers file (xyz)")
    p.add_argument("--k", type=int, help="number of clusters")
    p.add_argument("--method", choices=("kmeans", "em"))
    _add_common_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="fit a shape model to a training cloud")
    p.add_argument("--input", required=True, help="training point cloud")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--k", type=int)
    p.add_argument("--kernel", choices=ALL_KERNEL_KINDS)
    p.add_argument("--overlap", type=float)
    p.add_argument("--centers", help="manual reference-point file (xyz)")
    p.add_argument(
        "--normalization", help="sidecar from `sample`, stored for de-normalization"
    )
    _add_common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="query a model into a point cloud")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output cloud (.xyz or .ply)")
    p.add_argument("--queries", type=int, default=30_000, help="total query budget")
    p.add_argument(
        "--denormalize", action="store_true", help="map back to original coordinates"
    )
    _add_common_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("likelihood", help="score points under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="points to score")
    p.add_argument("--out", help="output text file (default: stdout)")
    _add_common_flags(p)
    p.set_defaults(func=cmd_likelihood)

    p = sub.add_parser("eval", help="reconstruct and compare against a test cloud")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="ground-truth cloud")
    p.add_argument("--report", help="output JSON report path")
    p.add_argument("--heatmap", help="output colored PLY heatmap path")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--queries", type=int, default=30_000)
    _add_common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-k", help="sweep the number of reference points")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--k-list", required=True, help="comma-separated cluster counts")
    p.add_argument("--kernel", choices=ALL_KERNEL_KINDS)
    p.add_argument("--overlap", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--queries", type=int)
    p.add_argument("--out", required=True, help="output CSV")
    _add_common_flags(p)
    p.set_defaults(func=cmd_ablate_k)

    p = sub.add_parser("ablate-kernel", help="sweep kernel kinds at fixed references")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--kernels", help="comma-separated kinds (default: all six)")
    p.add_argument("--k", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--queries", type=int)
    p.add_argument("--centers", help="manual reference-point file (xyz)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common_flags(p)
    p.set_defaults(func=cmd_ablate_kernel)

    p = sub.add_parser("inspect", help="print a model file summary")
    p.add_argument("--model", required=True)
    _add_common_flags(p)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            _log("error: --threads must be positive")
            return 2
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _log(f"error: file not found: {exc.filename or exc}")
        return 2
    except IsADirectoryError as exc:
        _log(f"error: {exc}")
        return 2
    except Exception as exc:
        from .io import FileFormatError

        if isinstance(exc, FileFormatError):
            _log(f"error: {exc}")
            return 2
        if isinstance(exc, ValueError):
            _log(f"error: {exc}")
            return 1
        import numpy as np

        if isinstance(exc, np.linalg.LinAlgError):
            _log(f"error: {exc}")
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
