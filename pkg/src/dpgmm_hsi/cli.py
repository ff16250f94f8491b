"""Command-line pipeline: synth -> fit -> segment -> eval, plus bench and render.

Exit codes: 0 success, 2 input/validation error, 3 fit stopped at
``--max-epochs`` without converging (outputs are still written).
Set ``DPGMM_HSI_LOG=debug`` (or pass ``-v`` to ``fit``) for per-epoch records
on standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .baselines import BenchConfig, run_bench
from .hsi_io import (DEFAULT_RGB_NM, CubeFormatError, apply_standardization, load_class_table,
                     ground_truth_from_labels, load_cube, load_label_raster,
                     render_pseudocolor, save_cube, save_label_raster, standardize)
from .metrics import match_segments
from .model import load_model, save_model
from .plotting import (label_colors, overlay_boundaries, plot_bench, plot_eval,
                       plot_loss_trace, save_rgb)
from .segmentation import (SegmentMap, assign_clusters, boundaries, connected_components,
                           merge_small_segments)
from .seeding import DEFAULT_SEED
from .synth import SceneSpec, default_scene_spec, sample_scene, scene_class_table
from .trainer import FitConfig, FitDivergedError, fit

log = logging.getLogger("dpgmm_hsi")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3


class InputError(Exception):
    pass


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _write_manifest(args, config: dict, inputs: dict, outputs: list[str], t0: float) -> str:
    path = os.path.join(args.out, f"{args.command}_manifest.json")
    _write_json(path, {
        "subcommand": args.command,
        "config": config,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "wall_time": time.perf_counter() - t0,
    })
    return path


def _out(args, name: str) -> str:
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    if args.spec == "default":
        spec = default_scene_spec(args.true_k, height=args.height, width=args.width,
                                  bands=args.bands, noisy_fraction=args.noisy_fraction,
                                  seed=args.seed)
    else:
        doc = SceneSpec.from_json(args.spec).to_dict()
        doc["noise_seed"] = args.seed
        spec = SceneSpec.from_dict(doc)
    cube, gt, truth = sample_scene(spec)
    outputs = ["scene.hdr", "scene.img", "ground_truth.hdr", "ground_truth.img",
               "ground_truth.classes.json", "truth.hdr", "truth.img", "scene_spec.json",
               "scene_rgb.png"]
    save_cube(cube, _out(args, "scene.hdr"))
    table = scene_class_table(spec)
    gt_labels = np.zeros_like(truth)
    for reg in gt.regions:
        gt_labels[reg.pixels[:, 0], reg.pixels[:, 1]] = reg.label_value
    save_label_raster(gt_labels, _out(args, "ground_truth.hdr"), table)
    save_label_raster(truth, _out(args, "truth.hdr"))
    _write_json(_out(args, "scene_spec.json"), spec.to_dict())
    save_rgb(render_pseudocolor(cube), _out(args, "scene_rgb.png"))
    _write_manifest(args, {"spec": args.spec, "true_k": spec.true_k,
                           "noisy_fraction": args.noisy_fraction},
                    {}, outputs, t0)
    print(f"wrote {spec.height}x{spec.width}x{spec.bands} scene with {spec.true_k} "
          f"components to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    cube = load_cube(args.cube)
    std_cube, stats = standardize(cube)
    config = FitConfig(max_k=args.max_k, max_epochs=args.max_epochs,
                       batch_size=args.batch_size, learning_rate=args.learning_rate,
                       lr_decay=args.lr_decay, rel_tol=args.rel_tol, patience=args.patience,
                       prune_threshold=args.prune_threshold, seed=args.seed,
                       prune_search=not args.no_prune_search)
    verbose = args.verbose or log.isEnabledFor(logging.DEBUG)
    report = fit(std_cube.pixels(), config, threads=args.threads, verbose=verbose)
    save_model(_out(args, "model.json"), report.final_params, stats)
    # wall time lives in the manifest so the report stays reproducible
    _write_json(_out(args, "fit_report.json"), report.to_dict(include_wall_time=False))
    plot_loss_trace(report.loss_trace, _out(args, "loss_trace.png"), report.stage_starts)
    _write_manifest(args, {**report.to_dict()["config"], "threads": args.threads},
                    {"cube": args.cube},
                    ["model.json", "fit_report.json", "loss_trace.png"], t0)
    status = "converged" if report.converged else "stopped at max epochs"
    print(f"effective_k={report.effective_k} epochs={report.epochs_run} "
          f"loss={report.loss_trace[-1]:.6f} ({status})")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_segment(args) -> int:
    t0 = time.perf_counter()
    theta, stats = load_model(args.model)
    cube = load_cube(args.cube)
    if cube.bands != theta.d:
        raise InputError(f"model has {theta.d} bands but {args.cube} has {cube.bands}")
    std_cube = apply_standardization(cube, stats) if stats is not None else standardize(cube)[0]
    cmap = assign_clusters(theta, std_cube, weighted=args.weighted, threads=args.threads)
    smap = connected_components(cmap)
    if args.min_segment > 1:
        cmap, smap = merge_small_segments(cmap, smap, args.min_segment)
    edges = boundaries(smap)
    save_label_raster(cmap.labels, _out(args, "clusters.hdr"))
    save_label_raster(smap.segment_ids, _out(args, "segments.hdr"))
    _write_json(_out(args, "segments.json"),
                {"n_segments": smap.n_segments, "k": theta.k,
                 "segments": [s.to_dict() for s in smap.segments]})
    rgb = render_pseudocolor(cube, *args.rgb)
    save_rgb(overlay_boundaries(rgb, edges), _out(args, "boundaries.png"))
    save_rgb(label_colors(cmap.labels), _out(args, "clusters.png"))
    outputs = ["clusters.hdr", "clusters.img", "segments.hdr", "segments.img",
               "segments.json", "boundaries.png", "clusters.png"]
    _write_manifest(args, {"min_segment": args.min_segment, "weighted": args.weighted,
                           "rgb_nm": list(args.rgb), "threads": args.threads},
                    {"model": args.model, "cube": args.cube}, outputs, t0)
    print(f"{smap.n_segments} segments from {theta.k} clusters")
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    seg_ids = load_label_raster(args.segments)
    labels = load_label_raster(args.ground_truth)
    if labels.shape != seg_ids.shape:
        raise InputError(f"ground truth is {labels.shape[0]}x{labels.shape[1]}, "
                         f"segments are {seg_ids.shape[0]}x{seg_ids.shape[1]}")
    if args.cube:
        mask = load_cube(args.cube).mask
        if mask.shape != labels.shape:
            raise InputError(f"{args.cube} does not match the ground truth dimensions")
    else:
        mask = seg_ids > 0
    gt = ground_truth_from_labels(labels, load_class_table(args.ground_truth), mask)
    if not gt.regions:
        raise InputError(f"no regions in ground truth {args.ground_truth}")
    report = match_segments(gt, SegmentMap.from_ids(seg_ids))
    with open(_out(args, "eval.json"), "w") as fh:
        fh.write(report.to_json())
    with open(_out(args, "eval.csv"), "w") as fh:
        fh.write(report.to_csv())
    plot_eval(report, _out(args, "eval.png"))
    _write_manifest(args, {}, {"segments": args.segments, "ground_truth": args.ground_truth,
                               "cube": args.cube}, ["eval.json", "eval.csv", "eval.png"], t0)
    overall = report.overall
    if overall is None:
        print(f"no region overlaps any segment ({len(report.unmatched_regions)} unmatched)")
    else:
        print(f"regions={overall['count']} unmatched={len(report.unmatched_regions)} "
              f"OS={overall['os']['mean']:.4f} US={overall['us']['mean']:.4f} "
              f"ED={overall['ed']['mean']:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    cube = load_cube(args.cube)
    model = load_model(args.model)[0] if args.model else None
    config = BenchConfig(dataset_name=args.name, k=args.k, repeats=args.repeats,
                         seed=args.seed, threads=args.threads)
    result = run_bench(cube, config, model)
    with open(_out(args, "bench.json"), "w") as fh:
        fh.write(result.to_json())
    plot_bench(result, _out(args, "bench.png"))
    _write_manifest(args, {"k": args.k, "repeats": args.repeats, "threads": args.threads},
                    {"cube": args.cube, "model": args.model}, ["bench.json", "bench.png"], t0)
    print(result.table())
    return EXIT_OK


def cmd_render(args) -> int:
    t0 = time.perf_counter()
    cube = load_cube(args.cube)
    save_rgb(render_pseudocolor(cube, args.red, args.green, args.blue),
             _out(args, "pseudocolor.png"))
    _write_manifest(args, {"rgb_nm": [args.red, args.green, args.blue]},
                    {"cube": args.cube}, ["pseudocolor.png"], t0)
    print(f"wrote {_out(args, 'pseudocolor.png')}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpgmm-hsi",
        description="Hyperspectral clustering with a Dirichlet-process Gaussian mixture.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=False):
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help=f"seed for every random choice (default {DEFAULT_SEED})")
        if threads:
            p.add_argument("--threads", type=int, default=1,
                           help="worker threads for per-pixel work; results do not depend on it")

    p = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    p.add_argument("--spec", default="default",
                   help="'default' or a scene-spec JSON file (its noise seed is replaced by --seed)")
    p.add_argument("--true-k", type=int, default=3, help="components in the default scene")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=20)
    p.add_argument("--noisy-fraction", type=float, default=0.0,
                   help="fraction of highest bands whose noise sigma is doubled")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit the mixture to a cube")
    p.add_argument("cube", help="ENVI header (.hdr) of the cube")
    d = FitConfig()
    p.add_argument("--max-k", type=int, default=d.max_k, help="maximum number of clusters")
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="0 = full batch")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay,
                   help="step-size factor applied after `patience` epochs without a new best")
    p.add_argument("--rel-tol", type=float, default=d.rel_tol)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--prune-threshold", type=float, default=d.prune_threshold,
                   help="minimum mixture weight of an active cluster")
    p.add_argument("--no-prune-search", action="store_true",
                   help="skip the collapse-and-refit search for redundant clusters")
    p.add_argument("-v", "--verbose", action="store_true", help="per-epoch records on stderr")
    common(p, threads=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("segment", help="cluster map, segments and boundary overlay")
    p.add_argument("model", help="model JSON written by fit")
    p.add_argument("cube", help="ENVI header (.hdr) of the cube")
    p.add_argument("--min-segment", type=int, default=0,
                   help="merge segments smaller than this many pixels into a neighbour")
    p.add_argument("--weighted", action="store_true",
                   help="weight component densities by the mixture weights when assigning")
    p.add_argument("--rgb", type=float, nargs=3, default=list(DEFAULT_RGB_NM),
                   metavar=("RED", "GREEN", "BLUE"), help="overlay band wavelengths (nm)")
    common(p, threads=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="OS/US/ED of segments against ground truth")
    p.add_argument("segments", help="segment raster header written by segment")
    p.add_argument("ground_truth", help="label raster header with .classes.json sidecar")
    p.add_argument("--cube", help="cube header; its background mask validates the ground truth")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time DPGMM inference against k-means")
    p.add_argument("cube", help="ENVI header (.hdr) of the cube")
    p.add_argument("--model", help="fitted model JSON; fitted on a subsample when omitted")
    p.add_argument("--k", type=int, default=5, help="clusters for k-means and the fallback fit")
    p.add_argument("--repeats", type=int, default=5, help="timing runs (median reported)")
    p.add_argument("--name", default="synthetic", help="dataset name in the table")
    common(p, threads=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="pseudocolour PNG from three bands")
    p.add_argument("cube", help="ENVI header (.hdr) of the cube")
    p.add_argument("--red", type=float, default=DEFAULT_RGB_NM[0], help="nm (default 670)")
    p.add_argument("--green", type=float, default=DEFAULT_RGB_NM[1], help="nm (default 540)")
    p.add_argument("--blue", type=float, default=DEFAULT_RGB_NM[2], help="nm (default 470)")
    common(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DPGMM_HSI_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
    except (InputError, CubeFormatError, FitDivergedError, ValueError, OSError,
            KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
