"""Command-line interface: ``mcac <subcommand> [options] --out DIR``.

Exit status is 0 on success, 1 on a usage or configuration error and 2 when the
computation itself fails.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .contour import ContourPolyline, read_contours_csv, write_contours_csv
from .core import ScalarField2D, read_pgm, read_raw_array, write_pgm, write_raw_field
from .errors import ConfigError, McacError
from .matching import (AlignConfig, MatchProblem, default_epsilon, initial_alignment,
                       read_correspondences_csv, read_points_csv, refine_alignment,
                       write_correspondences_csv, write_points_csv)
from .metrics import jaccard, normalized_hausdorff
from .optimizer import write_trajectory_csv
from .pipeline import (PipelineConfig, SegmentSettings, contour_nhd, contours_or_empty, region_mask,
                       segment)
from .shape_model import (HeavisideParams, RbfShapeModel, TrainConfig, default_sigma_grid,
                          fit_score, load_model, mask_centers, mask_centroid, save_model,
                          select_sigma, sigma_scores, train)
from .synth import render_mask, synth_affine_suite, synth_noise_suite, template_pose, template_shapes

log = logging.getLogger("mcac")

POSE_HEADER = ["a11", "a12", "a21", "a22", "b1", "b2"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _shape(name: str):
    shapes = {s.name: s for s in template_shapes()}
    if name not in shapes:
        raise UsageError(f"unknown shape {name!r}; choose from {', '.join(shapes)}")
    return shapes[name]


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    return p


def load_mask(path) -> ScalarField2D:
    v = read_pgm(_need(path)).values
    return ScalarField2D((v > max(v.max(), 1.0) / 2.0).astype(float))


def _save_mask(path, mask) -> None:
    v = mask.values if isinstance(mask, ScalarField2D) else np.asarray(mask)
    write_pgm(path, (v > 0.5) * 255.0, maxval=255)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sigmas(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad list of numbers: {text!r}") from None
    if not vals:
        raise UsageError("empty list of numbers")
    return vals


# -- subcommands -----------------------------------------------------------

def cmd_train_shape(args) -> int:
    mask = load_mask(args.mask)
    origin = args.origin if args.origin is not None else mask_centroid(mask)
    h = HeavisideParams(args.epsilon_h)
    centers = mask_centers(mask, args.spacing, args.margin, origin)
    sigma = args.sigma if args.sigma is not None else select_sigma(mask, centers, h, origin=origin)
    history: list[float] = []
    model = train(RbfShapeModel.initial(centers, sigma), mask, h,
                  TrainConfig(max_iters=args.max_iters, history=history), origin)
    out = _out(args)
    save_model(model, out / "model.txt")
    ex.write_rows(out / "train_log.csv", ["iter", "fit_error"], list(enumerate(history)))
    score = fit_score(model, mask, h, origin)
    ex.write_rows(out / "metrics.csv", ["metric", "value"],
                  [("sigma", float(sigma)), ("fit_score", score), ("centers", model.n)])
    print(f"fit_score,{score:.6f}")
    return 0


def cmd_select_sigma(args) -> int:
    mask = load_mask(args.mask)
    origin = args.origin if args.origin is not None else mask_centroid(mask)
    h = HeavisideParams(args.epsilon_h)
    centers = mask_centers(mask, args.spacing, args.margin, origin)
    grid = default_sigma_grid() if args.candidates is None else np.sort(_sigmas(args.candidates))
    scores = sigma_scores(mask, centers, h, grid, origin)
    best = select_sigma(mask, centers, h, grid, origin)
    ex.write_rows(_out(args) / "sigma_scores.csv", ["sigma", "score"],
                  [(float(s), float(v)) for s, v in zip(grid, scores)])
    print(f"sigma,{best:.6f}")
    return 0


def _write_pose(path, poses: dict) -> None:
    ex.write_rows(path, ["stage"] + POSE_HEADER,
                  [(k, *map(float, p.params())) for k, p in poses.items()])


def cmd_align(args) -> int:
    model = load_model(_need(args.model))
    tgt = read_points_csv(_need(args.points))
    corr = read_correspondences_csv(_need(args.correspondences))
    cost = read_raw_array(_need(args.cost)) if args.cost else np.zeros((model.n, len(tgt)))
    eps = args.epsilon if args.epsilon is not None else default_epsilon(tgt)
    pose_ls = initial_alignment(model.centers, tgt, corr)
    pose = refine_alignment(MatchProblem(model.centers, tgt, cost, eps), pose_ls, AlignConfig())
    out = _out(args)
    _write_pose(out / "pose.csv", {"least_squares": pose_ls, "refined": pose})
    write_contours_csv(out / "contour.csv", contours_or_empty(model, pose, args.width, args.height))
    _save_mask(out / "mask.pgm", region_mask(model, pose, args.width, args.height))
    return 0


def _settings(args) -> SegmentSettings:
    return SegmentSettings(sigma_g=args.sigma_g, epsilon=args.epsilon, tau_ratio=args.tau_ratio,
                           max_iters=args.max_iters)


def cmd_segment(args) -> int:
    if args.suite is not None:
        return _segment_suite(args)
    missing = [f"--{n}" for n in ("image", "points", "correspondences")
               if getattr(args, n) is None]
    if missing:
        raise UsageError(f"segment needs {', '.join(missing)} (or --suite)")
    cfg = PipelineConfig(Path(args.image), Path(args.model), Path(args.points),
                         Path(args.correspondences), Path(args.cost) if args.cost else None,
                         Path(args.truth) if args.truth else None, _settings(args))
    res = segment(cfg)
    out = _out(args)
    write_trajectory_csv(out / "trajectory.csv", res.trajectory)
    _write_pose(out / "pose.csv", {"initial": res.initial_pose, "final": res.final_pose})
    write_contours_csv(out / "initial_contour.csv", res.initial_contours)
    write_contours_csv(out / "final_contour.csv", res.final_contours)
    _save_mask(out / "final_mask.pgm", res.final_mask)
    if res.final_jaccard is not None:
        ex.write_rows(out / "metrics.csv", ["metric", "value"],
                      [("initial_jaccard", res.initial_jaccard), ("final_jaccard", res.final_jaccard)])
        print(f"jaccard,{res.final_jaccard:.6f}")
    return 0


def _segment_suite(args) -> int:
    _need(args.model)
    suite = Path(args.suite)
    dirs = sorted(p for p in suite.glob("instance_*") if p.is_dir())
    if not dirs:
        raise ConfigError(f"no instance_* directories in {suite}")
    rows = []
    for k, d in enumerate(dirs):
        cfg = PipelineConfig(d / "image.pgm", Path(args.model), d / "points.csv",
                             d / "correspondences.csv", d / "cost.raw", None, _settings(args))
        res = segment(cfg)
        truth = load_mask(d / "truth.pgm")
        gt = read_contours_csv(d / "truth_contour.csv")
        rows.append((k, jaccard(res.initial_mask, truth), jaccard(res.final_mask, truth),
                     contour_nhd(res.initial_contours, gt), contour_nhd(res.final_contours, gt)))
    ex.write_rows(_out(args) / "batch.csv", ex.BATCH_HEADER, rows)
    return 0


def cmd_eval(args) -> int:
    j = jaccard(load_mask(args.pred), load_mask(args.truth))
    rows = [("jaccard", j)]
    if args.pred_contour and args.truth_contour:
        rows.append(("nhd", normalized_hausdorff(read_contours_csv(_need(args.pred_contour)),
                                                 read_contours_csv(_need(args.truth_contour)))))
    for name, value in rows:
        print(f"{name},{value:.6f}")
    if args.out:
        ex.write_rows(_out(args) / "metrics.csv", ["metric", "value"], rows)
    return 0


def cmd_synth_affine(args) -> int:
    shape = _shape(args.shape)
    if args.model:
        centers = load_model(_need(args.model)).centers
    else:
        origin = (args.width / 2.0, args.height / 2.0)
        tmask = render_mask(shape, template_pose(args.width, args.height), args.width, args.height)
        centers = mask_centers(tmask, origin=origin)
    suite = synth_affine_suite(shape, centers, args.count, (args.det_min, args.det_max), args.seed,
                               args.width, args.height, force_identity=args.identity_first)
    out = _out(args)
    poses = []
    for k, inst in enumerate(suite):
        d = out / f"instance_{k:03d}"
        d.mkdir(exist_ok=True)
        write_pgm(d / "image.pgm", inst.image, maxval=255)
        _save_mask(d / "truth.pgm", inst.truth_mask)
        write_contours_csv(d / "truth_contour.csv", [ContourPolyline(inst.truth_contour, True)])
        write_points_csv(d / "points.csv", inst.target_points)
        write_correspondences_csv(d / "correspondences.csv", inst.correspondences)
        write_raw_field(d / "cost.raw", inst.cost)
        poses.append((k, *map(float, inst.pose.params())))
    ex.write_rows(out / "poses.csv", ["instance"] + POSE_HEADER, poses)
    return 0


def cmd_synth_noise(args) -> int:
    base = read_pgm(_need(args.image))
    sigmas = _sigmas(args.sigmas)
    out = _out(args)
    rows = []
    counts: dict[float, int] = {}
    for sigma, img in synth_noise_suite(base, sigmas, args.per_level, args.seed):
        k = counts.get(sigma, 0)
        counts[sigma] = k + 1
        name = f"noise_s{sigma:g}_{k:03d}.pgm"
        write_pgm(out / name, img, maxval=255)
        rows.append((name, sigma))
    ex.write_rows(out / "index.csv", ["image", "sigma"], rows)
    return 0


def cmd_invariance_report(args) -> int:
    model = load_model(_need(args.model))
    rows = ex.invariance_trials(model, _shape(args.shape), args.trials, args.seed,
                                (args.det_min, args.det_max))
    ex.write_rows(_out(args) / "invariance.csv", ex.INVARIANCE_HEADER, rows)
    r = np.array([row[1:] for row in rows])
    print(f"mean_nhd_invariant,{r[:, 0].mean():.6f}")
    print(f"mean_nhd_noninvariant,{r[:, 1].mean():.6f}")
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcac", description="Affine-invariant shape-constrained active contours.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def mask_opts(sp):
        sp.add_argument("--mask", required=True, help="binary silhouette PGM")
        sp.add_argument("--spacing", type=float, default=6.0, help="kernel center lattice spacing (px)")
        sp.add_argument("--margin", type=float, default=2.0, help="min distance of centers from the boundary (px)")
        sp.add_argument("--origin", type=float, nargs=2, metavar=("X", "Y"),
                        help="template origin in pixels (default: foreground centroid)")
        sp.add_argument("--epsilon-h", type=float, default=1.0)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("train-shape", help="fit a shape model to a silhouette")
    mask_opts(sp)
    sp.add_argument("--sigma", type=float, help="kernel bandwidth (default: selected automatically)")
    sp.add_argument("--max-iters", type=int, default=3000)
    sp.set_defaults(func=cmd_train_shape)

    sp = sub.add_parser("select-sigma", help="score candidate bandwidths")
    mask_opts(sp)
    sp.add_argument("--candidates", help="comma-separated sigmas (default 1,1.1,...,20)")
    sp.set_defaults(func=cmd_select_sigma)

    def match_opts(sp, required=True):
        sp.add_argument("--model", required=True)
        sp.add_argument("--points", required=required, help="target points CSV (x,y)")
        sp.add_argument("--correspondences", required=required, help="CSV of (i,j) pairs")
        sp.add_argument("--cost", help="raw float cost matrix (default: zero costs)")
        sp.add_argument("--epsilon", type=float, help="matching bandwidth (default: from point spacing)")
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("align", help="points-to-shape alignment only")
    match_opts(sp)
    sp.add_argument("--width", type=int, default=128)
    sp.add_argument("--height", type=int, default=128)
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("segment", help="alignment followed by constrained contour refinement")
    match_opts(sp, required=False)
    sp.add_argument("--image")
    sp.add_argument("--truth", help="ground-truth mask PGM for Jaccard scores")
    sp.add_argument("--suite", help="directory written by synth-affine; runs every instance")
    sp.add_argument("--sigma-g", type=float, default=1.5)
    sp.add_argument("--tau-ratio", type=float, default=0.9)
    sp.add_argument("--max-iters", type=int, default=200)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("eval", help="compare a predicted mask with the truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--pred-contour")
    sp.add_argument("--truth-contour")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth-affine", help="random affine copies of a template shape")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--count", type=int, default=50)
    sp.add_argument("--shape", default="leaf")
    sp.add_argument("--model", help="take kernel centers from this model")
    sp.add_argument("--det-min", type=float, default=0.5)
    sp.add_argument("--det-max", type=float, default=2.0)
    sp.add_argument("--width", type=int, default=128)
    sp.add_argument("--height", type=int, default=128)
    sp.add_argument("--identity-first", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_affine)

    sp = sub.add_parser("synth-noise", help="Gaussian-noise copies of an image")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--sigmas", default=",".join(str(s) for s in range(1, 21)))
    sp.add_argument("--per-level", type=int, default=30)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_noise)

    sp = sub.add_parser("invariance-report", help="invariant vs non-invariant zero sets under random poses")
    sp.add_argument("--model", required=True)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--shape", default="leaf")
    sp.add_argument("--det-min", type=float, default=0.5)
    sp.add_argument("--det-max", type=float, default=2.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_invariance_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"mcac: {exc}", file=sys.stderr)
        return 1
    except (McacError, ValueError, OSError, FloatingPointError) as exc:
        print(f"mcac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
