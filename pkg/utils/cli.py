"""Command-line surface: train, infer, eval, gradcheck, scancheck, make-synthetic, summary."""

import argparse
import logging
import os
import sys
from dataclasses import replace

from utils.config import THREADS_ENV

BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")


def pin_blas_threads():
    """In strict mode BLAS must be single-threaded; only effective before numpy loads."""
    if os.environ.get(THREADS_ENV, "0").strip() == "1":
        for var in BLAS_THREAD_VARS:
            os.environ[var] = "1"


pin_blas_threads()

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from utils import tensor_core as tc  # noqa: E402
from utils.config import ExperimentConfig, NetConfig, load_config  # noqa: E402
from utils.data_processor import format_metrics_csv, load_dataset_dir, metrics_row_frame  # noqa: E402
from utils.errors import ConfigError, DataError, DimensionError  # noqa: E402
from utils.file_formats import read_image, write_disparity_png, write_pfm  # noqa: E402
from utils.gradcheck import run_gradcheck_suites, scan_equivalence  # noqa: E402
from utils.mambadepth_net import disp_to_depth, load_model, parameter_breakdown, predict_disparity  # noqa: E402
from utils.metrics_eval import PRESETS, evaluate_dirs, mean_reports  # noqa: E402
from utils.synthetic import make_scene, save_scene  # noqa: E402
from utils.trainer import run_training  # noqa: E402

logger = logging.getLogger("mambadepth")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIMENSION = 4

SCAN_TOLERANCE = 1e-10


def _experiment(args):
    experiment = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "epochs") if getattr(args, k) is not None}
    if overrides:
        experiment = replace(experiment, train=replace(experiment.train, **overrides))
    return experiment


def _dataset(experiment, synthetic):
    data = experiment.data
    if synthetic or data.synthetic:
        scene = make_scene(num_frames=data.synthetic_frames, width=data.width, height=data.height,
                           seed=experiment.train.seed, static=data.synthetic_static)
        return scene.triplets()
    if data.dataset_path:
        return load_dataset_dir(data.dataset_path)
    raise DataError("no training data: pass --synthetic or set dataset_path in [data]")


def cmd_train(args):
    experiment = _experiment(args)
    dataset = _dataset(experiment, args.synthetic)
    _, result = run_training(experiment, args.out, dataset, resume=args.resume)
    if not result.epoch_losses.empty:
        last = result.epoch_losses.iloc[-1]
        print(f"final epoch loss {last['loss_total']:.6f} (photometric {last['loss_photo']:.6f})")
    print(f"checkpoint: {result.checkpoint}")
    print(f"loss curve: {result.loss_csv}")
    return EXIT_OK


def cmd_infer(args):
    model, config = load_model(args.checkpoint)
    image = read_image(args.image)
    disp = predict_disparity(image, model.depth, config)
    write_pfm(args.out, disp.astype(np.float32))
    png = args.png or os.path.splitext(args.out)[0] + ".png"
    write_disparity_png(png, disp)
    if args.depth_out:
        with tc.no_grad():
            depth = disp_to_depth(tc.Tensor(disp), config.min_depth, config.max_depth).numpy()
        write_pfm(args.depth_out, depth.astype(np.float32))
    logger.info("Disparity %s (%dx%d) written to %s and %s", args.image, disp.shape[1], disp.shape[0],
                args.out, png)
    return EXIT_OK


def cmd_eval(args):
    reports, names = evaluate_dirs(args.pred_dir, args.gt_dir, preset=args.preset,
                                   garg_crop=args.garg_crop, median_scaling=not args.no_median_scaling)
    summary = mean_reports(reports)
    text = format_metrics_csv(summary)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    if args.per_image:
        metrics_row_frame(reports, names).to_csv(args.per_image, index=False)
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_gradcheck_suites(seed=args.seed, probes=args.probes)
    with pd.option_context("display.max_rows", None, "display.float_format", "{:.3e}".format):
        print(results.to_string(index=False))
    failed = results[~results["passed"]]
    if not failed.empty:
        logger.error("%d gradient checks failed: %s", len(failed), ", ".join(failed["name"]))
        return EXIT_FAILED
    return EXIT_OK


def cmd_scancheck(args):
    worst = 0.0
    for seed in range(args.seeds):
        worst = max(worst, scan_equivalence(cases=args.cases, seed=seed))
    print(f"max |parallel - sequential| over {args.seeds * args.cases} scans: {worst:.3e}")
    return EXIT_OK if worst < SCAN_TOLERANCE else EXIT_FAILED


def cmd_make_synthetic(args):
    scene = make_scene(num_frames=args.frames, width=args.width, height=args.height, seed=args.seed,
                       static=args.static, slanted=args.slanted, low_texture=args.low_texture)
    save_scene(scene, args.out)
    print(f"wrote {len(scene)} frames to {args.out}")
    return EXIT_OK


def cmd_summary(args):
    experiment = load_config(args.config) if args.config else ExperimentConfig()
    model_config = NetConfig() if args.full else experiment.model
    breakdown = parameter_breakdown(model_config)
    table = pd.DataFrame({"part": list(breakdown), "parameters": list(breakdown.values())})
    print(table.to_string(index=False))
    print(f"total: {table['parameters'].sum():,}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(prog="mambadepth",
                                     description="Self-supervised monocular depth with state-space blocks")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train DepthNet and PoseNet")
    train.add_argument("--config", help="bracket-section key=value config file")
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--out", default="runs", help="output directory")
    train.add_argument("--synthetic", action="store_true", help="train on a generated rigid scene")
    train.add_argument("--resume", help="checkpoint to warm-start from")
    train.set_defaults(handler=cmd_train)

    infer = commands.add_parser("infer", help="predict disparity for one image")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--image", required=True)
    infer.add_argument("--out", required=True, help="disparity PFM")
    infer.add_argument("--png", help="colormapped preview (default: next to --out)")
    infer.add_argument("--depth-out", help="also write metric depth as PFM")
    infer.set_defaults(handler=cmd_infer)

    evaluate = commands.add_parser("eval", help="depth metrics over paired directories")
    evaluate.add_argument("--pred-dir", required=True)
    evaluate.add_argument("--gt-dir", required=True)
    evaluate.add_argument("--preset", choices=sorted(PRESETS), default="kitti")
    evaluate.add_argument("--garg-crop", action="store_true")
    evaluate.add_argument("--no-median-scaling", action="store_true")
    evaluate.add_argument("--out", help="write the mean metrics CSV here")
    evaluate.add_argument("--per-image", help="write per-image metrics CSV here")
    evaluate.set_defaults(handler=cmd_eval)

    gradcheck = commands.add_parser("gradcheck", help="finite-difference gradient suites")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--probes", type=int, default=100)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    scancheck = commands.add_parser("scancheck", help="sequential vs parallel scan equivalence")
    scancheck.add_argument("--seeds", type=int, default=100)
    scancheck.add_argument("--cases", type=int, default=10, help="scans per seed")
    scancheck.set_defaults(handler=cmd_scancheck)

    synthetic = commands.add_parser("make-synthetic", help="render a synthetic rigid scene to disk")
    synthetic.add_argument("--out", required=True)
    synthetic.add_argument("--frames", type=int, default=20)
    synthetic.add_argument("--width", type=int, default=64)
    synthetic.add_argument("--height", type=int, default=64)
    synthetic.add_argument("--seed", type=int, default=0)
    synthetic.add_argument("--static", action="store_true", help="camera does not move")
    synthetic.add_argument("--slanted", action="store_true", help="add a floor plane")
    synthetic.add_argument("--low-texture", action="store_true", help="add an untextured patch")
    synthetic.set_defaults(handler=cmd_make_synthetic)

    summary = commands.add_parser("summary", help="parameter count per network part")
    summary.add_argument("--config")
    summary.add_argument("--full", action="store_true", help="full-size network instead of the desk one")
    summary.set_defaults(handler=cmd_summary)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG
    except DimensionError as e:
        logger.error("%s", e)
        return EXIT_DIMENSION
    except DataError as e:
        logger.error("data error: %s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
