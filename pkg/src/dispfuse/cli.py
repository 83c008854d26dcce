"""Command-line front door.

Commands: ``gen-data``, ``train``, ``eval``, ``infer``, ``ablate``,
``sensitivity``.  Experiments are defined by a JSON config file (see
``dispfuse.config``); flags carry only paths and mode switches.  Exit codes:
0 success, 1 usage/config error, 2 runtime abort.  Set
``DISPFUSE_DETERMINISTIC=1`` for byte-reproducible runs.
"""

import argparse
import os
import sys
import time

import numpy as np
import torch

from . import config as config_mod
from . import dataio, evalbench, synthdata, trainer
from .core import normalize_disparity
from .errors import (
    CheckpointMismatch,
    ConfigurationError,
    DataLoadError,
    FormatError,
    MetricError,
    TrainingDiverged,
)
from .refiner import build_refiner
from .core import NetConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

DEFAULT_D_MAX = 64.0


def _build_parser():
    parser = argparse.ArgumentParser(prog="dispfuse")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic fusion dataset")
    p.add_argument("--n", type=int, required=True, help="number of training samples")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unlabeled-frac", type=float, default=0.0)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--d-max", type=float, default=DEFAULT_D_MAX)

    p = sub.add_parser("train", help="train a fusion model from a config file")
    p.add_argument("config")
    p.add_argument("--mode", choices=["supervised", "semi"], default=None)
    p.add_argument("--run-root", default="run")
    p.add_argument("--resume", default=None)

    p = sub.add_parser("eval", help="MAE between a prediction and ground truth")
    p.add_argument("--pred", required=True, help="predicted disparity PFM (pixels)")
    p.add_argument("--gt", required=True, help="ground-truth disparity PFM (pixels)")
    p.add_argument("--mask", default=None, help="validity mask PNG (optional)")
    p.add_argument("--d-max", type=float, default=DEFAULT_D_MAX)

    p = sub.add_parser("infer", help="refine one frame with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--disp1", required=True)
    p.add_argument("--disp2", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--d-max", type=float, default=DEFAULT_D_MAX)

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", choices=["table3", "table5", "all"], default="table3")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("sensitivity", help="one-knob sensitivity curves")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", choices=["alpha", "scales", "width", "momentum", "all"],
                   default="all")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=1)
    return parser


def cmd_gen_data(args):
    spec = synthdata.SceneSpec(
        height=args.height,
        width=args.width,
        disparity_range=(10.0, min(60.0, args.d_max - 4.0)),
    )
    sensors = synthdata.default_sensors()
    manifest = synthdata.build_dataset(
        args.n,
        spec,
        sensors,
        args.out,
        d_max=args.d_max,
        n_test=args.n_test,
        unlabeled_frac=args.unlabeled_frac,
        root_seed=args.seed,
    )
    print(
        f"wrote {len(manifest.labeled_ids)} labeled / "
        f"{len(manifest.unlabeled_ids)} unlabeled / "
        f"{len(manifest.test_ids)} test samples to {args.out}"
    )
    return EXIT_OK


def _load_experiment(path, mode=None):
    cfg = config_mod.parse_config(path)
    if mode is not None:
        cfg = cfg.with_mode(mode)
    return cfg


def cmd_train(args):
    cfg = _load_experiment(args.config, args.mode)
    manifest = dataio.load_manifest(cfg.data_dir)
    run_dir = os.path.join(args.run_root, cfg.run_name)
    os.makedirs(run_dir, exist_ok=True)
    config_mod.echo_config(cfg, run_dir)
    record = trainer.fit(
        manifest, cfg.net, cfg.loss, cfg.train, run_dir, resume=args.resume
    )
    final = record.final_test_mae
    print(f"run directory: {run_dir}")
    print(f"final test MAE: {'n/a' if final is None else f'{final:.4f} px'}")
    return EXIT_OK


def cmd_eval(args):
    pred, _ = dataio.read_pfm(args.pred)
    gt, _ = dataio.read_pfm(args.gt)
    if args.mask is not None:
        mask = dataio.read_png_gray(args.mask) > 127
    else:
        mask = np.ones(gt.shape, dtype=bool)
    value = evalbench.mae(
        normalize_disparity(pred, args.d_max),
        normalize_disparity(gt, args.d_max),
        mask,
        args.d_max,
    )
    print(f"MAE: {value:.4f} px over {int(mask.sum())} valid pixels")
    return EXIT_OK


def cmd_infer(args):
    payload = torch.load(args.checkpoint, map_location="cpu", weights_only=False)
    net_cfg = NetConfig(**payload["configs"]["net"])
    refiner = build_refiner(net_cfg)
    if payload["fingerprint_refiner"] != refiner.fingerprint():
        raise CheckpointMismatch(
            f"checkpoint fingerprint {payload['fingerprint_refiner']} != "
            f"rebuilt fingerprint {refiner.fingerprint()}"
        )
    refiner.load_state_dict(payload["refiner_state"])
    refiner.train(False)

    for path in (args.disp1, args.disp2, args.intensity):
        if not os.path.exists(path):
            raise DataLoadError(f"missing input file: {path}")
    disp1, _ = dataio.read_pfm(args.disp1)
    disp2, _ = dataio.read_pfm(args.disp2)
    intensity = dataio.read_png_gray(args.intensity).astype(np.float32) / 127.5 - 1.0

    from .core import image_gradient

    stack = np.stack(
        [
            normalize_disparity(disp1, args.d_max),
            normalize_disparity(disp2, args.d_max),
            intensity,
            image_gradient(intensity),
        ]
    ).astype(np.float32)
    t0 = time.perf_counter()
    with torch.no_grad():
        refined = refiner(torch.from_numpy(stack[None]))[0, 0].numpy()
    wall = time.perf_counter() - t0

    os.makedirs(args.out, exist_ok=True)
    refined_px = (refined + 1.0) * args.d_max / 2.0
    out_pfm = os.path.join(args.out, "refined.pfm")
    dataio.write_pfm(out_pfm, refined_px)
    print(f"wrote {out_pfm}")
    print(
        f"forward time: {wall:.4f} s/frame at {disp1.shape[0]}x{disp1.shape[1]} "
        f"(published reference: {evalbench.REFERENCE_FRAME_TIME_S} s/frame at "
        "480x640 on a desktop accelerator; reported, not asserted)"
    )
    if args.gt is not None:
        gt, _ = dataio.read_pfm(args.gt)
        err_path = os.path.join(args.out, "error_map.png")
        evalbench.emit_error_map(
            refined_px, gt, np.ones(gt.shape, dtype=bool), err_path
        )
        print(f"wrote {err_path}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _load_experiment(args.config)
    manifest = dataio.load_manifest(cfg.data_dir)
    spec = {
        "table3": evalbench.AblationSpec.table3,
        "table5": evalbench.AblationSpec.table5,
        "all": evalbench.AblationSpec.full,
    }[args.variants]()
    evalbench.run_ablation(
        spec, manifest, cfg.net, cfg.loss, cfg.train, args.out, repeats=args.repeats
    )
    return EXIT_OK


def cmd_sensitivity(args):
    cfg = _load_experiment(args.config)
    manifest = dataio.load_manifest(cfg.data_dir)
    spec = evalbench.SensitivitySpec(repeats=args.repeats)
    if args.grid != "all":
        spec = evalbench.SensitivitySpec(
            grids={args.grid: spec.grids[args.grid]}, repeats=args.repeats
        )
    evalbench.run_sensitivity(spec, manifest, cfg.net, cfg.loss, cfg.train, args.out)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ablate": cmd_ablate,
    "sensitivity": cmd_sensitivity,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if trainer.deterministic_mode():
        torch.use_deterministic_algorithms(True)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, FormatError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, DataLoadError, CheckpointMismatch, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
