"""Command-line surface tying the pipeline together.

Commands:
    train     --atlases DIR --config FILE --out DIR
    infer     --models DIR --mprage F --t2 F --flair F --out DIR
    evaluate  --pred F --truth F
    phantom   --spec FILE --out DIR
    gradcheck [--seed N]

`train` expects one subdirectory per atlas containing mprage.mvol, t2.mvol,
flair.mvol and mask.mvol; it writes axial.insg / coronal.insg /
sagittal.insg plus loss_history.txt. `infer` writes membership.mvol and
mask.mvol. `evaluate` prints one key=value line per metric. Exit status is
0 on success, 1 on a computation failure, 2 on bad usage.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import gradcheck as gc
from .metrics import evaluate as evaluate_masks
from .mvol import read_mvol, write_mvol
from .network import load_network, save_network
from .phantom import PhantomSpec, generate_phantom
from .pipeline import binarize, segment, train_orientation_model
from .runconfig import (
    RunConfig,
    load_run_config,
    parse_phantom_spec,
    phantom_spec_to_text,
)
from .volume import MultiContrast, ORIENTATIONS, Volume, check_same_grid


def _load_atlas(path: str):
    mc = MultiContrast(
        read_mvol(os.path.join(path, "mprage.mvol")),
        read_mvol(os.path.join(path, "t2.mvol")),
        read_mvol(os.path.join(path, "flair.mvol")),
    )
    mask = binarize(read_mvol(os.path.join(path, "mask.mvol")), 0.5)
    return mc, mask


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    atlas_dirs = sorted(
        os.path.join(args.atlases, d)
        for d in os.listdir(args.atlases)
        if os.path.isdir(os.path.join(args.atlases, d))
    )
    if not atlas_dirs:
        print(f"error: no atlas subdirectories in {args.atlases}", file=sys.stderr)
        return 1
    atlases = [_load_atlas(d) for d in atlas_dirs]
    os.makedirs(args.out, exist_ok=True)
    lines = []
    for orientation in ORIENTATIONS:
        net, history = train_orientation_model(
            atlases, orientation, cfg.train_config(), cfg.module_configs()
        )
        save_network(os.path.join(args.out, f"{orientation}.insg"), net)
        for rec in history:
            lines.append(
                f"{orientation} epoch={rec['epoch']} "
                f"train_loss={rec['train_loss']!r} val_loss={rec['val_loss']!r}"
            )
        print(f"trained {orientation}: final {history[-1]['train_loss']:.6f}")
    with open(os.path.join(args.out, "loss_history.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    return 0


def _cmd_infer(args) -> int:
    models = tuple(
        load_network(os.path.join(args.models, f"{o}.insg")) for o in ORIENTATIONS
    )
    mc = MultiContrast(
        read_mvol(args.mprage), read_mvol(args.t2), read_mvol(args.flair)
    )
    mask, membership = segment(models, mc)
    os.makedirs(args.out, exist_ok=True)
    write_mvol(os.path.join(args.out, "membership.mvol"), membership)
    mask_vol = Volume(mask.data.astype(np.float32), mask.spacing, mask.orientation)
    write_mvol(os.path.join(args.out, "mask.mvol"), mask_vol)
    print(f"wrote {args.out}/membership.mvol and {args.out}/mask.mvol")
    return 0


def _cmd_evaluate(args) -> int:
    pred = read_mvol(args.pred)
    truth = read_mvol(args.truth)
    check_same_grid(pred, truth)
    report = evaluate_masks(binarize(pred, 0.5), binarize(truth, 0.5))
    for key, value in report.as_dict().items():
        print(f"{key}={'undefined' if value is None else repr(float(value))}")
    return 0


def _cmd_phantom(args) -> int:
    spec = PhantomSpec()
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as f:
            spec = parse_phantom_spec(f.read())
    mc, mask = generate_phantom(spec)
    os.makedirs(args.out, exist_ok=True)
    write_mvol(os.path.join(args.out, "mprage.mvol"), mc.mprage)
    write_mvol(os.path.join(args.out, "t2.mvol"), mc.t2)
    write_mvol(os.path.join(args.out, "flair.mvol"), mc.flair)
    mask_vol = Volume(mask.data.astype(np.float32), mask.spacing, mask.orientation)
    write_mvol(os.path.join(args.out, "mask.mvol"), mask_vol)
    with open(os.path.join(args.out, "manifest.cfg"), "w") as f:
        f.write(phantom_spec_to_text(spec))
    print(f"wrote phantom with {mask.voxel_count()} lesion voxels to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    layer_err = gc.run_layer_suite(seed=args.seed, n_configs=20)
    net_err = gc.run_network_suite(seed=args.seed, trials=10)
    print(f"layer_max_rel_err={layer_err!r}")
    print(f"network_max_rel_err={net_err!r}")
    print(f"max_rel_err={max(layer_err, net_err)!r}")
    ok = layer_err <= 1e-4 and net_err <= 1e-3
    print("gradcheck PASS" if ok else "gradcheck FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionseg",
        description="Fully convolutional multi-contrast lesion segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the three orientation models")
    p.add_argument("--atlases", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="segment a subject with trained models")
    p.add_argument("--models", required=True)
    p.add_argument("--mprage", required=True)
    p.add_argument("--t2", required=True)
    p.add_argument("--flair", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("evaluate", help="compare a predicted mask to truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("phantom", help="generate a synthetic test subject")
    p.add_argument("--spec", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_phantom)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # computation failure -> exit 1 with diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
