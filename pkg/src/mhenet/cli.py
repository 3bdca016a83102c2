"""Command-line entry points: train, predict, eval, gradcheck.

Options may come from a JSON config file (``--config``); explicit flags win.
Exit status: 0 on success, 1 on usage errors, 2 on validation or tolerance
failures.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import backend
from .network import AblationSwitches, MheNet, NetworkConfig

USAGE_ERROR = 1
VALIDATION_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return h, w
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 416x416, got {text!r}")


def _common_flags(p):
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=None, help="input HxW (default 416x416)")
    p.add_argument("--channels", type=int, default=None, help="unified feature width (default 32)")
    p.add_argument("--ablate", default=None,
                   help="comma list of blocks to disable: them,ghem,adfm,texture,geometry,semantic")
    p.add_argument("--threads", type=int, default=None, help="worker thread cap (1 = bit-reproducible)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--dtype", choices=["float64", "float32"], default=None)


def build_parser():
    parser = _Parser(prog="mhenet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a dataset root or synthetic data")
    _common_flags(t)
    t.add_argument("--data", help="dataset root with Imgs/Depths/GT")
    t.add_argument("--val", help="optional validation dataset root")
    t.add_argument("--synth", type=int, default=None,
                   help="generate N synthetic samples instead of --data")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--lr", type=float, default=5e-5)
    t.add_argument("--lr-decay-every", type=int, default=40)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--no-augment", action="store_true")

    pr = sub.add_parser("predict", help="write prediction masks for a dataset root")
    _common_flags(pr)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True, help="dataset root with Imgs/ and Depths/")
    pr.add_argument("--emit", default="m2", help="comma list from m1,m2,m3 (default m2)")

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    _common_flags(ev)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--report", help="also write the report as JSON here")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every block")
    _common_flags(gc)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--net-tol", type=float, default=1e-3)
    gc.add_argument("--skip-network", action="store_true")
    return parser


def _apply_config_file(args, parser):
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            defaults = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"mhenet: cannot read config {args.config}: {exc}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)
    known = vars(args)
    argv_flags = {a.split("=")[0].lstrip("-").replace("-", "_")
                  for a in sys.argv if a.startswith("--")}
    for key, value in defaults.items():
        key = key.replace("-", "_")
        if key not in known:
            print(f"mhenet: unknown config key {key!r}", file=sys.stderr)
            raise SystemExit(USAGE_ERROR)
        if key in argv_flags:
            continue                       # explicit flag wins
        if key == "size" and isinstance(value, str):
            value = _parse_size(value)
        setattr(args, key, value)
    return args


def _network_config(args):
    size = tuple(args.size) if args.size else (416, 416)
    ablation = AblationSwitches.from_off_list(
        (args.ablate or "").split(",")) if args.ablate else AblationSwitches()
    return NetworkConfig(
        input_size=size,
        channels=args.channels or 32,
        ablation=ablation,
        dtype=args.dtype or "float64",
    )


def cmd_train(args):
    from .data import scan_dataset, synth_generate
    from .train import TrainSettings, run_training

    out_dir = args.out or "run"
    os.makedirs(out_dir, exist_ok=True)
    config = _network_config(args)
    try:
        if args.synth is not None:
            root = os.path.join(out_dir, "data")
            manifest = synth_generate(args.synth, config.input_size[0], args.seed, root)
        elif args.data:
            manifest = scan_dataset(args.data)
        else:
            print("mhenet train: need --data or --synth", file=sys.stderr)
            return USAGE_ERROR
        val = scan_dataset(args.val, "val") if args.val else None
    except (OSError, ValueError) as exc:
        print(f"mhenet train: invalid dataset: {exc}", file=sys.stderr)
        return VALIDATION_ERROR

    settings = TrainSettings(
        seed=args.seed, epochs=args.epochs, batch=args.batch, lr=args.lr,
        lr_decay_every=args.lr_decay_every, augment=not args.no_augment,
        max_steps=args.max_steps, out_dir=out_dir)
    net = MheNet(config, seed=args.seed)
    try:
        result = run_training(net, manifest, settings, val)
    except ValueError as exc:
        print(f"mhenet train: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    print(f"trained {result.steps} steps over {result.epochs} epochs; "
          f"final loss {result.last_loss:.6f}; outputs in {out_dir}")
    return 0


def cmd_predict(args):
    from .data import read_gray, read_image, resize_bilinear, write_image

    emit = [e.strip() for e in args.emit.split(",") if e.strip()]
    bad = [e for e in emit if e not in ("m1", "m2", "m3")]
    if bad:
        print(f"mhenet predict: unknown heads {bad}", file=sys.stderr)
        return USAGE_ERROR
    out_dir = args.out or "predictions"
    os.makedirs(out_dir, exist_ok=True)
    try:
        config = _network_config(args) if (args.channels or args.size or args.dtype) else None
        net = MheNet.load(args.checkpoint, config)
    except (OSError, ValueError) as exc:
        print(f"mhenet predict: {exc}", file=sys.stderr)
        return VALIDATION_ERROR

    img_dir = os.path.join(args.data, "Imgs")
    depth_dir = os.path.join(args.data, "Depths")
    if not (os.path.isdir(img_dir) and os.path.isdir(depth_dir)):
        print(f"mhenet predict: {args.data} lacks Imgs/ and Depths/", file=sys.stderr)
        return VALIDATION_ERROR
    th, tw = net.config.input_size
    for name in sorted(os.listdir(img_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".png", ".pgm", ".ppm"):
            continue
        rgb8 = read_image(os.path.join(img_dir, name))
        if rgb8.ndim == 2:
            rgb8 = np.repeat(rgb8[:, :, None], 3, axis=2)
        depth_path = os.path.join(depth_dir, name)
        if not os.path.exists(depth_path):
            print(f"mhenet predict: missing depth for {name}", file=sys.stderr)
            return VALIDATION_ERROR
        depth8 = read_gray(depth_path)
        orig_h, orig_w = rgb8.shape[:2]
        rgb = resize_bilinear(rgb8.astype(np.float64).transpose(2, 0, 1) / 255.0, th, tw)
        depth = resize_bilinear(depth8 / 255.0, th, tw)
        out = net.forward(rgb[None], depth[None, None], mode="eval")
        heads = {"m1": out.m1, "m2": out.m2, "m3": out.m3}
        for head in emit:
            mask = resize_bilinear(heads[head].data[0, 0], orig_h, orig_w)
            mask8 = np.round(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8)
            suffix = "" if head == "m2" else f"_{head}"
            write_image(os.path.join(out_dir, f"{stem}{suffix}.png"), mask8)
    print(f"predictions written to {out_dir}")
    return 0


def cmd_eval(args):
    from .metrics import evaluate_dataset, format_report

    try:
        report = evaluate_dataset(args.pred, args.gt)
    except (OSError, ValueError) as exc:
        print(f"mhenet eval: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    table = format_report(report)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.tsv"), "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if report.skipped:
        print(f"mhenet eval: {len(report.skipped)} unmatched files: "
              f"{report.skipped[:5]}", file=sys.stderr)
        return VALIDATION_ERROR
    return 0


def cmd_gradcheck(args):
    from .verification import run_gradient_suite

    results = run_gradient_suite(block_tol=args.tol, net_tol=args.net_tol,
                                 seed=args.seed,
                                 include_network=not args.skip_network)
    failed = 0
    for r in results:
        print(r)
        failed += 0 if r.passed else 1
    if failed:
        print(f"mhenet gradcheck: {failed} check(s) above tolerance", file=sys.stderr)
        return VALIDATION_ERROR
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config_file(args, parser)
    if args.threads is not None:
        try:
            backend.set_num_threads(args.threads)
        except ValueError as exc:
            print(f"mhenet: {exc}", file=sys.stderr)
            return USAGE_ERROR
    handler = {"train": cmd_train, "predict": cmd_predict,
               "eval": cmd_eval, "gradcheck": cmd_gradcheck}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
