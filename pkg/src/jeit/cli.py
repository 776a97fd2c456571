"""Command line interface.

Subcommands: ``synth`` (one scene's artifacts), ``make-dataset`` (a packed
mixed-motion dataset), ``train``, ``eval``, ``transmit``, and
``report-allocation``. Reports are comma-separated tables with a one-line
header.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .channel import ChannelConfig
from .config import RunConfig
from .dataset import (
    MANIFEST_NAME,
    build_mixed_scenes,
    load_dataset,
    pack_dataset,
    packed_from_scene,
)
from .errors import BadConfig, JeitError
from .events import save_tensor, serialize_aer
from .metrics import format_metric, write_report
from .pipeline import (
    LossWeights,
    OptimizerConfig,
    TransmissionModel,
    allocation_report,
    forward_eval,
    train,
)
from .scene import SceneConfig, Static, Step, Translate


def _parse_motion(text: str):
    kind, _, args = text.partition(":")
    if kind == "static":
        return Static()
    if kind == "translate":
        try:
            vx, vy = (float(v) for v in args.split(","))
        except ValueError as exc:
            raise BadConfig("translate motion needs 'translate:VX,VY'") from exc
        return Translate(vx=vx, vy=vy)
    if kind == "step":
        try:
            return Step(dlog=float(args))
        except ValueError as exc:
            raise BadConfig("step motion needs 'step:DLOG'") from exc
    raise BadConfig(f"unknown motion {text!r}")


def _parse_hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return h, w
    except ValueError as exc:
        raise BadConfig("--hw expects HxW, e.g. 32x32") from exc


def _parse_snr(text: str):
    return None if text.lower() == "noiseless" else float(text)


def _cmd_synth(args) -> int:
    h, w = _parse_hw(args.hw)
    cfg = SceneConfig(
        height=h,
        width=w,
        n_frames=args.frames,
        pattern=args.pattern,
        motion=_parse_motion(args.motion),
        contrast=args.contrast,
        seed=args.seed,
    )
    packed = packed_from_scene(cfg, "scene", args.motion.split(":")[0], args.half_intervals)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "scene.aer"), "wb") as fh:
        fh.write(serialize_aer(packed.stream))
    save_tensor(os.path.join(args.out_dir, "blurry.evt0"), packed.blurry[None])
    save_tensor(os.path.join(args.out_dir, "sharp.evt0"), packed.sharp[None])
    from .scene import gen_scene

    video = gen_scene(cfg)
    save_tensor(os.path.join(args.out_dir, "video.evt0"), video.frames)
    with open(os.path.join(args.out_dir, "scene.txt"), "w") as fh:
        fh.write(
            f"t_f = {packed.t_f}\nT = {packed.T}\nM = {packed.M}\n"
            f"contrast = {packed.contrast}\nevents = {len(packed.stream)}\n"
        )
    print(f"wrote scene with {len(packed.stream)} events to {args.out_dir}")
    return 0


def _cmd_make_dataset(args) -> int:
    h, w = _parse_hw(args.hw)
    scenes = build_mixed_scenes(
        args.count,
        height=h,
        width=w,
        n_frames=args.frames,
        contrast=args.contrast,
        seed=args.seed,
        half_intervals=args.half_intervals,
    )
    manifest = pack_dataset(args.out_dir, scenes, (h, w))
    print(f"packed {len(scenes)} samples, manifest at {manifest}")
    return 0


def _load_samples(data_dir):
    manifest = os.path.join(data_dir, MANIFEST_NAME)
    return list(load_dataset(manifest))


def _cmd_train(args) -> int:
    run = RunConfig.read(args.config) if args.config else RunConfig()
    if args.epochs is not None:
        run.epochs = args.epochs
    if args.seed is not None:
        run.seed = args.seed
    samples = _load_samples(args.data_dir)
    weights = LossWeights(
        lambda_image=run.lambda_image,
        lambda_events=run.lambda_events,
        lambda_deblur=run.lambda_deblur,
        eta=run.eta,
        mode=run.mode,
    )
    result = train(
        samples,
        epochs=run.epochs,
        weights=weights,
        cfg=run.transform_config(),
        optimizer=OptimizerConfig(learning_rate=run.learning_rate),
        seed=run.seed,
        snr_db=run.snr_db,
        batch_size=run.batch_size or None,
        out_path=args.out,
        run_config=run,
    )
    first, last = result.totals[0], result.totals[-1]
    print(f"trained {run.epochs} steps: loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint saved to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = TransmissionModel.load(args.ckpt)
    samples = _load_samples(args.data_dir)
    channel = ChannelConfig(snr_db=_parse_snr(args.snr_db), seed=args.seed)
    rng = channel.rng()
    rows = []
    for sample in samples:
        res = forward_eval(model, sample, channel=channel, rng=rng)
        row = [
            sample.sample_id,
            sample.motion,
            res.rho[0], res.rho[1], res.rho[2], res.rho[3],
            res.metrics.get("psnr_image", float("nan")),
            res.metrics.get("event_mse", float("nan")),
            res.metrics["psnr_deblur"],
        ]
        rows.append(row)
    header = [
        "sample_id", "motion", "rho", "rho0", "rho1", "rho2",
        "psnr_image", "event_mse", "psnr_deblur",
    ]
    write_report(args.report, header, rows)
    med = float(np.median([r[-1] for r in rows]))
    print(f"evaluated {len(rows)} samples at snr={args.snr_db}; median deblur psnr {med:.2f} dB")
    print(f"report written to {args.report}")
    return 0


def _cmd_transmit(args) -> int:
    model = TransmissionModel.load(args.ckpt)
    samples = _load_samples(args.data_dir)
    matches = [s for s in samples if s.sample_id == args.sample]
    if not matches:
        raise BadConfig(f"sample {args.sample!r} not found in {args.data_dir}")
    channel = ChannelConfig(snr_db=_parse_snr(args.snr_db), seed=args.seed)
    res = forward_eval(model, matches[0], channel=channel, rng=channel.rng())
    if args.dump_frame:
        with open(args.dump_frame, "wb") as fh:
            fh.write(res.frame.to_bytes())
        print(f"frame ({res.frame.complex_uses} complex uses) written to {args.dump_frame}")
    if args.dump_symbols:
        save_tensor(args.dump_symbols, res.frame.payload.reshape(1, 1, -1))
        print(f"symbol dump written to {args.dump_symbols}")
    for key in sorted(res.metrics):
        print(f"{key} = {format_metric(res.metrics[key])}")
    return 0


def _cmd_report_allocation(args) -> int:
    model = TransmissionModel.load(args.ckpt)
    samples = _load_samples(args.data_dir)
    rows, medians = allocation_report(model, samples)
    header = ["sample_id", "motion", "rho", "rho0", "rho1", "rho2"]
    table = [[r["sample_id"], r["motion"], r["rho"], r["rho0"], r["rho1"], r["rho2"]] for r in rows]
    if args.out:
        write_report(args.out, header, table)
        print(f"allocation table written to {args.out}")
    else:
        print(",".join(header))
        for row in table:
            print(",".join(format_metric(v) if isinstance(v, float) else str(v) for v in row))
    for label, med in medians.items():
        print(
            f"median[{label}] rho={med['rho']:.4f} rho0={med['rho0']:.4f} "
            f"rho1={med['rho1']:.4f} rho2={med['rho2']:.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jeit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate one synthetic scene's artifacts")
    p.add_argument("--pattern", choices=("bars", "checker", "noise"), default="bars")
    p.add_argument("--motion", default="static", help="static | translate:VX,VY | step:DLOG")
    p.add_argument("--hw", default="32x32")
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--contrast", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--half-intervals", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("make-dataset", help="pack a mixed static/high-motion dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--hw", default="32x32")
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--contrast", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--half-intervals", type=int, default=3)
    p.set_defaults(func=_cmd_make_dataset)

    p = sub.add_parser("train", help="train a model on a packed dataset")
    p.add_argument("--config", default=None, help="key=value run configuration file")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path (.ckpt)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--snr-db", default="10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("transmit", help="send one sample and dump its frame")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--sample", required=True, help="sample id from the manifest")
    p.add_argument("--snr-db", default="10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-frame", default=None)
    p.add_argument("--dump-symbols", default=None, help="payload reals as a 1x1xN tensor file")
    p.set_defaults(func=_cmd_transmit)

    p = sub.add_parser("report-allocation", help="per-sample bandwidth share table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report_allocation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except JeitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
