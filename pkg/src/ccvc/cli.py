"""Command line front end: encode, decode, metrics, train, eval."""

from __future__ import annotations

import argparse
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .codec import decode_sequence, encode_sequence
from .errors import CcvcError
from .evaluate import emit_report, select_best_config, sweep_rates
from .metrics import ms_ssim, ms_ssim_db
from .nets import load_checkpoint
from .train import TrainConfig, train_loop, _parse_geometry
from .video import read_yuv420, write_yuv420


def _parse_rates(text: str) -> list[float]:
    """Either a comma list ('1,2.5,4') or an inclusive 'start:stop:step'."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CcvcError(f"rate range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise CcvcError("rate step must be positive")
        n = int(round((stop - start) / step))
        values = [start + i * step for i in range(n + 1)]
        return [v for v in values if v <= stop + 1e-9]
    return [float(p) for p in text.split(",")]


def _cmd_encode(args) -> int:
    model = load_checkpoint(args.checkpoint)
    seq = read_yuv420(args.input, args.width, args.height,
                      frame_rate=args.fps,
                      max_frames=args.frames or (1 << 16))
    data, stats, mbps = encode_sequence(seq, model, args.rate, args.gop,
                                        args.intra_period)
    with open(args.output, "wb") as fh:
        fh.write(data)
    for st in stats:
        print(f"frame {st['display_index']:4d} {st['frame_type']}: "
              f"{st['record_bits']:8d} bits  ms-ssim {st['ms_ssim']:.5f}")
    quality = float(np.mean([st["ms_ssim"] for st in stats]))
    print(f"{len(stats)} frames, {len(data)} bytes, {mbps:.4f} Mbit/s, "
          f"mean ms-ssim {quality:.5f} ({ms_ssim_db(quality):.2f} dB)")
    return 0


def _cmd_decode(args) -> int:
    model = load_checkpoint(args.checkpoint)
    with open(args.input, "rb") as fh:
        data = fh.read()
    seq, _ = decode_sequence(data, model, frame_rate=args.fps)
    write_yuv420(seq, args.output)
    print(f"decoded {len(seq)} frames ({seq.width}x{seq.height}) to {args.output}")
    return 0


def _cmd_metrics(args) -> int:
    limit = args.frames or (1 << 16)
    ref = read_yuv420(args.reference, args.width, args.height, max_frames=limit)
    test = read_yuv420(args.test, args.width, args.height, max_frames=limit)
    if len(ref) != len(test):
        raise CcvcError(f"frame count mismatch: {len(ref)} vs {len(test)}")
    values = []
    for a, b in zip(ref.frames, test.frames):
        v = ms_ssim(a, b)
        values.append(v)
        print(f"frame {a.display_index:4d}: ms-ssim {v:.6f} "
              f"({ms_ssim_db(v):.3f} dB)")
    mean = float(np.mean(values))
    print(f"mean: ms-ssim {mean:.6f} ({ms_ssim_db(mean):.3f} dB)")
    return 0


def _cmd_train(args) -> int:
    with open(args.config, "rb") as fh:
        raw = tomllib.load(fh)
    if "lambdas" in raw:
        raw["lambdas"] = tuple(raw["lambdas"])
    try:
        cfg = TrainConfig(**raw)
    except TypeError as exc:
        raise CcvcError(f"{args.config}: {exc}") from exc
    result = train_loop(cfg, progress=True)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    rates = _parse_rates(args.rates)
    gops = [int(g) for g in args.gops.split(",")]
    paths = sorted(p for p in os.listdir(args.input) if p.endswith(".yuv"))
    if not paths:
        raise CcvcError(f"no .yuv files in {args.input!r}")
    points = []
    for name in paths:
        full = os.path.join(args.input, name)
        w, h = _parse_geometry(full)
        seq = read_yuv420(full, w, h)
        best, seq_points = select_best_config(
            seq, model, gop_sizes=gops, r_values=rates,
            intra_period=args.intra_period, sequence_id=name)
        points.extend(seq_points)
        print(f"{name}: best gop {best.gop_size}, r {best.r:g} "
              f"-> {best.rate_mbps:.4f} Mbit/s, {best.ms_ssim_db:.2f} dB")
    rd_path, gain_path = emit_report(points, model.gains, args.out)
    print(f"wrote {rd_path} and {gain_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccvc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="encode a raw YUV420 file")
    enc.add_argument("--input", required=True)
    enc.add_argument("--width", type=int, required=True)
    enc.add_argument("--height", type=int, required=True)
    enc.add_argument("--frames", type=int, default=None)
    enc.add_argument("--fps", type=float, default=30.0)
    enc.add_argument("--checkpoint", required=True)
    enc.add_argument("--rate", type=float, required=True,
                     help="continuous rate index in [1, 6]")
    enc.add_argument("--gop", type=int, default=4, choices=(2, 4, 8))
    enc.add_argument("--intra-period", type=int, default=32)
    enc.add_argument("--output", required=True)
    enc.set_defaults(func=_cmd_encode)

    dec = sub.add_parser("decode", help="decode a bitstream to YUV420")
    dec.add_argument("--input", required=True)
    dec.add_argument("--checkpoint", required=True)
    dec.add_argument("--output", required=True)
    dec.add_argument("--fps", type=float, default=30.0)
    dec.set_defaults(func=_cmd_decode)

    met = sub.add_parser("metrics", help="MS-SSIM between two YUV files")
    met.add_argument("--reference", required=True)
    met.add_argument("--test", required=True)
    met.add_argument("--width", type=int, required=True)
    met.add_argument("--height", type=int, required=True)
    met.add_argument("--frames", type=int, default=None)
    met.set_defaults(func=_cmd_metrics)

    tr = sub.add_parser("train", help="train a model from a TOML config")
    tr.add_argument("--config", required=True)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="rate/GOP sweeps over a YUV directory")
    ev.add_argument("--input", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--rates", default="1:6:0.5")
    ev.add_argument("--gops", default="2,4,8")
    ev.add_argument("--intra-period", type=int, default=32)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CcvcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
