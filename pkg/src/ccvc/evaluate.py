"""Rate sweeps, GOP competition, and plot-ready CSV reports.

Evaluation always runs the real entropy-coded path: each operating
point is a full encode of the sequence followed by MS-SSIM measurement
of the decoder-identical reconstructions.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .codec import VALID_GOP_SIZES, encode_sequence
from .errors import CcvcError
from .gains import GainVectorSet
from .metrics import ms_ssim_db
from .nets import Model
from .train import _texture, default_lambdas
from .video import Frame, FrameType, Sequence, downsample_444_to_420


@dataclass
class RdPoint:
    rate_mbps: float
    ms_ssim: float
    ms_ssim_db: float
    r: float
    gop_size: int
    intra_period: int
    sequence_id: str


def sweep_rates(seq: Sequence, model: Model, r_values: list[float],
                gop_size: int, intra_period: int,
                sequence_id: str = "seq") -> list[RdPoint]:
    """One full encode+measure per continuous rate index r."""
    points = []
    for r in r_values:
        if not 1.0 <= r <= model.cfg.n_rates:
            raise CcvcError(f"rate index {r} outside [1, {model.cfg.n_rates}]")
        _, stats, mbps = encode_sequence(seq, model, r, gop_size, intra_period)
        quality = float(np.mean([st["ms_ssim"] for st in stats]))
        points.append(RdPoint(mbps, quality, ms_ssim_db(quality), r,
                              gop_size, intra_period, sequence_id))
    return points


def rd_cost(point: RdPoint, lambda_eval: float, seq: Sequence) -> float:
    """Sequence-level Eq.-1 cost: mean distortion + lambda * mean bpp."""
    bpp = point.rate_mbps * 1e6 / (seq.frame_rate * seq.width * seq.height)
    return (1.0 - point.ms_ssim) + lambda_eval * bpp


def select_best_config(seq: Sequence, model: Model, gop_sizes=VALID_GOP_SIZES,
                       r_values: list[float] | None = None,
                       lambda_eval: float | None = None,
                       intra_period: int = 32,
                       sequence_id: str = "seq"):
    """Competition over (gop_size, r): argmin of the global RD cost.

    Ties break toward the smaller GOP size, then the smaller r. Returns
    (best point, all candidate points).
    """
    if r_values is None:
        r_values = [float(i) for i in range(1, model.cfg.n_rates + 1)]
    if lambda_eval is None:
        lams = default_lambdas(n=model.cfg.n_rates)
        lambda_eval = lams[len(lams) // 2 - 1]
    if not gop_sizes or not r_values:
        raise CcvcError("need at least one GOP size and one rate index")
    points = []
    for gop in sorted(gop_sizes):
        points.extend(sweep_rates(seq, model, sorted(r_values), gop,
                                  intra_period, sequence_id))
    best = min(points, key=lambda p: (rd_cost(p, lambda_eval, seq), p.gop_size, p.r))
    return best, points


# -- synthetic evaluation pair -----------------------------------------

def make_eval_pair(crop: int = 64, n_frames: int = 17, seed: int = 42):
    """Two sequences with opposite temporal character.

    The first translates a texture smoothly at constant velocity (long
    GOPs pay off); the second jitters the texture with a fresh random
    offset and heavy noise every frame (dense references pay off).
    """
    rng = np.random.default_rng(seed)
    margin = 4 * n_frames
    tex = _texture(rng, crop + 2 * margin, smoothness=3.0)

    def grab(r, c, noise):
        frame = tex[:, margin + r:margin + r + crop,
                    margin + c:margin + c + crop].copy()
        if noise:
            frame += rng.normal(0, noise, size=frame.shape)
        return np.clip(frame, 0.0, 1.0)

    smooth = [grab(2 * t, t, 0.0) for t in range(n_frames)]
    jitter = [grab(int(rng.integers(-8, 9)), int(rng.integers(-8, 9)), 0.05)
              for _ in range(n_frames)]
    to_seq = lambda arrs: Sequence(
        [downsample_444_to_420(Frame.from_array(a, FrameType.I, i))
         for i, a in enumerate(arrs)], 30.0)
    return to_seq(smooth), to_seq(jitter)


# -- reporting ---------------------------------------------------------

_RD_FIELDS = ("sequence_id", "r", "gop_size", "intra_period",
              "rate_mbps", "ms_ssim", "ms_ssim_db")


def emit_report(points: list[RdPoint], gains: GainVectorSet, out_dir: str):
    """Write rd_curves.csv and gain_vectors.csv under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    rd_path = os.path.join(out_dir, "rd_curves.csv")
    with open(rd_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_RD_FIELDS)
        for p in points:
            w.writerow([p.sequence_id, repr(p.r), p.gop_size, p.intra_period,
                        repr(p.rate_mbps), repr(p.ms_ssim), repr(p.ms_ssim_db)])
    gain_path = os.path.join(out_dir, "gain_vectors.csv")
    with open(gain_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["network", "frame_type", "rate_index", "channel",
                    "gamma_enc", "gamma_dec"])
        for net in gains.channels:
            for ft in FrameType:
                for i in range(1, gains.n_rates + 1):
                    enc, dec = gains.gain(net, ft, i)
                    for ch, (e, d) in enumerate(zip(enc, dec)):
                        w.writerow([net, ft.value, i, ch, repr(e), repr(d)])
    return rd_path, gain_path


def read_rd_csv(path: str) -> list[RdPoint]:
    """Inverse of the rd_curves.csv writer (full float precision)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [RdPoint(rate_mbps=float(r["rate_mbps"]), ms_ssim=float(r["ms_ssim"]),
                    ms_ssim_db=float(r["ms_ssim_db"]), r=float(r["r"]),
                    gop_size=int(r["gop_size"]), intra_period=int(r["intra_period"]),
                    sequence_id=r["sequence_id"]) for r in rows]
