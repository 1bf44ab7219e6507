"""Multi-rate training: rate-distortion loss, the 3-frame coding
protocol (I0, P2 on the coded I, B1 on both coded neighbors), and a
resumable loop over synthetic or user-supplied YUV clips.

Every step samples one rate index, codes all three frames with that
index's gain vectors, and performs a single backward pass over the
summed loss. No stage-wise pre-training is involved; the whole system
trains end to end from step zero.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import CcvcError
from .metrics import MsSsimConfig, distortion, ms_ssim_tensor
from .nets import Model, NetworkConfig, code_frame_train, save_checkpoint
from .optim import Adam
from .tensor import Tensor
from .video import FrameType, read_yuv420, upsample_420_to_444

N_RATES = 6


def default_lambdas(base: float = 0.1, rho: float = 1.7, n: int = N_RATES) -> tuple:
    """Geometric ladder; index 1 is the smallest lambda (highest rate)."""
    return tuple(base * rho ** i for i in range(n))


@dataclass
class TrainConfig:
    steps: int = 2000
    crop_size: int = 64
    batch_size: int = 1
    learning_rate: float = 3e-3
    lr_drop_fraction: float = 0.8   # learning rate /10 for the final stretch
    lambda_warmup_steps: int = 400  # ramp the rate term in linearly
    grad_clip: float = 1.0          # global gradient-norm ceiling (0 disables)
    ste_quantization: bool = False  # rounded synthesis path (default: noise proxy)
    lambdas: tuple = field(default_factory=default_lambdas)
    seed: int = 0
    dataset_path: str | None = None  # None -> procedural synthetic clips
    checkpoint_every: int = 500
    out_dir: str = "runs"
    f: int = 8
    depth: int = 3
    use_hyperprior: bool = False

    def __post_init__(self):
        if len(self.lambdas) != N_RATES:
            raise CcvcError(f"need {N_RATES} lambdas, got {len(self.lambdas)}")
        if self.crop_size % 2 ** self.depth:
            raise CcvcError(f"crop {self.crop_size} not divisible by {2 ** self.depth}")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(f=self.f, depth=self.depth,
                             use_hyperprior=self.use_hyperprior, n_rates=N_RATES)


@dataclass
class StepStats:
    step: int
    lambda_index: int
    loss: float
    rate_bpp: float
    ms_ssim: float


def rd_loss(coded: list, lam: float, pixel_count: int) -> Tensor:
    """Sum over frames of (1 - MS-SSIM) + lambda * bits-per-pixel.

    `coded` holds (source, reconstruction, rate_bits) triples; the rate
    term normalizes by pixel count so lambda is resolution-independent.
    """
    total = None
    for x, x_hat, rate_bits in coded:
        term = distortion(x_hat, x) + (lam / pixel_count) * rate_bits
        total = term if total is None else total + term
    return total


# -- clip sources ------------------------------------------------------

def _texture(rng: np.random.Generator, size: int, smoothness: float) -> np.ndarray:
    """One (3, size, size) filtered-noise texture with dominant luma."""
    base = gaussian_filter(rng.normal(size=(size, size)), smoothness)
    base = (base - base.min()) / max(np.ptp(base), 1e-9)
    chroma = [gaussian_filter(rng.normal(size=(size, size)), smoothness * 2)
              for _ in range(2)]
    planes = [0.15 + 0.7 * base]
    for c in chroma:
        c = (c - c.min()) / max(np.ptp(c), 1e-9)
        planes.append(0.35 + 0.3 * c)
    return np.stack(planes)


def synthetic_clip(rng: np.random.Generator, crop: int,
                   jitter: float = 0.0) -> np.ndarray:
    """A (3, 3, crop, crop) clip: a texture translating at constant
    velocity, with optional per-frame random-walk jitter and sensor
    noise. Returns frames in display order."""
    margin = 8
    size = crop + 2 * margin
    tex = _texture(rng, size, smoothness=float(rng.uniform(1.5, 4.0)))
    v = rng.integers(-3, 4, size=2)
    frames = []
    pos = np.array([margin, margin])
    for t in range(3):
        if t:
            pos = pos + v
            if jitter:
                pos = pos + rng.integers(-int(jitter), int(jitter) + 1, size=2)
        r = np.clip(pos[0], 0, 2 * margin)
        c = np.clip(pos[1], 0, 2 * margin)
        frame = tex[:, r:r + crop, c:c + crop].copy()
        frame += rng.normal(0, 0.004, size=frame.shape)
        frames.append(np.clip(frame, 0.0, 1.0))
    return np.stack(frames)


def _parse_geometry(path: str) -> tuple[int, int]:
    m = re.search(r"(\d+)x(\d+)", os.path.basename(path))
    if not m:
        raise CcvcError(f"{path}: cannot infer geometry, expected WxH in the name")
    return int(m.group(1)), int(m.group(2))


class ClipSource:
    """Uniform 3-frame clip sampler over a YUV directory, or synthetic
    procedural clips when no dataset path is given."""

    def __init__(self, cfg: TrainConfig):
        self.crop = cfg.crop_size
        self.sequences = []
        if cfg.dataset_path is not None:
            if not os.path.isdir(cfg.dataset_path):
                raise CcvcError(f"dataset directory {cfg.dataset_path!r} not readable")
            paths = sorted(p for p in os.listdir(cfg.dataset_path)
                           if p.endswith(".yuv"))
            if not paths:
                raise CcvcError(f"no .yuv files in {cfg.dataset_path!r}")
            for p in paths:
                full = os.path.join(cfg.dataset_path, p)
                w, h = _parse_geometry(full)
                seq = read_yuv420(full, w, h)
                arrays = [upsample_420_to_444(f).as_array() for f in seq.frames]
                if len(arrays) >= 3 and h >= self.crop and w >= self.crop:
                    self.sequences.append(np.stack(arrays))
            if not self.sequences:
                raise CcvcError(
                    f"{cfg.dataset_path!r}: no sequence offers 3 frames at crop "
                    f"{self.crop}")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if not self.sequences:
            clip = synthetic_clip(rng, self.crop)
        else:
            seq = self.sequences[rng.integers(len(self.sequences))]
            t = rng.integers(seq.shape[0] - 2)
            _, _, h, w = seq.shape
            r = rng.integers(h - self.crop + 1)
            c = rng.integers(w - self.crop + 1)
            clip = seq[t:t + 3, :, r:r + self.crop, c:c + self.crop].copy()
        if rng.integers(2):
            clip = clip[..., ::-1].copy()  # horizontal flip augmentation
        return clip


# -- stepping ----------------------------------------------------------

def train_step(model: Model, optimizer: Adam, clips: list[np.ndarray],
               lambdas: tuple, rng: np.random.Generator,
               ms_cfg: MsSsimConfig | None = None,
               lambda_scale: float = 1.0,
               grad_clip: float = 0.0,
               ste: bool = False) -> StepStats | None:
    """One optimizer update from a batch of 3-frame clips.

    `lambda_scale` ramps the rate term in during warmup; an untrained
    synthesis cannot yet justify any bits, so a full-strength rate
    penalty from step zero collapses the latents to silence.
    """
    usable = []
    for clip in clips:
        if clip.shape[0] < 3:
            warnings.warn(f"skipping clip with {clip.shape[0]} frames, need 3")
            continue
        usable.append(clip)
    if not usable:
        return None
    rate_index = int(rng.integers(1, N_RATES + 1))
    # the gain index always equals the lambda index
    lam = lambdas[rate_index - 1] * lambda_scale
    pixels = usable[0].shape[2] * usable[0].shape[3]
    total = None
    rate_sum = 0.0
    quality_sum = 0.0
    for clip in usable:
        xs = [Tensor(clip[t]) for t in range(3)]
        r0, rate0, _, _ = code_frame_train(model, xs[0], None, None,
                                           FrameType.I, rate_index, rng, ste=ste)
        r2, rate2, _, _ = code_frame_train(model, xs[2], r0, None,
                                           FrameType.P, rate_index, rng, ste=ste)
        r1, rate1, _, _ = code_frame_train(model, xs[1], r0, r2,
                                           FrameType.B, rate_index, rng, ste=ste)
        for recon in (r0, r2, r1):
            assert recon.requires_grad, "reference must be a coded reconstruction"
        coded = [(xs[0], r0, rate0), (xs[2], r2, rate2), (xs[1], r1, rate1)]
        loss = rd_loss(coded, lam, pixels)
        total = loss if total is None else total + loss
        rate_sum += (rate0.item() + rate2.item() + rate1.item()) / (3 * pixels)
        quality_sum += sum(
            ms_ssim_tensor(Tensor(np.clip(rec.data, 0, 1)), x, ms_cfg).item()
            for x, rec, _ in coded) / 3
    total = total * (1.0 / len(usable))
    if not np.isfinite(total.item()):
        raise CcvcError(f"non-finite loss {total.item()} at rate index {rate_index}")
    optimizer.zero_grad()
    total.backward()
    for p in optimizer.params.values():
        if p.grad is None:  # only the sampled index's gain vectors join the graph
            p.grad = np.zeros_like(p.data)
    if grad_clip > 0.0:
        norm = math.sqrt(sum(float(np.sum(p.grad * p.grad))
                             for p in optimizer.params.values()))
        if norm > grad_clip:
            scale = grad_clip / norm
            for p in optimizer.params.values():
                p.grad *= scale
    optimizer.step()
    return StepStats(step=optimizer.step_count, lambda_index=rate_index,
                     loss=total.item(), rate_bpp=rate_sum / len(usable),
                     ms_ssim=quality_sum / len(usable))


# -- loop and persistence ----------------------------------------------

_LOG_FIELDS = ("step", "lambda_index", "loss", "rate_bpp", "ms_ssim")


def _save_train_state(path: str, optimizer: Adam, rng: np.random.Generator):
    arrays = dict(optimizer.state_arrays())
    arrays["rng_state"] = np.frombuffer(
        json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def _load_train_state(path: str, optimizer: Adam, rng: np.random.Generator):
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    rng.bit_generator.state = json.loads(arrays.pop("rng_state").tobytes().decode())
    optimizer.load_state_arrays(arrays)


@dataclass
class TrainResult:
    checkpoint_path: str
    state_path: str
    log_path: str
    history: list[StepStats]


def train_loop(cfg: TrainConfig, model: Model | None = None,
               resume_state: str | None = None,
               progress: bool = False) -> TrainResult:
    """Run cfg.steps optimizer updates and leave a checkpoint behind.

    Pass `model` (from load_checkpoint) together with `resume_state` to
    continue a previous run bit-exactly; the loop then picks up at the
    recorded step count with the saved optimizer moments and RNG state.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    if model is None:
        model = Model(cfg.network_config(), seed=cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    if resume_state is not None:
        _load_train_state(resume_state, optimizer, rng)
    source = ClipSource(cfg)
    ckpt_path = os.path.join(cfg.out_dir, "model.ccvc")
    state_path = os.path.join(cfg.out_dir, "train_state.npz")
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    history = []
    mode = "a" if resume_state is not None and os.path.exists(log_path) else "w"
    drop_at = int(cfg.steps * cfg.lr_drop_fraction)
    with open(log_path, mode, newline="") as fh:
        log = csv.writer(fh)
        if mode == "w":
            log.writerow(_LOG_FIELDS)
        while optimizer.step_count < cfg.steps:
            optimizer.lr = cfg.learning_rate * (
                0.1 if optimizer.step_count >= drop_at else 1.0)
            clips = [source.sample(rng) for _ in range(cfg.batch_size)]
            warm = min(1.0, (optimizer.step_count + 1)
                       / max(cfg.lambda_warmup_steps, 1))
            stats = train_step(model, optimizer, clips, cfg.lambdas, rng,
                               lambda_scale=warm, grad_clip=cfg.grad_clip,
                               ste=cfg.ste_quantization)
            if stats is None:
                continue
            history.append(stats)
            log.writerow([stats.step, stats.lambda_index,
                          repr(stats.loss), repr(stats.rate_bpp),
                          repr(stats.ms_ssim)])
            if progress and stats.step % 100 == 0:
                print(f"step {stats.step}: loss {stats.loss:.4f} "
                      f"(index {stats.lambda_index})", flush=True)
            if stats.step % cfg.checkpoint_every == 0 or stats.step == cfg.steps:
                save_checkpoint(model, ckpt_path)
                _save_train_state(state_path, optimizer, rng)
    save_checkpoint(model, ckpt_path)
    _save_train_state(state_path, optimizer, rng)
    return TrainResult(ckpt_path, state_path, log_path, history)
