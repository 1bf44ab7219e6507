"""Multi-scale SSIM distortion and its dB quality scale.

One differentiable implementation serves both the training loss and
evaluation; evaluation simply runs it on constant tensors. Channels are
aggregated Y:U:V = 6:1:1 in the 4:4:4 domain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import CcvcError
from .tensor import Tensor, avg_pool2, conv2d
from .video import ChromaFormat, Frame, upsample_420_to_444

# Wang03 five-scale weights, renormalized to sum exactly to 1
_WANG03 = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_WANG03 = _WANG03 / _WANG03.sum()

CHANNEL_WEIGHTS = (6.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0)


@dataclass
class MsSsimConfig:
    scales: int = 5
    weights: tuple = tuple(_WANG03)
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if len(self.weights) != self.scales:
            raise CcvcError(f"{len(self.weights)} weights for {self.scales} scales")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise CcvcError(f"scale weights must sum to 1, got {sum(self.weights)}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return (k / k.sum()).reshape(1, 1, size, size)


_WINDOW_CACHE: dict[tuple, Tensor] = {}


def _window(cfg: MsSsimConfig) -> Tensor:
    key = (cfg.window_size, cfg.sigma)
    if key not in _WINDOW_CACHE:
        _WINDOW_CACHE[key] = Tensor(_gaussian_window(cfg.window_size, cfg.sigma))
    return _WINDOW_CACHE[key]


def feasible_scales(height: int, width: int, cfg: MsSsimConfig) -> int:
    """Largest scale count the geometry supports, capped at cfg.scales."""
    s = 1
    while s < cfg.scales and cfg.window_size * 2 ** s <= min(height, width):
        s += 1
    return s


def _effective_weights(scales: int, cfg: MsSsimConfig) -> np.ndarray:
    w = np.asarray(cfg.weights[:scales], dtype=np.float64)
    return w / w.sum()


def _ssim_channel(x: Tensor, y: Tensor, cfg: MsSsimConfig):
    """Mean luminance*cs and mean cs over valid windows of one channel."""
    win = _window(cfg)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_x = conv2d(x, win)
    mu_y = conv2d(y, win)
    sxx = conv2d(x * x, win) - mu_x * mu_x
    syy = conv2d(y * y, win) - mu_y * mu_y
    sxy = conv2d(x * y, win) - mu_x * mu_y
    cs = (sxy * 2.0 + c2) / (sxx + syy + c2)
    lum = (mu_x * mu_y * 2.0 + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    # negative per-window terms (anti-correlated windows of a wild
    # reconstruction) are floored elementwise, not after averaging:
    # a negative mean would saturate downstream and kill the gradient
    return (lum * cs).clamp_min(0.0).mean(), cs.clamp_min(0.0).mean()


def ms_ssim_tensor(a: Tensor, b: Tensor, cfg: MsSsimConfig | None = None) -> Tensor:
    """Differentiable MS-SSIM of two (C, H, W) tensors in [0, 1]."""
    cfg = cfg or MsSsimConfig()
    if a.shape != b.shape:
        raise CcvcError(f"ms_ssim: shape mismatch {a.shape} vs {b.shape}")
    c, h, w = a.shape
    m = min(h, w)
    if m < cfg.window_size:
        # fall back to the largest odd window the geometry allows
        cfg = replace(cfg, window_size=m if m % 2 else m - 1)
    scales = feasible_scales(h, w, cfg)
    weights = _effective_weights(scales, cfg)
    total = None
    for ch in range(c):
        x = a.narrow(ch, ch + 1)
        y = b.narrow(ch, ch + 1)
        value = None
        for s in range(scales):
            ssim_s, cs_s = _ssim_channel(x, y, cfg)
            term = ssim_s if s == scales - 1 else cs_s
            term = term.clamp_min(1e-12) ** float(weights[s])
            value = term if value is None else value * term
            if s < scales - 1:
                x = avg_pool2(x)
                y = avg_pool2(y)
        contrib = value * CHANNEL_WEIGHTS[ch]
        total = contrib if total is None else total + contrib
    return total


def distortion(a: Tensor, b: Tensor, cfg: MsSsimConfig | None = None) -> Tensor:
    """1 - MS-SSIM, attached to the autodiff graph."""
    return 1.0 - ms_ssim_tensor(a, b, cfg)


def ms_ssim(a: Frame, b: Frame, cfg: MsSsimConfig | None = None) -> float:
    """MS-SSIM between two frames (4:2:0 inputs are upsampled first)."""
    if a.chroma_format is ChromaFormat.C420:
        a = upsample_420_to_444(a)
    if b.chroma_format is ChromaFormat.C420:
        b = upsample_420_to_444(b)
    if (a.width, a.height) != (b.width, b.height):
        raise CcvcError(f"ms_ssim: {a.width}x{a.height} vs {b.width}x{b.height}")
    return ms_ssim_tensor(Tensor(a.as_array()), Tensor(b.as_array()), cfg).item()


def ms_ssim_db(value: float) -> float:
    """Quality scale -10*log10(1 - MS-SSIM); higher is better."""
    if value < 0.0:
        raise CcvcError(f"MS-SSIM must be non-negative, got {value}")
    if value >= 1.0:
        warnings.warn("MS-SSIM >= 1, dB value saturates to +inf")
        return math.inf
    return -10.0 * math.log10(1.0 - value)
