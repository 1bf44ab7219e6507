"""Learned quantization gain vectors and the quantizers they drive.

A gain vector pair (enc, dec) exists per network, per frame type, per
rate index. Gains are stored as logs so they stay strictly positive and
so geometric interpolation between rate indices is exact log-linear
blending.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CcvcError, ShapeError
from .tensor import Tensor
from .video import FrameType

NETWORKS = ("mofnet", "codecnet", "hyper_mofnet", "hyper_codecnet")


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


class GainVectorSet:
    """Per-(network, frame type, rate index) encoder/decoder gain vectors."""

    def __init__(self, channels: dict[str, int], n_rates: int = 6):
        for net in channels:
            if net not in NETWORKS:
                raise CcvcError(f"unknown network {net!r}")
        self.channels = dict(channels)
        self.n_rates = n_rates
        self.log_gains: dict[tuple[str, FrameType, int], tuple[Tensor, Tensor]] = {}
        for net, c in self.channels.items():
            for ft in FrameType:
                for i in range(1, n_rates + 1):
                    self.log_gains[(net, ft, i)] = (
                        Tensor(np.zeros(c), requires_grad=True),
                        Tensor(np.zeros(c), requires_grad=True),
                    )

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for (net, ft, i), (enc, dec) in self.log_gains.items():
            out[f"gains/{net}/{ft.value}/{i}/enc"] = enc
            out[f"gains/{net}/{ft.value}/{i}/dec"] = dec
        return out

    def _check(self, network: str, rate_index: int):
        if network not in self.channels:
            raise CcvcError(f"no gain vectors for network {network!r}")
        if not 1 <= rate_index <= self.n_rates:
            raise CcvcError(f"rate index {rate_index} outside [1, {self.n_rates}]")

    def gain(self, network: str, frame_type: FrameType, rate_index: int):
        """Stored (enc, dec) gain vectors at an integer rate index, as arrays."""
        self._check(network, rate_index)
        enc, dec = self.log_gains[(network, frame_type, rate_index)]
        return np.exp(enc.data), np.exp(dec.data)

    def interpolate(self, network: str, frame_type: FrameType, r: float):
        """Geometric interpolation between adjacent integer rate indices."""
        if not 1.0 <= r <= self.n_rates:
            raise CcvcError(f"rate {r} outside [1, {self.n_rates}]")
        lo = int(math.floor(r))
        hi = int(math.ceil(r))
        frac = r - lo
        out = []
        for side in (0, 1):
            log_lo = self.log_gains[(network, frame_type, lo)][side].data
            log_hi = self.log_gains[(network, frame_type, hi)][side].data
            out.append(np.exp((1.0 - frac) * log_lo + frac * log_hi))
        return tuple(out)

    def gain_tensors(self, network: str, frame_type: FrameType, rate_index: int):
        """(enc, dec) gains as graph tensors for training, shaped (C, 1, 1)."""
        self._check(network, rate_index)
        enc, dec = self.log_gains[(network, frame_type, rate_index)]
        c = self.channels[network]
        return enc.reshape(c, 1, 1).exp(), dec.reshape(c, 1, 1).exp()


def quantize_train(y: Tensor, gamma_enc: Tensor, noise: np.ndarray) -> Tensor:
    """Training proxy: scale by the encoder gain, add uniform noise."""
    if gamma_enc.shape[0] != y.shape[0]:
        raise ShapeError(
            f"gain has {gamma_enc.shape[0]} channels, latents have {y.shape[0]}")
    return y * gamma_enc + Tensor(noise)


def quantize_train_ste(y: Tensor, gamma_enc: Tensor) -> Tensor:
    """Training synthesis path: round like the test quantizer, with a
    straight-through gradient. Keeps the synthesis input identical to
    what the decoder will see, so gains cannot earn phantom precision
    from the additive-noise rate proxy."""
    if gamma_enc.shape[0] != y.shape[0]:
        raise ShapeError(
            f"gain has {gamma_enc.shape[0]} channels, latents have {y.shape[0]}")
    return (y * gamma_enc).round_ste()


def quantize_test(y: np.ndarray, gamma_enc: np.ndarray) -> np.ndarray:
    """Inference quantizer: round(y * gain), half away from zero."""
    return round_half_away(y * gamma_enc.reshape(-1, 1, 1)).astype(np.int64)


def dequantize(symbols: np.ndarray, gamma_dec: np.ndarray) -> np.ndarray:
    return symbols.astype(np.float64) * gamma_dec.reshape(-1, 1, 1)
