"""Latent probability models: learned factorized prior and Gaussian
scale model (used under the hyperprior), plus rate estimation.

Each model exposes two evaluation paths with identical semantics:
a Tensor path (differentiable, for training) and a numpy path (for
building the deterministic fixed-point tables used by the range coder).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as np_erf

from .errors import ShapeError
from .tensor import Tensor

SYMBOL_MIN = -64
SYMBOL_MAX = 63
ESCAPE = SYMBOL_MAX - SYMBOL_MIN + 1  # index of the escape bucket
ALPHABET = ESCAPE + 1

MIN_LIKELIHOOD = 2.0 ** -16
MIN_SCALE = 0.04

# quantized Gaussian scales, so sigma -> CDF table is a small finite map
SCALE_TABLE = np.exp(np.linspace(math.log(MIN_SCALE), math.log(64.0), 64))

_LN2 = math.log(2.0)


def _softplus(x):
    return np.logaddexp(0.0, x)


class FactorizedPrior:
    """Per-channel monotone CDF: three layers of width 3, then a sigmoid.

    Layer weights pass through softplus and the residual tanh factors are
    bounded in (-1, 1), which keeps the CDF monotone non-decreasing with
    CDF(-inf)=0 and CDF(+inf)=1.
    """

    WIDTH = 3

    def __init__(self, channels: int, name: str):
        self.channels = channels
        self.name = name
        c = channels
        w0 = math.log(math.exp(0.48) - 1.0)  # softplus(w0) ~ 0.48
        self.w1 = Tensor(np.full(3 * c, w0), requires_grad=True)
        self.b1 = Tensor(np.zeros(3 * c), requires_grad=True)
        self.a1 = Tensor(np.zeros(3 * c), requires_grad=True)
        self.w2 = Tensor(np.full(9 * c, w0), requires_grad=True)
        self.b2 = Tensor(np.zeros(3 * c), requires_grad=True)
        self.a2 = Tensor(np.zeros(3 * c), requires_grad=True)
        self.w3 = Tensor(np.full(3 * c, w0), requires_grad=True)
        self.b3 = Tensor(np.zeros(c), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {f"{self.name}/{k}": getattr(self, k)
                for k in ("w1", "b1", "a1", "w2", "b2", "a2", "w3", "b3")}

    # -- Tensor path ---------------------------------------------------

    def _cdf_tensor(self, t: Tensor) -> Tensor:
        c = self.channels
        u = t.tile_channels(3) * self.w1.softplus().reshape(3 * c, 1, 1) \
            + self.b1.reshape(3 * c, 1, 1)
        u = u + self.a1.tanh().reshape(3 * c, 1, 1) * u.tanh()
        u = (u.tile_channels(3) * self.w2.softplus().reshape(9 * c, 1, 1)) \
            .sum_channel_groups(3, 3) + self.b2.reshape(3 * c, 1, 1)
        u = u + self.a2.tanh().reshape(3 * c, 1, 1) * u.tanh()
        u = (u * self.w3.softplus().reshape(3 * c, 1, 1)).sum_channel_groups(1, 3) \
            + self.b3.reshape(c, 1, 1)
        return u.sigmoid()

    def likelihood(self, values: Tensor) -> Tensor:
        """p(v) = CDF(v + 1/2) - CDF(v - 1/2), floored at 2^-16."""
        if values.shape[0] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {values.shape[0]}")
        p = self._cdf_tensor(values + 0.5) - self._cdf_tensor(values - 0.5)
        return p.clamp_min(MIN_LIKELIHOOD)

    # -- numpy path ----------------------------------------------------

    def cdf_numpy(self, x: np.ndarray) -> np.ndarray:
        """CDF at points x of shape (C, K)."""
        c = self.channels
        w1 = _softplus(self.w1.data).reshape(3, c, 1)
        u = w1 * x[None] + self.b1.data.reshape(3, c, 1)
        u = u + np.tanh(self.a1.data).reshape(3, c, 1) * np.tanh(u)
        w2 = _softplus(self.w2.data).reshape(3, 3, c)
        u = np.einsum("jic,ick->jck", w2, u) + self.b2.data.reshape(3, c, 1)
        u = u + np.tanh(self.a2.data).reshape(3, c, 1) * np.tanh(u)
        w3 = _softplus(self.w3.data).reshape(3, c)
        t = np.einsum("jc,jck->ck", w3, u) + self.b3.data.reshape(c, 1)
        return 1.0 / (1.0 + np.exp(-t))

    def pmf(self) -> np.ndarray:
        """Per-channel pmf over the coding alphabet, escape bucket last.

        Shape (C, ALPHABET); row sums are exactly 1.
        """
        edges = np.arange(SYMBOL_MIN, SYMBOL_MAX + 2) - 0.5
        grid = np.broadcast_to(edges, (self.channels, edges.size)).astype(np.float64)
        cdf = self.cdf_numpy(grid)
        interior = np.diff(cdf, axis=1)
        escape = (cdf[:, :1] + (1.0 - cdf[:, -1:]))
        return np.concatenate([interior, escape], axis=1)

    def likelihood_numpy(self, symbols: np.ndarray) -> np.ndarray:
        flat = symbols.reshape(self.channels, -1).astype(np.float64)
        p = self.cdf_numpy(flat + 0.5) - self.cdf_numpy(flat - 0.5)
        return np.maximum(p, MIN_LIKELIHOOD).reshape(symbols.shape)


# -- Gaussian (hyperprior-driven) model --------------------------------

def std_normal_cdf(x):
    return 0.5 * (1.0 + np_erf(np.asarray(x, dtype=np.float64) / math.sqrt(2.0)))


def gaussian_likelihood(values: Tensor, sigma: Tensor) -> Tensor:
    """Zero-mean Gaussian integrated over unit bins, floored at 2^-16."""
    sqrt2 = math.sqrt(2.0)
    hi = ((values + 0.5) / (sigma * sqrt2)).erf()
    lo = ((values - 0.5) / (sigma * sqrt2)).erf()
    return ((hi - lo) * 0.5).clamp_min(MIN_LIKELIHOOD)


def gaussian_likelihood_numpy(symbols: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    p = std_normal_cdf((symbols + 0.5) / sigma) - std_normal_cdf((symbols - 0.5) / sigma)
    return np.maximum(p, MIN_LIKELIHOOD)


def quantize_scale(sigma: np.ndarray) -> np.ndarray:
    """Snap each sigma up to the next entry of SCALE_TABLE (deterministic)."""
    idx = np.searchsorted(SCALE_TABLE, sigma, side="left")
    return np.clip(idx, 0, SCALE_TABLE.size - 1)


def gaussian_pmf(sigma: float) -> np.ndarray:
    """pmf over the coding alphabet for one sigma, escape bucket last."""
    edges = np.arange(SYMBOL_MIN, SYMBOL_MAX + 2) - 0.5
    cdf = std_normal_cdf(edges / sigma)
    interior = np.diff(cdf)
    escape = cdf[0] + (1.0 - cdf[-1])
    return np.concatenate([interior, [escape]])


# -- rate --------------------------------------------------------------

def rate_estimate(probabilities: Tensor) -> Tensor:
    """Total information content in bits: sum of -log2 p."""
    return probabilities.log().sum() * (-1.0 / _LN2)


def rate_estimate_numpy(probabilities: np.ndarray) -> float:
    return float(-np.log2(probabilities).sum())
