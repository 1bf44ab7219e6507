"""MOFNet and CodecNet: conditional-coding convolutional auto-encoders.

Each coder has three transforms: an analysis transform over the target
plus conditioning, a shortcut transform over the conditioning alone
(its latents cost zero rate), and a synthesis transform over the
concatenation of coded and shortcut latents. MOFNet's head emits two
optical flows plus the blending and coding-mode maps; CodecNet's head
emits the additive image contribution.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ShapeError
from .gains import (GainVectorSet, dequantize, quantize_test, quantize_train,
                    quantize_train_ste)
from .priors import (FactorizedPrior, SCALE_TABLE, gaussian_likelihood,
                     gaussian_pmf, quantize_scale, rate_estimate)
from .rangecoder import build_cdf_table, decode_symbols, encode_symbols
from .tensor import Tensor, bilinear_warp, concat, conv2d, conv2d_transpose
from .video import FrameType

LEAKY_SLOPE = 0.01


@dataclass
class NetworkConfig:
    f: int = 8
    depth: int = 3
    latent_channels: int = 0      # 0 -> 2*f, for both MOFNet and CodecNet
    hyper_channels: int = 0       # 0 -> f
    n_rates: int = 6
    kernel: int = 5
    max_displacement: float = 16.0
    use_hyperprior: bool = False

    def __post_init__(self):
        if self.f < 4:
            raise CheckpointError(f"feature count must be >= 4, got {self.f}")
        if not self.latent_channels:
            self.latent_channels = 2 * self.f
        if not self.hyper_channels:
            self.hyper_channels = self.f

    @property
    def pad_multiple(self) -> int:
        m = 2 ** self.depth
        return m * 4 if self.use_hyperprior else m


class Conv:
    def __init__(self, name, cin, cout, k, stride, rng, gain=1.0):
        scale = gain * np.sqrt(2.0 / (cin * k * k))
        self.w = Tensor(rng.normal(0.0, scale, (cout, cin, k, k)), requires_grad=True)
        self.b = Tensor(np.zeros(cout), requires_grad=True)
        self.name = name
        self.stride = stride
        self.pad = (k - 1) // 2

    def __call__(self, x):
        cout = self.w.shape[0]
        return conv2d(x, self.w, self.stride, self.pad) + self.b.reshape(cout, 1, 1)

    def parameters(self):
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}


class ConvT:
    def __init__(self, name, cin, cout, k, stride, rng, gain=1.0):
        scale = gain * np.sqrt(2.0 / (cin * k * k / stride ** 2))
        self.w = Tensor(rng.normal(0.0, scale, (cin, cout, k, k)), requires_grad=True)
        self.b = Tensor(np.zeros(cout), requires_grad=True)
        self.name = name
        self.stride = stride

    def __call__(self, x):
        cout = self.w.shape[1]
        return conv2d_transpose(x, self.w, self.stride) + self.b.reshape(cout, 1, 1)

    def parameters(self):
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}


class ResBlock:
    """Two 3x3 convs with a skip; stands in for the attention blocks."""

    def __init__(self, name, ch, rng):
        self.c1 = Conv(f"{name}/c1", ch, ch, 3, 1, rng)
        self.c2 = Conv(f"{name}/c2", ch, ch, 3, 1, rng, gain=0.1)

    def __call__(self, x):
        return x + self.c2(self.c1(x).leaky_relu(LEAKY_SLOPE))

    def parameters(self):
        return {**self.c1.parameters(), **self.c2.parameters()}


class _Stack:
    def __init__(self):
        self.layers = []

    def parameters(self):
        out = {}
        for layer in self.layers:
            out.update(layer.parameters())
        return out


class DownTransform(_Stack):
    """`depth` stride-2 stages ending in `cout` linear latents."""

    def __init__(self, name, cin, f, cout, depth, k, rng):
        super().__init__()
        self._acts = []
        ch = cin
        for d in range(depth):
            last = d == depth - 1
            conv = Conv(f"{name}/d{d}", ch, cout if last else f, k, 2, rng)
            self.layers.append(conv)
            if not last:
                res = ResBlock(f"{name}/r{d}", f, rng)
                self.layers.append(res)
            ch = f

    def __call__(self, x):
        out = x
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            out = layer(out)
            if isinstance(layer, Conv) and i != n - 1:
                out = out.leaky_relu(LEAKY_SLOPE)
        return out


class UpTransform(_Stack):
    """`depth` stride-2 transposed stages plus a linear conv head."""

    def __init__(self, name, cin, f, cout, depth, k, rng):
        super().__init__()
        ch = cin
        for d in range(depth):
            self.layers.append(ConvT(f"{name}/u{d}", ch, f, k, 2, rng))
            if d < depth - 1:
                self.layers.append(ResBlock(f"{name}/r{d}", f, rng))
            ch = f
        self.head = Conv(f"{name}/head", f, cout, 3, 1, rng)
        self.layers.append(self.head)

    def __call__(self, x):
        out = x
        for layer in self.layers[:-1]:
            out = layer(out)
            if isinstance(layer, ConvT):
                out = out.leaky_relu(LEAKY_SLOPE)
        return self.head(out)


class HyperAnalysis(_Stack):
    def __init__(self, name, cy, f, cz, rng):
        super().__init__()
        self.layers = [
            Conv(f"{name}/c0", cy, f, 3, 1, rng),
            Conv(f"{name}/c1", f, f, 5, 2, rng),
            Conv(f"{name}/c2", f, cz, 5, 2, rng),
        ]

    def __call__(self, x):
        out = self.layers[0](x).leaky_relu(LEAKY_SLOPE)
        out = self.layers[1](out).leaky_relu(LEAKY_SLOPE)
        return self.layers[2](out)


class HyperSynthesis(_Stack):
    def __init__(self, name, cz, f, cy, rng):
        super().__init__()
        self.layers = [
            ConvT(f"{name}/u0", cz, f, 5, 2, rng),
            ConvT(f"{name}/u1", f, f, 5, 2, rng),
            Conv(f"{name}/head", f, cy, 3, 1, rng),
        ]

    def __call__(self, x):
        out = self.layers[0](x).leaky_relu(LEAKY_SLOPE)
        out = self.layers[1](out).leaky_relu(LEAKY_SLOPE)
        # predicted Gaussian scales, strictly above the 0.04 floor
        return self.layers[2](out).softplus() + 0.04


@dataclass
class CodedChunk:
    """One entropy-coded latent tensor, ready for the bitstream."""

    symbol_count: int
    payload: bytes
    shape: tuple

    @property
    def bits(self) -> int:
        return len(self.payload) * 8


class ConditionalCoder:
    """Analysis + shortcut + synthesis (+ optional hyper transforms)."""

    def __init__(self, name, cfg: NetworkConfig, target_ch, cond_ch, out_ch, rng):
        cy = cfg.latent_channels
        self.name = name
        self.cfg = cfg
        self.latent_channels = cy
        self.analysis = DownTransform(f"{name}/analysis", target_ch + cond_ch,
                                      cfg.f, cy, cfg.depth, cfg.kernel, rng)
        self.shortcut = DownTransform(f"{name}/shortcut", cond_ch,
                                      cfg.f, cy, cfg.depth, cfg.kernel, rng)
        self.synthesis = UpTransform(f"{name}/synthesis", 2 * cy,
                                     cfg.f, out_ch, cfg.depth, cfg.kernel, rng)
        if cfg.use_hyperprior:
            cz = cfg.hyper_channels
            self.hyper_analysis = HyperAnalysis(f"{name}/hyper_analysis", cy, cfg.f, cz, rng)
            self.hyper_synthesis = HyperSynthesis(f"{name}/hyper_synthesis", cz, cfg.f, cy, rng)
        else:
            self.hyper_analysis = None
            self.hyper_synthesis = None

    def parameters(self):
        out = {}
        out.update(self.analysis.parameters())
        out.update(self.shortcut.parameters())
        out.update(self.synthesis.parameters())
        if self.hyper_analysis is not None:
            out.update(self.hyper_analysis.parameters())
            out.update(self.hyper_synthesis.parameters())
        return out

    # -- training path (differentiable) --------------------------------

    def code_train(self, target: Tensor, cond: Tensor, model: "Model",
                   frame_type: FrameType, rate_index: int, rng,
                   ste: bool = False) -> tuple[Tensor, Tensor]:
        """Returns (output, rate_bits).

        The rate term always uses the additive-uniform-noise proxy (a
        differentiable density); with `ste` the synthesis path instead
        sees actually-rounded latents with a pass-through gradient, the
        same values the decoder will dequantize. `ste=False` keeps the
        whole graph smooth for finite-difference checking.
        """
        if target.shape[1:] != cond.shape[1:]:
            raise ShapeError(f"{self.name}: target {target.shape} vs cond {cond.shape}")
        gains = model.gains
        ge, gd = gains.gain_tensors(self.name, frame_type, rate_index)
        y = self.analysis(concat([target, cond]))
        noise = rng.uniform(-0.5, 0.5, size=y.shape)
        y_tilde = quantize_train(y, ge, noise)
        y_rec = quantize_train_ste(y, ge) if ste else y_tilde
        if self.hyper_analysis is not None:
            hge, hgd = gains.gain_tensors(f"hyper_{self.name}", frame_type, rate_index)
            z = self.hyper_analysis(y * ge)
            z_noise = rng.uniform(-0.5, 0.5, size=z.shape)
            z_tilde = quantize_train(z, hge, z_noise)
            z_rec = quantize_train_ste(z, hge) if ste else z_tilde
            sigma = self.hyper_synthesis(z_rec * hgd)
            rate = rate_estimate(gaussian_likelihood(y_tilde, sigma)) \
                + rate_estimate(model.z_prior(self.name).likelihood(z_tilde))
        else:
            rate = rate_estimate(model.y_prior(self.name).likelihood(y_tilde))
        y_hat = y_rec * gd
        out = self.synthesis(concat([y_hat, self.shortcut(cond)]))
        return out, rate

    # -- inference path (deterministic, entropy-coded) ------------------

    def code_test(self, target: np.ndarray, cond: np.ndarray, model: "Model",
                  frame_type: FrameType, r: float, tables: "ModelTables"):
        """Returns (output array, chunks, actual rate bits)."""
        if target.shape[1:] != cond.shape[1:]:
            raise ShapeError(f"{self.name}: target {target.shape} vs cond {cond.shape}")
        gains = model.gains
        ge, gd = gains.interpolate(self.name, frame_type, r)
        y = self.analysis(Tensor(np.concatenate([target, cond]))).data
        symbols = quantize_test(y, ge)
        chunks = []
        if self.hyper_analysis is not None:
            hge, hgd = gains.interpolate(f"hyper_{self.name}", frame_type, r)
            z = self.hyper_analysis(Tensor(y * ge.reshape(-1, 1, 1))).data
            z_symbols = quantize_test(z, hge)
            z_tables, z_idx = tables.factorized(model.z_prior(self.name), z_symbols.shape)
            z_payload = encode_symbols(z_symbols, z_tables, z_idx)
            chunks.append(CodedChunk(z_symbols.size, z_payload, z_symbols.shape))
            sigma = self._sigma_from_z(z_symbols, hgd)
            y_tables, y_idx = tables.gaussian(sigma)
        else:
            y_tables, y_idx = tables.factorized(model.y_prior(self.name), symbols.shape)
        payload = encode_symbols(symbols, y_tables, y_idx)
        chunks.append(CodedChunk(symbols.size, payload, symbols.shape))
        out = self._synthesize(symbols, cond, gd)
        bits = sum(c.bits for c in chunks)
        return out, chunks, bits

    def decode(self, chunks: list[CodedChunk], cond: np.ndarray, model: "Model",
               frame_type: FrameType, r: float, tables: "ModelTables") -> np.ndarray:
        gains = model.gains
        _, gd = gains.interpolate(self.name, frame_type, r)
        chunks = list(chunks)
        if self.hyper_analysis is not None:
            z_chunk = chunks.pop(0)
            _, hgd = gains.interpolate(f"hyper_{self.name}", frame_type, r)
            z_tables, z_idx = tables.factorized(model.z_prior(self.name), z_chunk.shape)
            z_symbols = decode_symbols(z_chunk.payload, z_tables, z_idx,
                                       z_chunk.symbol_count).reshape(z_chunk.shape)
            sigma = self._sigma_from_z(z_symbols, hgd)
            y_tables, y_idx = tables.gaussian(sigma)
        else:
            y_chunk = chunks[0]
            y_tables, y_idx = tables.factorized(model.y_prior(self.name), y_chunk.shape)
        y_chunk = chunks[0]
        symbols = decode_symbols(y_chunk.payload, y_tables, y_idx,
                                 y_chunk.symbol_count).reshape(y_chunk.shape)
        return self._synthesize(symbols, cond, gd)

    def _sigma_from_z(self, z_symbols: np.ndarray, hgd: np.ndarray) -> np.ndarray:
        z_hat = dequantize(z_symbols, hgd)
        return self.hyper_synthesis(Tensor(z_hat)).data

    def _synthesize(self, symbols, cond, gd):
        y_hat = dequantize(symbols, gd)
        y_prime = self.shortcut(Tensor(cond)).data
        return self.synthesis(Tensor(np.concatenate([y_hat, y_prime]))).data


class ModelTables:
    """Fixed-point CDF tables for one frozen model, shared across frames."""

    _gauss_tables: np.ndarray | None = None

    def __init__(self):
        self._factorized: dict[int, np.ndarray] = {}

    def factorized(self, prior: FactorizedPrior, shape: tuple):
        key = id(prior)
        if key not in self._factorized:
            pmf = prior.pmf()
            self._factorized[key] = np.stack([build_cdf_table(row) for row in pmf])
        c = shape[0]
        per_element = shape[1] * shape[2] if len(shape) == 3 else 1
        idx = np.repeat(np.arange(c), per_element)
        return self._factorized[key], idx

    def gaussian(self, sigma: np.ndarray):
        if ModelTables._gauss_tables is None:
            ModelTables._gauss_tables = np.stack(
                [build_cdf_table(gaussian_pmf(s)) for s in SCALE_TABLE])
        return ModelTables._gauss_tables, quantize_scale(sigma).ravel()


# -- side-info parsing and Eq.-level combinators -----------------------

@dataclass
class MotionSideInfo:
    v_p: Tensor
    v_f: Tensor
    beta: Tensor
    alpha: Tensor


def split_motion_head(raw: Tensor | np.ndarray, max_displacement: float) -> MotionSideInfo:
    """Parse the 6-channel MOFNet synthesis output."""
    t = raw if isinstance(raw, Tensor) else Tensor(raw)
    return MotionSideInfo(
        v_p=t.narrow(0, 2).tanh() * max_displacement,
        v_f=t.narrow(2, 4).tanh() * max_displacement,
        beta=t.narrow(4, 5).sigmoid(),
        alpha=t.narrow(5, 6).sigmoid(),
    )


def temporal_prediction(ref_p: Tensor, ref_f: Tensor, v_p: Tensor, v_f: Tensor,
                        beta: Tensor) -> Tensor:
    """Blend the two warped references with the single-channel beta map."""
    return beta * bilinear_warp(ref_p, v_p) + (1.0 - beta) * bilinear_warp(ref_f, v_f)


def combine_modes(alpha: Tensor, prediction: Tensor, contribution: Tensor) -> Tensor:
    """Skip portion plus CodecNet contribution; unclamped until display."""
    return (1.0 - alpha) * prediction + contribution


class Model:
    """Full parameter set: both coders, priors, and the gain vectors."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        cy = cfg.latent_channels
        self.mofnet = ConditionalCoder("mofnet", cfg, 3, 6, 6, rng)
        self.codecnet = ConditionalCoder("codecnet", cfg, 3, 3, 3, rng)
        # start the motion head near identity: tiny flows, neutral beta,
        # alpha biased toward the CodecNet path; random flows and mode
        # maps early on otherwise drown CodecNet's conditioning in noise
        head = self.mofnet.synthesis.head
        head.w.data *= 0.1
        head.b.data[5] = 2.0
        gain_channels = {"mofnet": cy, "codecnet": cy}
        if cfg.use_hyperprior:
            gain_channels["hyper_mofnet"] = cfg.hyper_channels
            gain_channels["hyper_codecnet"] = cfg.hyper_channels
        self.gains = GainVectorSet(gain_channels, cfg.n_rates)
        self._priors: dict[str, FactorizedPrior] = {}
        if cfg.use_hyperprior:
            self._priors["z/mofnet"] = FactorizedPrior(cfg.hyper_channels, "z_prior/mofnet")
            self._priors["z/codecnet"] = FactorizedPrior(cfg.hyper_channels, "z_prior/codecnet")
        else:
            self._priors["y/mofnet"] = FactorizedPrior(cy, "y_prior/mofnet")
            self._priors["y/codecnet"] = FactorizedPrior(cy, "y_prior/codecnet")

    def y_prior(self, net: str) -> FactorizedPrior:
        return self._priors[f"y/{net}"]

    def z_prior(self, net: str) -> FactorizedPrior:
        return self._priors[f"z/{net}"]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.mofnet.parameters())
        out.update(self.codecnet.parameters())
        for prior in self._priors.values():
            out.update(prior.parameters())
        out.update(self.gains.parameters())
        return out

    def model_id(self) -> int:
        """64-bit digest of all parameter values (checkpoint identity)."""
        h = hashlib.sha256()
        for name in sorted(self.parameters()):
            p = self.parameters()[name]
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return struct.unpack("<Q", h.digest()[:8])[0]


def code_frame_train(model: Model, x: Tensor, ref_p: Tensor | None,
                     ref_f: Tensor | None, frame_type: FrameType,
                     rate_index: int, rng, ste: bool = False):
    """Differentiable coding of one frame; references are graph tensors.

    Returns (reconstruction, total_rate, mofnet_rate, codecnet_rate);
    the rates are scalar tensors, zero-valued for absent MOFNet.
    """
    if frame_type is FrameType.I:
        # MOFNet bypassed: prediction is 0 and the mode map is all-CodecNet
        cond = Tensor(np.zeros_like(x.data))
        contribution, codec_rate = model.codecnet.code_train(
            x, cond, model, frame_type, rate_index, rng, ste=ste)
        return contribution, codec_rate, Tensor(0.0), codec_rate
    if ref_p is None:
        raise ShapeError(f"{frame_type.value}-frame needs a past reference")
    if ref_f is None:
        ref_f = ref_p  # P-frames duplicate their single reference
    raw, mof_rate = model.mofnet.code_train(
        x, concat([ref_p, ref_f]), model, frame_type, rate_index, rng, ste=ste)
    side = split_motion_head(raw, model.cfg.max_displacement)
    prediction = temporal_prediction(ref_p, ref_f, side.v_p, side.v_f, side.beta)
    contribution, codec_rate = model.codecnet.code_train(
        side.alpha * x, side.alpha * prediction, model, frame_type, rate_index, rng,
        ste=ste)
    recon = combine_modes(side.alpha, prediction, contribution)
    return recon, mof_rate + codec_rate, mof_rate, codec_rate


# -- checkpoint serialization ------------------------------------------

_CKPT_MAGIC = b"CCVC"
_CKPT_VERSION = 1
_CFG_FMT = "<HHHHHBd"


def save_checkpoint(model: Model, path: str) -> None:
    cfg = model.cfg
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<H", _CKPT_VERSION))
        fh.write(struct.pack(_CFG_FMT, cfg.f, cfg.depth, cfg.latent_channels,
                             cfg.hyper_channels, cfg.n_rates,
                             1 if cfg.use_hyperprior else 0, cfg.max_displacement))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f8")
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        f, depth, cy, cz, n_rates, hyper, max_disp = struct.unpack(
            _CFG_FMT, fh.read(struct.calcsize(_CFG_FMT)))
        cfg = NetworkConfig(f=f, depth=depth, latent_channels=cy, hyper_channels=cz,
                            n_rates=n_rates, max_displacement=max_disp,
                            use_hyperprior=bool(hyper))
        model = Model(cfg)
        params = model.parameters()
        (count,) = struct.unpack("<I", fh.read(4))
        if count != len(params):
            raise CheckpointError(
                f"{path}: checkpoint has {count} parameters, model expects {len(params)}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_elem = int(np.prod(shape)) if ndim else 1
            raw = fh.read(8 * n_elem)
            if len(raw) != 8 * n_elem:
                raise CheckpointError(f"{path}: truncated data for parameter {name!r}")
            if name not in params:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            if params[name].data.shape != tuple(shape):
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {shape}, "
                    f"expected {params[name].data.shape}")
            params[name].data[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return model
