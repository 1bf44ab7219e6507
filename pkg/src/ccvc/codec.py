"""Frame orchestration: GOP scheduling, reference management, the
bitstream container, and the sequence-level encode/decode paths.

Coding order within a GOP is the standard binary hierarchy: the GOP's
last frame is coded first as a P-frame against the GOP start, then
B-frames fill the midpoints referencing their nearest coded neighbors.
Intra frames are re-inserted every `intra_period` display frames.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import BitstreamError, CcvcError
from .metrics import MsSsimConfig, ms_ssim_tensor
from .nets import (CodedChunk, Model, ModelTables, combine_modes,
                   split_motion_head, temporal_prediction)
from .tensor import Tensor
from .video import (ChromaFormat, Frame, FrameType, Sequence, crop_to_size,
                    downsample_444_to_420, pad_to_multiple, upsample_420_to_444)

_STREAM_MAGIC = b"CCV1"
_FLAG_HYPERPRIOR = 0x01
_HEADER_FMT = "<4sHHHHBHQB"

VALID_GOP_SIZES = (2, 4, 8)


@dataclass(frozen=True)
class GopEntry:
    display_index: int
    frame_type: FrameType
    ref_past: int | None = None
    ref_future: int | None = None

    def refs(self):
        return tuple(r for r in (self.ref_past, self.ref_future) if r is not None)


def _bisect(entries: list[GopEntry], lo: int, hi: int):
    mid = (lo + hi) // 2
    if mid == lo:
        return
    entries.append(GopEntry(mid, FrameType.B, lo, hi))
    _bisect(entries, lo, mid)
    _bisect(entries, mid, hi)


def build_gop_schedule(intra_period: int, gop_size: int, n_frames: int) -> list[GopEntry]:
    """Full coding order for a sequence of n_frames display frames."""
    if gop_size not in VALID_GOP_SIZES:
        raise CcvcError(f"gop_size must be one of {VALID_GOP_SIZES}, got {gop_size}")
    if intra_period % gop_size:
        raise CcvcError(f"intra period {intra_period} not a multiple of gop {gop_size}")
    if n_frames < 1:
        raise CcvcError("need at least one frame")
    entries = [GopEntry(0, FrameType.I)]
    pos = 0
    while pos < n_frames - 1:
        boundary = pos - (pos % intra_period) + intra_period
        end = min(pos + gop_size, n_frames - 1, boundary)
        if end == boundary:
            entries.append(GopEntry(end, FrameType.I))
        else:
            entries.append(GopEntry(end, FrameType.P, pos))
        _bisect(entries, pos, end)
        pos = end
    return entries


class DecodedPictureBuffer:
    """Reconstructed frames still needed as references."""

    def __init__(self, schedule: list[GopEntry]):
        self._store: dict[int, np.ndarray] = {}
        self._schedule = schedule

    def get(self, index: int) -> np.ndarray:
        if index not in self._store:
            raise BitstreamError(f"reference frame {index} not available in DPB")
        return self._store[index]

    def insert(self, index: int, recon: np.ndarray, position: int):
        self._store[index] = recon
        needed = set()
        for e in self._schedule[position + 1:]:
            needed.update(e.refs())
            if e.frame_type is not FrameType.B:
                needed.add(e.display_index)  # future GOP anchors
        self._store = {i: f for i, f in self._store.items()
                       if i in needed or i == index}

    def __len__(self):
        return len(self._store)


@dataclass
class BitstreamHeader:
    width: int
    height: int
    frame_count: int
    intra_period: int
    gop_size: int
    rate_fixed: int       # continuous rate index r in 8.8 fixed point
    model_id: int
    flags: int

    @property
    def rate(self) -> float:
        return self.rate_fixed / 256.0

    def pack(self) -> bytes:
        return struct.pack(_HEADER_FMT, _STREAM_MAGIC, self.width, self.height,
                           self.frame_count, self.intra_period, self.gop_size,
                           self.rate_fixed, self.model_id, self.flags)

    @staticmethod
    def unpack(data: bytes) -> tuple["BitstreamHeader", int]:
        size = struct.calcsize(_HEADER_FMT)
        if len(data) < size:
            raise BitstreamError("bitstream shorter than its header")
        magic, w, h, n, ip, gop, rate, mid, flags = struct.unpack_from(_HEADER_FMT, data)
        if magic != _STREAM_MAGIC:
            raise BitstreamError(f"bad stream magic {magic!r}")
        return BitstreamHeader(w, h, n, ip, gop, rate, mid, flags), size


def _pack_chunk(chunk: CodedChunk) -> bytes:
    return struct.pack("<II", chunk.symbol_count, len(chunk.payload)) \
        + chunk.payload + struct.pack("<I", zlib.crc32(chunk.payload))


def _unpack_chunk(data: bytes, offset: int, frame_index: int, shape: tuple):
    if offset + 8 > len(data):
        raise BitstreamError(f"truncated chunk header at frame {frame_index}")
    count, plen = struct.unpack_from("<II", data, offset)
    offset += 8
    if offset + plen + 4 > len(data):
        raise BitstreamError(f"truncated chunk payload at frame {frame_index}")
    payload = data[offset:offset + plen]
    offset += plen
    (crc,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if crc != zlib.crc32(payload):
        raise BitstreamError(f"chunk checksum mismatch at frame {frame_index}")
    return CodedChunk(count, payload, shape), offset


# -- single-frame paths ------------------------------------------------

def encode_frame(x: np.ndarray, entry: GopEntry, dpb: DecodedPictureBuffer,
                 model: Model, r: float, tables: ModelTables, position: int):
    """Code one padded (3, H, W) frame. Returns (recon, chunks, stats)."""
    ft = entry.frame_type
    if ft is FrameType.I:
        cond = np.zeros_like(x)
        recon, chunks, bits = model.codecnet.code_test(x, cond, model, ft, r, tables)
        stats = {"mofnet_bits": 0, "codecnet_bits": bits}
    else:
        ref_p = dpb.get(entry.ref_past)
        ref_f = dpb.get(entry.ref_future) if entry.ref_future is not None else ref_p
        raw, mof_chunks, mof_bits = model.mofnet.code_test(
            x, np.concatenate([ref_p, ref_f]), model, ft, r, tables)
        recon, codec_chunks, codec_bits = _inter_reconstruct(
            model, raw, ref_p, ref_f, r, ft, tables, target=x)
        chunks = mof_chunks + codec_chunks
        stats = {"mofnet_bits": mof_bits, "codecnet_bits": codec_bits}
    dpb.insert(entry.display_index, recon, position)
    return recon, chunks, stats


def _inter_reconstruct(model: Model, raw_side: np.ndarray, ref_p, ref_f,
                       r: float, ft: FrameType, tables: ModelTables,
                       target: np.ndarray | None = None,
                       codec_chunks: list[CodedChunk] | None = None):
    """Shared encoder/decoder inter path from decoded MOFNet output."""
    side = split_motion_head(raw_side, model.cfg.max_displacement)
    pred = temporal_prediction(Tensor(ref_p), Tensor(ref_f),
                               side.v_p, side.v_f, side.beta)
    alpha = side.alpha
    if target is not None:
        contribution, chunks, bits = model.codecnet.code_test(
            (alpha * Tensor(target)).data, (alpha * pred).data, model, ft, r, tables)
    else:
        contribution = model.codecnet.decode(
            codec_chunks, (alpha * pred).data, model, ft, r, tables)
        chunks, bits = [], 0
    recon = combine_modes(alpha, pred, Tensor(contribution)).data
    return recon, chunks, bits


def decode_frame(chunks: list[CodedChunk], entry: GopEntry,
                 dpb: DecodedPictureBuffer, model: Model, r: float,
                 tables: ModelTables, position: int) -> np.ndarray:
    ft = entry.frame_type
    n_per_net = 2 if model.cfg.use_hyperprior else 1
    if ft is FrameType.I:
        cond = None  # shape known from chunks only after decode; use zeros below
        if len(chunks) != n_per_net:
            raise BitstreamError(f"I-frame {entry.display_index}: wrong chunk count")
        shape = chunks[-1].shape
        h = shape[1] * 2 ** model.cfg.depth
        w = shape[2] * 2 ** model.cfg.depth
        recon = model.codecnet.decode(chunks, np.zeros((3, h, w)), model, ft, r, tables)
    else:
        if len(chunks) != 2 * n_per_net:
            raise BitstreamError(f"inter frame {entry.display_index}: wrong chunk count")
        ref_p = dpb.get(entry.ref_past)
        ref_f = dpb.get(entry.ref_future) if entry.ref_future is not None else ref_p
        raw = model.mofnet.decode(chunks[:n_per_net],
                                  np.concatenate([ref_p, ref_f]), model, ft, r, tables)
        recon, _, _ = _inter_reconstruct(model, raw, ref_p, ref_f, r, ft, tables,
                                         codec_chunks=chunks[n_per_net:])
    dpb.insert(entry.display_index, recon, position)
    return recon


# -- sequence-level paths ----------------------------------------------

def encode_sequence(seq: Sequence, model: Model, r: float, gop_size: int,
                    intra_period: int, ms_cfg: MsSsimConfig | None = None):
    """Encode a sequence. Returns (bitstream, per-frame stats, Mbit/s).

    Stats are in display order; each entry carries the cropped (still
    unclamped) encoder-side reconstruction for round-trip checks.
    """
    n = len(seq)
    if n == 0:
        raise CcvcError("empty sequence")
    if seq.width > 0xFFFF or seq.height > 0xFFFF or n > 0xFFFF:
        raise CcvcError("sequence geometry exceeds the 16-bit header fields")
    rate_fixed = int(round(r * 256))
    r_q = rate_fixed / 256.0
    schedule = build_gop_schedule(intra_period, gop_size, n)
    tables = ModelTables()
    dpb = DecodedPictureBuffer(schedule)
    sources = {}
    for f in seq.frames:
        f444 = upsample_420_to_444(f) if f.chroma_format is ChromaFormat.C420 else f
        sources[f.display_index] = f444.as_array()
    header = BitstreamHeader(seq.width, seq.height, n, intra_period, gop_size,
                             rate_fixed, model.model_id(),
                             _FLAG_HYPERPRIOR if model.cfg.use_hyperprior else 0)
    out = bytearray(header.pack())
    stats = {}
    orig_size = (seq.height, seq.width)
    for position, entry in enumerate(schedule):
        x, _ = pad_to_multiple(sources[entry.display_index], model.cfg.pad_multiple)
        recon, chunks, fstats = encode_frame(x, entry, dpb, model, r_q, tables, position)
        record = struct.pack("<HB", entry.display_index, len(chunks))
        record += b"".join(_pack_chunk(c) for c in chunks)
        out += record
        cropped = crop_to_size(recon, orig_size)
        quality = ms_ssim_tensor(Tensor(np.clip(cropped, 0.0, 1.0)),
                                 Tensor(sources[entry.display_index]), ms_cfg).item()
        fstats.update({
            "display_index": entry.display_index,
            "frame_type": entry.frame_type.value,
            "record_bits": len(record) * 8,
            "payload_bits": fstats["mofnet_bits"] + fstats["codecnet_bits"],
            "ms_ssim": quality,
            "recon": cropped,
        })
        stats[entry.display_index] = fstats
    total_bits = len(out) * 8
    bitrate_mbps = total_bits * seq.frame_rate / n / 1e6
    return bytes(out), [stats[i] for i in sorted(stats)], bitrate_mbps


def decode_sequence(data: bytes, model: Model, frame_rate: float = 30.0):
    """Decode a bitstream. Returns (YUV420 sequence, recon arrays).

    Both are in display order; the arrays are the cropped, unclamped
    4:4:4 reconstructions (bit-exact mirrors of the encoder's).
    """
    header, offset = BitstreamHeader.unpack(data)
    if header.flags & ~_FLAG_HYPERPRIOR:
        raise BitstreamError(f"unknown bitstream flags 0x{header.flags:02x}")
    if bool(header.flags & _FLAG_HYPERPRIOR) != model.cfg.use_hyperprior:
        raise BitstreamError("bitstream prior mode does not match the model")
    mid = model.model_id()
    if header.model_id != mid:
        raise BitstreamError(
            f"model mismatch: bitstream wants 0x{header.model_id:016x}, "
            f"loaded checkpoint is 0x{mid:016x}")
    schedule = build_gop_schedule(header.intra_period, header.gop_size,
                                  header.frame_count)
    tables = ModelTables()
    dpb = DecodedPictureBuffer(schedule)
    m = model.cfg.pad_multiple
    pad_h = header.height + (-header.height) % m
    pad_w = header.width + (-header.width) % m
    cy = model.cfg.latent_channels
    cz = model.cfg.hyper_channels
    lat_h, lat_w = pad_h // 2 ** model.cfg.depth, pad_w // 2 ** model.cfg.depth
    recons: dict[int, np.ndarray] = {}
    for position, entry in enumerate(schedule):
        if offset + 3 > len(data):
            raise BitstreamError(f"truncated frame record at frame {entry.display_index}")
        display_index, n_chunks = struct.unpack_from("<HB", data, offset)
        offset += 3
        if display_index != entry.display_index:
            raise BitstreamError(
                f"frame order mismatch: stream has {display_index}, "
                f"schedule expects {entry.display_index}")
        chunks = []
        for k in range(n_chunks):
            # chunk shapes follow from the schedule: optional hyper latents
            # precede the main latents for each network
            is_hyper = model.cfg.use_hyperprior and k % 2 == 0
            shape = (cz, lat_h // 4, lat_w // 4) if is_hyper else (cy, lat_h, lat_w)
            chunk, offset = _unpack_chunk(data, offset, entry.display_index, shape)
            chunks.append(chunk)
        recon = decode_frame(chunks, entry, dpb, model, header.rate, tables, position)
        recons[entry.display_index] = crop_to_size(recon, (header.height, header.width))
    frames = []
    for i in range(header.frame_count):
        arr = np.clip(recons[i], 0.0, 1.0)
        frame = Frame.from_array(arr, FrameType.I, i)
        frames.append(downsample_444_to_420(frame))
    return Sequence(frames, frame_rate), [recons[i] for i in range(header.frame_count)]
