"""Deterministic binary arithmetic coder over 16-bit fixed-point CDF tables.

The coder is the classic 32-bit low/high formulation with underflow
counting. All probability mass is carried by integer CDF tables that
both sides rebuild identically from the (deterministic) model outputs,
so encode/decode is bit-exact across runs on the same platform.
"""

from __future__ import annotations

import numpy as np

from .errors import BitstreamError
from .priors import ALPHABET, ESCAPE, SYMBOL_MAX, SYMBOL_MIN

_STATE_BITS = 32
_MASK = (1 << _STATE_BITS) - 1
_TOP = 1 << (_STATE_BITS - 1)
_SECOND = _TOP >> 1

PRECISION = 16
TOTAL = 1 << PRECISION

# flat distribution over one byte, for escape-coded raw values
UNIFORM256_CDF = (np.arange(257, dtype=np.uint32) * (TOTAL // 256))


def build_cdf_table(pmf: np.ndarray, precision: int = PRECISION) -> np.ndarray:
    """Quantize a pmf to an integer CDF with total 2^precision.

    Every symbol keeps mass >= 1 so it stays codable; the largest
    entries absorb the rounding surplus/deficit deterministically.
    """
    total = 1 << precision
    p = np.asarray(pmf, dtype=np.float64)
    if p.size > total:
        raise BitstreamError(f"alphabet of {p.size} exceeds precision {precision}")
    p = p / p.sum()
    freq = np.maximum(1, np.floor(p * total + 0.5).astype(np.int64))
    diff = total - int(freq.sum())
    if diff > 0:
        freq[int(np.argmax(freq))] += diff
    while diff < 0:
        order = np.argsort(-freq, kind="stable")
        for i in order:
            take = min(int(freq[i]) - 1, -diff)
            if take > 0:
                freq[i] -= take
                diff += take
            if diff == 0:
                break
    cdf = np.zeros(p.size + 1, dtype=np.uint32)
    cdf[1:] = np.cumsum(freq)
    return cdf


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, bit: int):
        self.acc = (self.acc << 1) | bit
        self.nbits += 1
        if self.nbits == 8:
            self.buf.append(self.acc)
            self.acc = 0
            self.nbits = 0

    def getvalue(self) -> bytes:
        if self.nbits:
            self.buf.append(self.acc << (8 - self.nbits))
            self.acc = 0
            self.nbits = 0
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self) -> int:
        # past-the-end reads return 0 (the encoder's implicit tail)
        byte_idx = self.pos >> 3
        if byte_idx >= len(self.data):
            self.pos += 1
            return 0
        bit = (self.data[byte_idx] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.out = _BitWriter()

    def encode(self, cdf: np.ndarray, symbol: int):
        total = int(cdf[-1])
        sym_lo = int(cdf[symbol])
        sym_hi = int(cdf[symbol + 1])
        if sym_lo == sym_hi:
            raise BitstreamError(f"symbol {symbol} has zero frequency")
        span = self.high - self.low + 1
        self.high = self.low + sym_hi * span // total - 1
        self.low = self.low + sym_lo * span // total
        while True:
            if (self.low ^ self.high) & _TOP == 0:
                bit = self.low >> (_STATE_BITS - 1)
                self.out.write(bit)
                inv = bit ^ 1
                for _ in range(self.pending):
                    self.out.write(inv)
                self.pending = 0
                self.low = (self.low << 1) & _MASK
                self.high = ((self.high << 1) & _MASK) | 1
            elif self.low & ~self.high & _SECOND:
                self.pending += 1
                self.low = (self.low << 1) & (_MASK >> 1)
                self.high = ((self.high << 1) & _MASK) | _TOP | 1
            else:
                break

    def finish(self) -> bytes:
        self.out.write(1)
        return self.out.getvalue()


class RangeDecoder:
    def __init__(self, data: bytes):
        self.inp = _BitReader(data)
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self.inp.read()

    def decode(self, cdf: np.ndarray) -> int:
        total = int(cdf[-1])
        span = self.high - self.low + 1
        offset = self.code - self.low
        value = ((offset + 1) * total - 1) // span
        if not 0 <= value < total:
            raise BitstreamError("arithmetic decoder state out of range")
        symbol = int(np.searchsorted(cdf, value, side="right")) - 1
        sym_lo = int(cdf[symbol])
        sym_hi = int(cdf[symbol + 1])
        self.high = self.low + sym_hi * span // total - 1
        self.low = self.low + sym_lo * span // total
        while True:
            if (self.low ^ self.high) & _TOP == 0:
                self.low = (self.low << 1) & _MASK
                self.high = ((self.high << 1) & _MASK) | 1
                self.code = ((self.code << 1) & _MASK) | self.inp.read()
            elif self.low & ~self.high & _SECOND:
                self.low = (self.low << 1) & (_MASK >> 1)
                self.high = ((self.high << 1) & _MASK) | _TOP | 1
                self.code = (self.code & _TOP) | ((self.code << 1) & (_MASK >> 1)) | self.inp.read()
            else:
                break
        return symbol


def encode_symbols(symbols: np.ndarray, tables: np.ndarray,
                   table_idx: np.ndarray) -> bytes:
    """Entropy-code integer latents with per-symbol CDF table selection.

    `tables` has shape (T, ALPHABET + 1); symbols outside the alphabet
    are escape-coded as a raw 16-bit offset under a flat distribution.
    """
    enc = RangeEncoder()
    syms = np.asarray(symbols).ravel()
    idx = np.asarray(table_idx).ravel()
    for s, t in zip(syms.tolist(), idx.tolist()):
        cdf = tables[t]
        if SYMBOL_MIN <= s <= SYMBOL_MAX:
            enc.encode(cdf, s - SYMBOL_MIN)
        else:
            if not -32768 <= s <= 32767:
                raise BitstreamError(f"latent symbol {s} exceeds escape range")
            enc.encode(cdf, ESCAPE)
            raw = s + 32768
            enc.encode(UNIFORM256_CDF, raw >> 8)
            enc.encode(UNIFORM256_CDF, raw & 0xFF)
    return enc.finish()


def decode_symbols(payload: bytes, tables: np.ndarray, table_idx: np.ndarray,
                   count: int) -> np.ndarray:
    dec = RangeDecoder(payload)
    idx = np.asarray(table_idx).ravel()
    if idx.size != count:
        raise BitstreamError(f"expected {count} table indices, got {idx.size}")
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        sym = dec.decode(tables[idx[i]])
        if sym == ESCAPE:
            raw = dec.decode(UNIFORM256_CDF) << 8
            raw |= dec.decode(UNIFORM256_CDF)
            out[i] = raw - 32768
        else:
            out[i] = sym + SYMBOL_MIN
    return out
