"""Raw planar YUV420 reading/writing and 4:2:0 <-> 4:4:4 conversion.

All samples live in [0, 1] as float64. The codec itself works on 4:4:4
frames; 4:2:0 is only the file interchange format.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CcvcError


class ChromaFormat(enum.Enum):
    C420 = "420"
    C444 = "444"


class FrameType(enum.Enum):
    I = "I"
    P = "P"
    B = "B"


@dataclass
class Frame:
    """One video picture in planar YUV with frame-type metadata."""

    width: int
    height: int
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    chroma_format: ChromaFormat = ChromaFormat.C420
    frame_type: FrameType = FrameType.I
    display_index: int = 0

    def planes(self):
        return self.y, self.u, self.v

    def as_array(self) -> np.ndarray:
        """Stack a 4:4:4 frame into a (3, H, W) array."""
        if self.chroma_format is not ChromaFormat.C444:
            raise CcvcError("as_array requires a 4:4:4 frame")
        return np.stack([self.y, self.u, self.v])

    @staticmethod
    def from_array(arr: np.ndarray, frame_type: FrameType = FrameType.I,
                   display_index: int = 0) -> "Frame":
        h, w = arr.shape[1:]
        return Frame(w, h, arr[0].copy(), arr[1].copy(), arr[2].copy(),
                     ChromaFormat.C444, frame_type, display_index)


@dataclass
class Sequence:
    """Ordered frames plus the frame rate needed for bitrate computation."""

    frames: list[Frame] = field(default_factory=list)
    frame_rate: float = 30.0

    @property
    def width(self):
        return self.frames[0].width

    @property
    def height(self):
        return self.frames[0].height

    def __len__(self):
        return len(self.frames)


def read_yuv420(source, width: int, height: int, max_frames: int = 1 << 16,
                frame_rate: float = 30.0) -> Sequence:
    """Read 8-bit I420 frames from a path or binary stream into [0, 1]."""
    if width % 2 or height % 2:
        raise CcvcError(f"4:2:0 geometry must be even, got {width}x{height}")
    close = False
    if isinstance(source, (str, bytes)) and not isinstance(source, bytes):
        stream = open(source, "rb")
        close = True
    elif isinstance(source, bytes):
        stream = io.BytesIO(source)
    else:
        stream = source
    ysize = width * height
    csize = (width // 2) * (height // 2)
    frame_bytes = ysize + 2 * csize
    frames = []
    try:
        for i in range(max_frames):
            raw = stream.read(frame_bytes)
            if not raw:
                break
            if len(raw) < frame_bytes:
                raise CcvcError(
                    f"truncated YUV stream at frame {i}: expected {frame_bytes} bytes, got {len(raw)}")
            buf = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
            y = buf[:ysize].reshape(height, width)
            u = buf[ysize:ysize + csize].reshape(height // 2, width // 2)
            v = buf[ysize + csize:].reshape(height // 2, width // 2)
            frames.append(Frame(width, height, y, u, v, ChromaFormat.C420,
                                FrameType.I, display_index=i))
    finally:
        if close:
            stream.close()
    return Sequence(frames, frame_rate)


def write_yuv420(seq: Sequence, sink) -> None:
    """Write a 4:2:0 sequence as 8-bit I420: round(v*255), clamped."""
    close = False
    if isinstance(sink, str):
        stream = open(sink, "wb")
        close = True
    else:
        stream = sink
    try:
        for frame in seq.frames:
            if frame.chroma_format is not ChromaFormat.C420:
                raise CcvcError(f"write_yuv420: frame {frame.display_index} is not 4:2:0")
            for plane in frame.planes():
                q = np.clip(np.floor(plane * 255.0 + 0.5), 0, 255).astype(np.uint8)
                stream.write(q.tobytes())
    except OSError as exc:
        raise CcvcError(f"write failed at frame {frame.display_index}: {exc}") from exc
    finally:
        if close:
            stream.close()


def _bilinear_upsample2(plane: np.ndarray) -> np.ndarray:
    """2x bilinear upsampling with co-sited top-left alignment.

    Output sample (i, j) is the input evaluated at (i/2, j/2) with
    edge clamping, so input samples are reproduced exactly at even
    output positions and constants are preserved.
    """
    h, w = plane.shape
    ii = np.arange(2 * h) / 2.0
    jj = np.arange(2 * w) / 2.0
    i0 = np.floor(ii).astype(int)
    j0 = np.floor(jj).astype(int)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    wi = (ii - i0)[:, None]
    wj = (jj - j0)[None, :]
    top = plane[np.ix_(i0, j0)] * (1 - wj) + plane[np.ix_(i0, j1)] * wj
    bot = plane[np.ix_(i1, j0)] * (1 - wj) + plane[np.ix_(i1, j1)] * wj
    return top * (1 - wi) + bot * wi


def upsample_420_to_444(frame: Frame) -> Frame:
    if frame.chroma_format is not ChromaFormat.C420:
        raise CcvcError("frame is already 4:4:4")
    return replace(frame,
                   u=_bilinear_upsample2(frame.u),
                   v=_bilinear_upsample2(frame.v),
                   chroma_format=ChromaFormat.C444)


def downsample_444_to_420(frame: Frame) -> Frame:
    """Decimate chroma with 2x2 box averaging."""
    if frame.chroma_format is not ChromaFormat.C444:
        raise CcvcError("frame is not 4:4:4")
    if frame.width % 2 or frame.height % 2:
        raise CcvcError(f"need even dimensions for 4:2:0, got {frame.width}x{frame.height}")

    def box(p):
        h, w = p.shape
        return p.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))

    return replace(frame, u=box(frame.u), v=box(frame.v),
                   chroma_format=ChromaFormat.C420)


def pad_to_multiple(arr: np.ndarray, m: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Replicate-pad a (C, H, W) array right/bottom to multiples of m.

    Returns the padded array and the original (H, W) for crop_to_size.
    """
    h, w = arr.shape[-2:]
    ph = (-h) % m
    pw = (-w) % m
    if ph == 0 and pw == 0:
        return arr, (h, w)
    pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(arr, pad, mode="edge"), (h, w)


def crop_to_size(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return arr[..., :h, :w]
