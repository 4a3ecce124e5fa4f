"""Image containers and the deterministic image operations used everywhere else.

Conventions:

* arrays are row-major ``(height, width)``; a pixel ``(i, j)`` is row ``i``,
  column ``j``;
* bilinear resampling uses half-pixel centers (no corner alignment);
* grayscale uses ITU-R BT.601 luma weights.
"""
from __future__ import annotations

import functools
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .errors import ContractError, DataError, FormatError, BadMagicError, ParameterError, TruncatedBlobError

WORKING_SIZE = (84, 84)  # (height, width)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
NORMALIZED_ATOL = 1e-6


@dataclass(frozen=True)
class RawFrame:
    """An original-resolution 8-bit frame, ``(H, W)`` or ``(H, W, C)``."""

    data: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.uint8:
            raise FormatError(f"raw frame must be uint8, got {data.dtype}")
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise FormatError(f"raw frame must be HxW or HxWx3, got shape {data.shape}")
        if self.frame_id < 0:
            raise DataError(f"frame_id must be >= 0, got {self.frame_id}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_bytes(cls, buf: bytes, width: int, height: int, channels: int, frame_id: int = 0) -> "RawFrame":
        expected = width * height * channels
        if len(buf) != expected:
            raise FormatError(
                f"frame {frame_id}: {len(buf)} bytes for {width}x{height}x{channels} (expected {expected})"
            )
        arr = np.frombuffer(buf, dtype=np.uint8).reshape(height, width, channels)
        return cls(arr.copy(), frame_id)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass(frozen=True)
class Frame:
    """A preprocessed grayscale frame with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ContractError(f"frame must be 2-D, got shape {data.shape}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise DataError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FrameStack:
    """Four consecutive frames, oldest first."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) != 4:
            raise ContractError(f"a frame stack holds exactly 4 frames, got {len(frames)}")
        shapes = {f.data.shape for f in frames}
        if len(shapes) != 1:
            raise ContractError(f"stacked frames differ in shape: {sorted(shapes)}")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FrameStack":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 4:
            raise ContractError(f"expected a 4xHxW array, got shape {arr.shape}")
        return cls(tuple(Frame(a) for a in arr))

    def to_array(self) -> np.ndarray:
        return np.stack([f.data for f in self.frames])

    @property
    def shape(self) -> tuple:
        return self.frames[0].data.shape


@dataclass(frozen=True)
class SaliencyMap:
    """A nonnegative map over pixels, optionally normalized to a distribution.

    ``degenerate`` marks a map produced from an all-zero raw map, which is
    replaced by the uniform distribution rather than divided by zero.
    """

    values: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ContractError(f"saliency map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("saliency map contains non-finite values")
        if values.size and values.min() < 0.0:
            raise DataError("saliency map values must be >= 0")
        if self.normalized and abs(values.sum() - 1.0) > NORMALIZED_ATOL:
            raise ContractError(f"map flagged normalized but sums to {values.sum():.9g}")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape


class Rect(NamedTuple):
    """Half-open pixel rectangle: rows ``[top, bottom)``, columns ``[left, right)``."""

    top: int
    left: int
    bottom: int
    right: int

    @classmethod
    def parse(cls, text: str) -> "Rect":
        """Parse ``"top,left,bottom,right"``."""
        parts = [int(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ParameterError(f"rectangle needs 4 integers, got {text!r}")
        return cls(*parts)


# --------------------------------------------------------------------------
# resampling and color


def to_grayscale(data: np.ndarray) -> np.ndarray:
    """BT.601 luma of an ``(H, W, 3)`` array; 2-D input is returned as float."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        return data
    r, g, b = LUMA_WEIGHTS
    return r * data[..., 0] + g * data[..., 1] + b * data[..., 2]


@functools.lru_cache(maxsize=64)
def _bilinear_weights(n_in: int, n_out: int):
    # half-pixel centers: src = (dst + 0.5) * n_in / n_out - 0.5, clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    mat.setflags(write=False)
    return mat


def resize_bilinear(data: np.ndarray, size: tuple) -> np.ndarray:
    """Bilinearly resample a 2-D array to ``size = (height, width)``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ContractError(f"resize expects a 2-D array, got shape {data.shape}")
    h, w = size
    if h < 1 or w < 1:
        raise ParameterError(f"target size must be at least 1x1, got {size}")
    if data.shape == (h, w):
        return data.copy()
    rows = _bilinear_weights(data.shape[0], h)
    cols = _bilinear_weights(data.shape[1], w)
    return rows @ data @ cols.T


def preprocess(raw: RawFrame, target: tuple = WORKING_SIZE) -> Frame:
    """Grayscale, resize to ``target`` (height, width) and scale to [0, 1]."""
    gray = to_grayscale(raw.data)
    out = resize_bilinear(gray, target) / 255.0
    # interpolation weights are convex, so only rounding can leave [0, 1]
    return Frame(np.clip(out, 0.0, 1.0))


# --------------------------------------------------------------------------
# Gaussian blur


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Unnormalized taps ``exp(-k^2 / 2 sigma^2)`` for ``|k| <= ceil(3 sigma)``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(k * k) / (2.0 * sigma * sigma))


@functools.lru_cache(maxsize=128)
def _blur_matrix(n: int, sigma: float, border: str) -> np.ndarray:
    taps = gaussian_kernel1d(sigma)
    radius = len(taps) // 2
    idx = np.arange(n)
    offset = idx[:, None] - idx[None, :]
    mat = np.where(np.abs(offset) <= radius, taps[np.clip(offset + radius, 0, 2 * radius)], 0.0)
    if border == "mass":
        # each source pixel spreads unit mass over in-bounds pixels
        mat = mat / mat.sum(axis=0, keepdims=True)
    else:
        # each output pixel is a weighted mean of in-bounds pixels
        mat = mat / mat.sum(axis=1, keepdims=True)
    mat.setflags(write=False)
    return mat


def blur_array(data: np.ndarray, sigma: float, border: str = "mass") -> np.ndarray:
    """Separable truncated-Gaussian blur of a 2-D array.

    ``border="mass"`` renormalizes the kernel per source pixel, so the total
    sum is preserved exactly. ``border="mean"`` renormalizes per output pixel,
    so constant images are preserved exactly. Away from the borders the two
    coincide.
    """
    if border not in ("mass", "mean"):
        raise ParameterError(f"border must be 'mass' or 'mean', got {border!r}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ContractError(f"blur expects a 2-D array, got shape {data.shape}")
    rows = _blur_matrix(data.shape[0], float(sigma), border)
    cols = _blur_matrix(data.shape[1], float(sigma), border)
    return rows @ data @ cols.T


def gaussian_blur(image, sigma: float, border: str | None = None):
    """Blur a :class:`Frame`, :class:`SaliencyMap` or 2-D array.

    Frames hold intensities, so by default they keep their level
    (``border="mean"``); maps and arrays hold mass, so by default they keep
    their total (``border="mass"``).
    """
    if isinstance(image, Frame):
        out = blur_array(image.data, sigma, border or "mean")
        return Frame(np.clip(out, 0.0, 1.0))
    if isinstance(image, SaliencyMap):
        out = blur_array(image.values, sigma, border or "mass")
        out = np.maximum(out, 0.0)
        if image.normalized:
            return normalize_map(SaliencyMap(out))
        return SaliencyMap(out)
    return blur_array(image, sigma, border or "mass")


# --------------------------------------------------------------------------
# map normalization and cropping


def normalize_map(raw) -> SaliencyMap:
    """Scale a nonnegative map to sum to one.

    An all-zero map becomes the uniform distribution with ``degenerate=True``.
    """
    if isinstance(raw, SaliencyMap):
        values, degenerate = raw.values, raw.degenerate
    else:
        values, degenerate = np.asarray(raw, dtype=np.float64), False
        if values.ndim == 1:
            values = values[None, :]
        if values.size and values.min() < 0:
            raise DataError("cannot normalize a map with negative values")
    total = values.sum()
    if total <= 0.0:
        return SaliencyMap(np.full(values.shape, 1.0 / values.size), normalized=True, degenerate=True)
    return SaliencyMap(values / total, normalized=True, degenerate=degenerate)


def crop_region(smap: SaliencyMap, rect: Rect) -> SaliencyMap:
    """Keep only the pixels inside ``rect``; renormalize if the input was normalized."""
    top, left, bottom, right = rect
    if not (0 <= top <= bottom <= smap.height and 0 <= left <= right <= smap.width):
        raise ParameterError(f"rectangle {tuple(rect)} exceeds map bounds {smap.shape}")
    if bottom == top or right == left:
        raise ParameterError(f"rectangle {tuple(rect)} is empty")
    values = smap.values[top:bottom, left:right]
    if smap.normalized:
        out = normalize_map(SaliencyMap(values))
        return SaliencyMap(out.values, True, smap.degenerate or out.degenerate)
    return SaliencyMap(values.copy(), False, smap.degenerate)


# --------------------------------------------------------------------------
# file formats
#
# Raw tensor file: magic (4 bytes), then u32 count, width, height, channels
# (little-endian), then the row-major body. "ATNB" bodies are uint8 (frame
# archives); "ATNF" bodies are little-endian float64 (saliency maps).

_RAW_HEADER = struct.Struct("<4sIIII")
_RAW_DTYPES = {b"ATNB": np.dtype("u1"), b"ATNF": np.dtype("<f8")}


def write_raw_tensor(path, array: np.ndarray) -> None:
    """Write ``(count, height, width[, channels])`` data as a raw tensor file."""
    array = np.asarray(array)
    if array.ndim == 3:
        array = array[..., None]
    if array.ndim != 4:
        raise ContractError(f"raw tensor must be 3-D or 4-D, got shape {array.shape}")
    if array.dtype == np.uint8:
        magic = b"ATNB"
    else:
        magic = b"ATNF"
        array = array.astype("<f8")
    count, height, width, channels = array.shape
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(magic, count, width, height, channels))
        fh.write(np.ascontiguousarray(array).tobytes())


def read_raw_tensor(path) -> np.ndarray:
    """Read a raw tensor file; returns ``(count, height, width, channels)``."""
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise TruncatedBlobError(f"{path}: file shorter than the raw tensor header")
    magic, count, width, height, channels = _RAW_HEADER.unpack_from(blob)
    if magic not in _RAW_DTYPES:
        raise BadMagicError(f"{path}: unknown magic {magic!r}")
    dtype = _RAW_DTYPES[magic]
    expected = count * width * height * channels * dtype.itemsize
    body = blob[_RAW_HEADER.size:]
    if len(body) < expected:
        raise TruncatedBlobError(f"{path}: body has {len(body)} bytes, header requires {expected}")
    if len(body) > expected:
        raise FormatError(f"{path}: {len(body) - expected} trailing bytes after body")
    return np.frombuffer(body, dtype=dtype).reshape(count, height, width, channels).copy()


def frame_filename(frame_id: int) -> str:
    return f"{frame_id:06d}.png"


def read_png(path, frame_id: int = 0) -> RawFrame:
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return RawFrame(np.array(img, dtype=np.uint8), frame_id)


def write_png(path, raw: RawFrame | np.ndarray) -> None:
    data = raw.data if isinstance(raw, RawFrame) else np.asarray(raw, dtype=np.uint8)
    Image.fromarray(data).save(path)


class FrameArchive:
    """Frames addressed by id, backed by a PNG directory or a raw tensor file.

    PNG files are named ``<frame_id:06d>.png``. A raw tensor file holds
    frames ``0..count-1`` in order.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._tensor = None
        if self.path.is_file():
            self._tensor = read_raw_tensor(self.path)
            if self._tensor.dtype != np.uint8:
                raise FormatError(f"{self.path}: frame archives must use the ATNB (uint8) variant")
            self._ids = list(range(self._tensor.shape[0]))
        elif self.path.is_dir():
            ids = []
            for name in os.listdir(self.path):
                stem, ext = os.path.splitext(name)
                if ext.lower() == ".png" and stem.isdigit():
                    ids.append(int(stem))
            self._ids = sorted(ids)
        else:
            raise FormatError(f"{self.path}: no frame archive found")
        self._id_set = set(self._ids)

    @property
    def ids(self) -> list:
        return list(self._ids)

    def __contains__(self, frame_id) -> bool:
        return frame_id in self._id_set

    def __len__(self) -> int:
        return len(self._ids)

    def raw(self, frame_id: int) -> RawFrame:
        if frame_id not in self._id_set:
            raise DataError(f"{self.path}: frame {frame_id} not in archive")
        if self._tensor is not None:
            data = self._tensor[frame_id]
            return RawFrame(data[..., 0] if data.shape[-1] == 1 else data, frame_id)
        return read_png(self.path / frame_filename(frame_id), frame_id)
