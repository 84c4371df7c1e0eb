"""Separable image resizing with proper antialiasing, and the fixed-support variant
that reproduces what common deep-learning libraries do when downscaling.

Every resizer is addressed by a stable variant id (``bicubic-aa``, ``nearest``,
...). The ``-aa`` family widens the kernel by the downscale factor so it works
as a low-pass prefilter; the ``-noaa`` family keeps the kernel at its base
support, so downscaling just subsamples with a small blur and aliases.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from errors import OracleTooLargeError
from pixels import ImageBuffer

ORACLE_MAX_SIZE = 128
KEYS_A = -0.5
LANCZOS_LOBES = 3


class FilterKind(Enum):
    NEAREST = "nearest"
    BOX = "box"
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"
    LANCZOS3 = "lanczos3"

    @property
    def support(self):
        return BASE_SUPPORT[self]


BASE_SUPPORT = {
    FilterKind.NEAREST: None,
    FilterKind.BOX: 0.5,
    FilterKind.BILINEAR: 1.0,
    FilterKind.BICUBIC: 2.0,
    FilterKind.LANCZOS3: 3.0,
}

# variant id -> (filter, antialias)
RESIZERS = {
    "bicubic-aa": (FilterKind.BICUBIC, True),
    "bilinear-aa": (FilterKind.BILINEAR, True),
    "lanczos3-aa": (FilterKind.LANCZOS3, True),
    "box-aa": (FilterKind.BOX, True),
    "bicubic-noaa": (FilterKind.BICUBIC, False),
    "bilinear-noaa": (FilterKind.BILINEAR, False),
    "nearest": (FilterKind.NEAREST, False),
}
VARIANTS = tuple(RESIZERS)


def kernel_eval(filter_kind: FilterKind, x):
    """Evaluate the interpolation kernel at `x` (scalar or array)."""
    if filter_kind is FilterKind.NEAREST:
        raise ValueError("nearest has no kernel; it picks samples directly")
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)

    if filter_kind is FilterKind.BOX:
        out = ((x >= -0.5) & (x < 0.5)).astype(np.float64)
    elif filter_kind is FilterKind.BILINEAR:
        out = np.maximum(0.0, 1.0 - ax)
    elif filter_kind is FilterKind.BICUBIC:
        a = KEYS_A
        near = ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0
        far = ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a
        out = np.where(ax < 1.0, near, np.where(ax < 2.0, far, 0.0))
    elif filter_kind is FilterKind.LANCZOS3:
        out = np.where(ax < LANCZOS_LOBES, np.sinc(x) * np.sinc(x / LANCZOS_LOBES), 0.0)
        # sin(pi * k) is not exactly 0 in floating point
        out = np.where((ax > 0) & (ax == np.floor(ax)), 0.0, out)
    else:
        raise ValueError(f"unknown filter {filter_kind}")

    return float(out) if scalar else out


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Per-output-index taps for one axis.

    Row ``i`` reads ``counts[i]`` contiguous inputs starting at ``first[i]``.
    ``weights``/``indices`` are padded to the widest row; pad slots carry
    weight 0 and a valid index so they can be applied blindly.
    """

    in_size: int
    out_size: int
    first: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    indices: np.ndarray

    @property
    def max_taps(self):
        return self.weights.shape[1]

    def row(self, i):
        """(first input index, weights) of output `i`, without padding."""
        n = int(self.counts[i])
        return int(self.first[i]), self.weights[i, :n]


def nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    """floor((i + 0.5) * in/out), in exact integer arithmetic."""
    i = np.arange(out_size, dtype=np.int64)
    return np.minimum(((2 * i + 1) * in_size) // (2 * out_size), in_size - 1)


def _geometry(in_size, out_size, filter_kind, antialias):
    scale = in_size / out_size
    filter_scale = max(1.0, scale) if antialias else 1.0
    return scale, filter_scale, BASE_SUPPORT[filter_kind] * filter_scale


def _span(center, support, in_size):
    lo = max(math.ceil(center - support - 0.5), 0)
    hi = min(math.floor(center + support - 0.5), in_size - 1)
    return lo, hi


@lru_cache(maxsize=256)
def build_weights(in_size: int, out_size: int, filter_kind: FilterKind, antialias: bool) -> WeightTable:
    """Normalized tap table for resampling one axis from `in_size` to `out_size`."""
    if in_size < 1 or out_size < 1:
        raise ValueError(f"sizes must be >= 1, got {in_size} -> {out_size}")

    if filter_kind is FilterKind.NEAREST:
        idx = nearest_indices(in_size, out_size)
        rows = [(int(j), np.ones(1)) for j in idx]
    else:
        scale, filter_scale, support = _geometry(in_size, out_size, filter_kind, antialias)
        rows = []
        for i in range(out_size):
            center = (i + 0.5) * scale
            lo, hi = _span(center, support, in_size)
            if lo <= hi:
                taps = np.arange(lo, hi + 1, dtype=np.float64)
                w = kernel_eval(filter_kind, (taps + 0.5 - center) / filter_scale)
                nz = np.flatnonzero(w)
                if nz.size:
                    w = w[nz[0]:nz[-1] + 1]
                    lo += int(nz[0])
            else:
                w = np.zeros(0)
            total = w.sum()
            if w.size == 0 or total == 0.0:
                rows.append((min(int(math.floor(center)), in_size - 1), np.ones(1)))
            else:
                rows.append((lo, w / total))

    max_taps = max(len(w) for _, w in rows)
    first = np.array([f for f, _ in rows], dtype=np.int64)
    counts = np.array([len(w) for _, w in rows], dtype=np.int64)
    weights = np.zeros((out_size, max_taps), dtype=np.float64)
    indices = np.empty((out_size, max_taps), dtype=np.int64)
    for i, (f, w) in enumerate(rows):
        weights[i, :len(w)] = w
        indices[i] = np.minimum(f + np.arange(max_taps), f + len(w) - 1)

    for arr in (first, counts, weights, indices):
        arr.setflags(write=False)
    return WeightTable(in_size, out_size, first, counts, weights, indices)


@dataclass(frozen=True)
class ResizeSpec:
    filter: FilterKind
    antialias: bool
    out_width: int
    out_height: int

    def __post_init__(self):
        if not isinstance(self.filter, FilterKind):
            raise ValueError(f"filter must be a FilterKind, got {self.filter!r}")
        for name in ("out_width", "out_height"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.filter is FilterKind.NEAREST and self.antialias:
            raise ValueError("nearest has no antialiased form")

    @classmethod
    def from_variant(cls, variant: str, out_width: int, out_height: int = None):
        try:
            filter_kind, antialias = RESIZERS[variant]
        except KeyError:
            raise ValueError(
                f"unknown resizer '{variant}'; choose one of {', '.join(VARIANTS)}"
            ) from None
        return cls(filter_kind, antialias, int(out_width), int(out_height if out_height is not None else out_width))

    @property
    def variant_id(self):
        if self.filter is FilterKind.NEAREST:
            return "nearest"
        return f"{self.filter.value}-{'aa' if self.antialias else 'noaa'}"

    @property
    def size(self):
        return self.out_width, self.out_height

    def to_dict(self):
        return {"resizer": self.variant_id, "width": self.out_width, "height": self.out_height}


def _apply_axis(arr: np.ndarray, table: WeightTable, axis: int) -> np.ndarray:
    src = np.moveaxis(arr, axis, 0)
    out = np.zeros((table.out_size,) + src.shape[1:], dtype=np.float64)
    # fixed tap order keeps the sum bit-identical from run to run
    for k in range(table.max_taps):
        w = table.weights[:, k].reshape((-1,) + (1,) * (src.ndim - 1))
        out += w * src[table.indices[:, k]]
    return np.moveaxis(out, 0, axis)


def resize(img: ImageBuffer, spec: ResizeSpec) -> ImageBuffer:
    """Resize horizontally then vertically. Output is float32; callers quantize."""
    arr = img.as_float(np.float64)
    height, width = arr.shape[:2]

    if spec.filter is FilterKind.NEAREST:
        rows = nearest_indices(height, spec.out_height)
        cols = nearest_indices(width, spec.out_width)
        out = arr[rows][:, cols]
    else:
        horizontal = build_weights(width, spec.out_width, spec.filter, spec.antialias)
        out = _apply_axis(arr, horizontal, axis=1)
        vertical = build_weights(height, spec.out_height, spec.filter, spec.antialias)
        out = _apply_axis(out, vertical, axis=0)

    return ImageBuffer(out.astype(np.float32))


def resize_variant(img: ImageBuffer, variant: str, width: int, height: int = None) -> ImageBuffer:
    return resize(img, ResizeSpec.from_variant(variant, width, height))


def resize_oracle(img: ImageBuffer, spec: ResizeSpec) -> ImageBuffer:
    """Direct 2-D evaluation of the same resampling, one output pixel at a time.

    Slow (every output pixel sums its whole 2-D footprint), so limited to
    inputs up to 128x128. Used to check the separable path.
    """
    height, width = img.height, img.width
    if height > ORACLE_MAX_SIZE or width > ORACLE_MAX_SIZE:
        raise OracleTooLargeError(
            f"oracle resize is limited to {ORACLE_MAX_SIZE}x{ORACLE_MAX_SIZE} inputs "
            f"(got {width}x{height}); use resize() for real images"
        )
    arr = img.as_float(np.float64)
    out = np.empty((spec.out_height, spec.out_width, 3), dtype=np.float64)

    if spec.filter is FilterKind.NEAREST:
        for oy in range(spec.out_height):
            for ox in range(spec.out_width):
                y = min((2 * oy + 1) * height // (2 * spec.out_height), height - 1)
                x = min((2 * ox + 1) * width // (2 * spec.out_width), width - 1)
                out[oy, ox] = arr[y, x]
        return ImageBuffer(out.astype(np.float32))

    sy, fsy, supy = _geometry(height, spec.out_height, spec.filter, spec.antialias)
    sx, fsx, supx = _geometry(width, spec.out_width, spec.filter, spec.antialias)
    for oy in range(spec.out_height):
        cy = (oy + 0.5) * sy
        y0, y1 = _span(cy, supy, height)
        for ox in range(spec.out_width):
            cx = (ox + 0.5) * sx
            x0, x1 = _span(cx, supx, width)
            weight_sum = 0.0
            if y0 <= y1 and x0 <= x1:
                yy, xx = np.meshgrid(np.arange(y0, y1 + 1), np.arange(x0, x1 + 1), indexing='ij')
                w2d = (kernel_eval(spec.filter, (yy + 0.5 - cy) / fsy)
                       * kernel_eval(spec.filter, (xx + 0.5 - cx) / fsx))
                weight_sum = w2d.sum()
            if weight_sum == 0.0:
                out[oy, ox] = arr[min(int(math.floor(cy)), height - 1), min(int(math.floor(cx)), width - 1)]
            else:
                patch = arr[y0:y1 + 1, x0:x1 + 1]
                out[oy, ox] = np.tensordot(w2d, patch, axes=([0, 1], [0, 1])) / weight_sum

    return ImageBuffer(out.astype(np.float32))
