"""Pixel-level primitives: image buffers, quantization, codecs and PSNR."""

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

import config
from errors import CodecError, DimensionMismatchError, ImageFormatError, QuantizationError

IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp', '.webp', '.tif', '.tiff')

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """H x W x 3 raster, row-major interleaved RGB.

    Pixels are either uint8 in [0, 255] or float on the same [0, 255] scale.
    Float buffers may overshoot the range (bicubic/lanczos ringing); only
    `quantize` brings them back. The wrapped array is read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageFormatError(f"expected an HxWx3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageFormatError(f"empty image of shape {arr.shape}")
        if arr.dtype != np.uint8 and arr.dtype not in _FLOAT_DTYPES:
            raise ImageFormatError(f"unsupported pixel dtype {arr.dtype}; use uint8, float32 or float64")
        if arr.flags.writeable or not arr.flags.c_contiguous:
            arr = np.array(arr, order='C', copy=True)
            arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return 3

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_uint8(self):
        return self.data.dtype == np.uint8

    @property
    def is_float(self):
        return not self.is_uint8

    def as_float(self, dtype=np.float64) -> np.ndarray:
        """Return a writable float copy of the pixels."""
        return self.data.astype(dtype, copy=True)

    def to_float(self) -> "ImageBuffer":
        return ImageBuffer(self.as_float(np.float64))

    def transpose(self) -> "ImageBuffer":
        """Swap rows and columns."""
        return ImageBuffer(self.data.transpose(1, 0, 2))

    def same_pixels(self, other: "ImageBuffer") -> bool:
        return self.data.dtype == other.data.dtype and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}, {self.data.dtype})"


@dataclass(frozen=True)
class CompressionSpec:
    """How images are stored between resizing and feature extraction."""

    format: str
    jpeg_quality: int = None
    subsampling: str = config.JPEG_SUBSAMPLING

    PNG = "png-lossless"
    JPEG = "jpeg"

    def __post_init__(self):
        if self.format not in (self.PNG, self.JPEG):
            raise CodecError(f"unknown compression format '{self.format}'")
        if self.format == self.JPEG:
            if self.jpeg_quality is None:
                raise CodecError("jpeg compression needs a quality")
            if isinstance(self.jpeg_quality, bool) or int(self.jpeg_quality) != self.jpeg_quality:
                raise CodecError(f"jpeg quality must be an integer, got {self.jpeg_quality!r}")
            if not 1 <= self.jpeg_quality <= 100:
                raise CodecError(f"jpeg quality {self.jpeg_quality} outside [1, 100]")
            if self.subsampling not in ("4:4:4", "4:2:2", "4:2:0"):
                raise CodecError(f"unknown chroma subsampling '{self.subsampling}'")
        elif self.jpeg_quality is not None:
            raise CodecError("jpeg_quality is only meaningful for jpeg compression")

    @classmethod
    def png(cls):
        return cls(cls.PNG)

    @classmethod
    def jpeg(cls, quality, subsampling=config.JPEG_SUBSAMPLING):
        return cls(cls.JPEG, quality, subsampling)

    @property
    def label(self):
        if self.format == self.PNG:
            return "png"
        return f"jpeg-{self.jpeg_quality}"

    def to_dict(self):
        if self.format == self.PNG:
            return {"format": self.format}
        return {"format": self.format, "quality": self.jpeg_quality, "subsampling": self.subsampling}


def quantize(img: ImageBuffer) -> ImageBuffer:
    """Clamp float pixels to [0, 255] and round half-to-even to uint8."""
    if not img.is_float:
        raise ImageFormatError("quantize expects a float image")
    arr = img.data
    bad = ~np.isfinite(arr)
    if bad.any():
        row, col, ch = (int(v) for v in np.argwhere(bad)[0])
        raise QuantizationError(row, col, ch, float(arr[row, col, ch]))
    # np.rint rounds half to even
    return ImageBuffer(np.rint(np.clip(arr, 0.0, 255.0)).astype(np.uint8))


def _encode(img: ImageBuffer, spec: CompressionSpec) -> bytes:
    pil = Image.fromarray(np.ascontiguousarray(img.data))
    buf = io.BytesIO()
    if spec.format == CompressionSpec.PNG:
        pil.save(buf, format='PNG')
    else:
        # baseline (non-progressive) JPEG, libjpeg quality scaling
        pil.save(buf, format='JPEG', quality=int(spec.jpeg_quality), subsampling=spec.subsampling)
    return buf.getvalue()


def codec_roundtrip(img: ImageBuffer, spec: CompressionSpec) -> ImageBuffer:
    """Encode and decode through the requested file format."""
    if not img.is_uint8:
        raise ImageFormatError("codec roundtrip expects a uint8 image; quantize first")
    try:
        payload = _encode(img, spec)
        with Image.open(io.BytesIO(payload)) as decoded:
            out = np.asarray(decoded.convert('RGB'))
    except OSError as e:
        raise CodecError(f"{spec.label} roundtrip failed: {e}") from e
    if out.shape != img.data.shape:
        raise CodecError(f"{spec.label} roundtrip changed shape {img.data.shape} -> {out.shape}")
    return ImageBuffer(out)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB with peak 255; identical images give +inf."""
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(
            f"psnr needs equal dimensions, got {a.width}x{a.height} and {b.width}x{b.height}"
        )
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(config.PSNR_PEAK / math.sqrt(mse))


@dataclass(frozen=True)
class BatchPsnr:
    """Mean of per-pair PSNRs; infinite (identical) pairs are counted, not averaged."""

    mean_db: float
    pairs: int
    finite: int
    infinite: int

    def to_dict(self):
        return {
            "mean_psnr_db": self.mean_db,
            "pairs": self.pairs,
            "finite_pairs": self.finite,
            "identical_pairs": self.infinite,
            "aggregation": "mean-of-psnr",
        }


def summarize_psnr(values) -> BatchPsnr:
    values = list(values)
    finite = [v for v in values if math.isfinite(v)]
    infinite = len(values) - len(finite)
    mean_db = math.fsum(finite) / len(finite) if finite else math.inf
    return BatchPsnr(mean_db, len(values), len(finite), infinite)


def _as_image_list(images):
    if isinstance(images, (str, Path)):
        return [load_image(p) for p in list_images(images)]
    return list(images)


def batch_psnr(set_a, set_b, workers=None) -> BatchPsnr:
    """Mean PSNR over two image sets paired by sorted filename (or list order)."""
    if isinstance(set_a, (str, Path)) and isinstance(set_b, (str, Path)):
        paths_a, paths_b = list_images(set_a), list_images(set_b)
        if len(paths_a) != len(paths_b):
            raise DimensionMismatchError(
                f"image counts differ: {len(paths_a)} in {set_a} vs {len(paths_b)} in {set_b}"
            )

        def _pair(pair):
            return psnr(load_image(pair[0]), load_image(pair[1]))

        pairs = list(zip(paths_a, paths_b))
    else:
        imgs_a, imgs_b = _as_image_list(set_a), _as_image_list(set_b)
        if len(imgs_a) != len(imgs_b):
            raise DimensionMismatchError(f"image counts differ: {len(imgs_a)} vs {len(imgs_b)}")

        def _pair(pair):
            return psnr(pair[0], pair[1])

        pairs = list(zip(imgs_a, imgs_b))

    with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
        # map keeps input order, so the reduction order is fixed
        values = list(pool.map(_pair, pairs))
    return summarize_psnr(values)


def list_images(directory) -> list:
    """Image files directly inside `directory`, sorted by filename."""
    folder = Path(directory)
    if not folder.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    files = [p for p in folder.iterdir()
             if p.is_file() and not p.name.startswith('.') and p.suffix.lower() in IMAGE_EXTENSIONS]
    return sorted(files, key=lambda p: p.name)


def load_image(path) -> ImageBuffer:
    """Load an 8-bit image as RGB; grayscale and alpha are converted."""
    try:
        with Image.open(path) as pil:
            if pil.mode in ('I', 'I;16', 'I;16B', 'I;16L', 'F', 'CMYK'):
                raise ImageFormatError(f"{path}: {pil.mode} images are not supported (8-bit RGB only)")
            arr = np.asarray(pil.convert('RGB'))
    except (OSError, UnidentifiedImageError) as e:
        raise ImageFormatError(f"cannot read {path}: {e}") from e
    return ImageBuffer(arr)


def save_image(img: ImageBuffer, path, spec: CompressionSpec = None):
    """Write a uint8 image; format follows `spec`, else the file extension."""
    if not img.is_uint8:
        raise ImageFormatError("only uint8 images can be saved; quantize first")
    path = Path(path)
    pil = Image.fromarray(np.ascontiguousarray(img.data))
    if spec is not None and spec.format == CompressionSpec.JPEG:
        pil.save(path, format='JPEG', quality=int(spec.jpeg_quality), subsampling=spec.subsampling)
    elif spec is not None:
        pil.save(path, format='PNG')
    else:
        pil.save(path)
    return path
