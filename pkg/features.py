"""Feature extractors and the preprocessing chain that feeds them.

A chain is: optional dataset resize -> quantize -> optional codec roundtrip ->
FID resize -> scaling to [-1, 1]. Every score that comes out of fairfid carries
the chain and extractor description so that two numbers can be checked for
comparability.
"""

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from tqdm import tqdm

import config
from errors import CodecError, DimensionMismatchError, ModelNotFoundError, StatsError
from pixels import CompressionSpec, ImageBuffer, codec_roundtrip, quantize
from resample import ResizeSpec, resize

INPUT_SCALING = "x/127.5-1"


def file_sha256(filepath, chunk_size=8192) -> bytes:
    """SHA-256 digest of a file, read in chunks."""
    hasher = hashlib.sha256()
    with open(filepath, 'rb') as f:
        while chunk := f.read(chunk_size):
            hasher.update(chunk)
    return hasher.digest()


class FeatureExtractor:
    """Maps a batch of N x H x W x 3 images in [-1, 1] to an N x D matrix."""

    id = "abstract"
    dim = 0
    input_size = None  # (width, height) or None when any size is accepted

    @property
    def checksum(self) -> bytes:
        raise NotImplementedError

    def features(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self):
        return {"id": self.id, "dim": self.dim, "checksum": self.checksum.hex()}


class ToyExtractor(FeatureExtractor):
    """Desk-scale stand-in for Inception: tanh of a fixed random projection.

    The 32x32x3 thumbnail (bilinear-aa) is flattened row-major and multiplied
    by a 64 x 3072 matrix R of standard normals divided by sqrt(3072). R comes
    from numpy's PCG64 seeded with 42: uniforms are drawn in pairs (u1, u2)
    and mapped by Box-Muller, z0 = sqrt(-2 ln(1 - u1)) cos(2 pi u2) and
    z1 = sqrt(-2 ln(1 - u1)) sin(2 pi u2), stored z0, z1, z0, z1, ... row by row.
    """

    id = "toy-proj64-v1"
    dim = config.TOY_DIM

    def __init__(self, seed=config.TOY_SEED):
        self.seed = seed
        self.thumb = config.TOY_SIZE
        self.projection = self._projection(seed)
        self.projection.setflags(write=False)
        self._checksum = hashlib.sha256(
            self.id.encode('utf-8') + self.projection.astype('<f8').tobytes()
        ).digest()

    def _projection(self, seed):
        cols = self.thumb * self.thumb * 3
        total = self.dim * cols
        rng = np.random.Generator(np.random.PCG64(seed))
        u = rng.random((total // 2, 2))
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
        return z.reshape(self.dim, cols) / np.sqrt(cols)

    @property
    def checksum(self):
        return self._checksum

    def lipschitz_bound(self) -> float:
        """C with ||f(a) - f(b)|| <= C ||a - b|| for 32x32 images in 0..255 units.

        tanh is 1-Lipschitz, so C is the spectral norm of R over the 127.5
        pixel scaling. Larger inputs first pass the (averaging) thumbnail resize.
        """
        return float(np.linalg.norm(self.projection, 2)) / 127.5

    def _thumbnail(self, img: np.ndarray) -> np.ndarray:
        h, w = img.shape[:2]
        if (w, h) == (self.thumb, self.thumb):
            return np.asarray(img, dtype=np.float64)
        spec = ResizeSpec.from_variant(config.TOY_RESIZER, self.thumb, self.thumb)
        return resize(ImageBuffer(np.asarray(img)), spec).as_float(np.float64)

    def features(self, batch):
        out = np.empty((len(batch), self.dim), dtype=np.float64)
        for i, img in enumerate(batch):
            vec = np.ascontiguousarray(self._thumbnail(img).reshape(-1))
            out[i] = np.tanh(self.projection @ vec)
        return out

    def embed(self, img: ImageBuffer) -> np.ndarray:
        """Feature vector of one uint8/float image on the 0..255 scale."""
        scaled = img.as_float(np.float64) / 127.5 - 1.0
        return self.features([scaled])[0]


class InceptionExtractor(FeatureExtractor):
    """InceptionV3 pool3 features from a TorchScript file.

    The file must map float32 N x 3 x 299 x 299 input in [-1, 1] to N x 2048.
    The model is loaded lazily on first use and run on CPU without gradients.
    """

    id = "inception-v3-pool3"
    dim = config.INCEPTION_DIM
    input_size = (config.FID_SIZE, config.FID_SIZE)

    def __init__(self, model_path=None):
        model_path = model_path or config.INCEPTION_MODEL
        if not model_path or not os.path.isfile(model_path):
            raise ModelNotFoundError(
                f"Inception model file not found: {model_path or '(not set)'}\n"
                "  Export InceptionV3 (pool3, 2048-d, input in [-1, 1]) to TorchScript, then either\n"
                "    export FAIRFID_INCEPTION_MODEL=/path/to/inception.pt\n"
                "  or pass --model /path/to/inception.pt, or run: fairfid config set model PATH\n"
                "  Use --extractor toy for the built-in projection extractor."
            )
        self.model_path = str(model_path)
        self._checksum = file_sha256(self.model_path)
        self._model = None

    @property
    def checksum(self):
        return self._checksum

    def _load_model(self):
        if self._model is not None:
            return self._model
        import torch

        config.log(f"🧠 Loading Inception model from {self.model_path}...")
        with open(self.model_path, 'rb') as fobj:
            model = torch.jit.load(fobj, map_location='cpu')
        self._model = model.eval()
        return self._model

    def features(self, batch):
        import torch

        model = self._load_model()
        arr = np.ascontiguousarray(np.stack(batch).transpose(0, 3, 1, 2), dtype=np.float32)
        with torch.no_grad():
            out = model(torch.from_numpy(arr))
        out = out.reshape(out.shape[0], -1).cpu().numpy().astype(np.float64)
        if out.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"model {self.model_path} returned {out.shape[1]} features, expected {self.dim}"
            )
        return out


@lru_cache(maxsize=None)
def toy_extractor_spec() -> ToyExtractor:
    return ToyExtractor()


def get_extractor(name: str, model_path=None) -> FeatureExtractor:
    if name == "toy":
        return toy_extractor_spec()
    if name == "inception":
        return InceptionExtractor(model_path)
    raise ValueError(f"unknown extractor '{name}' (use toy or inception)")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """N x D features, row i belonging to image i."""

    values: np.ndarray
    extractor_id: str = ""

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise StatsError(f"feature matrix must be N x D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise StatsError("feature matrix contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, 'values', arr)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class PreprocessChain:
    """Everything that happens to an image before the extractor sees it."""

    fid_resize: ResizeSpec
    data_resize: ResizeSpec = None
    quantize_after_data: bool = True
    compression: CompressionSpec = None

    def __post_init__(self):
        if self.fid_resize is None:
            raise ValueError("a preprocessing chain needs an FID resize")
        if self.compression is not None and self.data_resize is not None and not self.quantize_after_data:
            raise CodecError("compression needs 8-bit input; enable quantization after the data resize")

    def to_dict(self):
        return {
            "data_resize": self.data_resize.to_dict() if self.data_resize else None,
            "quantize": bool(self.quantize_after_data),
            "compression": self.compression.to_dict() if self.compression else None,
            "fid_resize": self.fid_resize.to_dict(),
            "input_scaling": INPUT_SCALING,
        }

    def check_extractor(self, extractor: FeatureExtractor):
        if extractor.input_size is not None and self.fid_resize.size != extractor.input_size:
            w, h = extractor.input_size
            raise DimensionMismatchError(
                f"{extractor.id} needs {w}x{h} input, chain resizes to "
                f"{self.fid_resize.out_width}x{self.fid_resize.out_height}"
            )


def default_chain(fid_size=config.FID_SIZE, resizer=config.DEFAULT_RESIZER) -> PreprocessChain:
    return PreprocessChain(ResizeSpec.from_variant(resizer, fid_size))


def preprocess(img: ImageBuffer, chain: PreprocessChain) -> ImageBuffer:
    """Run `img` through the chain; returns float32 pixels in [-1, 1] (plus resize overshoot)."""
    out = img
    if chain.data_resize is not None:
        out = resize(out, chain.data_resize)
    if chain.quantize_after_data and out.is_float:
        out = quantize(out)
    if chain.compression is not None:
        if not out.is_uint8:
            raise CodecError("compression needs 8-bit input; enable quantization")
        out = codec_roundtrip(out, chain.compression)
    out = resize(out, chain.fid_resize)
    return ImageBuffer((out.as_float(np.float64) / 127.5 - 1.0).astype(np.float32))


def extract(images, extractor: FeatureExtractor, batch_size=config.BATCH_SIZE) -> FeatureMatrix:
    """Features of already-preprocessed images, one row per image, in input order."""
    rows = []
    batch = []
    for img in images:
        if extractor.input_size is not None and (img.width, img.height) != extractor.input_size:
            w, h = extractor.input_size
            raise DimensionMismatchError(f"{extractor.id} needs {w}x{h} input, got {img.width}x{img.height}")
        batch.append(img.data)
        if len(batch) == batch_size:
            rows.append(extractor.features(batch))
            batch = []
    if batch:
        rows.append(extractor.features(batch))
    if not rows:
        raise StatsError("no images to extract features from")
    return FeatureMatrix(np.concatenate(rows, axis=0), extractor.id)


def extract_images(images, chain: PreprocessChain, extractor: FeatureExtractor,
                   workers=None, desc="features") -> FeatureMatrix:
    """Preprocess in a thread pool and extract features, keeping input order."""
    chain.check_extractor(extractor)
    images = list(images)
    n_workers = workers or config.WORKERS

    def _one(img):
        return preprocess(img, chain)

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        prepared = list(tqdm(pool.map(_one, images), total=len(images), desc=desc,
                             unit="img", leave=False, disable=config.QUIET))
    return extract(prepared, extractor)
