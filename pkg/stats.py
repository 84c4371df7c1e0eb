"""Gaussian feature statistics, Frechet distance (FID), KID and the stats cache."""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

import config
from errors import (CacheFormatError, DimensionMismatchError, MatrixSqrtError,
                    StatsError)
from features import FeatureMatrix

CACHE_MAGIC = b"CFID"
CACHE_VERSION = 1
NO_CHECKSUM = bytes(32)
GRAM_CHUNK = 256
KID_BLOCK = 1024


def pairwise_sum(values) -> np.ndarray:
    """Sum along axis 0 by repeated halving (tree reduction) in fixed index order.

    The association order depends only on the number of rows, never on
    threading or memory layout, so equal inputs give bit-identical sums.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[0] == 0:
        return np.zeros(arr.shape[1:], dtype=np.float64)
    while arr.shape[0] > 1:
        tail = arr[-1:] if arr.shape[0] % 2 else None
        even = arr[:arr.shape[0] - (1 if tail is not None else 0)]
        arr = even[0::2] + even[1::2]
        if tail is not None:
            arr = np.concatenate([arr, tail], axis=0)
    return arr[0]


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Mean and covariance of a feature set, plus the extractor it came from."""

    mean: np.ndarray
    cov: np.ndarray
    n: int
    extractor_id: str = ""
    checksum: bytes = NO_CHECKSUM

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        cov = np.array(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise StatsError(f"mean {mean.shape} and covariance {cov.shape} do not match")
        if self.n < 2:
            raise StatsError(f"statistics need at least 2 samples, got {self.n}")
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise StatsError("statistics contain non-finite values")
        scale = max(1.0, float(np.abs(cov).max(initial=0.0)))
        if np.abs(cov - cov.T).max(initial=0.0) > 1e-10 * scale:
            raise StatsError("covariance is not symmetric")
        if len(self.checksum) != 32:
            raise StatsError("extractor checksum must be 32 bytes")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'cov', cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    def same_as(self, other: "GaussianStats") -> bool:
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def comparable_with(self, other: "GaussianStats") -> bool:
        return self.extractor_id == other.extractor_id and self.checksum == other.checksum


def fit_gaussian(feats, extractor=None) -> GaussianStats:
    """Column mean and unbiased (ddof=1) covariance, independent of row order."""
    values = feats.values if isinstance(feats, FeatureMatrix) else np.asarray(feats, dtype=np.float64)
    if values.ndim != 2:
        raise StatsError(f"features must be N x D, got shape {values.shape}")
    n = values.shape[0]
    if n < 2:
        raise StatsError(f"need at least 2 feature rows to fit a Gaussian, got {n}")

    # canonical row order makes the result bit-exact under permutation
    order = np.lexsort(values.T[::-1])
    rows = values[order]

    mean = pairwise_sum(rows) / n
    centered = rows - mean
    grams = [centered[i:i + GRAM_CHUNK].T @ centered[i:i + GRAM_CHUNK]
             for i in range(0, n, GRAM_CHUNK)]
    cov = pairwise_sum(np.stack(grams)) / (n - config.COV_DDOF)
    cov = (cov + cov.T) / 2.0

    extractor_id = getattr(extractor, "id", None) or getattr(feats, "extractor_id", "") or ""
    checksum = extractor.checksum if extractor is not None else NO_CHECKSUM
    return GaussianStats(mean, cov, n, extractor_id, checksum)


def _psd_sqrt(matrix):
    """Unique PSD square root via symmetric eigendecomposition, eigenvalues clamped at 0."""
    w, v = scipy.linalg.eigh(matrix)
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return (root + root.T) / 2.0


def sqrtm_product(sigma1, sigma2):
    """S = (A sigma2 A)^(1/2) with A = sigma1^(1/2); Tr(S) = Tr((sigma1 sigma2)^(1/2)).

    Returns (S, eps): eps is 0 unless the eigendecomposition failed and both
    matrices had eps = 1e-6 * mean(diag) added to their diagonal.
    """
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if sigma1.shape != sigma2.shape or sigma1.ndim != 2 or sigma1.shape[0] != sigma1.shape[1]:
        raise DimensionMismatchError(f"covariances must be equal square matrices, got {sigma1.shape} and {sigma2.shape}")
    if not (np.isfinite(sigma1).all() and np.isfinite(sigma2).all()):
        raise StatsError("covariance contains non-finite values")

    def _attempt(s1, s2):
        a = _psd_sqrt(s1)
        inner = a @ s2 @ a
        return _psd_sqrt((inner + inner.T) / 2.0)

    try:
        return _attempt(sigma1, sigma2), 0.0
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass

    diag = np.concatenate([np.diag(sigma1), np.diag(sigma2)])
    eps = config.SQRTM_EPS_SCALE * max(float(np.mean(np.abs(diag))), 1e-12)
    config.log(f"⚠️  Matrix square root did not converge; adding {eps:.3e} to the covariance diagonals")
    offset = eps * np.eye(sigma1.shape[0])
    try:
        return _attempt(sigma1 + offset, sigma2 + offset), eps
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise MatrixSqrtError(f"eigendecomposition failed: {e}", eps) from e


@dataclass(frozen=True)
class FrechetTerms:
    mean_term: float
    trace_term: float
    eps: float

    @property
    def value(self):
        return self.mean_term + self.trace_term


def frechet_terms(g1: GaussianStats, g2: GaussianStats) -> FrechetTerms:
    if g1.dim != g2.dim:
        raise DimensionMismatchError(f"feature dims differ: {g1.dim} vs {g2.dim}")
    if g1.same_as(g2):
        return FrechetTerms(0.0, 0.0, 0.0)

    diff = g1.mean - g2.mean
    mean_term = float(diff @ diff)
    covmean, eps = sqrtm_product(g1.cov, g2.cov)
    tr1, tr2 = float(np.trace(g1.cov)), float(np.trace(g2.cov))
    trace_term = tr1 + tr2 - 2.0 * float(np.trace(covmean))

    total = mean_term + trace_term
    if not math.isfinite(total):
        raise StatsError(f"Frechet distance is not finite ({total})")
    tolerance = config.FID_NEGATIVE_TOL * max(1.0, tr1 + tr2)
    if total < -tolerance:
        raise StatsError(f"Frechet distance {total:.3e} is negative beyond numerical tolerance")
    if total < 0.0:
        # numerical noise: clamp so the value reads 0
        return FrechetTerms(mean_term, -mean_term, eps)
    return FrechetTerms(mean_term, trace_term, eps)


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), never negative."""
    return max(0.0, frechet_terms(g1, g2).value)


# --- KID ---

def _poly_kernel_sum(x, y, exclude_diagonal):
    """Sum of (x.y/D + 1)^3 over all pairs, by row blocks, tree-reduced."""
    dim = x.shape[1]
    row_sums = []
    for start in range(0, x.shape[0], KID_BLOCK):
        block = (x[start:start + KID_BLOCK] @ y.T / dim + 1.0) ** 3
        if exclude_diagonal:
            idx = np.arange(block.shape[0])
            block[idx, start + idx] = 0.0
        row_sums.append(pairwise_sum(block.T))
    return float(pairwise_sum(np.concatenate(row_sums)))


def _kid_unbiased(x, y):
    n, m = x.shape[0], y.shape[0]
    kxx = _poly_kernel_sum(x, x, True) / (n * (n - 1))
    kyy = _poly_kernel_sum(y, y, True) / (m * (m - 1))
    kxy = _poly_kernel_sum(x, y, False) / (n * m)
    return kxx + kyy - 2.0 * kxy


@dataclass(frozen=True)
class KidResult:
    value: float
    std: float = 0.0
    mode: str = "full"
    subsets: int = 0
    subset_size: int = 0

    def to_dict(self):
        return {"kid": self.value, "kid_std": self.std, "kid_mode": self.mode,
                "subsets": self.subsets, "subset_size": self.subset_size}


def _values(feats):
    arr = feats.values if isinstance(feats, FeatureMatrix) else np.asarray(feats, dtype=np.float64)
    if arr.ndim != 2:
        raise StatsError(f"features must be N x D, got shape {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float64)


def kid(fx, fy, subsets=None, subset_size=None, seed=0) -> KidResult:
    """Unbiased MMD^2 with the cubic polynomial kernel k(x, y) = (x.y/D + 1)^3.

    By default the full sets are used. With `subsets` the estimator is
    averaged over that many random subsets of `subset_size` rows per side
    (seeded), and the standard deviation over subsets is returned as well.
    """
    x, y = _values(fx), _values(fy)
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise StatsError(f"KID needs at least 2 rows per side, got {x.shape[0]} and {y.shape[0]}")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatchError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")

    # canonical orientation so kid(X, Y) and kid(Y, X) run the identical computation
    if (x.shape, x.tobytes()) > (y.shape, y.tobytes()):
        x, y = y, x

    if not subsets:
        return KidResult(_kid_unbiased(x, y))

    size = subset_size or min(x.shape[0], y.shape[0], 1000)
    if size < 2 or size > min(x.shape[0], y.shape[0]):
        raise StatsError(
            f"subset size {size} must be within [2, {min(x.shape[0], y.shape[0])}]"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    values = []
    for _ in range(int(subsets)):
        ix = np.sort(rng.choice(x.shape[0], size, replace=False))
        iy = np.sort(rng.choice(y.shape[0], size, replace=False))
        values.append(_kid_unbiased(x[ix], y[iy]))
    values = np.array(values)
    return KidResult(float(pairwise_sum(values) / len(values)), float(np.std(values)),
                     "subsets", int(subsets), int(size))


# --- reports ---

@dataclass
class MetricReport:
    """One metric value together with everything needed to judge comparability."""

    metric: str
    value: float
    provenance: dict
    n_ref: int
    n_eval: int
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "metric": self.metric,
            "value": self.value,
            "n_ref": self.n_ref,
            "n_eval": self.n_eval,
            "provenance": self.provenance,
        }
        out.update(self.extras)
        return out


# --- stats cache ---

def encode_cache(stats: GaussianStats) -> bytes:
    ident = stats.extractor_id.encode('utf-8')
    if len(ident) > 0xFFFF:
        raise CacheFormatError("extractor id too long for the cache header")
    header = (CACHE_MAGIC + bytes([CACHE_VERSION])
              + struct.pack('<H', len(ident)) + ident
              + stats.checksum
              + struct.pack('<I', stats.dim) + struct.pack('<Q', stats.n))
    return header + stats.mean.astype('<f8').tobytes() + stats.cov.astype('<f8').tobytes()


def decode_cache(payload: bytes) -> GaussianStats:
    if payload[:4] != CACHE_MAGIC:
        raise CacheFormatError("not a fairfid stats cache (bad magic)")
    if len(payload) < 7 or payload[4] != CACHE_VERSION:
        raise CacheFormatError(f"unsupported cache version {payload[4] if len(payload) > 4 else '?'}")
    (id_len,) = struct.unpack_from('<H', payload, 5)
    pos = 7
    ident = payload[pos:pos + id_len]
    pos += id_len
    checksum = payload[pos:pos + 32]
    pos += 32
    if len(payload) < pos + 12:
        raise CacheFormatError("truncated cache header")
    (dim,) = struct.unpack_from('<I', payload, pos)
    (n,) = struct.unpack_from('<Q', payload, pos + 4)
    pos += 12
    expected = pos + 8 * (dim + dim * dim)
    if len(payload) != expected:
        raise CacheFormatError(f"cache body is {len(payload) - pos} bytes, expected {expected - pos}")
    mean = np.frombuffer(payload, dtype='<f8', count=dim, offset=pos)
    cov = np.frombuffer(payload, dtype='<f8', count=dim * dim, offset=pos + 8 * dim).reshape(dim, dim)
    try:
        return GaussianStats(mean, cov, n, ident.decode('utf-8'), bytes(checksum))
    except (StatsError, UnicodeDecodeError) as e:
        raise CacheFormatError(f"corrupt cache: {e}") from e


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_cache(path, stats: GaussianStats, provenance: dict = None) -> Path:
    """Write the binary cache and its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_cache(stats))
    sidecar = {
        "format": CACHE_MAGIC.decode('ascii'),
        "version": CACHE_VERSION,
        "tool": f"fairfid {config.VERSION}",
        "extractor_id": stats.extractor_id,
        "extractor_checksum": stats.checksum.hex(),
        "ddof": config.COV_DDOF,
        "n": stats.n,
        "dim": stats.dim,
        "provenance": provenance or {},
    }
    with open(sidecar_path(path), 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_cache(path) -> GaussianStats:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise CacheFormatError(f"cannot read cache {path}: {e}") from e
    return decode_cache(payload)


def read_sidecar(path):
    """Sidecar dict of a cache or report, or None when absent."""
    side = sidecar_path(path)
    if not side.exists():
        return None
    with open(side, 'r', encoding='utf-8') as f:
        return json.load(f)


def is_cache_file(path) -> bool:
    path = Path(path)
    if not path.is_file():
        return False
    with open(path, 'rb') as f:
        return f.read(4) == CACHE_MAGIC
