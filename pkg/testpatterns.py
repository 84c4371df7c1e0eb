"""Diagnostic test patterns and the scalar aliasing metrics computed on them.

Also generates the seeded synthetic corpus used in place of a real dataset.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

import config
from errors import PatternError
from pixels import ImageBuffer
from resample import resize_variant

MIN_SIZE = 16

CIRCLE = "circle-outline"
CHECKERBOARD = "checkerboard"
ZONE_PLATE = "zone-plate"
KINDS = (CIRCLE, CHECKERBOARD, ZONE_PLATE)

VERDICT_OK = "✓"
VERDICT_WARN = "⚠"
VERDICT_BAD = "✗"


@dataclass(frozen=True)
class Pattern:
    """A parameterized test image.

    Args:
        kind: one of circle-outline, checkerboard, zone-plate
        size: canvas edge in pixels (square)
        radius, thickness: ring geometry in pixels (circle-outline)
        period: full checker cycle in pixels, 2 = one-pixel squares (checkerboard)
        fmax: frequency at the canvas edge in cycles/pixel (zone-plate)
    """

    kind: str
    size: int
    radius: float = 0.0
    thickness: float = 1.0
    period: int = 2
    fmax: float = 0.5

    @classmethod
    def circle(cls, size, radius, thickness=1.0):
        return cls(CIRCLE, size, radius=radius, thickness=thickness)

    @classmethod
    def checkerboard(cls, size, period):
        return cls(CHECKERBOARD, size, period=period)

    @classmethod
    def zone_plate(cls, size, fmax=0.5):
        return cls(ZONE_PLATE, size, fmax=fmax)

    @property
    def name(self):
        if self.kind == CIRCLE:
            return f"circle-r{self.radius:g}-t{self.thickness:g}"
        if self.kind == CHECKERBOARD:
            return f"checker-p{self.period}"
        return f"zoneplate-f{self.fmax:g}"

    def to_dict(self):
        params = {"kind": self.kind, "size": self.size}
        if self.kind == CIRCLE:
            params.update(radius=self.radius, thickness=self.thickness)
        elif self.kind == CHECKERBOARD:
            params["period"] = self.period
        else:
            params["fmax"] = self.fmax
        return params


def _validate(pattern: Pattern):
    if pattern.kind not in KINDS:
        raise PatternError(f"unknown pattern kind '{pattern.kind}'")
    if int(pattern.size) != pattern.size or pattern.size < MIN_SIZE:
        raise PatternError(f"pattern size must be an integer >= {MIN_SIZE}, got {pattern.size}")
    if pattern.kind == CIRCLE:
        if pattern.thickness < 1.0:
            raise PatternError(f"ring thickness {pattern.thickness} is below one pixel")
        if pattern.radius <= pattern.thickness / 2:
            raise PatternError(f"ring radius {pattern.radius} too small for thickness {pattern.thickness}")
        if pattern.radius + pattern.thickness / 2 > pattern.size / 2:
            raise PatternError(f"ring radius {pattern.radius} does not fit a {pattern.size}px canvas")
    elif pattern.kind == CHECKERBOARD:
        if int(pattern.period) != pattern.period or pattern.period < 2:
            raise PatternError(f"checker period must be an integer >= 2 (Nyquist), got {pattern.period}")
    elif not 0.0 < pattern.fmax <= 0.5:
        raise PatternError(f"zone plate fmax {pattern.fmax} outside (0, 0.5] cycles/pixel")


def _to_rgb(gray: np.ndarray) -> ImageBuffer:
    values = np.rint(np.clip(gray, 0.0, 255.0)).astype(np.uint8)
    return ImageBuffer(np.repeat(values[:, :, None], 3, axis=2))


def generate(pattern: Pattern) -> ImageBuffer:
    """Render `pattern` to a gray uint8 RGB image."""
    _validate(pattern)
    n = int(pattern.size)
    coords = np.arange(n, dtype=np.float64)

    if pattern.kind == CIRCLE:
        c = n / 2.0
        yy, xx = np.meshgrid(coords + 0.5 - c, coords + 0.5 - c, indexing='ij')
        dist = np.hypot(xx, yy)
        # analytic coverage of a one-pixel footprint by the annulus, linear falloff
        coverage = np.clip(pattern.thickness / 2.0 + 0.5 - np.abs(dist - pattern.radius), 0.0, 1.0)
        return _to_rgb(255.0 * coverage)

    if pattern.kind == CHECKERBOARD:
        cells = np.floor(2.0 * (coords + 0.5) / pattern.period).astype(np.int64)
        parity = (cells[:, None] + cells[None, :]) % 2
        return _to_rgb(255.0 * parity)

    origin = n // 2
    yy, xx = np.meshgrid(coords - origin, coords - origin, indexing='ij')
    k = math.pi * pattern.fmax / (n / 2.0)
    return _to_rgb(127.5 * (1.0 + np.cos(k * (xx * xx + yy * yy))))


def _intensity(img: ImageBuffer) -> np.ndarray:
    return img.data.astype(np.float64).mean(axis=2)


def ring_gap_fraction(img: ImageBuffer, radius_scaled: float, window: int = 1) -> float:
    """Fraction of points on the ideal ring where the image is (nearly) dark.

    360 points are placed on the circle of `radius_scaled` around the image
    center; a point is a gap when the max intensity over the `window` x
    `window` pixels around it is below 10% of the image maximum.
    """
    if window < 1 or window % 2 == 0:
        raise PatternError(f"window must be a positive odd number, got {window}")
    h, w = img.height, img.width
    cy, cx = h / 2.0, w / 2.0
    if not radius_scaled > 0 or radius_scaled >= min(cx, cy):
        raise PatternError(f"ring radius {radius_scaled} is degenerate for a {w}x{h} image")

    intensity = _intensity(img)
    peak = intensity.max()
    if peak <= 0.0:
        return 1.0
    threshold = config.RING_INTENSITY_FRACTION * peak

    theta = 2.0 * np.pi * np.arange(config.RING_SAMPLES) / config.RING_SAMPLES
    px = np.clip(np.floor(cx + radius_scaled * np.cos(theta)).astype(np.int64), 0, w - 1)
    py = np.clip(np.floor(cy + radius_scaled * np.sin(theta)).astype(np.int64), 0, h - 1)

    half = window // 2
    local = np.full(px.shape, -np.inf)
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            ys = np.clip(py + dy, 0, h - 1)
            xs = np.clip(px + dx, 0, w - 1)
            local = np.maximum(local, intensity[ys, xs])
    return float(np.count_nonzero(local < threshold)) / config.RING_SAMPLES


def aliasing_energy(img: ImageBuffer) -> float:
    """Mean squared deviation from the global mean; 0 means nothing survived but DC."""
    values = img.data.astype(np.float64)
    return float(np.mean((values - values.mean()) ** 2))


def classify(gap_fraction: float, energy: float) -> str:
    """✓ / ⚠ / ✗ verdict for one resizer from its circle and checker metrics."""
    if gap_fraction > config.RING_GAP_BAD or energy > config.ENERGY_BAD:
        return VERDICT_BAD
    if gap_fraction < config.RING_GAP_OK and energy < config.ENERGY_OK:
        return VERDICT_OK
    return VERDICT_WARN


def diagnostic_patterns(size=256):
    """Circle, above-Nyquist checkerboard and zone plate used by `diagnose`."""
    return {
        "circle": Pattern.circle(size, radius=size * 100 / 256, thickness=1.0),
        "checker": Pattern.checkerboard(size, period=6),
        "zoneplate": Pattern.zone_plate(size, fmax=0.5),
    }


# --- Synthetic corpus ---

def synthetic_image(seed: int, index: int, size: int = config.SYNTHETIC_SIZE) -> ImageBuffer:
    """Seeded procedural image: gradient, noise octaves, checker and chirp patches, thin rings.

    Image `index` of corpus `seed` depends only on (seed, index, size).
    """
    rng = np.random.Generator(np.random.PCG64([seed, index]))
    n = int(size)
    coords = (np.arange(n, dtype=np.float64) + 0.5) / n
    yy, xx = np.meshgrid(coords, coords, indexing='ij')

    base = rng.uniform(40.0, 215.0, size=3)
    slope = rng.uniform(-60.0, 60.0, size=(2, 3))
    img = base + xx[:, :, None] * slope[0] + yy[:, :, None] * slope[1]

    # noise octaves, coarse ones upsampled with the antialiased bicubic resizer
    for octave, amplitude in ((8, 12.0), (32, 20.0)):
        coarse = rng.normal(0.0, amplitude, size=(max(2, n // octave), max(2, n // octave), 3))
        smooth = resize_variant(ImageBuffer(coarse), "bicubic-aa", n, n)
        img = img + smooth.data
    img = img + rng.normal(0.0, 25.0, size=(n, n, 3))

    for _ in range(int(rng.integers(1, 4))):
        period = int(rng.integers(2, 9))
        patch = int(rng.integers(n // 8, n // 3))
        y0, x0 = (int(v) for v in rng.integers(0, n - patch, size=2))
        cells = np.floor(2.0 * (np.arange(patch) + 0.5) / period).astype(np.int64)
        parity = ((cells[:, None] + cells[None, :]) % 2).astype(np.float64)
        contrast = rng.uniform(60.0, 120.0)
        img[y0:y0 + patch, x0:x0 + patch] += (parity - 0.5)[:, :, None] * 2.0 * contrast

    pix = np.arange(n, dtype=np.float64) + 0.5
    py, px = np.meshgrid(pix, pix, indexing='ij')
    # chirp patches sweep 0 -> 0.5 cycles/px, so every downscale ratio folds some of them near DC
    for _ in range(int(rng.integers(1, 3))):
        r_max = float(rng.integers(max(2, n // 6), max(3, n // 3)))
        cx, cy = rng.uniform(r_max, n - r_max, size=2)
        r = np.hypot(px - cx, py - cy)
        k = math.pi * 0.5 / r_max
        mask = np.clip(r_max - r, 0.0, 1.0)
        contrast = rng.uniform(60.0, 110.0)
        img = img + (mask * contrast * np.cos(k * r * r))[:, :, None]

    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0.25 * n, 0.75 * n, size=2)
        radius = rng.uniform(0.08 * n, 0.3 * n)
        thickness = rng.uniform(1.0, 2.0)
        coverage = np.clip(thickness / 2.0 + 0.5 - np.abs(np.hypot(px - cx, py - cy) - radius), 0.0, 1.0)
        color = rng.uniform(0.0, 255.0, size=3)
        img = img * (1.0 - coverage[:, :, None]) + coverage[:, :, None] * color

    return ImageBuffer(np.rint(np.clip(img, 0.0, 255.0)).astype(np.uint8))


def synthetic_corpus(count: int = config.SYNTHETIC_COUNT, seed: int = 0,
                     size: int = config.SYNTHETIC_SIZE, workers=None) -> list:
    if count < 1:
        raise PatternError(f"corpus needs at least one image, got {count}")
    with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
        return list(pool.map(lambda i: synthetic_image(seed, i, size), range(count)))
