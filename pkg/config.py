"""Configuration constants for fairfid metric computation and resizing."""

import os
import sys

VERSION = "0.1.0"

# Resizing / FID protocol
DEFAULT_RESIZER = "bicubic-aa"  # PIL-style bicubic with antialiasing
FID_SIZE = 299  # Inception input is 299x299x3
INCEPTION_DIM = 2048  # pool3 features

# Toy extractor (desk-scale stand-in for Inception)
TOY_SIZE = 32
TOY_DIM = 64
TOY_SEED = 42
TOY_RESIZER = "bilinear-aa"

# Statistics
COV_DDOF = 1  # unbiased covariance, stamped into every cache sidecar and report
SQRTM_EPS_SCALE = 1e-6  # eps = scale * mean(diag) when eigh needs regularization
FID_NEGATIVE_TOL = 1e-8

# Codec
JPEG_SUBSAMPLING = "4:4:4"
PSNR_PEAK = 255.0

# Diagnostics (verdict thresholds for `diagnose`)
RING_GAP_OK = 0.05
RING_GAP_BAD = 0.30
ENERGY_OK = 10.0
ENERGY_BAD = 1000.0
RING_SAMPLES = 360
RING_INTENSITY_FRACTION = 0.10

# Sweeps
JPEG_QUALITIES = (100, 98, 95, 90, 75)
RESIZE_RATIOS = (1.0, 1.5, 2.0, 3.0, 4.0)
RATIO_VARIANTS = ("bicubic-noaa", "bilinear-noaa", "nearest", "bicubic-aa")
SYNTHETIC_SIZE = 512
SYNTHETIC_COUNT = 500

# Worker pool / batching
WORKERS = int(os.environ.get("FAIRFID_WORKERS", "4"))
BATCH_SIZE = 64

# --- Inception model file ---
# Pretrained weights are not shipped. Point fairfid at a TorchScript export of
# InceptionV3 that maps Nx3x299x299 input in [-1, 1] to Nx2048 pool3 features:
#   export FAIRFID_INCEPTION_MODEL=/path/to/inception_pool3.pt
# or pass --model on the command line, or `fairfid config set model PATH`.
INCEPTION_MODEL = os.environ.get("FAIRFID_INCEPTION_MODEL")

QUIET = os.environ.get("FAIRFID_QUIET", "") not in ("", "0")


def log(*args):
    """Print a status line to stderr unless quiet mode is on."""
    if not QUIET:
        print(*args, file=sys.stderr, flush=True)


def set_quiet(value: bool):
    global QUIET
    QUIET = bool(value)


# --- User settings persistence ---
import json
from pathlib import Path

# Use XDG config dir if available, otherwise ~/.config/fairfid
_XDG = os.environ.get('XDG_CONFIG_HOME')
if _XDG:
    _CONFIG_DIR = Path(_XDG) / 'fairfid'
else:
    _CONFIG_DIR = Path.home() / '.config' / 'fairfid'

_SETTINGS_FILE = _CONFIG_DIR / 'user_settings.json'

SETTING_KEYS = ('resizer', 'extractor', 'model', 'workers', 'fid_size')


def default_settings():
    return {
        'resizer': DEFAULT_RESIZER,
        'extractor': 'inception',
        # falls back to the env var read at module import
        'model': INCEPTION_MODEL,
        'workers': WORKERS,
        'fid_size': FID_SIZE,
    }


def load_user_settings():
    """Load persisted user settings from disk. Returns a dict."""
    settings = default_settings()
    try:
        if _SETTINGS_FILE.exists():
            with open(_SETTINGS_FILE, 'r', encoding='utf-8') as f:
                stored = json.load(f)
            settings.update({k: v for k, v in stored.items() if k in SETTING_KEYS})
    except (OSError, ValueError) as e:
        log(f"⚠️  Could not read {_SETTINGS_FILE}: {e}")
    # env var wins over a stale stored path
    if INCEPTION_MODEL:
        settings['model'] = INCEPTION_MODEL
    return settings


def save_user_settings(settings: dict):
    """Persist user settings to disk (best-effort)."""
    try:
        _CONFIG_DIR.mkdir(parents=True, exist_ok=True)
        with open(_SETTINGS_FILE, 'w', encoding='utf-8') as f:
            json.dump({k: v for k, v in settings.items() if k in SETTING_KEYS}, f, indent=2)
        return True
    except OSError:
        return False


def settings_path():
    return _SETTINGS_FILE
