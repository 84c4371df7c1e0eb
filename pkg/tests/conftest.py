"""Shared fixtures for the fairfid test suite."""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import config  # noqa: E402
import testpatterns  # noqa: E402
from features import toy_extractor_spec  # noqa: E402

# 384 -> 112 keeps the 1024 -> 299 downscale ratio at a fraction of the pixels
CORPUS_COUNT = 500
CORPUS_SIZE = 384
FID_SIZE = 112

config.set_quiet(True)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(scope="session")
def toy():
    return toy_extractor_spec()


@pytest.fixture(scope="session")
def corpus():
    """Seeded synthetic corpus shared by the experiment tests."""
    return testpatterns.synthetic_corpus(CORPUS_COUNT, seed=0, size=CORPUS_SIZE)


@pytest.fixture(scope="session")
def small_corpus():
    return testpatterns.synthetic_corpus(12, seed=7, size=64)
