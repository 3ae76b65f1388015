import os
import tempfile

# keep test runs out of the user's log directory
os.environ.setdefault('VPR_LOG_DIR', tempfile.mkdtemp(prefix='vpr-logs-'))

import numpy as np
import pytest
from scipy import ndimage

from src.core.config import Config
from src.core.imagecore import Image
from src.core.synthetic import SyntheticParams, generate_synthetic_dataset

TINY_PARAMS = SyntheticParams(
    n_library=4, n_database=4, n_query=2, width=64, height=64,
    n_distractors=2, pool_size=8, patches_per_image=3)


@pytest.fixture
def tiny_config():
    return Config(R=16, K=8, L=2, codebook_k=4, ls=(1, 2), threads=2)


def textured_array(seed: int, size: int = 64) -> np.ndarray:
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.random((size, size, 3)), sigma=(1.5, 1.5, 0))
    field = (field - field.min()) / (field.max() - field.min())
    return np.rint(field * 255).astype(np.uint8)


@pytest.fixture
def textured_image():
    return Image.from_array(textured_array(3))


def blob_array(centers, size: int = 64, sigma: float = 2.5) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    field = np.full((size, size), 20.0)
    for cx, cy in centers:
        field += 180.0 * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
    return np.clip(np.rint(field), 0, 255).astype(np.uint8)


@pytest.fixture(scope='session')
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp('dataset')
    generate_synthetic_dataset(str(root), seed=5, params=TINY_PARAMS)
    return root


@pytest.fixture(scope='session')
def benchmark_dataset(tmp_path_factory):
    """Full-size seeded benchmark: 100 library, 100 database, 50 query images at 160x120."""
    root = tmp_path_factory.mktemp('benchmark')
    generate_synthetic_dataset(str(root), seed=7, params=SyntheticParams())
    return root
