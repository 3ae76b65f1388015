"""
Synthetic Dataset Module

Generates a seeded place-recognition benchmark: a pool of textured patches
(noise textures, gradient blobs, checker motifs) is scattered over smooth
backgrounds to form database scenes; each query is a perturbed copy of one
database scene; library images reuse patches from the same pool.
"""

import os
from dataclasses import dataclass, asdict
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from src.core.errors import InvalidParams
from src.core.evalharness import GroundTruth, write_ground_truth
from src.core.imagecore import Image, save_image
from src.core.logger import PlaceLogger
from src.utils.artifact_paths import GROUND_TRUTH_FILE, dataset_dirs
from src.utils.storage import write_json

PATCH_MIN_SIDE = 20
PATCH_MAX_SIDE = 40

logger = PlaceLogger('synthetic')


@dataclass(frozen=True)
class SyntheticParams:
    n_library: int = 100
    n_database: int = 100
    n_query: int = 50
    width: int = 160
    height: int = 120
    n_distractors: int = 20
    pool_size: int = 60
    patches_per_image: int = 6
    max_shift: int = 10
    brightness_range: float = 0.1

    def validate(self) -> 'SyntheticParams':
        counts = ('n_library', 'n_database', 'n_query', 'n_distractors', 'pool_size', 'patches_per_image')
        for name in counts:
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be positive")
        if self.width < 64 or self.height < 64:
            raise InvalidParams(f"image size must be at least 64x64, got {self.width}x{self.height}")
        if self.n_query > self.n_database:
            raise InvalidParams("each query copies a distinct database image: n_query <= n_database")
        if self.patches_per_image >= self.pool_size:
            raise InvalidParams("pool_size must exceed patches_per_image so a patch can be swapped")
        if self.max_shift < 0 or not 0 <= self.brightness_range < 1:
            raise InvalidParams("max_shift must be >= 0 and brightness_range in [0, 1)")
        return self


@dataclass(frozen=True)
class Placement:
    patch_id: int
    x: int
    y: int


@dataclass(frozen=True)
class SceneLayout:
    """Background gradient plus patches, in padded canvas coordinates."""
    color_from: Tuple[int, int, int]
    color_to: Tuple[int, int, int]
    angle: float
    placements: Tuple[Placement, ...]


@dataclass(frozen=True)
class Perturbation:
    source_index: int
    dx: int
    dy: int
    brightness: float
    swapped_index: int
    swapped_patch_id: int


def _random_color(rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 256, size=3).astype(np.float64)


def _noise_patch(rng, h, w):
    field = ndimage.gaussian_filter(rng.random((h, w)), rng.uniform(0.8, 2.0))
    field = (field - field.min()) / max(field.max() - field.min(), 1e-12)
    return field[..., None] * _random_color(rng) + (1 - field[..., None]) * _random_color(rng)


def _blob_patch(rng, h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    image = np.broadcast_to(_random_color(rng), (h, w, 3)).copy()
    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        sigma = rng.uniform(2.5, min(h, w) / 3)
        weight = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))[..., None]
        image = weight * _random_color(rng) + (1 - weight) * image
    return image


def _checker_patch(rng, h, w):
    cell = int(rng.integers(3, 9))
    ys, xs = np.mgrid[0:h, 0:w]
    mask = (((xs // cell) + (ys // cell)) % 2)[..., None]
    return mask * _random_color(rng) + (1 - mask) * _random_color(rng)


PATCH_KINDS = (_noise_patch, _blob_patch, _checker_patch)


def make_patch_pool(rng: np.random.Generator, count: int) -> List[np.ndarray]:
    pool = []
    for i in range(count):
        h, w = (int(v) for v in rng.integers(PATCH_MIN_SIDE, PATCH_MAX_SIDE + 1, size=2))
        pool.append(np.clip(np.rint(PATCH_KINDS[i % len(PATCH_KINDS)](rng, h, w)), 0, 255).astype(np.uint8))
    return pool


def _random_layout(rng, params: SyntheticParams, pool, candidates: np.ndarray) -> SceneLayout:
    patch_ids = rng.choice(candidates, size=params.patches_per_image, replace=False)
    placements = []
    for patch_id in patch_ids:
        ph, pw = pool[int(patch_id)].shape[:2]
        x = params.max_shift + int(rng.integers(0, params.width - pw + 1))
        y = params.max_shift + int(rng.integers(0, params.height - ph + 1))
        placements.append(Placement(int(patch_id), x, y))
    return SceneLayout(
        color_from=tuple(int(v) for v in rng.integers(0, 256, size=3)),
        color_to=tuple(int(v) for v in rng.integers(0, 256, size=3)),
        angle=float(rng.uniform(0, 2 * np.pi)),
        placements=tuple(placements),
    )


def render_layout(layout: SceneLayout, pool: List[np.ndarray], params: SyntheticParams,
                  dx: int = 0, dy: int = 0, brightness: float = 1.0) -> Image:
    """Render a layout and crop the visible window shifted by (dx, dy)."""
    margin = params.max_shift
    canvas_h, canvas_w = params.height + 2 * margin, params.width + 2 * margin
    ys, xs = np.mgrid[0:canvas_h, 0:canvas_w]
    t = xs * np.cos(layout.angle) + ys * np.sin(layout.angle)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    canvas = (1 - t[..., None]) * np.array(layout.color_from) + t[..., None] * np.array(layout.color_to)

    for placement in layout.placements:
        patch = pool[placement.patch_id]
        ph, pw = patch.shape[:2]
        canvas[placement.y:placement.y + ph, placement.x:placement.x + pw] = patch

    top, left = margin + dy, margin + dx
    window = canvas[top:top + params.height, left:left + params.width] * brightness
    return Image.from_array(np.clip(np.rint(window), 0, 255).astype(np.uint8))


def perturb_layout(rng, layout: SceneLayout, params: SyntheticParams,
                   source_index: int) -> Tuple[SceneLayout, Perturbation]:
    """Swap one patch for an unused pool patch and draw a shift and brightness."""
    used = {p.patch_id for p in layout.placements}
    unused = np.array([i for i in range(params.pool_size) if i not in used])
    swapped_index = int(rng.integers(0, len(layout.placements)))
    new_patch = int(rng.choice(unused))
    placements = list(layout.placements)
    old = placements[swapped_index]
    placements[swapped_index] = Placement(new_patch, old.x, old.y)
    perturbation = Perturbation(
        source_index=source_index,
        dx=int(rng.integers(-params.max_shift, params.max_shift + 1)),
        dy=int(rng.integers(-params.max_shift, params.max_shift + 1)),
        brightness=float(1.0 + rng.uniform(-params.brightness_range, params.brightness_range)),
        swapped_index=swapped_index,
        swapped_patch_id=new_patch,
    )
    return SceneLayout(layout.color_from, layout.color_to, layout.angle, tuple(placements)), perturbation


def generate_synthetic_dataset(out_dir: str, seed: int,
                               params: SyntheticParams = SyntheticParams()) -> GroundTruth:
    """
    Write library/, database/, query/, ground_truth.csv and manifest.json.

    Everything is derived from `seed`; rerunning produces identical files.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    pool = make_patch_pool(rng, params.pool_size + params.n_distractors)
    scene_patches = np.arange(params.pool_size)
    library_patches = np.arange(params.pool_size + params.n_distractors)

    database = [_random_layout(rng, params, pool, scene_patches) for _ in range(params.n_database)]
    library = [_random_layout(rng, params, pool, library_patches) for _ in range(params.n_library)]
    sources = np.sort(rng.choice(params.n_database, size=params.n_query, replace=False))
    queries = [perturb_layout(rng, database[int(i)], params, int(i)) for i in sources]

    directories = dataset_dirs(out_dir)
    for directory in directories.values():
        os.makedirs(directory, exist_ok=True)

    library_ids = [f'lib_{i:04d}' for i in range(params.n_library)]
    database_ids = [f'db_{i:04d}' for i in range(params.n_database)]
    query_ids = [f'q_{i:04d}' for i in range(params.n_query)]

    for image_id, layout in zip(library_ids, library):
        save_image(render_layout(layout, pool, params),
                   os.path.join(directories['library'], f'{image_id}.png'))
    for image_id, layout in zip(database_ids, database):
        save_image(render_layout(layout, pool, params),
                   os.path.join(directories['database'], f'{image_id}.png'))
    for image_id, (layout, p) in zip(query_ids, queries):
        image = render_layout(layout, pool, params, dx=p.dx, dy=p.dy, brightness=p.brightness)
        save_image(image, os.path.join(directories['query'], f'{image_id}.png'))

    ground_truth = GroundTruth({
        query_id: frozenset({database_ids[p.source_index]})
        for query_id, (_, p) in zip(query_ids, queries)
    })
    write_ground_truth(os.path.join(out_dir, GROUND_TRUTH_FILE), ground_truth)
    write_json(os.path.join(out_dir, 'manifest.json'), {
        'seed': seed,
        'params': asdict(params),
        'database': {i: asdict(l) for i, l in zip(database_ids, database)},
        'library': {i: asdict(l) for i, l in zip(library_ids, library)},
        'query': {i: {'layout': asdict(l), 'perturbation': asdict(p)}
                  for i, (l, p) in zip(query_ids, queries)},
    })
    logger.info(f"Synthetic dataset (seed {seed}) written to {out_dir}: {params.n_library} library, "
                f"{params.n_database} database, {params.n_query} query images")
    return ground_truth
