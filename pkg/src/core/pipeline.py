"""
Pipeline Module

Batch stages shared by the experiment runner and the command line: loading
image sets, extracting features, training the codebook, parsing scenes and
building scene descriptors over whole image sets.
"""

import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.config import Config, thread_count
from src.core.encoding import Codebook, train_codebook
from src.core.errors import EmptyScene, NoCandidates, MissingDataset
from src.core.features import FeatureSet, detect_and_describe
from src.core.imagecore import Image, load_image, to_grayscale
from src.core.logger import PlaceLogger
from src.core.mining import (
    LandmarkLibrary, ParsedScene, SceneDescriptor, describe_scene, parse_scene,
)
from src.utils.artifact_paths import list_images
from src.workers.batch_worker import BatchWorker

logger = PlaceLogger('pipeline')

ImageSet = List[Tuple[str, Image]]


def _worker(cfg: Config, description: str, show_progress: bool) -> BatchWorker:
    return BatchWorker(thread_count(cfg), description, show_progress)


def load_image_set(directory: str, cfg: Config, show_progress: bool = False) -> ImageSet:
    """Decode every image of a directory; ids are file stems in sorted order."""
    if not directory or not os.path.isdir(directory):
        raise MissingDataset(f"image directory not found: {directory}")
    entries = list_images(directory)
    if not entries:
        raise MissingDataset(f"no PNG/PPM/PGM images in {directory}")
    images = _worker(cfg, f'loading {os.path.basename(directory)}', show_progress).run(
        lambda entry: load_image(entry[1]), entries)
    return [(image_id, image) for (image_id, _), image in zip(entries, images)]


def extract_features(images: ImageSet, cfg: Config, show_progress: bool = False) -> Dict[str, FeatureSet]:
    features = _worker(cfg, 'extracting features', show_progress).run(
        lambda item: detect_and_describe(to_grayscale(item[1]), cfg.max_keypoints), images)
    return {image_id: fs for (image_id, _), fs in zip(images, features)}


def train_library_codebook(library_features: Dict[str, FeatureSet], cfg: Config) -> Codebook:
    """Train the VLAD codebook on every library descriptor."""
    stacks = [fs.descriptors for _, fs in sorted(library_features.items()) if len(fs)]
    descriptors = np.concatenate(stacks) if stacks else np.zeros((0, 0))
    return train_codebook(descriptors, cfg.codebook_k, cfg.seed)


def _empty_scene(image_id: str, image: Image, features: Optional[FeatureSet]) -> ParsedScene:
    return ParsedScene(image_id=image_id, width=image.width, height=image.height,
                       landmarks=(), features=features if features is not None else FeatureSet())


def parse_image_set(images: ImageSet, cfg: Config, cb: Codebook,
                    features: Optional[Dict[str, FeatureSet]] = None,
                    show_progress: bool = False) -> List[ParsedScene]:
    """
    Parse every image. Images without usable landmarks are kept with an
    empty landmark list and a warning.
    """
    features = features or {}

    def job(item):
        image_id, image = item
        return parse_scene(image, cfg, cb, image_id, features=features.get(image_id))

    def on_error(item, error):
        if not isinstance(error, (EmptyScene, NoCandidates)):
            raise error
        image_id, image = item
        logger.warning(f"{image_id}: no landmarks ({error})")
        return _empty_scene(image_id, image, features.get(image_id))

    return _worker(cfg, 'parsing scenes', show_progress).run(job, images, on_error=on_error)


def describe_image_set(scenes: Sequence[ParsedScene], library: LandmarkLibrary, L: int,
                       cfg: Config, show_progress: bool = False) -> List[SceneDescriptor]:
    """Describe every scene; scenes without landmarks get an empty descriptor."""
    def job(scene):
        return describe_scene(scene, library, L)

    def on_error(scene, error):
        if not isinstance(error, EmptyScene):
            raise error
        logger.warning(f"{scene.image_id}: empty scene descriptor ({error})")
        return SceneDescriptor(image_id=scene.image_id, entries=())

    return _worker(cfg, 'describing scenes', show_progress).run(job, list(scenes), on_error=on_error)
