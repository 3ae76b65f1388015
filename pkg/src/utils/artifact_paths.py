"""
Artifact Paths Module

Resolves where each pipeline stage reads and writes its artifacts so stages
can be rerun independently against the same work directory.
"""

import os
from typing import List, Tuple

IMAGE_EXTENSIONS = ('.png', '.ppm', '.pgm')
IMAGE_SETS = ('library', 'database', 'query')
GROUND_TRUTH_FILE = 'ground_truth.csv'


class ArtifactLayout:
    """Layout of the work directory given by --out."""

    def __init__(self, root: str):
        self.root = os.path.abspath(root)

    def path(self, *parts: str) -> str:
        """Absolute path of an artifact, creating its parent directory."""
        full = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    @property
    def codebook(self) -> str:
        return self.path('codebook.json')

    @property
    def index(self) -> str:
        return self.path('index.json')

    @property
    def config(self) -> str:
        return self.path('config.json')

    def parsed_dir(self, image_set: str) -> str:
        directory = os.path.join(self.root, 'parsed', image_set)
        os.makedirs(directory, exist_ok=True)
        return directory

    def descriptors(self, image_set: str) -> str:
        return self.path('descriptors', f'{image_set}.jsonl')

    def report(self, extension: str) -> str:
        return self.path(f'report.{extension}')


def dataset_dirs(dataset_root: str) -> dict:
    """library/database/query directories of a dataset root."""
    return {image_set: os.path.join(dataset_root, image_set) for image_set in IMAGE_SETS}


def list_images(directory: str) -> List[Tuple[str, str]]:
    """
    (image_id, path) pairs for every supported image in a directory.

    The image id is the file stem; entries are sorted by id.
    """
    entries = []
    for name in sorted(os.listdir(directory)):
        stem, extension = os.path.splitext(name)
        if extension.lower() in IMAGE_EXTENSIONS:
            entries.append((stem, os.path.join(directory, name)))
    return entries
