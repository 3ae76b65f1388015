"""
Retrieval Module

Inverted file keyed by library image id. Database images are scored against
a query descriptor by the number of shared library ids first and the summed
bounding-box overlap of the shared ids second.
"""

import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from src.core.errors import UnknownLibraryId, DuplicateImageId, InvalidConfig
from src.core.logger import PlaceLogger
from src.core.mining import BoundingBox, SceneDescriptor

FORMAT_VERSION = 1

logger = PlaceLogger('retrieval')


class OverlapMode(str, Enum):
    IOU = 'iou'
    INTERSECTION = 'intersection'

    @classmethod
    def parse(cls, value) -> 'OverlapMode':
        if isinstance(value, cls):
            return value
        if value == 'intersection_area':
            return cls.INTERSECTION
        try:
            return cls(value)
        except ValueError:
            raise InvalidConfig(f"unknown overlap mode: {value!r}") from None


@dataclass(frozen=True)
class Posting:
    db_id: str
    bbox: BoundingBox


@dataclass(frozen=True)
class RankedImage:
    db_id: str
    common_count: int = 0
    bb_score: float = 0.0
    distance: Optional[float] = None


@dataclass(frozen=True)
class RetrievalResult:
    ranked: Tuple[RankedImage, ...]

    @property
    def ids(self) -> List[str]:
        return [item.db_id for item in self.ranked]

    def scores(self) -> Dict[str, Tuple[int, float]]:
        return {item.db_id: (item.common_count, item.bb_score) for item in self.ranked}


@dataclass(frozen=True)
class InvertedFile:
    """One postings list per library image id; immutable after build."""
    library_ids: Tuple[str, ...]
    postings: Dict[str, Tuple[Posting, ...]]
    database_ids: Tuple[str, ...]

    @property
    def total_postings(self) -> int:
        return sum(len(postings) for postings in self.postings.values())

    def to_dict(self) -> dict:
        return {
            'format_version': FORMAT_VERSION,
            'library_ids': list(self.library_ids),
            'postings': {
                library_id: [{'db_id': p.db_id, 'bbox': p.bbox.as_list()}
                             for p in self.postings[library_id]]
                for library_id in self.library_ids
            },
            'database_ids': list(self.database_ids),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'InvertedFile':
        version = data.get('format_version')
        if version != FORMAT_VERSION:
            raise InvalidConfig(f"unsupported index format_version {version!r}")
        library_ids = tuple(data['library_ids'])
        postings = {
            library_id: tuple(Posting(p['db_id'], BoundingBox.from_list(p['bbox']))
                              for p in data['postings'].get(library_id, []))
            for library_id in library_ids
        }
        return cls(library_ids, postings, tuple(data['database_ids']))

    def save(self, path: str):
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_dict(), file, indent=1)
            file.write('\n')

    @classmethod
    def load(cls, path: str) -> 'InvertedFile':
        with open(path, 'r', encoding='utf-8') as file:
            return cls.from_dict(json.load(file))


def build_inverted_file(descriptors: Iterable[SceneDescriptor],
                        library_ids: Sequence[str]) -> InvertedFile:
    """
    Index database descriptors by library image id.

    Raises:
        UnknownLibraryId: an entry names an id outside `library_ids`
        DuplicateImageId: two descriptors share a database image id
    """
    library_ids = tuple(library_ids)
    lists: Dict[str, List[Posting]] = {library_id: [] for library_id in library_ids}
    database_ids = set()
    for descriptor in descriptors:
        if descriptor.image_id in database_ids:
            raise DuplicateImageId(f"database image {descriptor.image_id} indexed twice")
        database_ids.add(descriptor.image_id)
        for entry in descriptor.entries:
            if entry.library_id not in lists:
                raise UnknownLibraryId(
                    f"{descriptor.image_id} references unknown library image {entry.library_id}")
            lists[entry.library_id].append(Posting(descriptor.image_id, entry.bbox))

    postings = {library_id: tuple(sorted(items, key=lambda p: p.db_id))
                for library_id, items in lists.items()}
    index = InvertedFile(library_ids, postings, tuple(sorted(database_ids)))
    logger.info(f"Inverted file: {len(library_ids)} lists, {len(database_ids)} database images, "
                f"{index.total_postings} postings")
    return index


def bb_overlap(a: BoundingBox, b: BoundingBox, mode=OverlapMode.IOU) -> float:
    """Intersection area or intersection-over-union of two boxes."""
    mode = OverlapMode.parse(mode)
    overlap_x = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    overlap_y = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    intersection = max(0.0, overlap_x) * max(0.0, overlap_y)
    if mode is OverlapMode.INTERSECTION:
        return intersection
    union = a.area + b.area - intersection
    return intersection / union if union > 0 else 0.0


def rank_candidates(scores: Dict[str, List], database_ids: Iterable[str]) -> RetrievalResult:
    """Sort by (common_count desc, bb_score desc, id asc); append unscored ids."""
    ranked = [RankedImage(db_id, count, bb) for db_id, (count, bb) in scores.items()]
    ranked.sort(key=lambda item: (-item.common_count, -item.bb_score, item.db_id))
    ranked.extend(RankedImage(db_id) for db_id in sorted(set(database_ids) - set(scores)))
    return RetrievalResult(tuple(ranked))


def query(index: InvertedFile, q: SceneDescriptor, use_bb: bool = True,
          mode=OverlapMode.IOU) -> RetrievalResult:
    """
    Rank every database image against a query descriptor.

    Raises:
        UnknownLibraryId: the query references an id the index does not know
    """
    mode = OverlapMode.parse(mode)
    scores: Dict[str, List] = {}
    for entry in q.entries:
        if entry.library_id not in index.postings:
            raise UnknownLibraryId(f"query {q.image_id} references unknown library image {entry.library_id}")
        for posting in index.postings[entry.library_id]:
            score = scores.setdefault(posting.db_id, [0, 0.0])
            score[0] += 1
            if use_bb:
                score[1] += bb_overlap(entry.bbox, posting.bbox, mode)
    return rank_candidates(scores, index.database_ids)
