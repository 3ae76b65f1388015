"""
Mining Module

Parses a scene into landmark VLAD codes, mines the image library with them
and turns the best library images into the scene descriptor: L pairs of
library image id and bounding box.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from src.core.config import Config
from src.core.encoding import Codebook, VladCode, vlad_encode, stack_codes
from src.core.errors import (
    EmptyScene, EmptyLibrary, InconsistentRankings, EmptyFeatureSet, InvalidParameter,
)
from src.core.features import (
    FeatureSet, LandmarkRegion, detect_and_describe, pca_distinctiveness, select_landmarks,
)
from src.core.imagecore import Image, to_grayscale, rgb_to_lab
from src.core.logger import PlaceLogger
from src.core.segmentation import slic_segment, build_region_tree

TRIM_DIVISOR = 10  # floor(n / 10) values dropped from each end

logger = PlaceLogger('mining')


class SceneLandmark(NamedTuple):
    region: LandmarkRegion
    code: VladCode


@dataclass(frozen=True, eq=False)
class ParsedScene:
    """Landmarks of one image together with all its local features."""
    image_id: str
    width: int
    height: int
    landmarks: Tuple[SceneLandmark, ...]
    features: FeatureSet


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted bounding box {self.as_list()}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, other: 'BoundingBox') -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and other.x_max <= self.x_max and other.y_max <= self.y_max)

    def as_list(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> 'BoundingBox':
        x_min, y_min, x_max, y_max = (float(v) for v in values)
        return cls(x_min, y_min, x_max, y_max)


@dataclass(frozen=True)
class DescriptorEntry:
    library_id: str
    bbox: BoundingBox
    score: float = 0.0


@dataclass(frozen=True)
class SceneDescriptor:
    """Ordered <library image id, bounding box> pairs describing one image."""
    image_id: str
    entries: Tuple[DescriptorEntry, ...]

    @property
    def library_ids(self) -> List[str]:
        return [entry.library_id for entry in self.entries]

    def truncated(self, L: int) -> 'SceneDescriptor':
        return SceneDescriptor(self.image_id, self.entries[:L])

    def to_dict(self) -> dict:
        return {
            'image_id': self.image_id,
            'entries': [
                {'library_id': e.library_id, 'bbox': e.bbox.as_list(), 'score': e.score}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'SceneDescriptor':
        return cls(
            image_id=str(data['image_id']),
            entries=tuple(
                DescriptorEntry(library_id=str(e['library_id']),
                                bbox=BoundingBox.from_list(e['bbox']),
                                score=float(e.get('score', 0.0)))
                for e in data['entries']
            ),
        )


@dataclass(frozen=True, eq=False)
class LibraryRanking:
    """Ranking of every library image for one landmark query."""
    library_ids: Tuple[str, ...]
    order: np.ndarray      # library indices, best first
    ranks: np.ndarray      # 1-based rank per library index
    distances: np.ndarray  # best landmark distance per library index


class LandmarkLibrary:
    """Library scenes with all landmark codes stacked for batched ranking."""

    def __init__(self, scenes: Sequence[ParsedScene]):
        if not scenes:
            raise EmptyLibrary("the image library is empty")
        self.scenes = list(scenes)
        self.library_ids = tuple(scene.image_id for scene in self.scenes)
        codes, owners = [], []
        for index, scene in enumerate(self.scenes):
            for landmark in scene.landmarks:
                codes.append(landmark.code)
                owners.append(index)
        self.codes = stack_codes(codes)
        self.owners = np.asarray(owners, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.scenes)

    @classmethod
    def of(cls, library: Union['LandmarkLibrary', Sequence[ParsedScene]]) -> 'LandmarkLibrary':
        return library if isinstance(library, cls) else cls(library)

    def image_distances(self, queries: np.ndarray) -> np.ndarray:
        """
        (q, L_o) matrix: for each query code and library image, the smallest
        Euclidean distance to any of that image's landmark codes. Images
        without landmarks are at +inf.
        """
        queries = np.atleast_2d(queries)
        result = np.full((len(queries), len(self.scenes)), np.inf)
        if not len(self.owners):
            return result
        distances = cdist(queries, self.codes)
        for q in range(len(queries)):
            np.minimum.at(result[q], self.owners, distances[q])
        return result

    def ranking_from_distances(self, distances: np.ndarray) -> LibraryRanking:
        order = np.argsort(distances, kind='stable')
        ranks = np.empty(len(order), dtype=np.int64)
        ranks[order] = np.arange(1, len(order) + 1)
        return LibraryRanking(self.library_ids, order, ranks, distances)


def parse_scene(img: Image, cfg: Config, cb: Codebook, image_id: str,
                features: Optional[FeatureSet] = None) -> ParsedScene:
    """
    Segment, describe and select the K most salient landmark regions of an
    image, encoding each as a VLAD code over its member descriptors.

    `features` may carry a FeatureSet already extracted from the same image.

    Raises:
        EmptyScene: fewer than two keypoints were detected
        NoCandidates: no region holds min_keypoints keypoints
    """
    lab = rgb_to_lab(img)
    sp = slic_segment(lab, cfg.R, cfg.compactness, cfg.iterations)
    tree = build_region_tree(sp, lab)
    if features is None:
        features = detect_and_describe(to_grayscale(img), max_keypoints=cfg.max_keypoints)
    if len(features) < 2:
        raise EmptyScene(f"{image_id}: {len(features)} keypoints detected")

    scores = pca_distinctiveness(features)
    regions = select_landmarks(tree, sp, features, scores, cfg.K, cfg.min_keypoints)
    landmarks = tuple(
        SceneLandmark(region, vlad_encode(features.descriptors[list(region.member_keypoint_indices)], cb))
        for region in regions
    )
    logger.debug(f"Parsed {image_id}: S={sp.count}, {len(features)} keypoints, "
                 f"{len(landmarks)} landmarks")
    return ParsedScene(image_id=image_id, width=img.width, height=img.height,
                       landmarks=landmarks, features=features)


def rank_library(query_code: VladCode,
                 library: Union[LandmarkLibrary, Sequence[ParsedScene]]) -> LibraryRanking:
    """
    Rank library images by their best landmark match to one query code.

    Ties go to the lower library index; ranks start at 1.
    """
    library = LandmarkLibrary.of(library)
    distances = library.image_distances(query_code.values)[0]
    return library.ranking_from_distances(distances)


def reverse_rank_scores(rankings: Sequence[LibraryRanking]) -> Dict[str, float]:
    """Score each library image by the sum over rankings of 1 / rank."""
    if not rankings:
        raise InconsistentRankings("no rankings to aggregate")
    library_ids = rankings[0].library_ids
    for ranking in rankings[1:]:
        if ranking.library_ids != library_ids:
            raise InconsistentRankings("rankings cover different library images")

    scores = np.zeros(len(library_ids))
    for ranking in rankings:
        if sorted(ranking.ranks.tolist()) != list(range(1, len(library_ids) + 1)):
            raise InconsistentRankings("ranking is not a permutation of 1..L_o")
        scores += 1.0 / ranking.ranks
    return dict(zip(library_ids, scores.tolist()))


def select_library_images(scores: Mapping[str, float], L: int) -> List[str]:
    """Top-L library ids by descending score, ties by id ascending."""
    if L < 1:
        raise InvalidParameter(f"L must be positive, got {L}")
    ranked = sorted(scores, key=lambda library_id: (-scores[library_id], library_id))
    if L > len(ranked):
        logger.info(f"Library shortfall: L={L} but only {len(ranked)} library images")
    return ranked[:L]


def trimmed_range(values: Sequence[float]) -> Tuple[float, float]:
    """[min, max] of the sorted values after dropping floor(n/10) from each end."""
    ordered = sorted(values)
    drop = len(ordered) // TRIM_DIVISOR
    kept = ordered[drop:len(ordered) - drop]
    return kept[0], kept[-1]


def estimate_bbox(f_q: FeatureSet, f_l: FeatureSet,
                  library_image_size: Tuple[int, int]) -> BoundingBox:
    """
    Box around the library keypoints matched by the query's descriptors.

    Each query descriptor is matched to its exact nearest library descriptor;
    the matched x and y values are trimmed independently to their middle 80%
    and the result is clamped to the library image.
    """
    if len(f_q) == 0 or len(f_l) == 0:
        raise EmptyFeatureSet("bounding box estimation needs features on both images")

    nearest = np.argmin(cdist(f_q.descriptors, f_l.descriptors), axis=1)
    matched = f_l.xy[nearest]
    x_min, x_max = trimmed_range(matched[:, 0].tolist())
    y_min, y_max = trimmed_range(matched[:, 1].tolist())

    width, height = library_image_size
    clamp_x = lambda v: min(max(v, 0.0), float(width - 1))
    clamp_y = lambda v: min(max(v, 0.0), float(height - 1))
    return BoundingBox(clamp_x(x_min), clamp_y(y_min), clamp_x(x_max), clamp_y(y_max))


def describe_scene(parsed: ParsedScene,
                   library: Union[LandmarkLibrary, Sequence[ParsedScene]],
                   L: int) -> SceneDescriptor:
    """
    Build the scene descriptor of a parsed image.

    Every landmark code ranks the library; reverse-rank scores pick the L
    best library images and a bounding box is estimated in each of them.
    """
    library = LandmarkLibrary.of(library)
    if not parsed.landmarks:
        raise EmptyScene(f"{parsed.image_id} has no landmarks")

    queries = stack_codes([landmark.code for landmark in parsed.landmarks])
    distances = library.image_distances(queries)
    rankings = [library.ranking_from_distances(row) for row in distances]
    scores = reverse_rank_scores(rankings)
    selected = select_library_images(scores, L)

    by_id = {scene.image_id: scene for scene in library.scenes}
    entries = []
    for library_id in selected:
        scene = by_id[library_id]
        if len(scene.features) == 0:
            bbox = BoundingBox(0.0, 0.0, float(scene.width - 1), float(scene.height - 1))
        else:
            bbox = estimate_bbox(parsed.features, scene.features, (scene.width, scene.height))
        entries.append(DescriptorEntry(library_id=library_id, bbox=bbox, score=scores[library_id]))
    return SceneDescriptor(image_id=parsed.image_id, entries=tuple(entries))
