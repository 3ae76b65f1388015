"""
Features Module

A self-contained SIFT-like pipeline (difference-of-Gaussians detection,
dominant orientation, 4x4x8 gradient histograms), the PCA-based
distinctiveness score, and landmark region selection over a region tree.
"""

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.core.errors import TooFewDescriptors, NoCandidates, InvalidParameter
from src.core.imagecore import GrayImage
from src.core.logger import PlaceLogger
from src.core.segmentation import RegionTree, SuperpixelMap

DESCRIPTOR_DIM = 128
OCTAVES = 3
SCALES_PER_OCTAVE = 3
BASE_SIGMA = 1.6
ASSUMED_BLUR = 0.5
CONTRAST_THRESHOLD = 0.01  # on intensities scaled to [0, 1]
MIN_OCTAVE_SIDE = 8
ORIENTATION_BINS = 36
DESCRIPTOR_CLIP = 0.2
DEFAULT_MIN_KEYPOINTS = 5
DEFAULT_MAX_KEYPOINTS = 500

logger = PlaceLogger('features')


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoints with their parallel (n, 128) descriptor matrix."""
    keypoints: Tuple[Keypoint, ...] = ()
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, DESCRIPTOR_DIM)))

    def __post_init__(self):
        if len(self.keypoints) != len(self.descriptors):
            raise ValueError(
                f"{len(self.keypoints)} keypoints but {len(self.descriptors)} descriptors")

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def xy(self) -> np.ndarray:
        """(n, 2) array of keypoint coordinates."""
        if not self.keypoints:
            return np.zeros((0, 2))
        return np.array([(kp.x, kp.y) for kp in self.keypoints], dtype=np.float64)


@dataclass(frozen=True)
class LandmarkRegion:
    region_id: int
    saliency: float
    member_keypoint_indices: Tuple[int, ...]


def _gaussian_octaves(image: np.ndarray):
    """Yield (octave, gaussian stack) for each octave of the scale space."""
    n_images = SCALES_PER_OCTAVE + 3
    k = 2.0 ** (1.0 / SCALES_PER_OCTAVE)
    # blur increments between consecutive levels of an octave
    increments = [0.0]
    for i in range(1, n_images):
        previous = BASE_SIGMA * k ** (i - 1)
        increments.append(math.sqrt((previous * k) ** 2 - previous ** 2))

    base = ndimage.gaussian_filter(image, math.sqrt(BASE_SIGMA ** 2 - ASSUMED_BLUR ** 2))
    for octave in range(OCTAVES):
        if min(base.shape) < MIN_OCTAVE_SIDE:
            break
        stack = [base]
        for i in range(1, n_images):
            stack.append(ndimage.gaussian_filter(stack[-1], increments[i]))
        yield octave, np.stack(stack)
        base = stack[SCALES_PER_OCTAVE][::2, ::2]


def _orientation(gx: np.ndarray, gy: np.ndarray, x: int, y: int, sigma: float) -> float:
    radius = int(round(3 * 1.5 * sigma))
    h, w = gx.shape
    y0, y1 = max(0, y - radius), min(h, y + radius + 1)
    x0, x1 = max(0, x - radius), min(w, x + radius + 1)
    wx = gx[y0:y1, x0:x1]
    wy = gy[y0:y1, x0:x1]
    yy, xx = np.mgrid[y0:y1, x0:x1]
    weight = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * (1.5 * sigma) ** 2))
    magnitude = np.hypot(wx, wy) * weight
    angle = np.mod(np.arctan2(wy, wx), 2 * np.pi)
    bins = np.minimum((angle / (2 * np.pi) * ORIENTATION_BINS).astype(int), ORIENTATION_BINS - 1)
    histogram = np.bincount(bins.ravel(), weights=magnitude.ravel(), minlength=ORIENTATION_BINS)
    return (int(np.argmax(histogram)) + 0.5) * 2 * np.pi / ORIENTATION_BINS


# 16x16 sample grid in cell units, 4 samples per cell side
_SAMPLE_OFFSETS = (np.stack(np.meshgrid(np.arange(16), np.arange(16), indexing='xy'), axis=-1)
                   .reshape(-1, 2) - 7.5) / 4.0


def _describe(gx: np.ndarray, gy: np.ndarray, x: float, y: float,
              sigma: float, orientation: float) -> np.ndarray:
    cell = 3.0 * sigma / 2.0
    cos_t, sin_t = math.cos(orientation), math.sin(orientation)
    u, v = _SAMPLE_OFFSETS[:, 0], _SAMPLE_OFFSETS[:, 1]
    px = x + cell * (u * cos_t - v * sin_t)
    py = y + cell * (u * sin_t + v * cos_t)
    coords = np.stack([py, px])
    sx = ndimage.map_coordinates(gx, coords, order=1, mode='nearest')
    sy = ndimage.map_coordinates(gy, coords, order=1, mode='nearest')

    magnitude = np.hypot(sx, sy) * np.exp(-(u ** 2 + v ** 2) / (2 * 2.0 ** 2))
    angle = np.mod(np.arctan2(sy, sx) - orientation, 2 * np.pi)
    angle_bin = np.minimum((angle / (2 * np.pi) * 8).astype(int), 7)
    cell_x = np.clip(np.floor(u + 2).astype(int), 0, 3)
    cell_y = np.clip(np.floor(v + 2).astype(int), 0, 3)
    flat = (cell_y * 4 + cell_x) * 8 + angle_bin
    vector = np.bincount(flat, weights=magnitude, minlength=DESCRIPTOR_DIM)

    norm = np.linalg.norm(vector)
    if norm == 0:
        return vector
    vector = np.minimum(vector / norm, DESCRIPTOR_CLIP)
    norm = np.linalg.norm(vector)
    return vector / norm if norm > 0 else vector


def detect_and_describe(gray: GrayImage, max_keypoints: int = DEFAULT_MAX_KEYPOINTS) -> FeatureSet:
    """
    Detect DoG extrema and compute 128-d descriptors.

    Args:
        gray: Luminance image
        max_keypoints: Keep at most this many keypoints, strongest DoG response first

    Returns:
        FeatureSet: possibly empty; descriptors are unit-norm or all-zero
    """
    image = gray.data.astype(np.float64) / 255.0
    neighbourhood = np.ones((3, 3, 3), dtype=bool)
    neighbourhood[1, 1, 1] = False

    candidates = []
    for octave, gaussians in _gaussian_octaves(image):
        dog = gaussians[1:] - gaussians[:-1]
        upper = ndimage.maximum_filter(dog, footprint=neighbourhood, mode='nearest')
        lower = ndimage.minimum_filter(dog, footprint=neighbourhood, mode='nearest')
        extrema = ((dog > upper) | (dog < lower)) & (np.abs(dog) > CONTRAST_THRESHOLD)
        extrema[0] = extrema[-1] = False
        extrema[:, :1, :] = extrema[:, -1:, :] = False
        extrema[:, :, :1] = extrema[:, :, -1:] = False

        gradients = {}
        for level, row, column in zip(*np.nonzero(extrema)):
            if level not in gradients:
                gy, gx = np.gradient(gaussians[level])
                gradients[level] = (gx, gy)
            candidates.append((abs(float(dog[level, row, column])), octave, int(level),
                               int(row), int(column), gradients[level]))

    # strongest first; ties resolved by position in the pyramid
    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3], c[4]))
    candidates = candidates[:max_keypoints]
    candidates.sort(key=lambda c: (c[1], c[2], c[3], c[4]))

    keypoints, descriptors = [], []
    for _, octave, level, row, column, (gx, gy) in candidates:
        sigma = BASE_SIGMA * 2.0 ** (level / SCALES_PER_OCTAVE)
        orientation = _orientation(gx, gy, column, row, sigma)
        factor = 2 ** octave
        keypoints.append(Keypoint(x=float(column * factor), y=float(row * factor),
                                  scale=sigma * factor, orientation=orientation))
        descriptors.append(_describe(gx, gy, column, row, sigma, orientation))

    if not keypoints:
        return FeatureSet()
    logger.debug(f"Detected {len(keypoints)} keypoints on {gray.width}x{gray.height} image")
    return FeatureSet(keypoints=tuple(keypoints), descriptors=np.array(descriptors))


def distinctiveness_scores(descriptors: np.ndarray) -> np.ndarray:
    """L1 norm of each centered descriptor expressed in the full PCA basis."""
    data = np.asarray(descriptors, dtype=np.float64)
    if data.ndim != 2 or len(data) < 2:
        raise TooFewDescriptors(f"PCA needs at least 2 descriptors, got {len(data)}")
    centered = data - data.mean(axis=0)
    covariance = centered.T @ centered / (len(data) - 1)
    _, basis = np.linalg.eigh(covariance)
    return np.abs(centered @ basis).sum(axis=1)


def pca_distinctiveness(fs: FeatureSet) -> np.ndarray:
    """One non-negative distinctiveness score per descriptor of `fs`."""
    return distinctiveness_scores(fs.descriptors)


def keypoint_superpixels(sp: SuperpixelMap, fs: FeatureSet) -> np.ndarray:
    """Superpixel containing each keypoint's rounded (half-up) coordinate."""
    if len(fs) == 0:
        return np.zeros(0, dtype=np.int64)
    xy = fs.xy
    columns = np.clip(np.floor(xy[:, 0] + 0.5).astype(int), 0, sp.width - 1)
    rows = np.clip(np.floor(xy[:, 1] + 0.5).astype(int), 0, sp.height - 1)
    return sp.labels[rows, columns]


def region_saliency(tree: RegionTree, sp: SuperpixelMap, fs: FeatureSet,
                    scores: Sequence[float]) -> List[Tuple[float, Tuple[int, ...]]]:
    """(saliency, member keypoint indices) for every tree node, indexed by node id."""
    owners = keypoint_superpixels(sp, fs)
    scores = np.asarray(scores, dtype=np.float64)
    per_leaf: List[List[int]] = [[] for _ in range(tree.leaf_count)]
    for index, owner in enumerate(owners):
        per_leaf[int(owner)].append(index)

    members: List[Tuple[int, ...]] = []
    for node in tree.nodes:
        if node.is_leaf:
            members.append(tuple(per_leaf[node.id]))
        else:
            a, b = node.children
            members.append(tuple(sorted(members[a] + members[b])))
    return [(math.fsum(scores[list(m)]) if m else 0.0, m) for m in members]


def select_landmarks(tree: RegionTree, sp: SuperpixelMap, fs: FeatureSet,
                     scores: Sequence[float], K: int,
                     min_keypoints: int = DEFAULT_MIN_KEYPOINTS) -> List[LandmarkRegion]:
    """
    Pick the K most salient tree nodes.

    A node's saliency is the summed distinctiveness of the keypoints falling in
    its superpixels. Nodes with fewer than `min_keypoints` keypoints are not
    candidates. Nested regions may both be selected. Ties go to the smaller id.
    """
    if K < 1:
        raise InvalidParameter(f"K must be positive, got {K}")
    if len(scores) != len(fs):
        raise InvalidParameter(f"{len(scores)} scores for {len(fs)} keypoints")

    candidates = [
        LandmarkRegion(region_id=node_id, saliency=saliency, member_keypoint_indices=members)
        for node_id, (saliency, members) in enumerate(region_saliency(tree, sp, fs, scores))
        if len(members) >= min_keypoints
    ]
    if not candidates:
        raise NoCandidates(f"no region holds {min_keypoints} or more keypoints")

    candidates.sort(key=lambda region: (-region.saliency, region.region_id))
    selected = candidates[:K]
    if len(selected) < K:
        logger.info(f"Landmark shortfall: {len(selected)} of {K} regions eligible")
    return selected
