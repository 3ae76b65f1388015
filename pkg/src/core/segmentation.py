"""
Segmentation Module

SLIC over-segmentation and the agglomerative region tree whose 2S-1 nodes
are the landmark candidates of a scene.
"""

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from src.core.errors import TargetCountTooLarge, DegenerateImage, InvalidParameter
from src.core.imagecore import LabImage
from src.core.logger import PlaceLogger

DEFAULT_COMPACTNESS = 10.0
DEFAULT_ITERATIONS = 10
PIXELS_PER_SUPERPIXEL_MIN = 16

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)

logger = PlaceLogger('segmentation')


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    """Per-pixel superpixel labels in [0, count)."""
    width: int
    height: int
    labels: np.ndarray
    count: int


@dataclass(frozen=True)
class Region:
    """One node of the region tree."""
    id: int
    members: FrozenSet[int]
    children: Tuple[int, ...]
    mean_lab: Tuple[float, float, float]
    centroid: Tuple[float, float]
    pixel_count: int
    merge_distance: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class RegionTree:
    """Dendrogram over S superpixels; nodes[i].id == i, leaves come first."""
    nodes: Tuple[Region, ...]
    leaf_count: int

    @property
    def root(self) -> Region:
        return self.nodes[-1]

    @property
    def merge_distances(self) -> List[float]:
        return [node.merge_distance for node in self.nodes[self.leaf_count:]]

    def __len__(self) -> int:
        return len(self.nodes)


def _grid_shape(width: int, height: int, target_count: int) -> Tuple[int, int]:
    columns = max(1, math.ceil(math.sqrt(target_count * width / height)))
    rows = max(1, round(target_count / columns))
    return columns, rows


def _initial_centers(lab: np.ndarray, target_count: int) -> np.ndarray:
    """Grid seeds nudged to the lowest-gradient pixel of their 3x3 neighbourhood."""
    height, width = lab.shape[:2]
    columns, rows = _grid_shape(width, height, target_count)

    grad = np.zeros((height, width))
    grad[1:-1, :] += np.sum((lab[2:, :] - lab[:-2, :]) ** 2, axis=2)
    grad[:, 1:-1] += np.sum((lab[:, 2:] - lab[:, :-2]) ** 2, axis=2)

    # current position first so flat areas keep their grid seed
    offsets = [(0, 0)] + [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    centers = []
    for row in range(rows):
        for column in range(columns):
            cy = min(height - 1, int((row + 0.5) * height / rows))
            cx = min(width - 1, int((column + 0.5) * width / columns))
            best = None
            for dy, dx in offsets:
                y, x = cy + dy, cx + dx
                if 0 < y < height - 1 and 0 < x < width - 1:
                    if best is None or grad[y, x] < grad[best]:
                        best = (y, x)
            y, x = best if best is not None else (cy, cx)
            centers.append([*lab[y, x], x, y])
    return np.array(centers, dtype=np.float64)


def _assign(lab: np.ndarray, centers: np.ndarray, step: float, spatial_weight: float) -> np.ndarray:
    height, width = lab.shape[:2]
    labels = np.full((height, width), -1, dtype=np.int64)
    best = np.full((height, width), np.inf)
    ys, xs = np.mgrid[0:height, 0:width]
    reach = int(math.ceil(step))

    for k, (l, a, b, cx, cy) in enumerate(centers):
        y0, y1 = max(0, int(cy) - reach), min(height, int(cy) + reach + 1)
        x0, x1 = max(0, int(cx) - reach), min(width, int(cx) + reach + 1)
        window = lab[y0:y1, x0:x1]
        d_lab = np.sum((window - (l, a, b)) ** 2, axis=2)
        d_xy = (xs[y0:y1, x0:x1] - cx) ** 2 + (ys[y0:y1, x0:x1] - cy) ** 2
        distance = d_lab + spatial_weight * d_xy
        closer = distance < best[y0:y1, x0:x1]
        best[y0:y1, x0:x1][closer] = distance[closer]
        labels[y0:y1, x0:x1][closer] = k

    orphans = labels < 0
    if np.any(orphans):
        # pixels outside every window fall back to the globally nearest center
        pixels = np.column_stack([lab[orphans], xs[orphans], ys[orphans]])
        d_lab = np.sum((pixels[:, None, :3] - centers[None, :, :3]) ** 2, axis=2)
        d_xy = np.sum((pixels[:, None, 3:] - centers[None, :, 3:]) ** 2, axis=2)
        labels[orphans] = np.argmin(d_lab + spatial_weight * d_xy, axis=1)
    return labels


def _update_centers(lab: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> np.ndarray:
    height, width = labels.shape
    ys, xs = np.mgrid[0:height, 0:width]
    flat = labels.ravel()
    k = len(centers)
    counts = np.bincount(flat, minlength=k)
    features = np.column_stack([lab.reshape(-1, 3), xs.ravel(), ys.ravel()])
    sums = np.zeros((k, 5))
    for column in range(5):
        sums[:, column] = np.bincount(flat, weights=features[:, column], minlength=k)
    updated = centers.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]
    return updated


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """
    Absorb every fragment that is not the largest component of its label
    into the label it shares the longest border with.
    """
    labels = labels.copy()
    while True:
        fragments = []
        for label in np.unique(labels):
            components, n_components = ndimage.label(labels == label, structure=FOUR_CONNECTED)
            if n_components < 2:
                continue
            sizes = np.bincount(components.ravel())[1:]
            keep = int(np.argmax(sizes)) + 1
            for index, sl in enumerate(ndimage.find_objects(components), start=1):
                if index != keep:
                    fragments.append((int(sizes[index - 1]), int(label), index, components, sl))
        if not fragments:
            return labels

        fragments.sort(key=lambda item: (item[0], item[1], item[2]))
        for _, label, index, components, sl in fragments:
            y0 = max(0, sl[0].start - 1)
            x0 = max(0, sl[1].start - 1)
            y1 = min(labels.shape[0], sl[0].stop + 1)
            x1 = min(labels.shape[1], sl[1].stop + 1)
            mask = components[y0:y1, x0:x1] == index
            border = ndimage.binary_dilation(mask, structure=FOUR_CONNECTED) & ~mask
            neighbours = labels[y0:y1, x0:x1][border]
            neighbours = neighbours[neighbours != label]
            if neighbours.size == 0:
                continue
            votes = np.bincount(neighbours)
            labels[y0:y1, x0:x1][mask] = int(np.argmax(votes))


def _compact_labels(labels: np.ndarray) -> Tuple[np.ndarray, int]:
    """Renumber labels 0..S-1 in row-major order of first appearance."""
    flat = labels.ravel()
    _, first_seen = np.unique(flat, return_index=True)
    order = flat[np.sort(first_seen)]
    mapping = np.zeros(flat.max() + 1, dtype=np.int64)
    mapping[order] = np.arange(len(order))
    return mapping[labels], len(order)


def slic_segment(img: LabImage, target_count: int,
                 compactness: float = DEFAULT_COMPACTNESS,
                 iterations: int = DEFAULT_ITERATIONS) -> SuperpixelMap:
    """
    Over-segment a Lab image into roughly `target_count` superpixels.

    Args:
        img: Image in CIELAB
        target_count: Requested superpixel count (realized count may differ)
        compactness: Weight of spatial proximity against color distance
        iterations: Assignment/update rounds

    Returns:
        SuperpixelMap: 4-connected labelling with its realized count
    """
    if target_count < 2:
        raise InvalidParameter(f"target_count must be at least 2, got {target_count}")
    if compactness <= 0 or iterations < 1:
        raise InvalidParameter("compactness and iterations must be positive")
    width, height = img.width, img.height
    if target_count > (width * height) / PIXELS_PER_SUPERPIXEL_MIN:
        raise TargetCountTooLarge(
            f"target_count {target_count} exceeds {width}x{height}/{PIXELS_PER_SUPERPIXEL_MIN}")

    step = math.sqrt(width * height / target_count)
    if width < step or height < step:
        raise DegenerateImage(f"{width}x{height} image is narrower than the grid step {step:.1f}")

    lab = img.data
    spatial_weight = (compactness / step) ** 2
    centers = _initial_centers(lab, target_count)
    labels = None
    for _ in range(iterations):
        labels = _assign(lab, centers, step, spatial_weight)
        centers = _update_centers(lab, labels, centers)

    labels = _enforce_connectivity(labels)
    labels, count = _compact_labels(labels)
    if count < 2:
        raise DegenerateImage("segmentation collapsed to a single superpixel")

    logger.debug(f"SLIC: target {target_count}, realized {count}, step {step:.2f}")
    return SuperpixelMap(width=width, height=height, labels=labels, count=count)


def adjacent_pairs(sp: SuperpixelMap) -> List[Tuple[int, int]]:
    """Sorted (a, b) pairs, a < b, of 4-adjacent superpixels."""
    labels = sp.labels
    pairs = np.concatenate([
        np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1),
        np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs.sort(axis=1)
    return [tuple(int(v) for v in p) for p in np.unique(pairs, axis=0)]


def build_region_tree(sp: SuperpixelMap, img: LabImage) -> RegionTree:
    """
    Agglomerative clustering over the region-adjacency graph.

    At each step the adjacent pair with the smallest Euclidean distance
    between mean Lab colors is merged; ties go to the smaller (id_a, id_b).
    Exactly S - 1 merges are performed.
    """
    s = sp.count
    flat = sp.labels.ravel()
    ys, xs = np.mgrid[0:sp.height, 0:sp.width]
    counts = np.bincount(flat, minlength=s).astype(np.float64)
    color_sums = np.column_stack([
        np.bincount(flat, weights=img.data[..., c].ravel(), minlength=s) for c in range(3)])
    position_sums = np.column_stack([
        np.bincount(flat, weights=xs.ravel(), minlength=s),
        np.bincount(flat, weights=ys.ravel(), minlength=s)])

    nodes: List[Region] = []
    sums: Dict[int, Tuple[np.ndarray, np.ndarray, float]] = {}
    for i in range(s):
        nodes.append(Region(
            id=i, members=frozenset((i,)), children=(),
            mean_lab=tuple(float(v) for v in color_sums[i] / counts[i]),
            centroid=tuple(float(v) for v in position_sums[i] / counts[i]),
            pixel_count=int(counts[i])))
        sums[i] = (color_sums[i], position_sums[i], counts[i])

    neighbours: Dict[int, set] = {i: set() for i in range(s)}
    for a, b in adjacent_pairs(sp):
        neighbours[a].add(b)
        neighbours[b].add(a)

    def color_distance(a: int, b: int) -> float:
        return float(np.linalg.norm(np.subtract(nodes[a].mean_lab, nodes[b].mean_lab)))

    candidates = {(a, b): color_distance(a, b) for a in neighbours for b in neighbours[a] if a < b}
    active = set(range(s))

    while len(active) > 1:
        if not candidates:
            # cannot happen on a tiling; merge the two smallest ids to keep 2S-1 nodes
            a, b = sorted(active)[:2]
            distance = color_distance(a, b)
        else:
            (a, b), distance = min(candidates.items(), key=lambda item: (item[1], item[0]))

        new_id = len(nodes)
        color_a, pos_a, count_a = sums[a]
        color_b, pos_b, count_b = sums[b]
        color, position, count = color_a + color_b, pos_a + pos_b, count_a + count_b
        sums[new_id] = (color, position, count)
        nodes.append(Region(
            id=new_id, members=nodes[a].members | nodes[b].members, children=(a, b),
            mean_lab=tuple(float(v) for v in color / count),
            centroid=tuple(float(v) for v in position / count),
            pixel_count=int(count), merge_distance=distance))

        merged_neighbours = (neighbours.pop(a) | neighbours.pop(b)) - {a, b}
        active -= {a, b}
        candidates = {pair: d for pair, d in candidates.items() if a not in pair and b not in pair}
        for n in merged_neighbours:
            neighbours[n] -= {a, b}
            neighbours[n].add(new_id)
            candidates[(n, new_id)] = color_distance(n, new_id)
        neighbours[new_id] = merged_neighbours
        active.add(new_id)

    logger.debug(f"Region tree: {s} leaves, {len(nodes)} nodes")
    return RegionTree(nodes=tuple(nodes), leaf_count=s)
