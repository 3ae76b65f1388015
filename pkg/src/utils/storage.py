"""
Storage Module

JSON, JSON-lines and npz persistence of pipeline artifacts.
"""

import json
import os
from typing import Iterable, List

import numpy as np

from src.core.encoding import VladCode
from src.core.features import DESCRIPTOR_DIM, FeatureSet, Keypoint, LandmarkRegion
from src.core.mining import ParsedScene, SceneDescriptor, SceneLandmark


def write_json(path: str, data):
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(data, file, indent=2, sort_keys=True)
        file.write('\n')


def read_json(path: str):
    with open(path, 'r', encoding='utf-8') as file:
        return json.load(file)


def write_descriptors(path: str, descriptors: Iterable[SceneDescriptor]):
    """One JSON object per line, entry order preserved."""
    with open(path, 'w', encoding='utf-8') as file:
        for descriptor in descriptors:
            file.write(json.dumps(descriptor.to_dict()) + '\n')


def read_descriptors(path: str) -> List[SceneDescriptor]:
    with open(path, 'r', encoding='utf-8') as file:
        return [SceneDescriptor.from_dict(json.loads(line)) for line in file if line.strip()]


def save_parsed_scene(directory: str, scene: ParsedScene) -> str:
    """Write a ParsedScene to <directory>/<image_id>.npz."""
    features = scene.features
    keypoints = np.array([(kp.x, kp.y, kp.scale, kp.orientation) for kp in features.keypoints],
                         dtype=np.float64).reshape(-1, 4)
    members = [np.asarray(lm.region.member_keypoint_indices, dtype=np.int64) for lm in scene.landmarks]
    offsets = np.cumsum([0] + [len(m) for m in members])
    codes = (np.stack([lm.code.values for lm in scene.landmarks])
             if scene.landmarks else np.zeros((0, 0)))

    path = os.path.join(directory, f'{scene.image_id}.npz')
    np.savez_compressed(
        path,
        image_id=np.array(scene.image_id),
        size=np.array([scene.width, scene.height], dtype=np.int64),
        keypoints=keypoints,
        descriptors=features.descriptors.reshape(-1, DESCRIPTOR_DIM),
        region_ids=np.array([lm.region.region_id for lm in scene.landmarks], dtype=np.int64),
        saliency=np.array([lm.region.saliency for lm in scene.landmarks], dtype=np.float64),
        members=np.concatenate(members) if members else np.zeros(0, dtype=np.int64),
        member_offsets=offsets.astype(np.int64),
        codes=codes,
    )
    return path


def load_parsed_scene(path: str) -> ParsedScene:
    with np.load(path, allow_pickle=False) as data:
        keypoints = tuple(Keypoint(*(float(v) for v in row)) for row in data['keypoints'])
        features = FeatureSet(keypoints=keypoints, descriptors=data['descriptors'].copy())
        offsets = data['member_offsets']
        landmarks = tuple(
            SceneLandmark(
                LandmarkRegion(region_id=int(region_id), saliency=float(saliency),
                               member_keypoint_indices=tuple(
                                   int(v) for v in data['members'][offsets[i]:offsets[i + 1]])),
                VladCode(data['codes'][i].copy()))
            for i, (region_id, saliency) in enumerate(zip(data['region_ids'], data['saliency']))
        )
        width, height = (int(v) for v in data['size'])
        return ParsedScene(image_id=str(data['image_id']), width=width, height=height,
                           landmarks=landmarks, features=features)


def load_parsed_scenes(directory: str) -> List[ParsedScene]:
    """All scenes of a directory, sorted by image id."""
    names = sorted(name for name in os.listdir(directory) if name.endswith('.npz'))
    return [load_parsed_scene(os.path.join(directory, name)) for name in names]
