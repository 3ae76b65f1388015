import numpy as np
import pytest

from src.core.config import Config
from src.core.encoding import VladCode, train_codebook, vlad_distance
from src.core.errors import (
    EmptyFeatureSet, EmptyLibrary, EmptyScene, InconsistentRankings,
)
from src.core.features import FeatureSet, Keypoint, LandmarkRegion, detect_and_describe
from src.core.imagecore import Image, to_grayscale
from src.core.mining import (
    BoundingBox, LandmarkLibrary, LibraryRanking, ParsedScene, SceneDescriptor, SceneLandmark,
    describe_scene, estimate_bbox, parse_scene, rank_library, reverse_rank_scores,
    select_library_images, trimmed_range,
)


def _features(points, descriptors=None, seed=0) -> FeatureSet:
    keypoints = tuple(Keypoint(float(x), float(y), 1.6, 0.0) for x, y in points)
    if descriptors is None:
        descriptors = np.random.default_rng(seed).random((len(points), 8))
    return FeatureSet(keypoints, np.asarray(descriptors, dtype=float))


def _scene(image_id, codes, features=None, size=(100, 100)) -> ParsedScene:
    landmarks = tuple(
        SceneLandmark(LandmarkRegion(i, 1.0, (0,)), VladCode(np.asarray(code, dtype=float)))
        for i, code in enumerate(codes))
    if features is None:
        features = _features([(10, 10), (40, 60), (80, 20)], seed=len(image_id))
    return ParsedScene(image_id, size[0], size[1], landmarks, features)


def _ranking(library_ids, ranks) -> LibraryRanking:
    ranks = np.asarray(ranks, dtype=np.int64)
    order = np.argsort(ranks)
    return LibraryRanking(tuple(library_ids), order, ranks, np.zeros(len(ranks)))


def _random_codes(rng, n, dim=8):
    codes = rng.standard_normal((n, dim))
    return codes / np.linalg.norm(codes, axis=1, keepdims=True)


class TestRankLibrary:
    def test_single_image(self):
        ranking = rank_library(VladCode(np.array([1.0, 0.0])), [_scene('a', [[0.0, 1.0]])])
        assert ranking.ranks.tolist() == [1]

    def test_exact_match_ranks_first(self):
        library = [_scene('a', [[1.0, 0.0]]), _scene('b', [[0.6, 0.8], [0.0, 1.0]])]
        ranking = rank_library(VladCode(np.array([0.0, 1.0])), library)
        assert ranking.ranks.tolist() == [2, 1]
        assert ranking.distances[1] == pytest.approx(0.0, abs=1e-6)

    def test_sorted_by_best_distance(self):
        library = [_scene('a', [[0.5, 0.0]]), _scene('b', [[0.2, 0.0]]), _scene('c', [[0.9, 0.0]])]
        ranking = rank_library(VladCode(np.array([0.0, 0.0])), library)
        assert ranking.distances == pytest.approx([0.5, 0.2, 0.9])
        assert ranking.ranks.tolist() == [2, 1, 3]
        assert ranking.order.tolist() == [1, 0, 2]

    def test_image_without_landmarks_is_last(self):
        library = [_scene('a', []), _scene('b', [[1.0, 0.0]])]
        ranking = rank_library(VladCode(np.array([0.0, 1.0])), library)
        assert np.isinf(ranking.distances[0])
        assert ranking.ranks.tolist() == [2, 1]

    def test_empty_library(self):
        with pytest.raises(EmptyLibrary):
            rank_library(VladCode(np.zeros(2)), [])

    def test_distances_agree_with_vlad_distance(self):
        rng = np.random.default_rng(21)
        scenes = [_scene(f'lib_{i}', _random_codes(rng, 3, dim=64)) for i in range(5)]
        library = LandmarkLibrary(scenes)
        for position, scene in enumerate(scenes):
            for landmark in scene.landmarks:
                row = library.image_distances(landmark.code.values)[0]
                expected = [min(vlad_distance(landmark.code, other.code) for other in s.landmarks)
                            for s in scenes]
                assert row.tolist() == pytest.approx(expected, abs=1e-12)
                assert row[position] == 0.0


class TestReverseRankScores:
    def test_direct_formula(self):
        ids = ['a', 'b', 'c', 'd']
        rankings = [_ranking(ids, [1, 2, 3, 4]), _ranking(ids, [2, 1, 3, 4]), _ranking(ids, [4, 1, 2, 3])]
        assert reverse_rank_scores(rankings)['a'] == 1.75

    def test_first_everywhere_scores_k(self):
        ids = ['a', 'b']
        scores = reverse_rank_scores([_ranking(ids, [1, 2])] * 5)
        assert scores == {'a': 5.0, 'b': 2.5}

    def test_single_ranking_is_reciprocal_rank(self):
        ids = ['a', 'b', 'c']
        assert reverse_rank_scores([_ranking(ids, [3, 1, 2])]) == {'a': 1 / 3, 'b': 1.0, 'c': 0.5}

    def test_different_libraries_rejected(self):
        with pytest.raises(InconsistentRankings):
            reverse_rank_scores([_ranking(['a', 'b'], [1, 2]), _ranking(['a', 'c'], [1, 2])])

    def test_not_a_permutation_rejected(self):
        with pytest.raises(InconsistentRankings):
            reverse_rank_scores([_ranking(['a', 'b'], [1, 1])])

    @pytest.mark.parametrize('seed', range(50))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n_library = int(rng.integers(1, 101))
        ids = [f'lib_{i:03d}' for i in range(n_library)]
        rankings = [_ranking(ids, rng.permutation(n_library) + 1)
                    for _ in range(int(rng.integers(1, 41)))]

        expected = {}
        for j, library_id in enumerate(ids):
            total = 0.0
            for ranking in rankings:
                total += 1.0 / int(ranking.ranks[j])
            expected[library_id] = total
        scores = reverse_rank_scores(rankings)
        assert scores == expected
        assert all(0 < score <= len(rankings) for score in scores.values())


class TestSelectLibraryImages:
    def test_top_l(self):
        assert select_library_images({'a': 2.0, 'b': 1.0, 'c': 0.5}, 2) == ['a', 'b']

    def test_full_library(self):
        assert select_library_images({'a': 0.5, 'b': 1.0, 'c': 2.0}, 3) == ['c', 'b', 'a']

    def test_ties_by_id(self):
        assert select_library_images({'c': 1.0, 'a': 1.0, 'b': 1.0}, 3) == ['a', 'b', 'c']

    def test_shortfall(self):
        assert select_library_images({'a': 1.0}, 5) == ['a']


class TestEstimateBbox:
    def test_identity_matching(self):
        points = [(10, 10), (20, 40), (30, 5), (50, 50)]
        fs = _features(points, descriptors=np.eye(4))
        assert estimate_bbox(fs, fs, (100, 100)) == BoundingBox(10, 5, 50, 50)

    def test_trim_rule(self):
        assert trimmed_range([0, 1, 2, 3, 4, 5, 6, 7, 8, 100]) == (1, 8)
        assert trimmed_range([7, 3, 5]) == (3, 7)

    def test_single_match_is_degenerate(self):
        f_l = _features([(12, 34)], descriptors=[[1.0, 0.0]])
        f_q = _features([(0, 0), (5, 5), (9, 9)], descriptors=[[1.0, 0.1], [0.9, 0.0], [0.5, 0.5]])
        assert estimate_bbox(f_q, f_l, (64, 64)) == BoundingBox(12, 34, 12, 34)

    def test_clamped_to_image(self):
        fs = _features([(-3, 2), (70, 90)], descriptors=np.eye(2))
        assert estimate_bbox(fs, fs, (64, 80)) == BoundingBox(0, 2, 63, 79)

    def test_empty_features(self):
        with pytest.raises(EmptyFeatureSet):
            estimate_bbox(FeatureSet(), _features([(1, 1)]), (10, 10))

    @pytest.mark.parametrize('seed', range(200))
    def test_matches_sort_and_slice(self, seed):
        rng = np.random.default_rng(1000 + seed)
        f_q = _features(rng.uniform(0, 999, (int(rng.integers(1, 40)), 2)), seed=seed)
        f_l = _features(rng.uniform(0, 999, (int(rng.integers(1, 40)), 2)), seed=seed + 5000)

        nearest = [int(np.argmin(np.linalg.norm(f_l.descriptors - d, axis=1))) for d in f_q.descriptors]
        xs = sorted(f_l.xy[i, 0] for i in nearest)
        ys = sorted(f_l.xy[i, 1] for i in nearest)
        drop = len(nearest) // 10
        xs, ys = xs[drop:len(xs) - drop], ys[drop:len(ys) - drop]

        bbox = estimate_bbox(f_q, f_l, (1000, 1000))
        assert bbox == BoundingBox(xs[0], ys[0], xs[-1], ys[-1])
        untrimmed = BoundingBox(min(f_l.xy[nearest, 0]), min(f_l.xy[nearest, 1]),
                                max(f_l.xy[nearest, 0]), max(f_l.xy[nearest, 1]))
        assert untrimmed.contains(bbox)

        order = rng.permutation(len(f_q))
        permuted = FeatureSet(tuple(f_q.keypoints[i] for i in order), f_q.descriptors[order])
        assert estimate_bbox(permuted, f_l, (1000, 1000)) == bbox


class TestDescribeScene:
    def test_library_of_one(self):
        library = [_scene('lib_a', [[1.0, 0.0]])]
        descriptor = describe_scene(_scene('q', [[0.0, 1.0]]), library, 1)
        assert descriptor.library_ids == ['lib_a']

    def test_identical_image_comes_first(self):
        rng = np.random.default_rng(3)
        library = [_scene(f'lib_{i}', _random_codes(rng, 4)) for i in range(5)]
        query = _scene('q', [lm.code.values for lm in library[2].landmarks], library[2].features)
        descriptor = describe_scene(query, library, 3)

        assert descriptor.library_ids[0] == 'lib_2'
        assert descriptor.entries[0].score == 4.0
        assert [e.score for e in descriptor.entries] == sorted(
            (e.score for e in descriptor.entries), reverse=True)

    def test_twenty_distinct_entries(self):
        rng = np.random.default_rng(4)
        library = LandmarkLibrary([_scene(f'lib_{i:03d}', _random_codes(rng, 2)) for i in range(100)])
        descriptor = describe_scene(_scene('q', _random_codes(rng, 6)), library, 20)
        assert len(descriptor.entries) == 20
        assert len(set(descriptor.library_ids)) == 20
        for entry in descriptor.entries:
            assert BoundingBox(0, 0, 99, 99).contains(entry.bbox)

    def test_library_image_without_features_gets_full_frame(self):
        library = [_scene('lib_a', [[1.0, 0.0]], features=FeatureSet(), size=(64, 48))]
        descriptor = describe_scene(_scene('q', [[1.0, 0.0]]), library, 1)
        assert descriptor.entries[0].bbox == BoundingBox(0, 0, 63, 47)

    def test_no_landmarks(self):
        with pytest.raises(EmptyScene):
            describe_scene(_scene('q', []), [_scene('lib_a', [[1.0]])], 1)

    def test_descriptor_dict_round_trip(self):
        rng = np.random.default_rng(5)
        library = [_scene(f'lib_{i}', _random_codes(rng, 2)) for i in range(4)]
        descriptor = describe_scene(_scene('q', _random_codes(rng, 3)), library, 3)
        assert SceneDescriptor.from_dict(descriptor.to_dict()) == descriptor
        assert descriptor.truncated(2).entries == descriptor.entries[:2]


class TestParseScene:
    def test_constant_image_is_empty(self):
        image = Image.from_array(np.full((64, 64, 3), 77, dtype=np.uint8))
        codebook = train_codebook(np.random.default_rng(0).random((10, 128)), k=2)
        with pytest.raises(EmptyScene):
            parse_scene(image, Config(R=16, K=8), codebook, 'flat')

    def test_landmarks_are_unit_codes_and_deterministic(self, textured_image):
        cfg = Config(R=16, K=8, codebook_k=4)
        features = detect_and_describe(to_grayscale(textured_image))
        codebook = train_codebook(features.descriptors, k=4, seed=0)

        first = parse_scene(textured_image, cfg, codebook, 'img')
        second = parse_scene(textured_image, cfg, codebook, 'img')

        assert 1 <= len(first.landmarks) <= 8
        for landmark in first.landmarks:
            assert np.linalg.norm(landmark.code.values) == pytest.approx(1.0, abs=1e-6)
            assert len(landmark.region.member_keypoint_indices) >= cfg.min_keypoints
        assert [lm.region for lm in first.landmarks] == [lm.region for lm in second.landmarks]
        for a, b in zip(first.landmarks, second.landmarks):
            assert np.array_equal(a.code.values, b.code.values)

    def test_precomputed_features_are_used(self, textured_image):
        cfg = Config(R=16, K=8, codebook_k=4)
        features = detect_and_describe(to_grayscale(textured_image))
        codebook = train_codebook(features.descriptors, k=4, seed=0)
        parsed = parse_scene(textured_image, cfg, codebook, 'img', features=features)
        assert parsed.features is features
        assert (parsed.width, parsed.height) == (64, 64)
