import csv
import json
import shutil

import numpy as np
import pytest

from src.core import pipeline
from src.core.config import Config
from src.core.encoding import train_codebook
from src.core.errors import (
    EmptyInput, InvalidConfig, MissingDataset, MissingGroundTruth, RankOutOfBounds, RelevantNotInDatabase,
)
from src.core.evalharness import (
    REPORT_COLUMNS, DatasetPaths, ExperimentConfig, ExperimentReport, GroundTruth, ReportRow, anr,
    bb_gain, global_vlad_baseline, library_usage, load_ground_truth, rank_of_ground_truth,
    run_benchmark, run_experiment, shuffled_baseline, write_ground_truth,
)
from src.core.features import FeatureSet, Keypoint
from src.core.mining import BoundingBox, DescriptorEntry, LandmarkLibrary, SceneDescriptor
from src.core.retrieval import RankedImage, RetrievalResult, build_inverted_file, query


def _result(ids) -> RetrievalResult:
    return RetrievalResult(tuple(RankedImage(i) for i in ids))


def _row(L, use_bb, value, method='ip') -> ReportRow:
    return ReportRow(method=method, L=L, use_bb=use_bb, overlap_mode='iou', anr_percent=value,
                     per_query_ranks={}, n_queries=1, db_size=10, seed=0, wall_ms=0.0)


class TestAnr:
    def test_single_query(self):
        assert anr([5], 100) == 5.0

    def test_two_queries(self):
        assert anr([1, 3], 10) == 20.0

    def test_all_first(self):
        assert anr([1, 1, 1], 50) == 2.0

    def test_bounds(self):
        with pytest.raises(EmptyInput):
            anr([], 10)
        with pytest.raises(RankOutOfBounds):
            anr([11], 10)
        with pytest.raises(RankOutOfBounds):
            anr([0], 10)

    def test_random_rankings_near_half(self):
        n = 100
        database_ids = [f'db_{i:03d}' for i in range(n)]
        query_ids = [f'q_{i:03d}' for i in range(200)]
        rng = np.random.default_rng(0)
        relevant = {q: {database_ids[int(rng.integers(n))]} for q in query_ids}
        results = shuffled_baseline(query_ids, database_ids, seed=1)

        ranks = [rank_of_ground_truth(results[q], relevant[q]) for q in query_ids]
        assert anr(ranks, n) == pytest.approx(50 + 50 / n, abs=5)


class TestRankOfGroundTruth:
    def test_lookup(self):
        assert rank_of_ground_truth(_result(['a', 'b', 'c', 'd']), {'d'}) == 4

    def test_best_relevant(self):
        ids = ['x1', 'd2', 'x3', 'x4', 'x5', 'x6', 'd1']
        assert rank_of_ground_truth(_result(ids), {'d1', 'd2'}) == 2

    def test_missing(self):
        with pytest.raises(RelevantNotInDatabase):
            rank_of_ground_truth(_result(['a']), {'b'})


class TestBaselines:
    def _features(self, rng, n=12):
        descriptors = rng.random((n, 6))
        keypoints = tuple(Keypoint(float(i), float(i), 1.6, 0.0) for i in range(n))
        return FeatureSet(keypoints, descriptors)

    def test_vlad_self_match(self):
        rng = np.random.default_rng(2)
        database = {f'db_{i}': self._features(rng) for i in range(6)}
        codebook = train_codebook(np.concatenate([fs.descriptors for fs in database.values()]), k=3)
        results = global_vlad_baseline({'q': database['db_4']}, database, codebook)

        ranked = results['q'].ranked
        assert ranked[0].db_id == 'db_4'
        assert ranked[0].distance == pytest.approx(0.0, abs=1e-9)
        distances = [item.distance for item in ranked]
        assert distances == sorted(distances)

    def test_shuffled_is_seeded_permutation(self):
        database_ids = [f'db_{i}' for i in range(20)]
        first = shuffled_baseline(['q1', 'q2'], database_ids, seed=4)
        second = shuffled_baseline(['q1', 'q2'], database_ids, seed=4)
        assert first == second
        assert sorted(first['q1'].ids) == sorted(database_ids)


class TestGroundTruth:
    def test_round_trip(self, tmp_path):
        truth = GroundTruth({'q_0': frozenset({'db_1'}), 'q_1': frozenset({'db_2', 'db_3'})})
        path = str(tmp_path / 'gt.csv')
        write_ground_truth(path, truth)
        assert load_ground_truth(path) == truth

    def test_header_required(self, tmp_path):
        path = tmp_path / 'gt.csv'
        path.write_text('q_0,db_1\n')
        with pytest.raises(MissingGroundTruth):
            load_ground_truth(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingGroundTruth):
            load_ground_truth(str(tmp_path / 'absent.csv'))


def test_library_usage_counts_bands():
    box = BoundingBox(0, 0, 1, 1)
    descriptors = [
        SceneDescriptor('a', tuple(DescriptorEntry(f'lib_{i:02d}', box) for i in range(12))),
        SceneDescriptor('b', tuple(DescriptorEntry(f'lib_{i:02d}', box) for i in (0, 1))),
    ]
    usage = library_usage(descriptors)
    assert usage.per_library['lib_00'] == 2
    assert usage.distinct_used == 12
    assert usage.total_uses == 14
    assert usage.per_band == {'rank:1-10': 12, 'rank:11-20': 2}
    assert usage.top10_share == pytest.approx(12 / 14)


def test_bb_gain_per_l():
    report = ExperimentReport(rows=[
        _row(10, True, 12.0), _row(10, False, 15.0), _row(20, True, 9.0), _row(None, None, 40.0, 'vlad'),
    ])
    assert bb_gain(report) == {10: 3.0}


class TestRunExperiment:
    def _config(self, dataset, cfg, **kwargs):
        return ExperimentConfig(
            library_dir=str(dataset / 'library'), database_dir=str(dataset / 'database'),
            query_dir=str(dataset / 'query'), ground_truth_path=str(dataset / 'ground_truth.csv'),
            config=cfg, **kwargs)

    def test_rows_and_reports(self, tiny_dataset, tiny_config, tmp_path):
        report = run_experiment(self._config(tiny_dataset, tiny_config, ls=(1, 2), bb_settings=(True, False)))

        methods = [(row.method, row.L, row.use_bb) for row in report.rows]
        assert methods == [('ip', 1, True), ('ip', 1, False), ('ip', 2, True), ('ip', 2, False),
                           ('vlad', None, None), ('shuffled', None, None)]
        for row in report.rows:
            assert row.n_queries == 2 and row.db_size == 4
            assert 100 / 4 <= row.anr_percent <= 100
            assert all(1 <= rank <= 4 for rank in row.per_query_ranks.values())
        assert set(report.bb_gain()) == {1, 2}

        csv_path, json_path = tmp_path / 'report.csv', tmp_path / 'report.json'
        report.write_csv(str(csv_path))
        report.write_json(str(json_path))
        with open(csv_path, newline='') as file:
            rows = list(csv.reader(file))
        assert tuple(rows[0]) == REPORT_COLUMNS
        assert len(rows) == 7
        payload = json.loads(json_path.read_text())
        assert payload['note'].startswith('ANR')
        assert payload['library_usage']['total_uses'] > 0

    def test_reruns_are_identical(self, tiny_dataset, tiny_config):
        exp = self._config(tiny_dataset, tiny_config, ls=(2,), include_baselines=False)
        first, second = run_experiment(exp), run_experiment(exp)
        assert [(r.anr_percent, r.per_query_ranks) for r in first.rows] == \
               [(r.anr_percent, r.per_query_ranks) for r in second.rows]

    def test_database_image_retrieves_itself(self, tiny_dataset, tiny_config):
        cfg = tiny_config
        library_images = pipeline.load_image_set(str(tiny_dataset / 'library'), cfg)
        database_images = pipeline.load_image_set(str(tiny_dataset / 'database'), cfg)
        codebook = pipeline.train_library_codebook(
            pipeline.extract_features(library_images, cfg), cfg)
        library = LandmarkLibrary(pipeline.parse_image_set(library_images, cfg, codebook))
        scenes = pipeline.parse_image_set(database_images, cfg, codebook)
        descriptors = pipeline.describe_image_set(scenes, library, cfg.L, cfg)
        again = pipeline.describe_image_set(scenes, library, cfg.L, cfg)
        assert again == descriptors

        index = build_inverted_file(descriptors, library.library_ids)
        for descriptor in descriptors:
            result = query(index, descriptor)
            own = result.scores()[descriptor.image_id]
            # nothing outscores the image's own descriptor
            assert own == result.scores()[result.ids[0]]
            assert own[0] == len(descriptor.entries)

    def test_missing_directory(self, tmp_path, tiny_config):
        exp = ExperimentConfig(str(tmp_path / 'nope'), str(tmp_path), str(tmp_path),
                               str(tmp_path / 'gt.csv'), config=tiny_config)
        with pytest.raises(MissingDataset):
            run_experiment(exp)


def _experiment(dataset, cfg, **kwargs) -> ExperimentConfig:
    return ExperimentConfig(
        library_dir=str(dataset / 'library'), database_dir=str(dataset / 'database'),
        query_dir=str(dataset / 'query'), ground_truth_path=str(dataset / 'ground_truth.csv'),
        config=cfg, **kwargs)


class TestRunBenchmark:
    def test_one_block_per_dataset(self, tiny_dataset, tiny_config, tmp_path):
        second = tmp_path / 'second'
        shutil.copytree(tiny_dataset, second)
        exp = _experiment(tiny_dataset, tiny_config, ls=(2,), include_baselines=False, name='first',
                          datasets=(DatasetPaths.from_root(str(second)),))
        report = run_benchmark(exp)

        assert list(report.blocks) == ['first', 'second']
        first, copy = report.blocks['first'], report.blocks['second']
        assert [(r.L, r.anr_percent, r.per_query_ranks) for r in first.rows] == \
               [(r.L, r.anr_percent, r.per_query_ranks) for r in copy.rows]

        csv_path, json_path = tmp_path / 'report.csv', tmp_path / 'report.json'
        report.write_csv(str(csv_path))
        report.write_json(str(json_path))
        with open(csv_path, newline='') as file:
            rows = list(csv.reader(file))
        assert tuple(rows[0]) == ('dataset',) + REPORT_COLUMNS
        assert [row[0] for row in rows[1:]] == ['first', 'second']
        payload = json.loads(json_path.read_text())
        assert payload['datasets'] == ['first', 'second']
        assert set(payload['blocks']) == {'first', 'second'}

    def test_dataset_paths_from_root(self, tmp_path):
        paths = DatasetPaths.from_root(str(tmp_path / 'campus'))
        assert paths.name == 'campus'
        assert paths.query_dir == str(tmp_path / 'campus' / 'query')
        assert paths.ground_truth_path == str(tmp_path / 'campus' / 'ground_truth.csv')

    def test_repeated_names_are_rejected(self, tiny_dataset, tiny_config):
        exp = _experiment(tiny_dataset, tiny_config, name='dup',
                          datasets=(DatasetPaths.from_root(str(tiny_dataset), name='dup'),))
        with pytest.raises(InvalidConfig):
            run_benchmark(exp)


@pytest.mark.slow
class TestSyntheticBenchmark:
    def test_ip_beats_chance_and_boxes_do_not_hurt(self, benchmark_dataset):
        report = run_experiment(_experiment(
            benchmark_dataset, Config(), ls=(20, 30, 40), bb_settings=(True, False)))
        anrs = {(row.method, row.L, row.use_bb): row.anr_percent for row in report.rows}

        assert anrs[('ip', 20, True)] <= 15.0
        assert anrs[('ip', 20, True)] < anrs[('shuffled', None, None)]
        for L in (20, 30, 40):
            assert anrs[('ip', L, True)] <= anrs[('ip', L, False)] + 1.0

    def test_every_database_image_retrieves_itself_first(self, benchmark_dataset):
        cfg = Config()
        library_images = pipeline.load_image_set(str(benchmark_dataset / 'library'), cfg)
        database_images = pipeline.load_image_set(str(benchmark_dataset / 'database'), cfg)
        codebook = pipeline.train_library_codebook(pipeline.extract_features(library_images, cfg), cfg)
        library = LandmarkLibrary(pipeline.parse_image_set(library_images, cfg, codebook))
        descriptors = pipeline.describe_image_set(
            pipeline.parse_image_set(database_images, cfg, codebook), library, cfg.L, cfg)
        index = build_inverted_file(descriptors, library.library_ids)
        assert len(index.database_ids) == 100

        for use_bb in (True, False):
            ranks = [rank_of_ground_truth(query(index, d, use_bb, cfg.overlap_mode), {d.image_id})
                     for d in descriptors]
            assert ranks == [1] * 100
            assert anr(ranks, 100) == 1.0
