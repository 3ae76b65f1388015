"""
Evaluation Harness Module

Averaged normalized rank (ANR), baselines, library usage analysis and the
experiment runner behind the `eval` and `sweep` commands.

ANR is reported as a percentage with rank normalized as rank / N, where N is
the database size; lower is better and 100/N is the best achievable value.
"""

import csv
import json
import os
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from src.core import pipeline
from src.core.config import Config
from src.core.encoding import Codebook, vlad_encode
from src.core.errors import (
    EmptyInput, RankOutOfBounds, RelevantNotInDatabase, MissingDataset, MissingGroundTruth,
    InvalidConfig,
)
from src.core.features import FeatureSet
from src.core.logger import PlaceLogger
from src.core.mining import LandmarkLibrary, SceneDescriptor
from src.core.retrieval import (
    OverlapMode, RankedImage, RetrievalResult, build_inverted_file, query,
)
from src.utils.artifact_paths import GROUND_TRUTH_FILE, dataset_dirs

ANR_NOTE = 'ANR = 100 * mean(rank / N); N = database size; rank 1 is best'
REPORT_COLUMNS = ('method', 'L', 'use_bb', 'overlap_mode', 'anr_percent',
                  'n_queries', 'db_size', 'seed', 'wall_ms')
BAND_WIDTH = 10

logger = PlaceLogger('evalharness')


@dataclass(frozen=True)
class GroundTruth:
    """Relevant database image ids per query image id."""
    relevant: Dict[str, FrozenSet[str]]

    def __post_init__(self):
        for query_id, ids in self.relevant.items():
            if not ids:
                raise MissingGroundTruth(f"query {query_id} has no relevant database image")

    @property
    def query_ids(self) -> List[str]:
        return sorted(self.relevant)

    def __len__(self) -> int:
        return len(self.relevant)


def load_ground_truth(path: str) -> GroundTruth:
    """Read a `query_id,relevant_db_id` CSV (header row required)."""
    if not path or not os.path.isfile(path):
        raise MissingGroundTruth(f"ground truth file not found: {path}")
    relevant: Dict[str, set] = {}
    with open(path, 'r', encoding='utf-8', newline='') as file:
        reader = csv.DictReader(file)
        if reader.fieldnames is None or not {'query_id', 'relevant_db_id'} <= set(reader.fieldnames):
            raise MissingGroundTruth(f"{path} must have a 'query_id,relevant_db_id' header")
        for row in reader:
            relevant.setdefault(row['query_id'].strip(), set()).add(row['relevant_db_id'].strip())
    if not relevant:
        raise MissingGroundTruth(f"{path} holds no ground truth pairs")
    return GroundTruth({query_id: frozenset(ids) for query_id, ids in relevant.items()})


def write_ground_truth(path: str, ground_truth: GroundTruth):
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(['query_id', 'relevant_db_id'])
        for query_id in ground_truth.query_ids:
            for db_id in sorted(ground_truth.relevant[query_id]):
                writer.writerow([query_id, db_id])


def anr(per_query_rank: Sequence[int], database_size: int) -> float:
    """Averaged normalized rank in percent."""
    ranks = list(per_query_rank)
    if not ranks:
        raise EmptyInput("ANR needs at least one query rank")
    if database_size < 1:
        raise RankOutOfBounds(f"database size must be positive, got {database_size}")
    for rank in ranks:
        if not 1 <= rank <= database_size:
            raise RankOutOfBounds(f"rank {rank} outside [1, {database_size}]")
    return 100.0 * sum(ranks) / (len(ranks) * database_size)


def rank_of_ground_truth(result: RetrievalResult, relevant: Iterable[str]) -> int:
    """Best 1-based position of any relevant image in a ranking."""
    positions = {db_id: position for position, db_id in enumerate(result.ids, start=1)}
    relevant = set(relevant)
    if not relevant:
        raise EmptyInput("no relevant ids given")
    missing = sorted(relevant - positions.keys())
    if missing:
        raise RelevantNotInDatabase(f"relevant images not in database: {', '.join(missing)}")
    return min(positions[db_id] for db_id in relevant)


def global_vlad_baseline(query_features: Mapping[str, FeatureSet],
                         database_features: Mapping[str, FeatureSet],
                         cb: Codebook) -> Dict[str, RetrievalResult]:
    """Rank the database by distance between whole-image VLAD codes."""
    database_ids = sorted(database_features)
    database_codes = np.stack([vlad_encode(database_features[i].descriptors, cb).values
                               for i in database_ids])
    results = {}
    for query_id, fs in sorted(query_features.items()):
        code = vlad_encode(fs.descriptors, cb).values
        distances = cdist(code[None, :], database_codes)[0]
        order = sorted(range(len(database_ids)), key=lambda j: (distances[j], database_ids[j]))
        results[query_id] = RetrievalResult(tuple(
            RankedImage(database_ids[j], distance=float(distances[j])) for j in order))
    return results


def shuffled_baseline(query_ids: Sequence[str], database_ids: Sequence[str],
                      seed: int) -> Dict[str, RetrievalResult]:
    """Chance-level control: an independent seeded permutation per query."""
    rng = np.random.default_rng(seed)
    ordered = sorted(database_ids)
    results = {}
    for query_id in sorted(query_ids):
        permutation = rng.permutation(len(ordered))
        results[query_id] = RetrievalResult(tuple(RankedImage(ordered[j]) for j in permutation))
    return results


@dataclass(frozen=True)
class UsageSummary:
    """How often each library image and each selection-rank band is used."""
    per_library: Dict[str, int]
    per_band: Dict[str, int]
    distinct_used: int
    total_uses: int
    top10_share: float

    def to_dict(self) -> dict:
        return {
            'per_library': self.per_library,
            'per_band': self.per_band,
            'distinct_used': self.distinct_used,
            'total_uses': self.total_uses,
            'top10_share': self.top10_share,
        }


def _band_label(position: int) -> str:
    band = (position - 1) // BAND_WIDTH
    return f'rank:{band * BAND_WIDTH + 1}-{(band + 1) * BAND_WIDTH}'


def library_usage(descriptors: Iterable[SceneDescriptor]) -> UsageSummary:
    per_library: Counter = Counter()
    per_band: Counter = Counter()
    for descriptor in descriptors:
        for position, entry in enumerate(descriptor.entries, start=1):
            per_library[entry.library_id] += 1
            per_band[(position - 1) // BAND_WIDTH] += 1

    total = sum(per_library.values())
    top10 = sum(count for _, count in sorted(per_library.items(), key=lambda kv: (-kv[1], kv[0]))[:10])
    return UsageSummary(
        per_library=dict(sorted(per_library.items())),
        per_band={_band_label(band * BAND_WIDTH + 1): per_band[band] for band in sorted(per_band)},
        distinct_used=len(per_library),
        total_uses=total,
        top10_share=top10 / total if total else 0.0,
    )


@dataclass(frozen=True)
class ReportRow:
    method: str
    L: Optional[int]
    use_bb: Optional[bool]
    overlap_mode: Optional[str]
    anr_percent: float
    per_query_ranks: Dict[str, int]
    n_queries: int
    db_size: int
    seed: int
    wall_ms: float

    def csv_row(self) -> List:
        return [self.method,
                '' if self.L is None else self.L,
                '' if self.use_bb is None else str(self.use_bb).lower(),
                self.overlap_mode or '',
                f'{self.anr_percent:.6f}',
                self.n_queries, self.db_size, self.seed,
                f'{self.wall_ms:.1f}']

    def to_dict(self) -> dict:
        return {
            'method': self.method, 'L': self.L, 'use_bb': self.use_bb,
            'overlap_mode': self.overlap_mode, 'anr_percent': self.anr_percent,
            'per_query_ranks': self.per_query_ranks, 'n_queries': self.n_queries,
            'db_size': self.db_size, 'seed': self.seed, 'wall_ms': self.wall_ms,
        }


@dataclass
class ExperimentReport:
    rows: List[ReportRow] = field(default_factory=list)
    config: Dict = field(default_factory=dict)
    usage: Optional[UsageSummary] = None

    def bb_gain(self) -> Dict[int, float]:
        return bb_gain(self)

    def write_csv(self, path: str):
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows:
                writer.writerow(row.csv_row())

    def to_dict(self) -> dict:
        return {
            'note': ANR_NOTE,
            'config': self.config,
            'rows': [row.to_dict() for row in self.rows],
            'bb_gain': {str(L): gain for L, gain in self.bb_gain().items()},
            'library_usage': self.usage.to_dict() if self.usage else None,
        }

    def write_json(self, path: str):
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)
            file.write('\n')


def bb_gain(report: ExperimentReport) -> Dict[int, float]:
    """ANR without BBs minus ANR with BBs, per L (positive = BBs help)."""
    anrs = {(row.L, row.use_bb): row.anr_percent for row in report.rows if row.method == 'ip'}
    return {L: anrs[(L, False)] - anrs[(L, True)]
            for L in sorted({L for L, _ in anrs})
            if (L, False) in anrs and (L, True) in anrs}


@dataclass(frozen=True)
class DatasetPaths:
    """Image directories and ground truth of one named dataset."""
    name: str
    library_dir: str
    database_dir: str
    query_dir: str
    ground_truth_path: str

    @classmethod
    def from_root(cls, root: str, name: Optional[str] = None) -> 'DatasetPaths':
        """Dataset laid out like the synthetic generator writes it."""
        directories = dataset_dirs(root)
        return cls(name=name or os.path.basename(os.path.normpath(root)),
                   library_dir=directories['library'], database_dir=directories['database'],
                   query_dir=directories['query'],
                   ground_truth_path=os.path.join(root, GROUND_TRUTH_FILE))


@dataclass(frozen=True)
class ExperimentConfig:
    library_dir: str
    database_dir: str
    query_dir: str
    ground_truth_path: str
    config: Config = field(default_factory=Config)
    ls: Tuple[int, ...] = (20,)
    bb_settings: Tuple[bool, ...] = (True,)
    include_baselines: bool = True
    show_progress: bool = False
    name: str = 'main'
    datasets: Tuple[DatasetPaths, ...] = ()


def evaluate_results(method: str, results: Mapping[str, RetrievalResult], ground_truth: GroundTruth,
                     db_size: int, seed: int, wall_ms: float, L: Optional[int] = None,
                     use_bb: Optional[bool] = None, overlap_mode: Optional[str] = None) -> ReportRow:
    ranks = {query_id: rank_of_ground_truth(results[query_id], ground_truth.relevant[query_id])
             for query_id in ground_truth.query_ids}
    score = anr(list(ranks.values()), db_size)
    logger.info(f"{method} L={L} use_bb={use_bb} mode={overlap_mode}: ANR {score:.2f}%")
    return ReportRow(method=method, L=L, use_bb=use_bb, overlap_mode=overlap_mode,
                     anr_percent=score, per_query_ranks=ranks, n_queries=len(ranks),
                     db_size=db_size, seed=seed, wall_ms=wall_ms)


def run_experiment(exp: ExperimentConfig) -> ExperimentReport:
    """
    Run the full protocol: codebook, library parsing, description of the
    database and query sets, indexing, querying and ANR per configuration.

    Descriptors are built once at max(ls); top-L is a prefix of that order.
    """
    cfg = exp.config.validate()
    for directory in (exp.library_dir, exp.database_dir, exp.query_dir):
        if not directory or not os.path.isdir(directory):
            raise MissingDataset(f"dataset directory not found: {directory}")
    ground_truth = load_ground_truth(exp.ground_truth_path)

    library_images = pipeline.load_image_set(exp.library_dir, cfg, exp.show_progress)
    database_images = pipeline.load_image_set(exp.database_dir, cfg, exp.show_progress)
    query_images = pipeline.load_image_set(exp.query_dir, cfg, exp.show_progress)
    query_ids = {image_id for image_id, _ in query_images}
    unknown = sorted(set(ground_truth.query_ids) - query_ids)
    if unknown:
        raise MissingGroundTruth(f"ground truth names unknown queries: {', '.join(unknown[:5])}")

    library_features = pipeline.extract_features(library_images, cfg, exp.show_progress)
    database_features = pipeline.extract_features(database_images, cfg, exp.show_progress)
    query_features = pipeline.extract_features(query_images, cfg, exp.show_progress)
    codebook = pipeline.train_library_codebook(library_features, cfg)

    library = LandmarkLibrary(pipeline.parse_image_set(
        library_images, cfg, codebook, library_features, exp.show_progress))
    database_scenes = pipeline.parse_image_set(
        database_images, cfg, codebook, database_features, exp.show_progress)
    query_scenes = pipeline.parse_image_set(
        query_images, cfg, codebook, query_features, exp.show_progress)

    max_L = max(exp.ls)
    database_descriptors = pipeline.describe_image_set(database_scenes, library, max_L, cfg, exp.show_progress)
    query_descriptors = {d.image_id: d for d in pipeline.describe_image_set(
        query_scenes, library, max_L, cfg, exp.show_progress)}
    db_size = len(database_descriptors)
    mode = OverlapMode.parse(cfg.overlap_mode)

    report = ExperimentReport(config=cfg.to_dict())
    for L in exp.ls:
        index = build_inverted_file([d.truncated(L) for d in database_descriptors], library.library_ids)
        for use_bb in exp.bb_settings:
            started = time.perf_counter()
            results = {query_id: query(index, query_descriptors[query_id].truncated(L), use_bb, mode)
                       for query_id in ground_truth.query_ids}
            wall_ms = (time.perf_counter() - started) * 1000.0
            report.rows.append(evaluate_results(
                'ip', results, ground_truth, db_size, cfg.seed, wall_ms,
                L=L, use_bb=use_bb, overlap_mode=mode.value))

    if exp.include_baselines:
        started = time.perf_counter()
        results = global_vlad_baseline(
            {q: query_features[q] for q in ground_truth.query_ids}, database_features, codebook)
        report.rows.append(evaluate_results(
            'vlad', results, ground_truth, db_size, cfg.seed, (time.perf_counter() - started) * 1000.0))

        started = time.perf_counter()
        results = shuffled_baseline(ground_truth.query_ids, list(database_features), cfg.seed)
        report.rows.append(evaluate_results(
            'shuffled', results, ground_truth, db_size, cfg.seed, (time.perf_counter() - started) * 1000.0))

    usage_L = cfg.L if cfg.L in exp.ls else max_L
    report.usage = library_usage(
        [d.truncated(usage_L) for d in database_descriptors]
        + [query_descriptors[q].truncated(usage_L) for q in sorted(query_descriptors)])
    return report


@dataclass
class BenchmarkReport:
    """One ExperimentReport per dataset, in run order."""
    blocks: Dict[str, ExperimentReport] = field(default_factory=dict)

    def write_csv(self, path: str):
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(('dataset',) + REPORT_COLUMNS)
            for name, block in self.blocks.items():
                for row in block.rows:
                    writer.writerow([name] + row.csv_row())

    def to_dict(self) -> dict:
        return {
            'note': ANR_NOTE,
            'datasets': list(self.blocks),
            'blocks': {name: block.to_dict() for name, block in self.blocks.items()},
        }

    def write_json(self, path: str):
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)
            file.write('\n')


def run_benchmark(exp: ExperimentConfig) -> BenchmarkReport:
    """
    Run the same protocol on several datasets.

    The experiment's own dataset runs first under `exp.name`, followed by
    every entry of `exp.datasets`. Each dataset gets its own codebook,
    library and report block.

    Raises:
        InvalidConfig: two datasets share a name
    """
    datasets = [DatasetPaths(exp.name, exp.library_dir, exp.database_dir, exp.query_dir,
                             exp.ground_truth_path)] + list(exp.datasets)
    names = [dataset.name for dataset in datasets]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise InvalidConfig(f"dataset names must be unique, repeated: {', '.join(duplicates)}")

    report = BenchmarkReport()
    for dataset in datasets:
        logger.info(f"Benchmark dataset {dataset.name}")
        report.blocks[dataset.name] = run_experiment(replace(
            exp, name=dataset.name, library_dir=dataset.library_dir,
            database_dir=dataset.database_dir, query_dir=dataset.query_dir,
            ground_truth_path=dataset.ground_truth_path, datasets=()))
    return report
