"""
Place Recognizer Command Line

Scene description from an image-based prior: mines a library of raw images
to describe each view as <library image id, bounding box> landmarks, indexes
the database in an inverted file and evaluates retrieval by ANR.
Version: 1.0.0
"""

import argparse
import os
import sys
from typing import List, Optional

# Add the project root to Python path
current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
if parent_dir not in sys.path:
    sys.path.append(parent_dir)

from src.core import pipeline
from src.core.config import Config, OVERLAP_MODES
from src.core.encoding import Codebook
from src.core.errors import PlaceRecognitionError, MissingDataset
from src.core.evalharness import DatasetPaths, ExperimentConfig, run_benchmark, run_experiment
from src.core.logger import PlaceLogger
from src.core.mining import LandmarkLibrary
from src.core.retrieval import InvertedFile, build_inverted_file, query
from src.core.synthetic import SyntheticParams, generate_synthetic_dataset
from src.utils.artifact_paths import ArtifactLayout
from src.utils.storage import (
    load_parsed_scenes, read_descriptors, save_parsed_scene, write_descriptors,
)

COMMANDS = ('synth', 'codebook', 'parse', 'describe', 'index', 'query', 'eval', 'sweep')

logger = PlaceLogger('cli')


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    """
    Create the argument parser.

    Returns:
        argparse.ArgumentParser: parser with one subcommand per pipeline stage
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON config file; flags override its values')
    common.add_argument('--seed', type=int, help='seed for every random choice')
    common.add_argument('--library-dir', help='directory of library images')
    common.add_argument('--db-dir', help='directory of database images')
    common.add_argument('--query-dir', help='directory of query images')
    common.add_argument('--out', help='output directory (dataset for synth, work directory otherwise)')
    common.add_argument('-R', type=int, dest='R', help='superpixel target per image (default 72)')
    common.add_argument('-K', type=int, dest='K', help='landmarks per image (default 40)')
    common.add_argument('-L', type=int, dest='L', help='library images per scene descriptor (default 20)')
    common.add_argument('--codebook-k', type=int, help='VLAD codebook size (default 16)')
    common.add_argument('--compactness', type=float, help='SLIC compactness (default 10)')
    common.add_argument('--iterations', type=int, help='SLIC iterations (default 10)')
    common.add_argument('--min-keypoints', type=int, help='keypoints needed by a landmark region (default 5)')
    common.add_argument('--no-bb', action='store_true', help='rank by common library ids only')
    common.add_argument('--overlap-mode', choices=OVERLAP_MODES, help='bounding-box overlap measure')
    common.add_argument('--ls', type=_int_list, help='comma separated L values for sweep')
    common.add_argument('--ground-truth', help='CSV with query_id,relevant_db_id rows')
    common.add_argument('--dump-config', action='store_true', help='print the resolved config and exit')
    common.add_argument('--progress', action='store_true', help='show progress bars')

    parser = argparse.ArgumentParser(
        prog='vpr', description='Visual place recognition with an image-based prior')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    synth = subparsers.add_parser('synth', parents=[common], help='generate a synthetic dataset')
    synth.add_argument('--n-library', type=int, default=100)
    synth.add_argument('--n-database', type=int, default=100)
    synth.add_argument('--n-query', type=int, default=50)
    synth.add_argument('--width', type=int, default=160)
    synth.add_argument('--height', type=int, default=120)
    synth.add_argument('--n-distractors', type=int, default=20)

    subparsers.add_parser('codebook', parents=[common], help='train the VLAD codebook on library images')
    subparsers.add_parser('parse', parents=[common], help='parse image sets into landmarks')
    subparsers.add_parser('describe', parents=[common], help='build scene descriptors')
    subparsers.add_parser('index', parents=[common], help='build the inverted file')
    query_parser = subparsers.add_parser('query', parents=[common], help='retrieve for one query image')
    query_parser.add_argument('--query-id', help='id (file stem) of the query image')

    benchmark = argparse.ArgumentParser(add_help=False)
    benchmark.add_argument('--extra-dataset', action='append', default=[], metavar='ROOT',
                           help='another dataset root (library/, database/, query/, ground_truth.csv); '
                                'repeatable, one report block per dataset')

    eval_parser = subparsers.add_parser('eval', parents=[common, benchmark], help='run one evaluation')
    eval_parser.add_argument('--both-bb', action='store_true', help='report IP with and without BBs')
    eval_parser.add_argument('--no-baselines', action='store_true', help='skip VLAD and shuffled rows')
    subparsers.add_parser('sweep', parents=[common, benchmark], help='L sweep crossed with BB on/off')
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    """Defaults, then the config file, then command-line flags."""
    cfg = Config.from_file(args.config) if args.config else Config()
    overrides = {
        'R': args.R, 'K': args.K, 'L': args.L, 'codebook_k': args.codebook_k,
        'compactness': args.compactness, 'iterations': args.iterations,
        'min_keypoints': args.min_keypoints, 'seed': args.seed,
        'overlap_mode': args.overlap_mode, 'ls': args.ls,
        'use_bb': False if args.no_bb else None,
    }
    return cfg.merged(overrides).validate()


def _require(parser: argparse.ArgumentParser, args: argparse.Namespace, *names: str):
    for name in names:
        if not getattr(args, name.replace('-', '_')):
            parser.error(f"{args.command} requires --{name}")


def cmd_synth(args, cfg: Config) -> int:
    params = SyntheticParams(
        n_library=args.n_library, n_database=args.n_database, n_query=args.n_query,
        width=args.width, height=args.height, n_distractors=args.n_distractors)
    ground_truth = generate_synthetic_dataset(args.out, cfg.seed, params)
    print(f"Synthetic dataset written to {args.out} ({len(ground_truth)} queries)")
    return 0


def cmd_codebook(args, cfg: Config) -> int:
    layout = ArtifactLayout(args.out)
    images = pipeline.load_image_set(args.library_dir, cfg, args.progress)
    features = pipeline.extract_features(images, cfg, args.progress)
    codebook = pipeline.train_library_codebook(features, cfg)
    codebook.save(layout.codebook)
    with open(layout.config, 'w', encoding='utf-8') as file:
        file.write(cfg.to_json())
    print(f"Codebook ({codebook.k}x{codebook.dim}) written to {layout.codebook}")
    return 0


def _load_codebook(layout: ArtifactLayout) -> Codebook:
    if not os.path.isfile(layout.codebook):
        raise MissingDataset(f"no codebook at {layout.codebook}; run `codebook` first")
    return Codebook.load(layout.codebook)


def _load_scenes(layout: ArtifactLayout, image_set: str):
    scenes = load_parsed_scenes(layout.parsed_dir(image_set))
    if not scenes:
        raise MissingDataset(f"no parsed {image_set} scenes under {layout.root}; run `parse` first")
    return scenes


def cmd_parse(args, cfg: Config) -> int:
    layout = ArtifactLayout(args.out)
    codebook = _load_codebook(layout)
    for image_set, directory in (('library', args.library_dir), ('database', args.db_dir),
                                 ('query', args.query_dir)):
        if not directory:
            continue
        images = pipeline.load_image_set(directory, cfg, args.progress)
        scenes = pipeline.parse_image_set(images, cfg, codebook, show_progress=args.progress)
        target = layout.parsed_dir(image_set)
        for scene in scenes:
            save_parsed_scene(target, scene)
        print(f"Parsed {len(scenes)} {image_set} images into {target}")
    return 0


def cmd_describe(args, cfg: Config) -> int:
    layout = ArtifactLayout(args.out)
    library = LandmarkLibrary(_load_scenes(layout, 'library'))
    described = 0
    for image_set in ('database', 'query'):
        scenes = load_parsed_scenes(layout.parsed_dir(image_set))
        if not scenes:
            continue
        descriptors = pipeline.describe_image_set(scenes, library, cfg.L, cfg, args.progress)
        write_descriptors(layout.descriptors(image_set), descriptors)
        described += 1
        print(f"Described {len(descriptors)} {image_set} images (L={cfg.L})")
    if not described:
        raise MissingDataset("no parsed database or query scenes to describe")
    return 0


def cmd_index(args, cfg: Config) -> int:
    layout = ArtifactLayout(args.out)
    library_ids = [scene.image_id for scene in _load_scenes(layout, 'library')]
    path = layout.descriptors('database')
    if not os.path.isfile(path):
        raise MissingDataset(f"no database descriptors at {path}; run `describe` first")
    index = build_inverted_file(read_descriptors(path), library_ids)
    index.save(layout.index)
    print(f"Indexed {len(index.database_ids)} database images, {index.total_postings} postings")
    return 0


def cmd_query(args, cfg: Config) -> int:
    layout = ArtifactLayout(args.out)
    if not os.path.isfile(layout.index):
        raise MissingDataset(f"no index at {layout.index}; run `index` first")
    index = InvertedFile.load(layout.index)
    path = layout.descriptors('query')
    if not os.path.isfile(path):
        raise MissingDataset(f"no query descriptors at {path}; run `describe` first")
    descriptors = {d.image_id: d for d in read_descriptors(path)}
    if args.query_id not in descriptors:
        raise MissingDataset(f"query {args.query_id} was not described")

    result = query(index, descriptors[args.query_id], cfg.use_bb, cfg.overlap_mode)
    print('rank,db_id,common_count,bb_score')
    for rank, item in enumerate(result.ranked, start=1):
        print(f"{rank},{item.db_id},{item.common_count},{item.bb_score:.6f}")
    return 0


def _print_rows(rows, prefix: str = ''):
    for row in rows:
        label = row.method if row.L is None else f"{row.method} L={row.L} bb={'on' if row.use_bb else 'off'}"
        print(f"{prefix}{label:<24} ANR {row.anr_percent:6.2f}%  ({row.n_queries} queries, N={row.db_size})")


def _dataset_name(library_dir: str) -> str:
    return os.path.basename(os.path.dirname(os.path.normpath(library_dir))) or 'main'


def _run_report(args, cfg: Config, ls, bb_settings, include_baselines: bool) -> int:
    layout = ArtifactLayout(args.out)
    exp = ExperimentConfig(
        library_dir=args.library_dir, database_dir=args.db_dir, query_dir=args.query_dir,
        ground_truth_path=args.ground_truth, config=cfg, ls=tuple(ls),
        bb_settings=tuple(bb_settings), include_baselines=include_baselines,
        show_progress=args.progress, name=_dataset_name(args.library_dir),
        datasets=tuple(DatasetPaths.from_root(root) for root in args.extra_dataset))
    if exp.datasets:
        report = run_benchmark(exp)
        for name, block in report.blocks.items():
            _print_rows(block.rows, prefix=f"{name}: ")
    else:
        report = run_experiment(exp)
        _print_rows(report.rows)
    report.write_csv(layout.report('csv'))
    report.write_json(layout.report('json'))
    print(f"Report written to {layout.report('csv')}")
    return 0


def cmd_eval(args, cfg: Config) -> int:
    bb_settings = (False, True) if args.both_bb else (cfg.use_bb,)
    return _run_report(args, cfg, [cfg.L], bb_settings, not args.no_baselines)


def cmd_sweep(args, cfg: Config) -> int:
    return _run_report(args, cfg, cfg.ls, (True, False), False)


HANDLERS = {
    'synth': (cmd_synth, ('out',)),
    'codebook': (cmd_codebook, ('library-dir', 'out')),
    'parse': (cmd_parse, ('out',)),
    'describe': (cmd_describe, ('out',)),
    'index': (cmd_index, ('out',)),
    'query': (cmd_query, ('out', 'query-id')),
    'eval': (cmd_eval, ('library-dir', 'db-dir', 'query-dir', 'ground-truth', 'out')),
    'sweep': (cmd_sweep, ('library-dir', 'db-dir', 'query-dir', 'ground-truth', 'out')),
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    Command-line entry point.

    Returns:
        int: 0 on success, 2 on usage errors, 1 on pipeline errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if args.dump_config:
            sys.stdout.write(cfg.to_json())
            return 0
        handler, required = HANDLERS[args.command]
        _require(parser, args, *required)
        if args.command == 'parse' and not (args.library_dir or args.db_dir or args.query_dir):
            parser.error("parse requires at least one of --library-dir, --db-dir, --query-dir")
        logger.info(f"Running {args.command}")
        return handler(args, cfg)

    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except PlaceRecognitionError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        print(f"Fatal error: {str(e)}", file=sys.stderr)
        return 1


def main():
    """Application entry point."""
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
