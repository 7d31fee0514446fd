import os
import sys
import shutil
import argparse
import dataclasses
from datetime import datetime

# --- Path Setup ---
# This ensures that the script can be run from anywhere and still find its modules and config file.
SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = SCRIPT_DIR
sys.path.append(SCRIPT_DIR)

from src.core.errors import (
    AlignmentError,
    ConfigError,
    EvidenceConfigurationError,
    MaterializerError,
)
from src.core.models import ExecutionMode, Mode, Persona, Strategy
from src.core.run_config import RunConfig, validate_config
from src.utils.config_loader import (
    build_backend_settings,
    build_evidence_settings,
    build_run_config,
    empty_config,
    load_config,
)
from src.utils.logger_setup import DEFAULT_FORMAT, setup_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_OUTPUT_DIR = os.path.join(PROJECT_ROOT, 'data', 'output')


def get_run_id():
    """Timestamp-only run id keeps output directories short and sortable."""
    return datetime.now().strftime("%Y%m%dT%H%M%S")


def _fail(message, code):
    print(f"ERROR: {message}", file=sys.stderr)
    return code


def _read_ini(path):
    """The INI file when given, else an empty parser (defaults + flags only)."""
    return load_config(path) if path else empty_config()


def _logging_options(ini):
    level = ini.get('Logging', 'level', fallback='INFO')
    # raw=True keeps the '%' of the log format out of configparser interpolation
    log_format = ini.get('Logging', 'format', raw=True, fallback=DEFAULT_FORMAT)
    return level, log_format


def _create_backend(ini, kind_override=None, seed=0):
    from src.generation.backends.http_backend import create_backend
    settings = build_backend_settings(ini, kind_override)
    return create_backend(settings, fanout=ini.getint('Backend', 'mock_fanout', fallback=3), seed=seed)


def _gateway(ini, kind_override, config):
    from src.generation.gateway import ModelGateway
    return ModelGateway(_create_backend(ini, kind_override, config.random_seed), config)


def _print_funnel(snapshot):
    from src.analysis.funnel_analyzer import funnel_table
    print(funnel_table(snapshot).to_string(index=False))


# ----------------------------------------------------------------------------- run

def _run_overrides(args):
    overrides = {
        'seed_subject': args.seed,
        'root_subject': args.root,
        'mode': Mode(args.mode) if args.mode else None,
        'persona': Persona(args.persona) if args.persona else None,
        'strategy': Strategy(args.strategy) if args.strategy else None,
        'article_budget': args.budget,
        'depth_cap': args.depth_cap,
        'execution_mode': ExecutionMode(args.execution_mode) if args.execution_mode else None,
        'worker_threads': args.workers,
        'random_seed': args.random_seed,
    }
    if args.self_grounding:
        overrides['self_grounding'] = True
    return overrides


def cmd_run(args):
    if not args.config and not args.seed:
        return _fail("run needs --config or --seed", EXIT_USAGE)
    try:
        ini = _read_ini(args.config)
        config = validate_config(build_run_config(ini, _run_overrides(args)))
    except (FileNotFoundError, ConfigError) as e:
        return _fail(e, EXIT_USAGE)

    output_dir = args.output_dir or ini.get('General', 'output_dir', fallback='') or DEFAULT_OUTPUT_DIR
    if not os.path.isabs(output_dir):
        output_dir = os.path.join(PROJECT_ROOT, output_dir)
    run_dir = args.run_dir or os.path.join(output_dir, get_run_id())
    os.makedirs(run_dir, exist_ok=True)

    level, log_format = _logging_options(ini)
    logger = setup_logger(log_dir=run_dir, log_level=level, log_format=log_format)
    logger.info(f"Run directory: {run_dir}")
    if args.config:
        # Keep the source INI next to the effective config.json for reproducibility
        shutil.copy(args.config, os.path.join(run_dir, 'config.ini'))

    from src.engine.frontier_engine import FrontierEngine
    try:
        backend = _create_backend(ini, args.backend, config.random_seed)
        engine = FrontierEngine(config, backend=backend, run_dir=run_dir)
        report = engine.run()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except MaterializerError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return EXIT_FAILURE

    _print_funnel(report.funnel)
    print(f"\n{report.generated} generated, {report.failed} failed, {report.frontier} queued -> {run_dir}")
    return EXIT_OK


def cmd_resume(args):
    if not os.path.isdir(args.run_dir):
        return _fail(f"Run directory not found: {args.run_dir}", EXIT_USAGE)
    try:
        ini = _read_ini(args.config)
    except FileNotFoundError as e:
        return _fail(e, EXIT_USAGE)
    level, log_format = _logging_options(ini)
    logger = setup_logger(log_dir=args.run_dir, log_level=level, log_format=log_format)

    from src.engine.frontier_engine import FrontierEngine
    from src.engine.run_store import CONFIG_FILE, RunStore
    try:
        stored = RunConfig.from_record(RunStore(args.run_dir).read_json(CONFIG_FILE)['config'])
        tuning = {}
        if args.workers:
            tuning['worker_threads'] = args.workers
        if args.execution_mode:
            tuning['execution_mode'] = ExecutionMode(args.execution_mode)
        config = dataclasses.replace(stored, **tuning)
        backend = _create_backend(ini, args.backend, config.random_seed)
        engine = FrontierEngine.resume(args.run_dir, backend=backend, config=config)
        report = engine.run()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except MaterializerError as e:
        logger.error(f"Resume failed: {e}", exc_info=True)
        return EXIT_FAILURE

    _print_funnel(report.funnel)
    return EXIT_OK


# ----------------------------------------------------------------------------- evaluate

def cmd_evaluate(args):
    from src.evaluation.evaluation_runner import EvaluationRunner, load_corpus
    from src.evaluation.evaluator import ClaimJudge
    from src.evaluation.evidence import EvidenceCollector, PageFetcher
    from src.evaluation.reference_client import MediaWikiClient
    from src.evaluation.search_backends import build_search_chain
    from src.generation.prompt_forge import PromptForge

    try:
        ini = _read_ini(args.config)
    except FileNotFoundError as e:
        return _fail(e, EXIT_USAGE)
    output_dir = args.output_dir or os.path.join(args.run_dir, 'evaluation', args.tier)
    level, log_format = _logging_options(ini)
    logger = setup_logger(log_dir=output_dir, log_level=level, log_format=log_format, log_filename='evaluate.log')

    try:
        corpus = load_corpus(args.run_dir)
        config = corpus.config or validate_config(RunConfig())
        evidence = build_evidence_settings(ini)
        judge = ClaimJudge(config, PromptForge(), _gateway(ini, args.backend, config))
        collector = None
        if args.tier in ('web', 'frontier'):
            collector = EvidenceCollector(
                build_search_chain(evidence.search_chain),
                PageFetcher(evidence.per_domain_interval_seconds),
                settings=evidence,
            )
        runner = EvaluationRunner(
            corpus, judge, args.tier,
            reference_client=MediaWikiClient(evidence.mediawiki_api_url),
            collector=collector,
            workers=args.workers,
        )
        result = runner.run(args.sample, args.sample_seed)
        frame = EvaluationRunner.write(result, output_dir)
    except EvidenceConfigurationError as e:
        logger.error(f"Evidence configuration error: {e}")
        return EXIT_USAGE
    except (MaterializerError, ValueError) as e:
        logger.error(f"Evaluation failed: {e}")
        return EXIT_FAILURE

    print(frame.to_string(index=False))
    return EXIT_OK


# ----------------------------------------------------------------------------- similarity

def cmd_similarity(args):
    from src.evaluation.evaluation_runner import SimilarityRunner, load_corpus, sample_subjects
    from src.evaluation.reference_client import MediaWikiClient

    if (args.corpus_b is None) == (not args.reference):
        return _fail("give either a second run directory or --reference", EXIT_USAGE)
    try:
        ini = _read_ini(args.config)
    except FileNotFoundError as e:
        return _fail(e, EXIT_USAGE)
    output_dir = args.output_dir or os.path.join(args.corpus_a, 'similarity')
    level, log_format = _logging_options(ini)
    logger = setup_logger(log_dir=output_dir, log_level=level, log_format=log_format, log_filename='similarity.log')

    try:
        corpus_a = load_corpus(args.corpus_a)
        config = corpus_a.config or validate_config(RunConfig())
        gateway = None if args.no_semantic else _gateway(ini, args.backend, config)
        if args.reference:
            runner = SimilarityRunner(
                corpus_a,
                reference_client=MediaWikiClient(build_evidence_settings(ini).mediawiki_api_url),
                gateway=gateway, workers=args.workers,
            )
            subjects = sample_subjects(corpus_a.names, args.sample, args.sample_seed)
        else:
            runner = SimilarityRunner(corpus_a, corpus_b=load_corpus(args.corpus_b), gateway=gateway,
                                      workers=args.workers)
            subjects = None
        summary = SimilarityRunner.write(runner.run(subjects), output_dir)
    except AlignmentError as e:
        logger.error(str(e))
        for name in e.only_in_a:
            print(f"only in A: {name}", file=sys.stderr)
        for name in e.only_in_b:
            print(f"only in B: {name}", file=sys.stderr)
        return EXIT_FAILURE
    except MaterializerError as e:
        logger.error(f"Similarity failed: {e}")
        return EXIT_FAILURE

    for key, value in summary.items():
        print(f"{key:>18}: {value}")
    return EXIT_OK


# ----------------------------------------------------------------------------- stats

def cmd_stats(args):
    from src.analysis.funnel_analyzer import FunnelAnalyzer

    if not os.path.isdir(args.run_dir):
        return _fail(f"Run directory not found: {args.run_dir}", EXIT_USAGE)
    setup_logger(None, 'INFO', '%(asctime)s - %(message)s')
    analyzer = FunnelAnalyzer(args.run_dir, result_dir=args.output_dir, plots=not args.no_plots)
    try:
        tables = analyzer.run()
    except (OSError, ValueError, KeyError) as e:
        return _fail(f"Cannot read funnel data: {e}", EXIT_FAILURE)
    if tables is None:
        return _fail(f"No subjects recorded in {args.run_dir}", EXIT_FAILURE)

    print(tables['funnel'].to_string(index=False))
    if not tables['by_hop'].empty:
        columns = ['hop', 'generated_articles', 'raw_candidates', 'after_canonical', 'after_ner',
                   'after_similarity', 'queued_subjects', 'queue_survival_pct']
        print()
        print(tables['by_hop'][columns].to_string(index=False))

    if args.compare:
        return _compare_runs(args)
    return EXIT_OK


def _compare_runs(args):
    from src.analysis.overlap_analyzer import OVERLAP_DIR, OverlapAnalyzer

    for run_dir in args.compare:
        if not os.path.isdir(run_dir):
            return _fail(f"Run directory not found: {run_dir}", EXIT_USAGE)
    result_dir = os.path.join(args.output_dir, OVERLAP_DIR) if args.output_dir else None
    try:
        analyzer = OverlapAnalyzer([args.run_dir, *args.compare], result_dir=result_dir, cap=args.cap,
                                   shared_sample=args.shared_sample, sample_seed=args.sample_seed,
                                   plots=not args.no_plots)
    except ValueError as e:
        return _fail(str(e), EXIT_USAGE)
    try:
        tables = analyzer.run()
    except (MaterializerError, OSError, ValueError, KeyError) as e:
        return _fail(f"Cannot compare runs: {e}", EXIT_FAILURE)
    if tables is None:
        return _fail(f"No subjects recorded in {args.run_dir}", EXIT_FAILURE)

    print()
    print(tables['properties'].drop(columns=['run_dir']).to_string(index=False))
    print()
    print(tables['summary'].to_string(index=False))
    print()
    print(tables['pairs'].to_string(index=False))
    return EXIT_OK


# ----------------------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(description='Encyclopedia corpus materializer and evaluator')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Materialize a corpus')
    run.add_argument('--config', help='INI config file')
    run.add_argument('--seed', help='Seed subject (overrides [General] seed_subject)')
    run.add_argument('--root', help='Root subject for topic_focused mode')
    run.add_argument('--mode', choices=[m.value for m in Mode])
    run.add_argument('--persona', choices=[p.value for p in Persona])
    run.add_argument('--strategy', choices=[s.value for s in Strategy])
    run.add_argument('--backend', choices=['mock', 'http'])
    run.add_argument('--budget', type=int, help='Article budget (attempted subjects)')
    run.add_argument('--depth-cap', type=int)
    run.add_argument('--execution-mode', choices=[m.value for m in ExecutionMode])
    run.add_argument('--workers', type=int)
    run.add_argument('--random-seed', type=int)
    run.add_argument('--self-grounding', action='store_true')
    run.add_argument('--output-dir', help='Parent directory for the timestamped run directory')
    run.add_argument('--run-dir', help='Exact run directory to write')
    run.set_defaults(func=cmd_run)

    resume = sub.add_parser('resume', help='Continue an interrupted run')
    resume.add_argument('run_dir')
    resume.add_argument('--config', help='INI config for backend and logging settings')
    resume.add_argument('--backend', choices=['mock', 'http'])
    resume.add_argument('--workers', type=int)
    resume.add_argument('--execution-mode', choices=[m.value for m in ExecutionMode])
    resume.set_defaults(func=cmd_resume)

    evaluate = sub.add_parser('evaluate', help='Claim-level factuality of a corpus sample')
    evaluate.add_argument('run_dir')
    evaluate.add_argument('--tier', choices=['wiki', 'web', 'frontier'], default='wiki')
    evaluate.add_argument('--sample', type=int, default=1000)
    evaluate.add_argument('--sample-seed', type=int, default=42)
    evaluate.add_argument('--config', help='INI config for judge backend and evidence settings')
    evaluate.add_argument('--backend', choices=['mock', 'http'])
    evaluate.add_argument('--workers', type=int, default=4)
    evaluate.add_argument('--output-dir')
    evaluate.set_defaults(func=cmd_evaluate)

    similarity = sub.add_parser('similarity', help='Similarity between two corpora or against the reference')
    similarity.add_argument('corpus_a')
    similarity.add_argument('corpus_b', nargs='?')
    similarity.add_argument('--reference', action='store_true', help='Compare corpus A with reference pages')
    similarity.add_argument('--sample', type=int, help='Reference mode: subjects to compare')
    similarity.add_argument('--sample-seed', type=int, default=42)
    similarity.add_argument('--no-semantic', action='store_true', help='Skip embedding-based cosine')
    similarity.add_argument('--config')
    similarity.add_argument('--backend', choices=['mock', 'http'])
    similarity.add_argument('--workers', type=int, default=4)
    similarity.add_argument('--output-dir')
    similarity.set_defaults(func=cmd_similarity)

    stats = sub.add_parser('stats', help='Funnel tables and plots for a run')
    stats.add_argument('run_dir')
    stats.add_argument('--output-dir')
    stats.add_argument('--no-plots', action='store_true')
    stats.add_argument('--compare', nargs='+', metavar='RUN_DIR',
                       help='Other run directories for subject and entity overlap')
    stats.add_argument('--cap', type=int, help='Compare: first N generated articles per corpus')
    stats.add_argument('--shared-sample', type=int, default=1000,
                       help='Compare: shared subjects sampled for entity overlap')
    stats.add_argument('--sample-seed', type=int, default=42)
    stats.set_defaults(func=cmd_stats)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    return args.func(args)


if __name__ == '__main__':
    sys.exit(main())
