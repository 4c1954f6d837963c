#!/usr/bin/env python3
"""Main entry point for the Ge'ez MT toolkit."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.bleu import BleuError
from src.bpe import BpeError
from src.completion_service import CompletionServiceError
from src.config import Config, ConfigurationError
from src.corpus import CorpusError
from src.dedup_split import SplitError
from src.multilingual import AssemblyError
from src.pipeline import Pipeline, PipelineError
from src.prompting import PromptError
from src.retrieval import RetrievalError


TOOLKIT_ERRORS = (
    ConfigurationError,
    CorpusError,
    SplitError,
    BpeError,
    AssemblyError,
    BleuError,
    RetrievalError,
    PromptError,
    CompletionServiceError,
    PipelineError,
    OSError,
)


def setup_logging(log_level: str, log_format: str) -> None:
    """Configure logging for the application.

    Logs go to stderr so stdout carries only command reports.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: Format string for log messages
    """
    logging.basicConfig(
        level=getattr(logging, log_level),
        format=log_format,
        handlers=[
            logging.StreamHandler(sys.stderr)
        ]
    )


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments.

    Returns:
        Parsed arguments namespace
    """
    parser = argparse.ArgumentParser(
        description="Ge'ez MT toolkit - corpus preparation, BPE, BLEU and few-shot translation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Prepare the corpus end to end
  python main.py ingest && python main.py split && python main.py stats

  # Shared BPE model and multilingual corpus
  python main.py bpe-train && python main.py tag && python main.py bpe-apply

  # Score a system output
  python main.py bleu --hyp output.gez --ref reference.gez

  # Few-shot translation of the test set (credential via COMPLETION_API_KEY)
  python main.py translate
        """
    )

    parser.add_argument(
        '--config',
        type=str,
        default='config/config.yaml',
        help='Path to configuration file (default: config/config.yaml)'
    )
    parser.add_argument(
        '--seed',
        type=int,
        help='Split seed (overrides config file)'
    )
    parser.add_argument(
        '--out-dir',
        type=str,
        help='Output directory (overrides config file)'
    )

    subparsers = parser.add_subparsers(dest='command', required=True, metavar='command')
    subparsers.add_parser('ingest', help='Read parallel files into the corpus store')
    subparsers.add_parser('split', help='Deduplicate and split into train/test/validation')
    subparsers.add_parser('stats', help='Print the corpus statistics table')
    subparsers.add_parser('bpe-train', help='Train the BPE model(s)')
    subparsers.add_parser('bpe-apply', help='Segment all splits with the trained BPE model(s)')
    subparsers.add_parser('tag', help='Tag sources and assemble the multilingual corpus')

    bleu = subparsers.add_parser('bleu', help='Score a hypothesis file against a reference file')
    bleu.add_argument('--hyp', required=True, help='Hypothesis file, one sentence per line')
    bleu.add_argument('--ref', required=True, help='Reference file, line-aligned with --hyp')
    bleu.add_argument('--smooth', action='store_true', help='Add-one smoothing for orders with no matches')

    retrieve = subparsers.add_parser('retrieve', help='Build the fuzzy-match index')
    retrieve.add_argument('--input', help='Optional query file; writes the matches of each line')

    translate = subparsers.add_parser('translate', help='Few-shot translation with fuzzy matches')
    translate.add_argument('--input', help='Sentences to translate (default: the test sources)')
    translate.add_argument('--ref', help='References for scoring the translations')
    translate.add_argument('--sample', type=int, metavar='N',
                           help='Translate a seeded random sample of N sentences')

    return parser.parse_args(argv)


def run_command(pipeline: Pipeline, args: argparse.Namespace):
    if args.command == "ingest":
        return pipeline.cmd_ingest()
    if args.command == "split":
        return pipeline.cmd_split()
    if args.command == "stats":
        return pipeline.cmd_stats()
    if args.command == "bpe-train":
        return pipeline.cmd_bpe_train()
    if args.command == "bpe-apply":
        return pipeline.cmd_bpe_apply()
    if args.command == "tag":
        return pipeline.cmd_tag()
    if args.command == "bleu":
        return pipeline.cmd_bleu(args.hyp, args.ref, smooth=args.smooth)
    if args.command == "retrieve":
        return pipeline.cmd_retrieve(args.input)
    return pipeline.cmd_translate(args.input, args.ref, sample=args.sample)


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point.

    Returns:
        Exit code (0 for success, 1 for error)
    """
    args = parse_arguments(argv)

    try:
        config_path = Path(args.config)
        if config_path.exists():
            config = Config(config_path=str(config_path))
        else:
            print(f"Warning: Config file not found at {args.config}, using defaults", file=sys.stderr)
            config = Config()

        if args.seed is not None:
            config.set("split.seed", args.seed)
        if args.out_dir:
            config.set("output.out_dir", str(Path(args.out_dir).resolve()))
    except ConfigurationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1

    setup_logging(config.log_level, config.log_format)
    logger = logging.getLogger(__name__)
    logger.info(f"Running {args.command} (seed {config.seed}, out_dir {config.out_dir})")

    try:
        result = run_command(Pipeline(config), args)
    except TOOLKIT_ERRORS as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1

    sys.stdout.write(result.report)
    logger.info(f"{args.command} finished: {len(result.outputs)} files written")
    return 0


if __name__ == "__main__":
    sys.exit(main())
