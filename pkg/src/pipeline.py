"""Pipeline orchestrator behind the command-line subcommands.

Every command reads its inputs from the configured data directory or from an
earlier command's outputs under ``out_dir``, writes deterministic files, and
leaves a ``manifest.json`` beside them. Layout of ``out_dir``::

    corpus/<dir>/<domain>.<lang>                ingest
    splits/<dir>/<split>.<lang>                 split
    splits/<dir>/domains/<domain>/<split>.<lang>
    splits/<dir>/split_report.json
    stats/stats.tsv, stats/stats.txt            stats
    bpe/shared.model or bpe/<dir>.model         bpe-train
    segmented/<dir>/<split>.<lang>              bpe-apply
    segmented/multilingual/<split>.src|.tgt
    multilingual/<split>.src|.tgt|.directions   tag
    fuzzy/<dir>.index, fuzzy/<dir>.matches.tsv  retrieve
    translate/<name>.<lang>, prompts.jsonl      translate
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from src import __version__
from src.bleu import BleuReport, bleu_corpus
from src.bpe import MODEL_FORMAT, MODEL_VERSION, BpeModel, bpe_train
from src.completion_service import BackendParams, CompletionService
from src.config import Config
from src.corpus import (
    Corpus,
    Direction,
    PathLike,
    corpus_paths,
    ingest_many,
    ingest_parallel,
    normalize_text,
    read_lines,
    write_lines,
    write_parallel,
)
from src.dedup_split import (
    SPLIT_NAMES,
    OverlapMode,
    SplitBundle,
    SplitError,
    SplitRatios,
    SplitReport,
    sample_indices,
    split_stratified,
    stats_report,
    verify_bundle,
)
from src.fuzzy_translator import FewShotTranslator
from src.multilingual import assemble_multilingual, tag_specials
from src.prompting import TEMPLATE_ID
from src.retrieval import (
    INDEX_FORMAT,
    INDEX_VERSION,
    CharNgramTfidfEmbedder,
    Embedder,
    HttpEmbedder,
    RetrievalIndex,
    build_index,
    load_index,
    retrieve,
    save_index,
)


logger = logging.getLogger(__name__)

# Rules whose violation means the split itself is wrong; ratio drift only warns.
HARD_RULES = ("i", "ii", "eval")

SMOOTHING_THRESHOLD = 100


class PipelineError(Exception):
    """Raised when a pipeline command cannot run."""
    pass


@dataclass
class CommandResult:
    """Files a command wrote and the text it reports on stdout."""

    command: str
    outputs: List[Path] = field(default_factory=list)
    report: str = ""


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _dump_json(path: Path, data: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True))
        f.write("\n")


class Pipeline:
    """Runs the toolkit commands against one configuration."""

    def __init__(self, config: Config):
        self.config = config
        self.out_dir = config.out_dir

    # Configuration helpers

    @property
    def directions(self) -> List[Tuple[Direction, Dict[str, str]]]:
        """Configured directions with their domain -> file stem maps."""
        return [
            (Direction.of(entry["source"], entry["target"]), dict(entry["domains"]))
            for entry in self.config.directions
        ]

    def _domains(self, direction: Direction) -> Dict[str, str]:
        for configured, domains in self.directions:
            if configured == direction:
                return domains
        raise PipelineError(f"Direction {direction} is not configured")

    def fuzzy_direction(self) -> Direction:
        """Direction used by retrieve/translate: configured, else the first one."""
        if self.config.fuzzy_direction:
            direction = Direction.parse(self.config.fuzzy_direction)
            self._domains(direction)
            return direction
        if not self.directions:
            raise PipelineError("No corpus directions configured")
        return self.directions[0][0]

    def _label(self, path: Path) -> str:
        """Stable manifest name for a file: relative to out_dir or data_dir when possible."""
        path = Path(path).resolve()
        for prefix, base in (("", self.out_dir.resolve()), ("data/", self.config.data_dir.resolve())):
            try:
                return prefix + path.relative_to(base).as_posix()
            except ValueError:
                continue
        return path.name

    def write_manifest(self, directory: Path, command: str,
                       inputs: Sequence[Path], outputs: Sequence[Path],
                       options: Optional[Dict[str, object]] = None) -> Path:
        """Record command, seed, versions and content hashes beside the outputs."""
        manifest: Dict[str, object] = {
            "command": command,
            "seed": self.config.seed,
            "versions": {
                "toolkit": __version__,
                "bpe_model": f"{MODEL_FORMAT} {MODEL_VERSION}",
                "index": f"{INDEX_FORMAT} {INDEX_VERSION}",
                "prompt_template": TEMPLATE_ID,
            },
            "inputs": {self._label(p): file_sha256(p) for p in sorted(set(inputs))},
            "outputs": {self._label(p): file_sha256(p) for p in sorted(set(outputs))},
        }
        if options:
            manifest["options"] = dict(sorted(options.items()))
        path = directory / "manifest.json"
        _dump_json(path, manifest)
        logger.debug(f"Wrote manifest for {command} to {path}")
        return path

    # Stores

    def _corpus_dir(self, direction: Direction) -> Path:
        return self.out_dir / "corpus" / str(direction)

    def _split_dir(self, direction: Direction) -> Path:
        return self.out_dir / "splits" / str(direction)

    def _require(self, paths: Sequence[Path], command: str) -> None:
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise PipelineError(f"Missing {', '.join(missing)}; run '{command}' first")

    def load_ingested(self, direction: Direction) -> Tuple[Corpus, List[Path]]:
        """The ingested corpus of one direction, domains in configured order."""
        corpora = []
        inputs: List[Path] = []
        for domain in self._domains(direction):
            source_path, target_path = corpus_paths(self._corpus_dir(direction), domain, direction)
            self._require([source_path, target_path], "ingest")
            corpora.append(ingest_parallel(source_path, target_path, direction, domain))
            inputs.extend([source_path, target_path])
        return Corpus.concat(corpora, direction), inputs

    def load_bundle(self, direction: Direction) -> Tuple[SplitBundle, List[Path]]:
        """The split bundle of one direction as written by ``cmd_split``."""
        split_dir = self._split_dir(direction)
        report_path = split_dir / "split_report.json"
        self._require([report_path], "split")
        try:
            with open(report_path, "r", encoding="utf-8") as f:
                report = SplitReport.from_dict(json.load(f)["report"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise PipelineError(f"Unreadable split report {report_path}: {e}")

        inputs = [report_path]
        splits: Dict[str, Corpus] = {}
        for name in SPLIT_NAMES:
            parts = []
            for domain in report.domains:
                domain_dir = split_dir / "domains" / domain
                source_path, target_path = corpus_paths(domain_dir, name, direction)
                self._require([source_path, target_path], "split")
                parts.append(ingest_parallel(source_path, target_path, direction, domain))
                inputs.extend([source_path, target_path])
            splits[name] = Corpus.concat(parts, direction)
        bundle = SplitBundle(splits["train"], splits["test"], splits["validation"], report)
        return bundle, inputs

    # Commands

    def cmd_ingest(self) -> CommandResult:
        """Read every configured parallel file pair into the corpus store."""
        self.config.validate_inputs()
        jobs = []
        inputs: List[Path] = []
        for direction, domains in self.directions:
            for domain, stem in domains.items():
                source_path, target_path = corpus_paths(self.config.data_dir, stem, direction)
                jobs.append((source_path, target_path, direction, domain))
                inputs.extend([source_path, target_path])

        result = CommandResult("ingest")
        for (_, _, direction, domain), corpus in zip(jobs, ingest_many(jobs)):
            source_path, target_path = corpus_paths(self._corpus_dir(direction), domain, direction)
            write_parallel(corpus, source_path, target_path)
            result.outputs.extend([source_path, target_path])
            result.report += f"{direction}\t{domain}\t{len(corpus)} pairs\t{corpus.dropped} dropped\n"

        result.outputs.append(self.write_manifest(self.out_dir / "corpus", "ingest", inputs, result.outputs))
        logger.info(f"Ingested {len(jobs)} file pairs across {len(self.directions)} directions")
        return result

    def cmd_split(self) -> CommandResult:
        """Deduplicate, split and verify every direction; write the split files."""
        self.config.validate_inputs()
        ratios = SplitRatios.from_dict(self.config.ratios)
        mode = OverlapMode(self.config.overlap_mode)
        result = CommandResult("split")
        inputs: List[Path] = []

        for direction, _ in self.directions:
            corpus, corpus_inputs = self.load_ingested(direction)
            inputs.extend(corpus_inputs)
            bundle = split_stratified(
                corpus, ratios, self.config.seed, mode,
                tolerance=self.config.tolerance,
                min_domain_size=self.config.min_domain_size,
            )
            violations = verify_bundle(bundle)
            hard = [v for v in violations if v.rule in HARD_RULES]
            if hard:
                for violation in hard[:10]:
                    logger.error(f"Split verification failed - Type: Violation, Message: {violation}, "
                                 f"Direction: {direction}")
                raise PipelineError(f"Split of {direction} broke {len(hard)} split rules")
            for violation in violations:
                logger.warning(f"{direction}: {violation}")

            result.outputs.extend(self._write_bundle(bundle, direction, violations))
            total = bundle.report.total
            result.report += (
                f"{direction}\ttrain={total.train}\ttest={total.test}\t"
                f"validation={total.validation}\tviolations={len(violations)}\n"
            )

        result.outputs.append(self.write_manifest(self.out_dir / "splits", "split", inputs, result.outputs))
        return result

    def _write_bundle(self, bundle: SplitBundle, direction: Direction, violations) -> List[Path]:
        split_dir = self._split_dir(direction)
        outputs: List[Path] = []
        for name in SPLIT_NAMES:
            corpus = bundle.split(name)
            source_path, target_path = corpus_paths(split_dir, name, direction)
            write_parallel(corpus, source_path, target_path)
            outputs.extend([source_path, target_path])

            by_domain = corpus.by_domain()
            for domain in bundle.report.domains:
                part = by_domain.get(domain, corpus.with_pairs([]))
                source_path, target_path = corpus_paths(split_dir / "domains" / domain, name, direction)
                write_parallel(part, source_path, target_path)
                outputs.extend([source_path, target_path])

        report_path = split_dir / "split_report.json"
        _dump_json(report_path, {
            "report": bundle.report.to_dict(),
            "violations": [str(v) for v in violations],
        })
        outputs.append(report_path)
        return outputs

    def cmd_stats(self) -> CommandResult:
        """Write the per-direction, per-domain corpus statistics table."""
        self.config.validate_inputs()
        bundles = []
        inputs: List[Path] = []
        for direction, _ in self.directions:
            bundle, bundle_inputs = self.load_bundle(direction)
            bundles.append(bundle)
            inputs.extend(bundle_inputs)

        table = stats_report(bundles)
        stats_dir = self.out_dir / "stats"
        tsv_path = stats_dir / "stats.tsv"
        text_path = stats_dir / "stats.txt"
        write_lines(tsv_path, table.to_tsv().splitlines())
        write_lines(text_path, table.to_text().splitlines())

        result = CommandResult("stats", [tsv_path, text_path], table.to_text())
        result.outputs.append(self.write_manifest(stats_dir, "stats", inputs, result.outputs))
        return result

    def _model_path(self, direction: Optional[Direction]) -> Path:
        if direction is None:
            return self.config.bpe_model_path
        return self.out_dir / "bpe" / f"{direction}.model"

    def cmd_bpe_train(self) -> CommandResult:
        """Train the shared model on all training sides, or one model per direction."""
        self.config.validate_inputs()
        bundles: List[Tuple[Direction, SplitBundle]] = []
        inputs: List[Path] = []
        for direction, _ in self.directions:
            bundle, bundle_inputs = self.load_bundle(direction)
            bundles.append((direction, bundle))
            inputs.extend(bundle_inputs)

        specials = tag_specials([direction.target.code for direction, _ in bundles])
        jobs: List[Tuple[Optional[Direction], List[List[str]]]] = []
        if self.config.bpe_joint:
            sides = []
            for _, bundle in bundles:
                sides.extend([bundle.train.sources, bundle.train.targets])
            jobs.append((None, sides))
        else:
            for direction, bundle in bundles:
                jobs.append((direction, [bundle.train.sources, bundle.train.targets]))

        result = CommandResult("bpe-train")
        for direction, sides in jobs:
            model = bpe_train(sides, self.config.bpe_vocab_size, specials, self.config.bpe_min_frequency)
            path = self._model_path(direction)
            model.save(path)
            result.outputs.append(path)
            result.report += f"{direction or 'shared'}\t{len(model)} tokens\t{len(model.merges)} merges\n"

        result.outputs.append(self.write_manifest(self.out_dir / "bpe", "bpe-train", inputs, result.outputs))
        return result

    def _load_model(self, direction: Optional[Direction]) -> BpeModel:
        path = self._model_path(direction)
        self._require([path], "bpe-train")
        return BpeModel.load(path)

    def cmd_bpe_apply(self) -> CommandResult:
        """Segment every split, and the multilingual corpus when it exists."""
        self.config.validate_inputs()
        segmented = self.out_dir / "segmented"
        result = CommandResult("bpe-apply")
        inputs: List[Path] = []
        joint = self.config.bpe_joint
        shared = self._load_model(None) if joint else None
        if shared is not None:
            inputs.append(self._model_path(None))

        for direction, _ in self.directions:
            model = shared if shared is not None else self._load_model(direction)
            if not joint:
                inputs.append(self._model_path(direction))
            bundle, bundle_inputs = self.load_bundle(direction)
            inputs.extend(bundle_inputs)
            for name in SPLIT_NAMES:
                corpus = bundle.split(name)
                source_path, target_path = corpus_paths(segmented / str(direction), name, direction)
                write_lines(source_path, [" ".join(model.encode(s)) for s in corpus.sources])
                write_lines(target_path, [" ".join(model.encode(t)) for t in corpus.targets])
                result.outputs.extend([source_path, target_path])

        multilingual_dir = self.out_dir / "multilingual"
        if shared is not None and (multilingual_dir / "train.src").exists():
            for name in SPLIT_NAMES:
                for side in ("src", "tgt"):
                    source = multilingual_dir / f"{name}.{side}"
                    self._require([source], "tag")
                    target = segmented / "multilingual" / f"{name}.{side}"
                    write_lines(target, [" ".join(shared.encode(line)) for line in read_lines(source)])
                    inputs.append(source)
                    result.outputs.append(target)

        result.report = f"Segmented {len(result.outputs)} files\n"
        result.outputs.append(self.write_manifest(segmented, "bpe-apply", inputs, result.outputs))
        return result

    def cmd_tag(self) -> CommandResult:
        """Tag sources with their target language and assemble the multilingual corpus."""
        self.config.validate_inputs()
        bundles = []
        inputs: List[Path] = []
        for direction, _ in self.directions:
            bundle, bundle_inputs = self.load_bundle(direction)
            bundles.append(bundle)
            inputs.extend(bundle_inputs)

        combined = assemble_multilingual(bundles)
        multilingual_dir = self.out_dir / "multilingual"
        result = CommandResult("tag")
        for name in SPLIT_NAMES:
            corpus = combined.split(name)
            source_path = multilingual_dir / f"{name}.src"
            target_path = multilingual_dir / f"{name}.tgt"
            directions_path = multilingual_dir / f"{name}.directions"
            write_parallel(corpus, source_path, target_path)
            write_lines(directions_path, [str(pair.direction) for pair in corpus])
            result.outputs.extend([source_path, target_path, directions_path])
            result.report += f"{name}\t{len(corpus)} pairs\n"

        result.outputs.append(self.write_manifest(multilingual_dir, "tag", inputs, result.outputs))
        return result

    def cmd_bleu(self, hyp_path: PathLike, ref_path: PathLike, smooth: bool = False) -> CommandResult:
        """Score a hypothesis file against a reference file.

        Sets below 100 sentences get both the plain and the smoothed score.
        """
        hypotheses = [normalize_text(line) for line in read_lines(hyp_path)]
        references = [normalize_text(line) for line in read_lines(ref_path)]
        reports = self.score(hypotheses, references, smooth)
        return CommandResult("bleu", [], "".join(r.format() + "\n" for r in reports))

    @staticmethod
    def score(hypotheses: Sequence[str], references: Sequence[str], smooth: bool) -> List[BleuReport]:
        reports = [bleu_corpus(hypotheses, references, smooth=smooth)]
        if len(hypotheses) < SMOOTHING_THRESHOLD:
            reports.append(bleu_corpus(hypotheses, references, smooth=not smooth))
            reports.sort(key=lambda r: r.smoothed)
        return reports

    def _embedder(self) -> Embedder:
        if self.config.embedder == "http":
            return HttpEmbedder(
                self.config.embedding_endpoint,
                self.config.embedding_model,
                api_key=self.config.api_key,
                timeout=self.config.backend_timeout,
            )
        return CharNgramTfidfEmbedder()

    def _index_path(self, direction: Direction) -> Path:
        return self.out_dir / "fuzzy" / f"{direction}.index"

    def _read_queries(self, input_path: Optional[PathLike],
                      direction: Direction) -> Tuple[List[str], Optional[List[str]], List[Path]]:
        """Queries from a file, else the test sources (with their references)."""
        if input_path is not None:
            return [normalize_text(line) for line in read_lines(input_path)], None, [Path(input_path)]
        bundle, inputs = self.load_bundle(direction)
        return bundle.test.sources, bundle.test.targets, inputs

    def cmd_retrieve(self, input_path: Optional[PathLike] = None) -> CommandResult:
        """Build and save the retrieval index; list the matches of each query when given."""
        self.config.validate_inputs()
        direction = self.fuzzy_direction()
        bundle, inputs = self.load_bundle(direction)
        index = build_index(bundle.split(self.config.pool_split), self._embedder())
        index_path = self._index_path(direction)
        save_index(index, index_path)
        result = CommandResult("retrieve", [index_path], f"{direction}\t{len(index)} entries\n")

        if input_path is not None:
            queries = [normalize_text(line) for line in read_lines(input_path)]
            inputs.append(Path(input_path))
            rows = []
            for number, query in enumerate(queries, start=1):
                for rank, match in enumerate(retrieve(index, query, self.config.max_matches), start=1):
                    rows.append(f"{number}\t{rank}\t{match.similarity:.6f}\t"
                                f"{match.source_text}\t{match.target_text}")
            matches_path = self.out_dir / "fuzzy" / f"{direction}.matches.tsv"
            write_lines(matches_path, rows)
            result.outputs.append(matches_path)

        result.outputs.append(self.write_manifest(self.out_dir / "fuzzy", "retrieve", inputs, result.outputs))
        return result

    def _index(self, direction: Direction) -> Tuple[RetrievalIndex, List[Path]]:
        index_path = self._index_path(direction)
        if index_path.exists():
            return load_index(index_path, self._embedder()), [index_path]
        bundle, inputs = self.load_bundle(direction)
        return build_index(bundle.split(self.config.pool_split), self._embedder()), inputs

    def make_backend(self) -> CompletionService:
        return CompletionService(
            mode=self.config.backend_mode,
            endpoint=self.config.backend_endpoint,
            model=self.config.backend_model,
            region=self.config.backend_region,
            api_key=self.config.api_key,
            timeout=self.config.backend_timeout,
            retry_attempts=self.config.retry_attempts,
            retry_delay=self.config.retry_delay,
        )

    def cmd_translate(self, input_path: Optional[PathLike] = None,
                      ref_path: Optional[PathLike] = None,
                      backend: Optional[CompletionService] = None,
                      sample: Optional[int] = None) -> CommandResult:
        """Few-shot translate an input file (default: the test sources) and audit the prompts.

        With sample, only a seeded random subset of the queries (and their
        references) is translated, in input order.
        """
        self.config.validate_inputs()
        direction = self.fuzzy_direction()
        index, inputs = self._index(direction)
        queries, references, query_inputs = self._read_queries(input_path, direction)
        inputs.extend(query_inputs)
        if ref_path is not None:
            references = [normalize_text(line) for line in read_lines(ref_path)]
            inputs.append(Path(ref_path))

        if sample is not None:
            if references is not None and len(references) != len(queries):
                raise PipelineError(
                    f"Cannot sample: {len(queries)} queries but {len(references)} references"
                )
            total = len(queries)
            try:
                chosen = sample_indices(total, sample, self.config.seed,
                                        f"translate:{direction}")
            except SplitError as e:
                raise PipelineError(str(e))
            queries = [queries[i] for i in chosen]
            if references is not None:
                references = [references[i] for i in chosen]
            logger.info(f"Sampled {len(chosen)} of {total} queries with seed {self.config.seed}")

        translator = FewShotTranslator(
            index,
            backend or self.make_backend(),
            direction,
            BackendParams(self.config.top_p, self.config.temperature, self.config.length_multiplier),
            k=self.config.max_matches,
            concurrency=self.config.backend_concurrency,
        )
        results = translator.translate_all(queries)

        translate_dir = self.out_dir / "translate"
        stem = Path(input_path).stem if input_path is not None else "test"
        output_path = translate_dir / f"{stem}.{direction.target}"
        prompts_path = translate_dir / "prompts.jsonl"
        write_lines(output_path, [r.translation for r in results])
        write_lines(prompts_path, [
            json.dumps({
                "source": r.source_text,
                "prompt": r.prompt,
                "translation": r.translation,
                "matches": [[m.source_text, m.target_text, m.similarity] for m in r.matches],
            }, ensure_ascii=False, sort_keys=True)
            for r in results
        ])
        result = CommandResult("translate", [output_path, prompts_path],
                               f"Translated {len(results)} sentences ({direction})\n")

        if references is not None:
            reports = self.score([r.translation for r in results], references, smooth=False)
            bleu_path = translate_dir / "bleu.txt"
            write_lines(bleu_path, [r.format() for r in reports])
            result.outputs.append(bleu_path)
            result.report += "".join(r.format() + "\n" for r in reports)

        options = {"sample": sample} if sample is not None else None
        result.outputs.append(
            self.write_manifest(translate_dir, "translate", inputs, result.outputs, options)
        )
        return result
