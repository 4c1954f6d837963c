"""Integration tests for the command-line pipeline.

These tests drive ``main`` end to end on a small synthetic corpus written to
a temporary directory, with the simulated completion backend.
"""

import hashlib
import json
import random
from pathlib import Path

import pytest

from main import main


EN = ["lord", "moses", "said", "unto", "people", "land", "water", "bread", "heaven",
      "earth", "light", "king", "house", "son", "day", "night", "mountain", "river"]
GEZ = ["እግዚአብሔር", "ሙሴ", "ይቤ", "ኀበ", "ሕዝብ", "ምድር", "ማይ", "ኅብስት", "ሰማይ",
       "ምድረ", "ብርሃን", "ንጉሥ", "ቤት", "ወልድ", "ዕለት", "ሌሊት", "ደብር", "ፈለግ"]
AMH = ["ጌታ", "ሙሴ", "አለ", "ለ", "ሕዝብ", "አገር", "ውሃ", "ዳቦ", "ሰማይ",
       "ምድር", "ብርሃን", "ንጉሥ", "ቤት", "ልጅ", "ቀን", "ሌሊት", "ተራራ", "ወንዝ"]


def synthetic_pairs(count, target_words, seed):
    """Distinct word-aligned sentence pairs."""
    rng = random.Random(seed)
    pairs = {}
    while len(pairs) < count:
        indices = [rng.randrange(len(EN)) for _ in range(rng.randint(4, 8))]
        source = " ".join(EN[i] for i in indices)
        pairs.setdefault(source, " ".join(target_words[i] for i in indices) + "።")
    return list(pairs.items())


def write_corpus(data_dir: Path, stem: str, source: str, target: str, pairs):
    data_dir.mkdir(parents=True, exist_ok=True)
    (data_dir / f"{stem}.{source}").write_text(
        "".join(s + "\n" for s, _ in pairs), encoding="utf-8")
    (data_dir / f"{stem}.{target}").write_text(
        "".join(t + "\n" for _, t in pairs), encoding="utf-8")


def write_config(base: Path, directions: str, fuzzy_direction: str = "en-gez") -> Path:
    config_path = base / "config.yaml"
    config_path.write_text(f"""
corpus:
  data_dir: "data/raw"
  directions:
{directions}
bpe:
  vocab_size: 400
fuzzy:
  direction: "{fuzzy_direction}"
backend:
  mode: "simulated"
  concurrency: 2
output:
  out_dir: "out"
logging:
  level: "WARNING"
""", encoding="utf-8")
    return config_path


DIRECTIONS = """\
    - source: "en"
      target: "gez"
      domains:
        bible: "en-gez.bible"
    - source: "en"
      target: "amh"
      domains:
        bible: "en-amh.bible"
        news: "en-amh.news"
"""


@pytest.fixture
def workspace(tmp_path):
    """A data directory with two directions and a config pointing at it."""
    raw = tmp_path / "data" / "raw"
    write_corpus(raw, "en-gez.bible", "en", "gez", synthetic_pairs(60, GEZ, seed=1))
    write_corpus(raw, "en-amh.bible", "en", "amh", synthetic_pairs(40, AMH, seed=2))
    write_corpus(raw, "en-amh.news", "en", "amh", synthetic_pairs(30, AMH, seed=3))
    return tmp_path, write_config(tmp_path, DIRECTIONS)


def run_all(config_path: Path, out_dir: Path = None):
    prefix = ["--config", str(config_path)]
    if out_dir is not None:
        prefix += ["--out-dir", str(out_dir)]
    for command in ("ingest", "split", "stats", "bpe-train", "tag", "bpe-apply",
                    "retrieve", "translate"):
        assert main(prefix + [command]) == 0, command


def tree_hashes(root: Path):
    return {
        path.relative_to(root).as_posix(): hashlib.sha256(path.read_bytes()).hexdigest()
        for path in sorted(root.rglob("*")) if path.is_file()
    }


def line_count(path: Path) -> int:
    return len(path.read_text(encoding="utf-8").splitlines())


class TestEndToEndPipeline:
    """Every subcommand in order on the synthetic corpus."""

    def test_full_pipeline_writes_every_store(self, workspace, capsys):
        base, config_path = workspace
        out = base / "out"

        run_all(config_path)
        stdout = capsys.readouterr().out

        for relative in (
            "corpus/en-gez/bible.en", "corpus/en-amh/news.amh", "corpus/manifest.json",
            "splits/en-gez/train.en", "splits/en-amh/domains/news/test.amh",
            "splits/en-gez/split_report.json", "stats/stats.tsv", "stats/stats.txt",
            "bpe/shared.model", "multilingual/train.src", "multilingual/train.directions",
            "segmented/en-gez/train.gez", "segmented/multilingual/test.src",
            "fuzzy/en-gez.index", "translate/test.gez", "translate/prompts.jsonl",
            "translate/bleu.txt", "translate/manifest.json",
        ):
            assert (out / relative).exists(), relative

        assert "Translated 12 sentences (en-gez)" in stdout
        assert "BLEU = " in stdout
        assert "BLEU+smooth = " in stdout

    def test_split_counts_and_stats_table(self, workspace):
        base, config_path = workspace
        out = base / "out"
        for command in ("ingest", "split", "stats"):
            assert main(["--config", str(config_path), command]) == 0

        assert line_count(out / "splits" / "en-gez" / "train.en") == 42
        assert line_count(out / "splits" / "en-gez" / "test.gez") == 12
        assert line_count(out / "splits" / "en-gez" / "validation.en") == 6

        rows = (out / "stats" / "stats.tsv").read_text(encoding="utf-8").splitlines()
        assert rows[0].startswith("Direction\tDomain\tOriginal\tDuplicates-removed")
        assert rows[1] == "en-gez\tbible\t60\t60\t42\t12\t6\t60\tOK"
        assert rows[2].startswith("en-amh\tbible\t40\t40\t")
        assert rows[3].startswith("en-amh\tnews\t30\t30\t")
        assert all(row.endswith("OK") for row in rows[1:])

    def test_tagged_sources_and_shared_specials(self, workspace):
        base, config_path = workspace
        out = base / "out"
        for command in ("ingest", "split", "bpe-train", "tag"):
            assert main(["--config", str(config_path), command]) == 0

        sources = (out / "multilingual" / "train.src").read_text(encoding="utf-8").splitlines()
        directions = (out / "multilingual" / "train.directions").read_text(encoding="utf-8").splitlines()
        assert len(sources) == len(directions)
        for source, direction in zip(sources, directions):
            assert source.startswith(f"<2{direction.split('-')[1]}> ")
        model_lines = (out / "bpe" / "shared.model").read_text(encoding="utf-8").splitlines()
        assert model_lines[1:5] == ["[specials]", "<unk>", "<pad>", "<2amh>"]

    def test_prompts_are_audited(self, workspace):
        base, config_path = workspace
        out = base / "out"
        for command in ("ingest", "split", "translate"):
            assert main(["--config", str(config_path), command]) == 0

        records = [json.loads(line) for line in
                   (out / "translate" / "prompts.jsonl").read_text(encoding="utf-8").splitlines()]
        assert len(records) == 12
        for record in records:
            assert len(record["matches"]) == 10
            assert record["prompt"].endswith(f"English: {record['source']}\nGe'ez:")

        manifest = json.loads((out / "translate" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "translate"
        assert manifest["versions"]["prompt_template"] == "fuzzy-fewshot v1"
        assert "translate/test.gez" in manifest["outputs"]

    def test_translate_sample_is_seeded(self, workspace, capsys):
        base, config_path = workspace
        for out_name in ("first", "second"):
            prefix = ["--config", str(config_path), "--out-dir", str(base / out_name)]
            for command in ("ingest", "split"):
                assert main(prefix + [command]) == 0
            assert main(prefix + ["translate", "--sample", "5"]) == 0

        assert "Translated 5 sentences (en-gez)" in capsys.readouterr().out
        first, second = base / "first" / "translate", base / "second" / "translate"
        assert (first / "prompts.jsonl").read_bytes() == (second / "prompts.jsonl").read_bytes()
        assert (first / "test.gez").read_bytes() == (second / "test.gez").read_bytes()

        test_sources = (base / "first" / "splits" / "en-gez" / "test.en").read_text(
            encoding="utf-8").splitlines()
        sampled = [json.loads(line)["source"] for line in
                   (first / "prompts.jsonl").read_text(encoding="utf-8").splitlines()]
        positions = [test_sources.index(source) for source in sampled]
        assert len(sampled) == 5
        assert positions == sorted(positions)

        manifest = json.loads((first / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["options"] == {"sample": 5}

    def test_translate_rejects_empty_sample(self, workspace, capsys):
        base, config_path = workspace
        for command in ("ingest", "split"):
            assert main(["--config", str(config_path), command]) == 0

        assert main(["--config", str(config_path), "translate", "--sample", "0"]) == 1
        assert "error: PipelineError: Sample size must be positive" in capsys.readouterr().err

    def test_retrieve_lists_matches_for_queries(self, workspace):
        base, config_path = workspace
        queries = base / "queries.en"
        queries.write_text("the lord said unto moses\nbread and water\n", encoding="utf-8")
        for command in ("ingest", "split"):
            assert main(["--config", str(config_path), command]) == 0

        assert main(["--config", str(config_path), "retrieve", "--input", str(queries)]) == 0

        rows = (base / "out" / "fuzzy" / "en-gez.matches.tsv").read_text(encoding="utf-8").splitlines()
        assert len(rows) == 20
        assert rows[0].split("\t")[:2] == ["1", "1"]

    def test_ten_pair_fixture_splits_7_2_1(self, tmp_path):
        raw = tmp_path / "data" / "raw"
        write_corpus(raw, "en-gez.bible", "en", "gez", synthetic_pairs(10, GEZ, seed=4))
        config_path = write_config(tmp_path, DIRECTIONS.split("    - source: \"en\"\n      target: \"amh\"")[0])

        for command in ("ingest", "split"):
            assert main(["--config", str(config_path), command]) == 0

        split_dir = tmp_path / "out" / "splits" / "en-gez"
        assert [line_count(split_dir / f"{name}.en") for name in ("train", "test", "validation")] == [7, 2, 1]


class TestBleuCommand:
    """Tests for the bleu subcommand."""

    def test_identical_files_score_100(self, workspace, capsys):
        base, config_path = workspace
        lines = "".join(s + "\n" for s, _ in synthetic_pairs(5, GEZ, seed=9))
        (base / "hyp.txt").write_text(lines, encoding="utf-8")
        (base / "ref.txt").write_text(lines, encoding="utf-8")

        code = main(["--config", str(config_path), "bleu",
                     "--hyp", str(base / "hyp.txt"), "--ref", str(base / "ref.txt")])

        output = capsys.readouterr().out.splitlines()
        assert code == 0
        assert output[0].startswith("BLEU = 100.00")
        assert output[1].startswith("BLEU+smooth = 100.00")

    def test_length_mismatch_exits_with_error(self, workspace, capsys):
        base, config_path = workspace
        (base / "hyp.txt").write_text("a b\nc d\n", encoding="utf-8")
        (base / "ref.txt").write_text("a b\n", encoding="utf-8")

        code = main(["--config", str(config_path), "bleu",
                     "--hyp", str(base / "hyp.txt"), "--ref", str(base / "ref.txt")])

        assert code == 1
        assert "error: BleuError: Hypothesis/reference count mismatch: 2 vs 1" in capsys.readouterr().err


class TestErrorScenarios:
    """Failures surface as a single error line and exit status 1."""

    def test_missing_corpus_file(self, workspace, capsys):
        base, config_path = workspace
        (base / "data" / "raw" / "en-amh.news.amh").unlink()

        assert main(["--config", str(config_path), "ingest"]) == 1

        errors = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error: ")]
        assert len(errors) == 1
        assert errors[0].startswith("error: ConfigurationError: Missing corpus files")
        assert "en-amh.news.amh" in errors[0]

    def test_misaligned_corpus(self, workspace, capsys):
        base, config_path = workspace
        path = base / "data" / "raw" / "en-gez.bible.gez"
        lines = path.read_text(encoding="utf-8").splitlines()
        path.write_text("".join(line + "\n" for line in lines[:-1]), encoding="utf-8")

        assert main(["--config", str(config_path), "ingest"]) == 1
        assert "error: AlignmentError: Line count mismatch" in capsys.readouterr().err

    def test_split_before_ingest(self, workspace, capsys):
        _, config_path = workspace
        assert main(["--config", str(config_path), "split"]) == 1
        assert "run 'ingest' first" in capsys.readouterr().err

    def test_invalid_config_value(self, tmp_path, capsys):
        config_path = tmp_path / "config.yaml"
        config_path.write_text("split:\n  overlap_mode: loose\n", encoding="utf-8")

        assert main(["--config", str(config_path), "stats"]) == 1
        assert "error: ConfigurationError: Invalid overlap mode" in capsys.readouterr().err


class TestDeterminism:
    """Identical inputs and seed give byte-identical outputs."""

    def test_two_runs_produce_identical_trees(self, workspace):
        base, config_path = workspace

        run_all(config_path, base / "run1")
        run_all(config_path, base / "run2")

        first = tree_hashes(base / "run1")
        second = tree_hashes(base / "run2")
        assert first == second
        assert "translate/prompts.jsonl" in first

    def test_seed_flag_changes_the_split(self, workspace):
        base, config_path = workspace
        for out, seed in (("a", "1"), ("b", "2")):
            assert main(["--config", str(config_path), "--out-dir", str(base / out), "ingest"]) == 0
            assert main(["--config", str(config_path), "--out-dir", str(base / out),
                         "--seed", seed, "split"]) == 0

        first = (base / "a" / "splits" / "en-gez" / "test.en").read_bytes()
        second = (base / "b" / "splits" / "en-gez" / "test.en").read_bytes()
        assert first != second
