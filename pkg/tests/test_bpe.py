"""Unit tests for the BPE subword model."""

import logging
from collections import Counter

import pytest

from src.bpe import (
    PAD,
    UNK,
    WORD_END,
    BpeDecodeError,
    BpeModel,
    BpeModelFormatError,
    BpeTrainer,
    BpeTrainingError,
    bpe_decode,
    bpe_encode,
    bpe_train,
)


GEEZ_LINES = [
    "ወይቤሎ፡ እግዚአብሔር፡ ለሙሴ።",
    "ወይቤሎ፡ ሙሴ፡ ለእግዚአብሔር።",
    "ቀዳሚ፡ ገብረ፡ እግዚአብሔር፡ ሰማየ፡ ወምድረ።",
]
ENGLISH_LINES = [
    "and the lord said unto moses",
    "and moses said unto the lord",
    "in the beginning god created the heaven and the earth",
]


def most_frequent_pair(sides):
    """Count adjacent symbol pairs over every word; highest count, then smallest pair."""
    counts = Counter()
    for side in sides:
        for sentence in side:
            for word in sentence.split():
                symbols = list(word) + [WORD_END]
                counts.update(zip(symbols, symbols[1:]))
    return min(counts, key=lambda pair: (-counts[pair], pair))


class TestTraining:
    """Tests for learning merges."""

    def test_first_merge_breaks_ties_lexicographically(self):
        model = bpe_train([["ab ab ab"]], vocab_size=6)

        assert model.merges == [most_frequent_pair([["ab ab ab"]])] == [("a", "b")]
        assert bpe_encode(model, "ab") == ["ab", WORD_END]

    @pytest.mark.parametrize("sides", [
        [["ab ab ab"]],
        [["ba ab"]],
        [ENGLISH_LINES],
        [GEEZ_LINES],
        [ENGLISH_LINES, GEEZ_LINES],
        [["zz yy xx zz yy"]],
    ])
    def test_first_merge_matches_pair_count(self, sides):
        alphabet = {ch for side in sides for line in side for ch in line if not ch.isspace()}
        model = bpe_train(sides, vocab_size=3 + len(alphabet) + 1)

        assert model.merges[0] == most_frequent_pair(sides)

    def test_base_vocabulary_layout(self):
        model = bpe_train([["ab ab ab"]], vocab_size=5)

        assert model.merges == []
        assert model.vocabulary == {UNK: 0, PAD: 1, WORD_END: 2, "a": 3, "b": 4}

    def test_vocab_size_below_minimum_raises_error(self):
        with pytest.raises(BpeTrainingError, match="vocab_size 4 is too small; minimum is 5"):
            bpe_train([["ab ab ab"]], vocab_size=4)

    def test_vocabulary_never_exceeds_requested_size(self):
        model = bpe_train([ENGLISH_LINES, GEEZ_LINES], vocab_size=60)
        assert len(model) <= 60

    def test_training_is_deterministic(self):
        first = bpe_train([ENGLISH_LINES, GEEZ_LINES], vocab_size=80)
        second = bpe_train([ENGLISH_LINES, GEEZ_LINES], vocab_size=80)
        assert first == second
        assert first.merges == second.merges

    def test_sides_are_pooled_into_one_vocabulary(self):
        model = bpe_train([ENGLISH_LINES, GEEZ_LINES], vocab_size=200)
        assert "m" in model.vocabulary
        assert "ሙ" in model.vocabulary

    def test_min_frequency_drops_rare_characters(self):
        model = BpeTrainer(vocab_size=10, min_frequency=2).train([["aa aa z"]])

        assert "z" not in model.vocabulary
        assert model.encode("z") == [UNK, WORD_END]

    def test_logs_merge_count(self, caplog):
        with caplog.at_level(logging.INFO, logger="src.bpe"):
            bpe_train([["ab ab ab"]], vocab_size=6)
        assert "Learned 1 merges" in caplog.text

    def test_rejects_special_with_whitespace(self):
        with pytest.raises(BpeTrainingError, match="Special token"):
            BpeTrainer(vocab_size=10, specials=["<2 gez>"])


class TestEncodeDecode:
    """Tests for segmentation and reconstruction."""

    def test_round_trip_on_latin_and_ethiopic(self):
        model = bpe_train([ENGLISH_LINES, GEEZ_LINES], vocab_size=120)
        for line in ENGLISH_LINES + GEEZ_LINES:
            assert bpe_decode(model, bpe_encode(model, line)) == line

    def test_round_trip_collapses_whitespace(self):
        model = bpe_train([ENGLISH_LINES], vocab_size=50)
        assert model.decode(model.encode("  the   lord\tsaid ")) == "the lord said"

    def test_unknown_characters_become_unk(self):
        model = bpe_train([["ab ab ab"]], vocab_size=6)
        assert model.encode("abc") == ["ab", UNK, WORD_END]

    def test_decode_unknown_token_raises_error(self):
        model = bpe_train([["ab ab ab"]], vocab_size=6)
        with pytest.raises(BpeDecodeError, match="Unknown token"):
            model.decode(["zz"])
        with pytest.raises(BpeDecodeError, match="Unknown token id"):
            model.decode([999])

    def test_decode_accepts_ids(self):
        model = bpe_train([ENGLISH_LINES], vocab_size=50)
        ids = model.encode_ids("the lord")
        assert model.decode(ids) == "the lord"

    def test_specials_are_never_split(self):
        model = bpe_train([["<2gez> hello world", "<2amh> hello"]], vocab_size=40,
                          specials=["<2amh>", "<2gez>"])

        tokens = model.encode("<2gez> hello")

        assert tokens[:2] == ["<2gez>", WORD_END]
        assert "<" not in model.vocabulary
        assert model.decode(tokens) == "<2gez> hello"

    def test_empty_text_encodes_to_nothing(self):
        model = bpe_train([ENGLISH_LINES], vocab_size=50)
        assert model.encode("") == []
        assert model.decode([]) == ""


class TestModelFiles:
    """Tests for saving and loading models."""

    def test_save_then_load_gives_equal_model(self, tmp_path):
        model = bpe_train([ENGLISH_LINES, GEEZ_LINES], vocab_size=100, specials=["<2gez>"])
        path = tmp_path / "bpe" / "shared.model"

        model.save(path)
        loaded = BpeModel.load(path)

        assert loaded == model
        assert loaded.encode(GEEZ_LINES[0]) == model.encode(GEEZ_LINES[0])

    def test_file_layout(self, tmp_path):
        path = tmp_path / "m.model"
        bpe_train([["ab ab ab"]], vocab_size=7).save(path)

        lines = path.read_text(encoding="utf-8").splitlines()

        assert lines[:7] == ["bpe-model v1 7", "[specials]", UNK, PAD, "[merges]",
                             "a\tb", f"ab\t{WORD_END}"]
        assert lines[7] == "[vocab]"

    def test_unsupported_version_raises_error(self, tmp_path):
        path = tmp_path / "m.model"
        bpe_train([["ab ab ab"]], vocab_size=7).save(path)
        text = path.read_text(encoding="utf-8").replace("bpe-model v1", "bpe-model v2", 1)
        path.write_text(text, encoding="utf-8")

        with pytest.raises(BpeModelFormatError, match="unsupported version v2") as exc_info:
            BpeModel.load(path)
        assert exc_info.value.line_number == 1

    def test_malformed_merge_reports_line_number(self, tmp_path):
        path = tmp_path / "m.model"
        bpe_train([["ab ab ab"]], vocab_size=7).save(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[5] = "a b"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

        with pytest.raises(BpeModelFormatError) as exc_info:
            BpeModel.load(path)
        assert exc_info.value.line_number == 6

    def test_empty_file_raises_error(self, tmp_path):
        path = tmp_path / "m.model"
        path.write_text("", encoding="utf-8")
        with pytest.raises(BpeModelFormatError, match="empty file"):
            BpeModel.load(path)

    def test_declared_size_must_match(self, tmp_path):
        path = tmp_path / "m.model"
        bpe_train([["ab ab ab"]], vocab_size=7).save(path)
        text = path.read_text(encoding="utf-8").replace("bpe-model v1 7", "bpe-model v1 9", 1)
        path.write_text(text, encoding="utf-8")
        with pytest.raises(BpeModelFormatError, match="declares 9 tokens"):
            BpeModel.load(path)
