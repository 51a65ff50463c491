import random

import pytest
import torch

from scribegan.codec import (
    CharCodec,
    CodecError,
    Lexicon,
    LexiconError,
    build_codec,
    load_codec,
    load_lexicon,
    save_codec,
)


def test_build_codec_sorted_distinct():
    codec = build_codec({"ab", "ba"})
    assert codec.chars == ["a", "b"]
    assert codec.blank_index == 2
    assert codec.vocab_size == 2


def test_build_codec_empty_collection_errors():
    with pytest.raises(CodecError):
        build_codec([])


def test_encode_out_of_vocabulary_errors():
    codec = build_codec(["a"])
    with pytest.raises(CodecError):
        codec.encode("b")


def test_round_trip_identity():
    rng = random.Random(0)
    alphabet = "abcdefghijklmnop éè-'"
    codec = build_codec([alphabet])
    for _ in range(200):
        word = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))
        assert codec.decode(codec.encode(word)) == word
    # encode(decode(labels)) identity on valid label sequences
    labels = [rng.randrange(codec.vocab_size) for _ in range(10)]
    assert codec.encode(codec.decode(labels)) == labels


def test_blank_never_encoded_and_not_decodable():
    codec = build_codec(["abc"])
    assert codec.blank_index not in codec.encode("abcabc")
    with pytest.raises(CodecError):
        codec.decode([codec.blank_index])


def test_codec_file_round_trip(tmp_path):
    codec = build_codec(["déjà vu", "abc"])
    path = tmp_path / "codec.txt"
    save_codec(codec, path)
    loaded = load_codec(path)
    assert loaded.chars == codec.chars
    assert loaded.blank_index == codec.blank_index


def test_codec_rejects_duplicates_and_multichar():
    with pytest.raises(CodecError):
        CharCodec(["a", "a"])
    with pytest.raises(CodecError):
        CharCodec(["ab"])


def test_single_word_lexicon_always_sampled():
    lex = Lexicon(["seule"])
    rng = torch.Generator().manual_seed(0)
    assert all(lex.sample(rng) == "seule" for _ in range(20))


def test_weighted_sampling_frequencies():
    # two words with weights 1 and 3: frequencies 0.25 / 0.75 within 0.02
    lex = Lexicon(["x", "y"], [1.0, 3.0])
    rng = torch.Generator().manual_seed(123)
    draws = lex.sample_batch(rng, 100_000)
    f_x = draws.count("x") / len(draws)
    assert abs(f_x - 0.25) < 0.02
    assert abs((1 - f_x) - 0.75) < 0.02


def test_lexicon_out_of_codec_word_fails_at_load(tmp_path):
    codec = build_codec(["abc"])
    path = tmp_path / "lexicon.txt"
    path.write_text("abc\nabz\n", encoding="utf-8")
    with pytest.raises(LexiconError):
        load_lexicon(path, codec)


def test_lexicon_weights_parsed(tmp_path):
    path = tmp_path / "lexicon.txt"
    path.write_text("un\t2.5\ndeux\n", encoding="utf-8")
    lex = load_lexicon(path)
    assert lex.words == ["un", "deux"]
    assert lex.weights.tolist() == [2.5, 1.0]


def test_lexicon_invalid_weights():
    with pytest.raises(LexiconError):
        Lexicon(["a", "b"], [0.0, 0.0])
    with pytest.raises(LexiconError):
        Lexicon(["a"], [-1.0])
    with pytest.raises(LexiconError):
        Lexicon([])
