"""Character codec and word lexicon, with their on-disk text formats."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import torch


class CodecError(ValueError):
    """Out-of-vocabulary character or malformed codec file."""


class LexiconError(ValueError):
    """Malformed lexicon file or lexicon/codec mismatch."""


class CharCodec:
    """Bijection between characters and integer labels, plus the CTC blank.

    Labels ``0 .. len(chars)-1`` map to characters in sorted code-point
    order. The blank label is ``len(chars)``; it is reserved for CTC and
    never appears in an encoded transcript.
    """

    def __init__(self, chars: Sequence[str]):
        chars = list(chars)
        if not chars:
            raise CodecError("codec needs at least one character")
        if any(len(c) != 1 for c in chars):
            raise CodecError("codec entries must be single code points")
        if len(set(chars)) != len(chars):
            raise CodecError("duplicate characters in codec")
        self.chars = chars
        self._char_to_label = {c: i for i, c in enumerate(chars)}

    @property
    def vocab_size(self) -> int:
        return len(self.chars)

    @property
    def blank_index(self) -> int:
        return len(self.chars)

    def __len__(self) -> int:
        return len(self.chars)

    def __contains__(self, char: str) -> bool:
        return char in self._char_to_label

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CharCodec) and other.chars == self.chars

    def encodable(self, text: str) -> bool:
        return all(c in self._char_to_label for c in text)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._char_to_label[c] for c in text]
        except KeyError as exc:
            raise CodecError(f"character {exc.args[0]!r} is not in the codec") from None

    def encode_tensor(self, text: str) -> torch.Tensor:
        return torch.tensor(self.encode(text), dtype=torch.long)

    def decode(self, labels: Iterable[int]) -> str:
        out = []
        for label in labels:
            label = int(label)
            if not 0 <= label < len(self.chars):
                raise CodecError(
                    f"label {label} is outside the codec range [0, {len(self.chars)})"
                )
            out.append(self.chars[label])
        return "".join(out)


def build_codec(transcripts: Iterable[str]) -> CharCodec:
    """Build a codec from the distinct code points of a transcript collection."""
    chars: set[str] = set()
    n = 0
    for t in transcripts:
        n += 1
        chars.update(t)
    if n == 0:
        raise CodecError("cannot build a codec from an empty transcript collection")
    if not chars:
        raise CodecError("transcripts contain no characters")
    return CharCodec(sorted(chars))


def save_codec(codec: CharCodec, path: str | Path) -> None:
    """Write one character per line; the blank stays implicit at index ``len(chars)``."""
    Path(path).write_text("".join(c + "\n" for c in codec.chars), encoding="utf-8")


def load_codec(path: str | Path) -> CharCodec:
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    chars = []
    for i, line in enumerate(raw.split("\n")[:-1], start=1):
        if len(line) != 1:
            raise CodecError(f"{path}:{i}: expected a single character, got {line!r}")
        chars.append(line)
    if not chars:
        raise CodecError(f"{path}: empty codec file")
    return CharCodec(chars)


class Lexicon:
    """Weighted multiset of words: the prior from which generation targets are drawn.

    Sampling is proportional to the per-word weights (uniform when none are
    given). Every word must be encodable by the codec the lexicon was
    validated against.
    """

    def __init__(self, words: Sequence[str], weights: Sequence[float] | None = None):
        if not words:
            raise LexiconError("lexicon needs at least one word")
        if weights is None:
            weights = [1.0] * len(words)
        if len(weights) != len(words):
            raise LexiconError("words and weights differ in length")
        w = torch.tensor(weights, dtype=torch.float64)
        if (w < 0).any():
            raise LexiconError("lexicon weights must be nonnegative")
        if float(w.sum()) <= 0.0:
            raise LexiconError("lexicon weights must not all be zero")
        self.words = list(words)
        self.weights = w

    def __len__(self) -> int:
        return len(self.words)

    def validate(self, codec: CharCodec) -> None:
        for word in self.words:
            if not codec.encodable(word):
                bad = next(c for c in word if c not in codec)
                raise LexiconError(f"word {word!r} contains out-of-codec character {bad!r}")

    def sample(self, rng: torch.Generator) -> str:
        return self.words[int(torch.multinomial(self.weights, 1, generator=rng))]

    def sample_batch(self, rng: torch.Generator, k: int) -> list[str]:
        idx = torch.multinomial(self.weights, k, replacement=True, generator=rng)
        return [self.words[int(i)] for i in idx]


def load_lexicon(path: str | Path, codec: CharCodec | None = None) -> Lexicon:
    """Load a lexicon file: one word per line, optional ``word<TAB>weight``.

    When ``codec`` is given, every word is checked for encodability at load
    time so a bad word list fails fast instead of mid-training.
    """
    path = Path(path)
    words: list[str] = []
    weights: list[float] = []
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" in line:
                word, _, weight_str = line.partition("\t")
                try:
                    weight = float(weight_str)
                except ValueError:
                    raise LexiconError(f"{path}:{i}: bad weight {weight_str!r}") from None
            else:
                word, weight = line, 1.0
            if not word:
                raise LexiconError(f"{path}:{i}: empty word")
            words.append(word)
            weights.append(weight)
    lexicon = Lexicon(words, weights)
    if codec is not None:
        lexicon.validate(codec)
    return lexicon
