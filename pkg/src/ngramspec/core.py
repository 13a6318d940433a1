"""Vocabulary, tokenization and corpus helpers shared by the rest of the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BYTE = "byte"
WORD = "word"
VOCAB_MODES = (BYTE, WORD)

UNKNOWN_WORD = "<unk>"


@dataclass(frozen=True)
class Vocab:
    """A closed token vocabulary.

    Byte mode is fixed at 256 ids. Word mode assigns ids to whitespace
    delimited words in order of first appearance; the last id is reserved
    for unknown words.
    """

    size: int
    mode: str
    words: tuple[str, ...] = ()
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in VOCAB_MODES:
            raise ValueError(f"unknown vocab mode {self.mode!r}")
        if self.mode == WORD:
            object.__setattr__(self, "_index", {wd: i for i, wd in enumerate(self.words)})

    @property
    def unknown_id(self) -> int | None:
        return self.size - 1 if self.mode == WORD else None

    def id_of(self, word: str) -> int:
        return self._index.get(word, self.size - 1)


def build_vocab(corpus_text: str, mode: str = BYTE) -> Vocab:
    if not corpus_text:
        raise ValueError("empty corpus")
    if mode == BYTE:
        return Vocab(size=256, mode=BYTE)
    if mode != WORD:
        raise ValueError(f"unknown vocab mode {mode!r}")
    words = tuple(dict.fromkeys(corpus_text.split()))
    if not words:
        raise ValueError("empty corpus")
    return Vocab(size=len(words) + 1, mode=WORD, words=words + (UNKNOWN_WORD,))


def tokenize(text: str | bytes, vocab: Vocab) -> np.ndarray:
    """Map text to an int64 array of token ids."""
    if vocab.mode == BYTE:
        data = text if isinstance(text, bytes) else text.encode("utf-8")
        return np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return np.array([vocab.id_of(wd) for wd in text.split()], dtype=np.int64)


def detokenize(tokens: Iterable[int], vocab: Vocab) -> str:
    ids = [int(t) for t in tokens]
    if vocab.mode == BYTE:
        return bytes(ids).decode("utf-8", errors="replace")
    return " ".join(vocab.words[i] for i in ids)


def detokenize_bytes(tokens: Iterable[int]) -> bytes:
    return bytes(int(t) for t in tokens)


def check_tokens(tokens: Sequence[int] | np.ndarray, vocab_size: int) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise ValueError(f"token id out of range for vocab of size {vocab_size}")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """The single seeded generator every random draw goes through."""
    return np.random.default_rng(seed)


def read_corpus(paths: Sequence[str | Path], per_line: bool = False) -> list[str]:
    """Read UTF-8 corpus files into a list of documents.

    With ``per_line`` every non-blank line is a document, otherwise every file is.
    """
    docs = []
    for p in paths:
        text = Path(p).read_text(encoding="utf-8")
        if per_line:
            docs.extend(line for line in text.splitlines() if line.strip())
        else:
            docs.append(text)
    return docs
