from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..errors import DataError, FormatError, VocabularyError

RESERVED = ("<pad>", "<sos>", "<eos>", "<unk>")
PAD, SOS, EOS, UNK = 0, 1, 2, 3

_STRIP = str.maketrans("", "", string.punctuation)


def normalize(caption: str) -> list[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return caption.lower().translate(_STRIP).split()


class Vocabulary:
    """Word <-> index map; indices 0-3 are the reserved tokens."""

    def __init__(self, words: Iterable[str]):
        words = list(words)
        self._itos = list(RESERVED) + [w for w in words if w not in RESERVED]
        self._stoi = {w: i for i, w in enumerate(self._itos)}
        if len(self._stoi) != len(self._itos):
            raise VocabularyError("duplicate words in vocabulary")

    def __len__(self):
        return len(self._itos)

    def __contains__(self, word):
        return word in self._stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def __repr__(self):
        return f"Vocabulary(W={len(self)})"

    @property
    def words(self) -> list[str]:
        """Content words, without the reserved tokens."""
        return self._itos[len(RESERVED):]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def index(self, word: str) -> int:
        return self._stoi[word]

    def get(self, word: str, default=None):
        return self._stoi.get(word, default)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self._itos):
            raise VocabularyError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self._itos[idx]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise FormatError("vocabulary file must start with the reserved tokens", path=path)
        return cls(lines[len(RESERVED):])


def build_vocabulary(captions: Iterable[str]) -> Vocabulary:
    words = set()
    for c in captions:
        words.update(normalize(c))
    if not words:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(sorted(words - set(RESERVED)))


@dataclass
class VocabIntersection:
    vocab: Vocabulary
    removed: list[str]

    @property
    def n_removed(self) -> int:
        return len(self.removed)


def intersect_vocabulary(v_new: Vocabulary, v_ori: Vocabulary) -> VocabIntersection:
    """Keep the original vocabulary; report new words it cannot represent."""
    removed = [w for w in v_new.words if w not in v_ori]
    return VocabIntersection(vocab=v_ori, removed=removed)


@dataclass
class EncodeStats:
    captions: int = 0
    dropped_words: int = 0
    unk_words: int = 0
    empty_captions: int = 0


def encode_caption(caption: str, vocab: Vocabulary, drop_oov: bool = False,
                   stats: EncodeStats | None = None) -> list[int]:
    """SOS + word ids + EOS. Unknown words are deleted or mapped to UNK."""
    ids = [SOS]
    n_words = 0
    for w in normalize(caption):
        idx = vocab.get(w)
        if idx is None:
            if drop_oov:
                if stats is not None:
                    stats.dropped_words += 1
                continue
            idx = UNK
            if stats is not None:
                stats.unk_words += 1
        ids.append(idx)
        n_words += 1
    ids.append(EOS)
    if stats is not None:
        stats.captions += 1
        if n_words == 0:
            stats.empty_captions += 1
    return ids


def decode_tokens(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Inverse of encode_caption for in-vocabulary words; stops at EOS."""
    words = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, SOS):
            continue
        words.append(vocab.token(i))
    return " ".join(words)
