"""Word-level tokenizer, corpus-derived vocabulary, and dataset file loaders.

File formats (all tab-separated, UTF-8):
  corpus / queries  ``name<TAB>text`` one record per line
  vocabulary        one token per line; 1-based line number = id - 3
"""

from __future__ import annotations

import hashlib
import string
from collections import Counter
from pathlib import Path

from .errors import FormatError

PAD_ID = 0
START_ID = 1
UNK_ID = 2
SENTINEL_ID = 3
SPECIAL_TOKENS = ("<pad>", "<s>", "<unk>", "<sentinel>")
NUM_SPECIALS = len(SPECIAL_TOKENS)

_STRIP_CHARS = string.punctuation


def split_words(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation."""
    words = []
    for raw in text.lower().split():
        w = raw.strip(_STRIP_CHARS)
        if w:
            words.append(w)
    return words


class Vocabulary:
    """Token-to-id map with four reserved ids (pad, start, unk, sentinel)."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise FormatError("vocabulary tokens must be unique")
        self._tokens = list(tokens)
        self._ids = {tok: NUM_SPECIALS + i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return NUM_SPECIALS + len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, term_id: int) -> str:
        if 0 <= term_id < NUM_SPECIALS:
            return SPECIAL_TOKENS[term_id]
        return self._tokens[term_id - NUM_SPECIALS]

    def digest(self) -> str:
        """Content digest used to pair checkpoints with their vocabulary."""
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(
            "".join(tok + "\n" for tok in self._tokens), encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        tokens = [line for line in text.splitlines() if line]
        return cls(tokens)


def build_vocab(corpus: dict[str, str], min_freq: int = 1) -> Vocabulary:
    """Vocabulary of tokens with frequency >= min_freq, ordered by (-freq, token)."""
    counts: Counter[str] = Counter()
    for name in sorted(corpus):
        counts.update(split_words(corpus[name]))
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(kept)


def tokenize(vocab: Vocabulary, text: str, max_len: int | None = None) -> list[int]:
    """Map text to term ids; unknown words become <unk>, truncated to max_len."""
    ids = [vocab.id_of(w) for w in split_words(text)]
    if max_len is not None:
        ids = ids[:max_len]
    return ids


def read_tsv_texts(path) -> dict[str, str]:
    """Read ``name<TAB>text`` records; names must be unique."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
            name, text = parts
            if name in out:
                raise FormatError(f"{path}:{lineno}: duplicate name {name!r}")
            out[name] = text
    return out


def write_tsv_texts(path, records: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, text in records.items():
            fh.write(f"{name}\t{text}\n")
