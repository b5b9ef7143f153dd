"""Byte-level BPE tokenizer compatible with GPT-2 vocabulary and merge files.

Vocabulary files are UTF-8 JSON objects mapping token string to integer id;
merges files are UTF-8 text with one space-separated symbol pair per line,
rank given by line order (an optional leading ``#version`` comment line is
skipped). Files exported from public GPT-2 releases load unchanged.

Encoding is total for byte-complete vocabularies: text is split by the GPT-2
pre-tokenization pattern, each pre-token is mapped through the reversible
byte-to-unicode table, and merges are applied greedily in rank order.
"""

from __future__ import annotations

import json
from functools import lru_cache

import regex

from .errors import VocabularyError

# GPT-2 pre-tokenization: contractions, letter runs, number runs, other runs,
# and whitespace kept with the following word where possible.
_PRETOKEN_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)


@lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """Reversible byte -> printable unicode character table (GPT-2 convention)."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


def _get_pairs(symbols: tuple[str, ...]) -> set[tuple[str, str]]:
    return set(zip(symbols, symbols[1:]))


class Vocabulary:
    """Token table plus ordered merge list; immutable after construction."""

    def __init__(self, token_to_id: dict[str, int], merges: list[tuple[str, str]]):
        ids = sorted(token_to_id.values())
        if ids != list(range(len(ids))):
            raise VocabularyError("token ids must be dense in [0, V)")
        self.token_to_id = dict(token_to_id)
        self.id_to_token = {i: t for t, i in token_to_id.items()}
        self.merge_ranks = {pair: rank for rank, pair in enumerate(merges)}
        for left, right in merges:
            for part in (left, right):
                if part not in self.token_to_id:
                    raise VocabularyError(f"merge pair ({left!r}, {right!r}) not encodable")
        self._byte_encoder = bytes_to_unicode()
        self._byte_decoder = {c: b for b, c in self._byte_encoder.items()}
        self._bpe_cache: dict[str, tuple[str, ...]] = {}

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @classmethod
    def from_files(cls, vocab_path, merges_path) -> "Vocabulary":
        with open(vocab_path, encoding="utf-8") as f:
            token_to_id = json.load(f)
        merges: list[tuple[str, str]] = []
        with open(merges_path, encoding="utf-8") as f:
            for i, line in enumerate(f):
                line = line.rstrip("\n")
                if i == 0 and line.startswith("#version"):
                    continue
                if not line.strip():
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise VocabularyError(f"malformed merge line {i + 1}: {line!r}")
                merges.append((parts[0], parts[1]))
        return cls(token_to_id, merges)

    def _bpe(self, pretoken: str) -> tuple[str, ...]:
        cached = self._bpe_cache.get(pretoken)
        if cached is not None:
            return cached
        symbols = tuple(pretoken)
        while len(symbols) > 1:
            pairs = _get_pairs(symbols)
            best = min(pairs, key=lambda p: self.merge_ranks.get(p, float("inf")))
            if best not in self.merge_ranks:
                break
            merged: list[str] = []
            i = 0
            while i < len(symbols):
                if (
                    i < len(symbols) - 1
                    and symbols[i] == best[0]
                    and symbols[i + 1] == best[1]
                ):
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = tuple(merged)
        self._bpe_cache[pretoken] = symbols
        return symbols

    def encode(self, text: str) -> list[int]:
        """Deterministic greedy encoding; total for byte-complete vocabularies."""
        ids: list[int] = []
        for pretoken in _PRETOKEN_PATTERN.findall(text):
            mapped = "".join(self._byte_encoder[b] for b in pretoken.encode("utf-8"))
            for symbol in self._bpe(mapped):
                token_id = self.token_to_id.get(symbol)
                if token_id is None:
                    raise VocabularyError(
                        f"symbol {symbol!r} missing from vocabulary; "
                        "vocabulary is not byte-complete"
                    )
                ids.append(token_id)
        return ids

    def decode(self, ids) -> str:
        """Inverse of encode up to the byte-level representation."""
        chars: list[str] = []
        for raw in ids:
            i = int(raw)
            token = self.id_to_token.get(i)
            if token is None:
                raise VocabularyError(f"token id {i} outside vocabulary of size {self.size}")
            chars.append(token)
        text = "".join(chars)
        data = bytes(self._byte_decoder[c] for c in text)
        return data.decode("utf-8", errors="replace")


def condition_first_token(word: str, vocabulary: Vocabulary) -> int:
    """First sub-token id of the leading-space form of a condition word.

    Mid-sentence continuations see words preceded by a space, so the probe
    token is taken from encode(" " + word); multi-token words reduce to their
    first sub-token.
    """
    if not word:
        raise VocabularyError("condition word must be non-empty")
    ids = vocabulary.encode(" " + word)
    return ids[0]
