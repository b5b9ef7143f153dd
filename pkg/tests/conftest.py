"""Shared fixtures: tiny seeded models and a byte-complete toy vocabulary."""

from __future__ import annotations

import json

import pytest

from steered_decoder.model import ModelConfig
from steered_decoder.model_io import make_test_model
from steered_decoder.tokenizer import Vocabulary, bytes_to_unicode

# Words that get whole-token forms (plain and leading-space) in the toy
# vocabulary, built as left-fold merge ladders so the ladders cannot hijack
# each other mid-word.
TOY_WORDS = ["the", "The", "chicken", "science", "positive", "politics"]


def build_toy_vocab_data() -> tuple[dict[str, int], list[tuple[str, str]]]:
    """Byte-complete token table plus merges, in plain data form."""
    byte_chars = [bytes_to_unicode()[b] for b in range(256)]
    tokens = list(byte_chars)
    merges: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()

    def add(left: str, right: str) -> None:
        if (left, right) in seen:
            return
        seen.add((left, right))
        merges.append((left, right))
        merged = left + right
        if merged not in tokens:
            tokens.append(merged)

    for word in TOY_WORDS:
        prefix = word[0]
        for ch in word[1:]:
            add(prefix, ch)
            prefix += ch
        add("Ġ", word)
    return {t: i for i, t in enumerate(tokens)}, merges


def write_vocab_files(tmp_path, token_to_id, merges):
    vocab_path = tmp_path / "vocab.json"
    merges_path = tmp_path / "merges.txt"
    vocab_path.write_text(json.dumps(token_to_id, ensure_ascii=False), encoding="utf-8")
    lines = ["#version: 0.2"] + [f"{a} {b}" for a, b in merges]
    merges_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return vocab_path, merges_path


@pytest.fixture(scope="session")
def tiny_config() -> ModelConfig:
    return ModelConfig(vocab_size=64, context_len=128, embed_dim=32, n_layers=2, n_heads=4)


@pytest.fixture(scope="session")
def tiny_weights(tiny_config):
    return make_test_model(tiny_config, seed=42)


@pytest.fixture(scope="session")
def zero_weights(tiny_config):
    return make_test_model(tiny_config, seed=0, zero=True)


@pytest.fixture(scope="session")
def toy_vocabulary() -> Vocabulary:
    token_to_id, merges = build_toy_vocab_data()
    return Vocabulary(token_to_id, merges)


@pytest.fixture(scope="session")
def toy_config(toy_vocabulary) -> ModelConfig:
    return ModelConfig(
        vocab_size=toy_vocabulary.size,
        context_len=512,
        embed_dim=32,
        n_layers=2,
        n_heads=4,
    )


@pytest.fixture(scope="session")
def toy_weights(toy_config):
    return make_test_model(toy_config, seed=11)


@pytest.fixture(scope="session")
def toy_ref_weights(toy_config):
    # Separately seeded model standing in for the reference LM.
    return make_test_model(toy_config, seed=99)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, visible without -s."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, status in RESULTS:
            terminalreporter.write_line(f"ACCEPTANCE {name}: {status}")
