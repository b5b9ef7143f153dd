"""Forward-pass contracts: cache equivalence, normalization, zero-model
uniformity, determinism, and capacity/vocabulary errors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steered_decoder.errors import CapacityError, NumericError, VocabularyError
from steered_decoder.model import (
    KVCache,
    ModelConfig,
    forward_full,
    forward_probe,
    forward_step,
    logits_to_distribution,
)
from steered_decoder.rng import Xoshiro256StarStar


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=1, context_len=8, embed_dim=8, n_layers=1, n_heads=2)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=8, context_len=8, embed_dim=30, n_layers=1, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=8, context_len=0, embed_dim=8, n_layers=1, n_heads=2)


def test_zero_weights_give_zero_logits_and_uniform(zero_weights, tiny_config):
    logits, _ = forward_full(zero_weights, tiny_config, [0, 5, 63])
    assert np.all(logits == 0.0)
    dist = logits_to_distribution(logits[-1], 1.0)
    assert np.all(dist == dist[0])
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)


def test_zero_weights_step_uniform(zero_weights, tiny_config):
    cache = KVCache.empty(tiny_config)
    logits, cache = forward_step(zero_weights, tiny_config, cache, 0, 0)
    assert np.all(logits == 0.0)
    assert cache.length == 1


def test_cache_matches_full_three_tokens(tiny_weights, tiny_config):
    tokens = [3, 1, 4]
    full_logits, _ = forward_full(tiny_weights, tiny_config, tokens)
    cache = KVCache.empty(tiny_config)
    for pos, tok in enumerate(tokens):
        step_logits, cache = forward_step(tiny_weights, tiny_config, cache, tok, pos)
        assert np.max(np.abs(step_logits - full_logits[pos])) < 1e-4


def test_cache_matches_full_32_random_tokens(tiny_weights, tiny_config):
    rng = Xoshiro256StarStar(123)
    tokens = [rng.next_u64() % tiny_config.vocab_size for _ in range(32)]
    full_logits, full_cache = forward_full(tiny_weights, tiny_config, tokens)
    cache = KVCache.empty(tiny_config)
    worst = 0.0
    for pos, tok in enumerate(tokens):
        step_logits, cache = forward_step(tiny_weights, tiny_config, cache, tok, pos)
        worst = max(worst, float(np.max(np.abs(step_logits - full_logits[pos]))))
    assert worst < 1e-4
    for layer in range(tiny_config.n_layers):
        assert np.max(np.abs(cache.keys[layer] - full_cache.keys[layer])) < 1e-4
        assert np.max(np.abs(cache.values[layer] - full_cache.values[layer])) < 1e-4


def test_forward_probe_equals_step_without_mutation(tiny_weights, tiny_config):
    _, cache = forward_full(tiny_weights, tiny_config, [7, 8, 9])
    probe = forward_probe(tiny_weights, tiny_config, cache, 10, 3)
    assert cache.length == 3
    step_logits, _ = forward_step(tiny_weights, tiny_config, cache.copy(), 10, 3)
    assert np.array_equal(probe, step_logits)


def test_capacity_errors(tiny_weights, tiny_config):
    too_long = list(range(tiny_config.context_len + 1))
    with pytest.raises(CapacityError):
        forward_full(tiny_weights, tiny_config, [t % 64 for t in too_long])
    cache = KVCache.empty(tiny_config)
    with pytest.raises(CapacityError):
        forward_step(tiny_weights, tiny_config, cache, 0, tiny_config.context_len)
    with pytest.raises(CapacityError):
        forward_full(tiny_weights, tiny_config, [])


def test_vocabulary_errors(tiny_weights, tiny_config):
    with pytest.raises(VocabularyError):
        forward_full(tiny_weights, tiny_config, [0, tiny_config.vocab_size])
    with pytest.raises(VocabularyError):
        forward_step(tiny_weights, tiny_config, KVCache.empty(tiny_config), -1, 0)


def test_determinism_bit_identical(tiny_weights, tiny_config):
    a, _ = forward_full(tiny_weights, tiny_config, [9, 4, 2, 60])
    b, _ = forward_full(tiny_weights, tiny_config, [9, 4, 2, 60])
    assert np.array_equal(a, b)


def test_distribution_equal_logits_uniform():
    dist = logits_to_distribution(np.zeros(4, dtype=np.float32) + 1.75, 1.0)
    assert np.allclose(dist, [0.25, 0.25, 0.25, 0.25], atol=1e-12)


def test_distribution_closed_form():
    # softmax([ln 1, ln 3]) = [1/4, 3/4]
    dist = logits_to_distribution(np.array([0.0, math.log(3.0)]), 1.0)
    assert dist[0] == pytest.approx(0.25, abs=1e-12)
    assert dist[1] == pytest.approx(0.75, abs=1e-12)


def test_distribution_rejects_bad_inputs():
    with pytest.raises(NumericError):
        logits_to_distribution(np.zeros(4), 0.0)
    with pytest.raises(NumericError):
        logits_to_distribution(np.zeros(4), -1.0)
    with pytest.raises(NumericError):
        logits_to_distribution(np.array([0.0, np.nan]), 1.0)
    with pytest.raises(NumericError):
        logits_to_distribution(np.array([0.0, np.inf]), 1.0)


def test_temperature_flattens():
    logits = np.array([2.0, 0.0, -1.0], dtype=np.float32)
    sharp = logits_to_distribution(logits, 0.5)
    flat = logits_to_distribution(logits, 4.0)
    assert sharp[0] > flat[0]
    assert sharp[2] < flat[2]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=64),
       st.floats(min_value=0.1, max_value=10))
def test_distribution_normalized_property(logit_list, temperature):
    dist = logits_to_distribution(np.array(logit_list, dtype=np.float32), temperature)
    assert np.all(dist >= 0)
    assert abs(float(dist.sum()) - 1.0) < 1e-6
