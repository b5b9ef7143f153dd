"""Dense-tensor math for a GPT-2-style decoder, with and without a KV cache.

Model arithmetic is plain float32 numpy: pre-norm blocks, learned absolute
position embeddings, tanh-approximated GELU (constant 0.044715), attention
scaled by 1/sqrt(d/H), and a causal mask applied as an additive -1e10 before
softmax. Output logits always use ``token_embedding_out``; conditioning only
ever touches ``token_embedding_in``.

Probability vectors returned by :func:`logits_to_distribution` are float64 so
that normalization holds far inside the 1e-6 contract.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CapacityError, NumericError, VocabularyError

NEG_MASK = np.float32(-1e10)
GELU_CUBIC = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the decoder."""

    vocab_size: int
    context_len: int
    embed_dim: int
    n_layers: int
    n_heads: int
    layernorm_eps: float = 1e-5

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.context_len < 1:
            raise ValueError(f"context_len must be >= 1, got {self.context_len}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} must divide evenly into {self.n_heads} heads"
            )
        if self.layernorm_eps <= 0:
            raise ValueError("layernorm_eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads


@dataclass
class LayerWeights:
    ln1_gain: np.ndarray  # [d]
    ln1_bias: np.ndarray  # [d]
    qkv_weight: np.ndarray  # [d, 3d]
    qkv_bias: np.ndarray  # [3d]
    attn_proj_weight: np.ndarray  # [d, d]
    attn_proj_bias: np.ndarray  # [d]
    ln2_gain: np.ndarray  # [d]
    ln2_bias: np.ndarray  # [d]
    mlp_fc_weight: np.ndarray  # [d, 4d]
    mlp_fc_bias: np.ndarray  # [4d]
    mlp_proj_weight: np.ndarray  # [4d, d]
    mlp_proj_bias: np.ndarray  # [d]


@dataclass
class Weights:
    """Parameter tensors of the decoder.

    ``token_embedding_in`` and ``token_embedding_out`` are equal at load time
    (tied). Sessions that blend conditions into the input embedding work on a
    copy; the loaded instance is immutable by convention and safely shared.
    """

    token_embedding_in: np.ndarray  # [V, d]
    token_embedding_out: np.ndarray  # [V, d]
    position_embedding: np.ndarray  # [T, d]
    layers: list[LayerWeights]
    final_ln_gain: np.ndarray  # [d]
    final_ln_bias: np.ndarray  # [d]

    def with_input_embedding(self, table: np.ndarray) -> "Weights":
        """Shallow copy with a replaced input embedding table."""
        return replace(self, token_embedding_in=table)


@dataclass
class KVCache:
    """Per-layer attention keys/values for incremental decoding.

    Arrays are shaped [H, t, d/H]; all layers share the same length t.
    A cache is session-local and never shared between generations.
    """

    keys: list[np.ndarray]
    values: list[np.ndarray]

    @classmethod
    def empty(cls, config: ModelConfig) -> "KVCache":
        shape = (config.n_heads, 0, config.head_dim)
        empty = [np.zeros(shape, dtype=np.float32) for _ in range(config.n_layers)]
        return cls(keys=list(empty), values=[a.copy() for a in empty])

    @property
    def length(self) -> int:
        return self.keys[0].shape[1]

    def copy(self) -> "KVCache":
        return KVCache(
            keys=[k.copy() for k in self.keys],
            values=[v.copy() for v in self.values],
        )


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mean).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + np.float32(eps)) * gain + bias


def gelu(x: np.ndarray) -> np.ndarray:
    inner = np.sqrt(np.float32(2.0 / np.pi)) * (x + np.float32(GELU_CUBIC) * x * x * x)
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(inner))


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    # [t, d] -> [H, t, d/H]
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    # [H, t, d/H] -> [t, d]
    h, t, hd = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * hd)


def _check_tokens(tokens, vocab_size: int) -> list[int]:
    ids = [int(t) for t in tokens]
    for t in ids:
        if t < 0 or t >= vocab_size:
            raise VocabularyError(f"token id {t} outside vocabulary of size {vocab_size}")
    return ids


def forward_full(
    weights: Weights, config: ModelConfig, tokens
) -> tuple[np.ndarray, KVCache]:
    """Run the decoder over a whole sequence.

    Returns the [len, V] logits matrix (row i holds next-token logits after
    position i) and the populated KV cache.
    """
    ids = _check_tokens(tokens, config.vocab_size)
    t = len(ids)
    if t < 1:
        raise CapacityError("cannot run the decoder over an empty sequence")
    if t > config.context_len:
        raise CapacityError(
            f"sequence of length {t} exceeds context window {config.context_len}"
        )

    x = weights.token_embedding_in[ids] + weights.position_embedding[:t]
    x = x.astype(np.float32, copy=False)
    mask = np.triu(np.full((t, t), NEG_MASK, dtype=np.float32), k=1)
    scale = np.float32(1.0 / np.sqrt(config.head_dim))

    cache = KVCache(keys=[], values=[])
    for layer in weights.layers:
        h = layer_norm(x, layer.ln1_gain, layer.ln1_bias, config.layernorm_eps)
        qkv = h @ layer.qkv_weight + layer.qkv_bias
        q, k, v = np.split(qkv, 3, axis=-1)
        q = _split_heads(q, config.n_heads)
        k = _split_heads(k, config.n_heads)
        v = _split_heads(v, config.n_heads)
        scores = q @ k.transpose(0, 2, 1) * scale + mask
        att = _softmax_rows(scores)
        x = x + (_merge_heads(att @ v) @ layer.attn_proj_weight + layer.attn_proj_bias)
        h = layer_norm(x, layer.ln2_gain, layer.ln2_bias, config.layernorm_eps)
        x = x + (gelu(h @ layer.mlp_fc_weight + layer.mlp_fc_bias) @ layer.mlp_proj_weight
                 + layer.mlp_proj_bias)
        cache.keys.append(k)
        cache.values.append(v)

    x = layer_norm(x, weights.final_ln_gain, weights.final_ln_bias, config.layernorm_eps)
    logits = x @ weights.token_embedding_out.T
    return logits, cache


def _step_hidden(
    weights: Weights, config: ModelConfig, cache: KVCache, token: int, position: int,
    append: bool,
) -> np.ndarray:
    """One-token forward pass against a cache; optionally appends its KV column."""
    (token,) = _check_tokens([token], config.vocab_size)
    if position < 0 or position >= config.context_len:
        raise CapacityError(
            f"position {position} outside context window {config.context_len}"
        )
    if cache.length + 1 > config.context_len:
        raise CapacityError(
            f"cache of length {cache.length} cannot grow past {config.context_len}"
        )

    x = weights.token_embedding_in[token] + weights.position_embedding[position]
    x = x[np.newaxis, :].astype(np.float32, copy=False)
    scale = np.float32(1.0 / np.sqrt(config.head_dim))

    for i, layer in enumerate(weights.layers):
        h = layer_norm(x, layer.ln1_gain, layer.ln1_bias, config.layernorm_eps)
        qkv = h @ layer.qkv_weight + layer.qkv_bias
        q, k, v = np.split(qkv, 3, axis=-1)
        q = _split_heads(q, config.n_heads)  # [H, 1, hd]
        k = _split_heads(k, config.n_heads)
        v = _split_heads(v, config.n_heads)
        keys = np.concatenate([cache.keys[i], k], axis=1)
        vals = np.concatenate([cache.values[i], v], axis=1)
        scores = q @ keys.transpose(0, 2, 1) * scale  # past + self, no mask needed
        att = _softmax_rows(scores)
        x = x + (_merge_heads(att @ vals) @ layer.attn_proj_weight + layer.attn_proj_bias)
        h = layer_norm(x, layer.ln2_gain, layer.ln2_bias, config.layernorm_eps)
        x = x + (gelu(h @ layer.mlp_fc_weight + layer.mlp_fc_bias) @ layer.mlp_proj_weight
                 + layer.mlp_proj_bias)
        if append:
            cache.keys[i] = keys
            cache.values[i] = vals

    x = layer_norm(x, weights.final_ln_gain, weights.final_ln_bias, config.layernorm_eps)
    return x


def forward_step(
    weights: Weights, config: ModelConfig, cache: KVCache, token: int, position: int
) -> tuple[np.ndarray, KVCache]:
    """Decode one token incrementally.

    Appends exactly one KV column per layer and returns the [V] next-token
    logits together with the updated cache. The position is explicit because
    prefix strategies renumber it.
    """
    x = _step_hidden(weights, config, cache, token, position, append=True)
    logits = (x @ weights.token_embedding_out.T)[0]
    return logits, cache


def forward_probe(
    weights: Weights, config: ModelConfig, cache: KVCache, token: int, position: int
) -> np.ndarray:
    """Next-token logits for a hypothetical continuation; the cache is untouched."""
    x = _step_hidden(weights, config, cache, token, position, append=False)
    return (x @ weights.token_embedding_out.T)[0]


def logits_to_distribution(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax with max-subtraction, computed in float64."""
    if not np.isfinite(temperature) or temperature <= 0:
        raise NumericError(f"temperature must be a positive finite scalar, got {temperature}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("logits contain non-finite values")
    z = np.asarray(logits, dtype=np.float64) / float(temperature)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()
