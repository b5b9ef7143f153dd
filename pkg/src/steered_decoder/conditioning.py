"""Decoding-time conditioning strategies.

Four strategies steer an unconditioned decoder toward user-supplied attribute
words, all without touching trained parameters on disk:

- conditional prefix: prepend a natural-language sentence built from the
  conditions, and cut its influence off after a fixed number of generated
  tokens by rebuilding the cache over the visible text only
- embedding blending: mix condition-token rows into every row of a session
  copy of the input embedding table, renormalized by 1 + sum(w)
- attention KV blending: mix per-position condition key/value columns into
  the live cache, with weights decaying as w / (1 + steps_generated)
- next-token reweighting: rescale the top-K candidate probabilities by how
  strongly each candidate continuation predicts the condition tokens one
  step further ahead

Every operation is pure with respect to the loaded weights; sessions work on
copies. Strategy weights left unset on a condition resolve to the per-method
defaults carried by :class:`GenerationConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UsageError
from .model import (
    KVCache,
    ModelConfig,
    Weights,
    forward_full,
    forward_step,
    logits_to_distribution,
)
from .tokenizer import Vocabulary, condition_first_token

METHODS = ("prefix", "embedding", "attention", "next-token", "combined")

SENTIMENT_WORDS = frozenset({"positive", "negative"})

# Probabilities are floored here before exponentiation so a single near-zero
# condition probability cannot collapse the geometric mean to exactly zero.
SCORE_FLOOR = 1e-12

# Defaults for the combined method; single-strategy runs use the matching
# weight and ignore the others.
DEFAULT_TOP_K = 12
DEFAULT_EMBED_WEIGHT = 0.04
DEFAULT_ATTENTION_WEIGHT = 0.02
DEFAULT_CONDITION_WEIGHT = 0.20
DEFAULT_EARLY_STOPPING = 3


@dataclass(frozen=True)
class Condition:
    """An attribute word with its resolved token id and optional user weight.

    ``weight`` None means "use the per-strategy default"; blending and scoring
    operations require a resolved (non-None, non-negative) weight.
    """

    word: str
    token_id: int
    weight: float | None = None

    def __post_init__(self):
        if self.weight is not None and not (self.weight >= 0):
            raise UsageError(f"condition weight must be >= 0, got {self.weight}")
        if self.token_id < 0:
            raise UsageError(f"condition token id must be >= 0, got {self.token_id}")


def make_condition(word: str, vocabulary: Vocabulary, weight: float | None = None) -> Condition:
    """Resolve a condition word to its probe token id."""
    return Condition(word=word, token_id=condition_first_token(word, vocabulary),
                     weight=weight)


def resolve_weights(conditions, default_weight: float) -> list[Condition]:
    """Fill in unset condition weights from a strategy default."""
    return [
        c if c.weight is not None else replace(c, weight=float(default_weight))
        for c in conditions
    ]


@dataclass
class GenerationConfig:
    method: str = "combined"
    conditions: list[Condition] = field(default_factory=list)
    top_k: int = DEFAULT_TOP_K
    embed_weight: float = DEFAULT_EMBED_WEIGHT
    attention_weight: float = DEFAULT_ATTENTION_WEIGHT
    condition_weight: float = DEFAULT_CONDITION_WEIGHT
    early_stopping_steps: int = DEFAULT_EARLY_STOPPING
    max_tokens: int = 60
    temperature: float = 1.0
    seed: int = 0
    detached_prefix_experiment: bool = False

    def validate(self) -> None:
        if self.method not in METHODS:
            raise UsageError(
                f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}"
            )
        if self.top_k < 1:
            raise UsageError(f"top_k must be >= 1, got {self.top_k}")
        if self.max_tokens < 1:
            raise UsageError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not (self.temperature > 0) or not math.isfinite(self.temperature):
            raise UsageError(f"temperature must be positive, got {self.temperature}")
        if self.early_stopping_steps < 0:
            raise UsageError("early_stopping_steps must be >= 0")
        for name in ("embed_weight", "attention_weight", "condition_weight"):
            value = getattr(self, name)
            if not (value >= 0) or not math.isfinite(value):
                raise UsageError(f"{name} must be >= 0, got {value}")
        if self.detached_prefix_experiment and self.method != "prefix":
            raise UsageError("detached_prefix_experiment applies to method=prefix only")


@dataclass(frozen=True)
class PrefixPlan:
    """A conditional sentence, its token ids, and when to cut it off."""

    text: str
    token_ids: tuple[int, ...]
    cutoff_step: int

    def __post_init__(self):
        if self.cutoff_step < 0:
            raise UsageError(f"cutoff_step must be >= 0, got {self.cutoff_step}")


def build_prefix(conditions, vocabulary: Vocabulary, cutoff_step: int) -> PrefixPlan:
    """Compose the conditional sentence for a set of attribute words.

    Sentiment words (positive/negative) modify "article"; all other words are
    treated as topics, multiple topics joined with " and ".
    """
    if not conditions:
        raise UsageError("cannot build a conditional prefix from an empty condition list")
    sentiments = [c.word for c in conditions if c.word.lower() in SENTIMENT_WORDS]
    topics = [c.word for c in conditions if c.word.lower() not in SENTIMENT_WORDS]
    sentiment = " and ".join(sentiments)
    topic = " and ".join(topics)
    if sentiment and topic:
        text = f"The following is a {sentiment} article about {topic}."
    elif sentiment:
        text = f"The following is a {sentiment} article."
    else:
        text = f"The following is an article about {topic}."
    return PrefixPlan(
        text=text,
        token_ids=tuple(vocabulary.encode(text)),
        cutoff_step=cutoff_step,
    )


def apply_prefix_cutoff(
    weights: Weights,
    config: ModelConfig,
    cache: KVCache,
    prefix_len: int,
    generated_count: int,
    plan: PrefixPlan,
    context_tokens,
) -> KVCache:
    """Drop the conditional prefix once the cutoff step is reached.

    ``context_tokens`` is everything the cache currently covers (prefix
    included). At ``generated_count == plan.cutoff_step`` the cache is rebuilt
    by re-running the decoder over the visible text without the prefix,
    positions renumbered from 0; at any other step the cache passes through
    untouched.
    """
    if generated_count != plan.cutoff_step:
        return cache
    visible = list(context_tokens)[prefix_len:]
    if not visible:
        return KVCache.empty(config)
    _, rebuilt = forward_full(weights, config, visible)
    return rebuilt


def blend_input_embeddings(token_embedding_in: np.ndarray, conditions) -> np.ndarray:
    """Mix condition-token rows into every embedding row.

    Each row v becomes (e_v + sum_i w_i * e_{t_i}) / (1 + sum_i w_i), using
    the original table rows on the right-hand side. Returns a new table; the
    output embedding is deliberately left untouched by callers.
    """
    table = np.asarray(token_embedding_in, dtype=np.float32)
    add = np.zeros(table.shape[1], dtype=np.float32)
    total = np.float32(0.0)
    for cond in conditions:
        w = np.float32(cond.weight)
        add = add + w * table[cond.token_id]
        total = total + w
    return (table + add) / (np.float32(1.0) + total)


def condition_kv(
    weights: Weights, config: ModelConfig, condition: Condition, position: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Key/value columns a condition token produces at a given position.

    The token is fed alone, on an empty cache, with the requested position
    index; the result is one (key, value) pair of [H, d/H] arrays per layer.
    """
    probe = KVCache.empty(config)
    forward_step(weights, config, probe, condition.token_id, position)
    return [
        (probe.keys[i][:, 0, :], probe.values[i][:, 0, :])
        for i in range(config.n_layers)
    ]


class ConditionKVTable:
    """Memoized per-position condition KV columns for one generation session.

    Columns depend only on (weights, condition token, position), never on the
    cache contents, so they are computed once and reused across blend steps.
    Safe for concurrent readers: racing writers store identical values.
    """

    def __init__(self, weights: Weights, config: ModelConfig, conditions):
        self.weights = weights
        self.config = config
        self.conditions = list(conditions)
        self._columns: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray]]] = {}

    def columns(self, cond_index: int, position: int):
        key = (cond_index, position)
        got = self._columns.get(key)
        if got is None:
            got = condition_kv(
                self.weights, self.config, self.conditions[cond_index], position
            )
            self._columns[key] = got
        return got

    def stacked(self, cond_index: int, length: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer [H, length, d/H] key/value arrays covering positions 0..length-1."""
        per_position = [self.columns(cond_index, p) for p in range(length)]
        out = []
        for layer in range(self.config.n_layers):
            keys = np.stack([cols[layer][0] for cols in per_position], axis=1)
            vals = np.stack([cols[layer][1] for cols in per_position], axis=1)
            out.append((keys, vals))
        return out


def blend_kv(
    cache: KVCache,
    conditions,
    step_index: int,
    table: ConditionKVTable,
) -> KVCache:
    """Blend condition KV columns into every cached position.

    With decayed weights u_i = w_i / (1 + step_index), the column at position
    p becomes (kv_p + sum_i u_i * kv_{c_i at p}) / (1 + sum_i u_i) across all
    layers and heads. The decay keeps early steps strongly conditioned while
    preventing runaway repetition later on.
    """
    if not conditions:
        return cache
    length = cache.length
    if length == 0:
        raise UsageError("cannot blend an empty cache")
    decayed = [c.weight / (1.0 + step_index) for c in conditions]
    denom = np.float32(1.0 + sum(decayed))

    new_keys = []
    new_values = []
    stacks = [table.stacked(i, length) for i in range(len(conditions))]
    for layer in range(len(cache.keys)):
        k_add = np.zeros_like(cache.keys[layer])
        v_add = np.zeros_like(cache.values[layer])
        for u, stack in zip(decayed, stacks):
            k_add = k_add + np.float32(u) * stack[layer][0]
            v_add = v_add + np.float32(u) * stack[layer][1]
        new_keys.append((cache.keys[layer] + k_add) / denom)
        new_values.append((cache.values[layer] + v_add) / denom)
    return KVCache(keys=new_keys, values=new_values)


def score_from_probs(probs: np.ndarray, conditions) -> float:
    """Weighted geometric mean of condition-token probabilities.

    Computes (prod_i p_i^{w_i})^(1/n); an empty condition list scores 1, and
    with one condition this reduces exactly to p^w.
    """
    if not conditions:
        return 1.0
    acc = 0.0
    for cond in conditions:
        p = max(float(probs[cond.token_id]), SCORE_FLOOR)
        acc += cond.weight * math.log(p)
    return math.exp(acc / len(conditions))


def condition_score(
    weights: Weights, config: ModelConfig, context_tokens, candidate: int, conditions
) -> float:
    """Score a candidate next token by the conditions it predicts next.

    Feeds (context + candidate) through the decoder, reads the probability of
    each condition token one step further ahead, and combines them with
    :func:`score_from_probs`. Always in (0, 1].
    """
    logits, _ = forward_full(weights, config, list(context_tokens) + [int(candidate)])
    probs = logits_to_distribution(logits[-1], 1.0)
    return score_from_probs(probs, conditions)


def top_k_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Ids of the K most probable tokens; ties broken toward lower token id."""
    order = np.argsort(-np.asarray(probs), kind="stable")
    return order[:k]


def reweight_distribution(base: np.ndarray, candidates: np.ndarray, scores) -> np.ndarray:
    """Candidate-restricted distribution proportional to score * base probability."""
    q = np.zeros(len(base), dtype=np.float64)
    q[candidates] = np.asarray(scores, dtype=np.float64) * np.asarray(base, dtype=np.float64)[candidates]
    total = q.sum()
    if total <= 0:
        raise UsageError("reweighting produced an all-zero distribution")
    return q / total


def next_token_distribution(
    weights: Weights,
    config: ModelConfig,
    context_tokens,
    base: np.ndarray,
    conditions,
    k: int,
) -> np.ndarray:
    """Reweight the top-K of a base distribution by condition scores.

    Every non-candidate token gets probability zero; candidates are
    renormalized so the result is again a distribution.
    """
    if k < 1 or k > len(base):
        raise UsageError(f"top-K {k} outside [1, {len(base)}]")
    candidates = top_k_indices(base, k)
    scores = [
        condition_score(weights, config, context_tokens, cand, conditions)
        for cand in candidates
    ]
    return reweight_distribution(base, candidates, scores)


def detached_prefix_setup(
    weights: Weights, config: ModelConfig, conditions, vocabulary: Vocabulary
) -> KVCache:
    """Feed the conditional sentence and keep only its KV pairs.

    Position counting restarts from 0 for whatever is generated afterwards.
    Kept behind an experimental flag: generation quality is known to collapse,
    which is the point of having it available for comparison runs.
    """
    plan = build_prefix(conditions, vocabulary, cutoff_step=0)
    _, cache = forward_full(weights, config, list(plan.token_ids))
    return cache
