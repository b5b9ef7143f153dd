"""Seeded stochastic decoding loop tying model and conditioning together.

Per generated token the pipeline is: prefix cutoff check, KV blending (when
the attention strategy is active), one incremental forward step, temperature
softmax, next-token reweighting or plain top-K filtering, then one
inverse-CDF draw from the deterministic generator. Exactly one uniform is
consumed per emitted token regardless of method, which is what makes the
zero-weight runs of every strategy reproduce unconditioned sampling
draw-for-draw.

Candidate probing for the next-token strategy runs incrementally against the
live (possibly blended) cache rather than re-encoding the context from
scratch; with an unblended cache this is numerically the same probe the
definitional :func:`~steered_decoder.conditioning.condition_score` performs.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .conditioning import (
    Condition,
    ConditionKVTable,
    GenerationConfig,
    PrefixPlan,
    apply_prefix_cutoff,
    blend_input_embeddings,
    blend_kv,
    build_prefix,
    detached_prefix_setup,
    reweight_distribution,
    resolve_weights,
    score_from_probs,
    top_k_indices,
)
from .errors import CapacityError, ParseError, UsageError
from .model import (
    KVCache,
    ModelConfig,
    Weights,
    forward_full,
    forward_probe,
    forward_step,
    logits_to_distribution,
)
from .rng import Xoshiro256StarStar
from .tokenizer import Vocabulary

LOGPROB_FLOOR = 1e-12

DEGENERATION_WINDOW = 16
DEGENERATION_FRACTION = 0.5


@dataclass
class SampleRecord:
    """One generated passage plus everything needed to reproduce and score it."""

    prompt: str
    conditions: list[dict]
    method: str
    seed: int
    tokens: list[int]
    text: str
    degenerate: bool
    logprobs: list[float]


def top_k_filter(dist: np.ndarray, k: int) -> np.ndarray:
    """Keep the K most probable entries (ties to lower id) and renormalize."""
    if k < 1 or k > len(dist):
        raise UsageError(f"top-K {k} outside [1, {len(dist)}]")
    keep = top_k_indices(dist, k)
    out = np.zeros(len(dist), dtype=np.float64)
    out[keep] = np.asarray(dist, dtype=np.float64)[keep]
    return out / out.sum()


def sample_multinomial(dist: np.ndarray, rng: Xoshiro256StarStar) -> int:
    """Inverse-CDF draw; identical generator state yields identical tokens."""
    u = rng.uniform()
    cdf = np.cumsum(np.asarray(dist, dtype=np.float64))
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= len(dist):
        idx = len(dist) - 1
    while idx > 0 and dist[idx] == 0.0:
        idx -= 1
    return idx


def detect_degeneration(
    token_ids,
    window: int = DEGENERATION_WINDOW,
    fraction: float = DEGENERATION_FRACTION,
) -> bool:
    """Flag pathological repetition.

    True iff some length-``window`` slice has one token id on more than
    ``fraction * window`` positions, or any 4-gram occurs three or more times
    back to back.
    """
    if window < 2:
        raise UsageError(f"window must be >= 2, got {window}")
    if not (0 < fraction <= 1):
        raise UsageError(f"fraction must be in (0, 1], got {fraction}")
    ids = [int(t) for t in token_ids]

    if len(ids) >= window:
        limit = fraction * window
        counts = Counter(ids[:window])
        if max(counts.values()) > limit:
            return True
        for i in range(window, len(ids)):
            counts[ids[i - window]] -= 1
            counts[ids[i]] += 1
            if counts[ids[i]] > limit:
                return True

    for i in range(len(ids) - 11):
        gram = ids[i:i + 4]
        if ids[i + 4:i + 8] == gram and ids[i + 8:i + 12] == gram:
            return True
    return False


@dataclass
class _Pipeline:
    """Per-run state shared across samples: everything seed-independent."""

    weights: Weights
    config: ModelConfig
    vocabulary: Vocabulary
    gen: GenerationConfig
    prompt: str
    prompt_ids: tuple[int, ...]
    prefix_plan: PrefixPlan | None
    detached_template: KVCache | None
    attn_conditions: list[Condition]
    nt_conditions: list[Condition]
    kv_table: ConditionKVTable | None


def _build_pipeline(
    weights: Weights,
    config: ModelConfig,
    vocabulary: Vocabulary,
    gen: GenerationConfig,
    prompt: str,
) -> _Pipeline:
    gen.validate()
    if gen.top_k > config.vocab_size:
        raise UsageError(
            f"top_k {gen.top_k} exceeds vocabulary size {config.vocab_size}"
        )
    conds = list(gen.conditions)
    for cond in conds:
        if cond.token_id >= config.vocab_size:
            raise UsageError(
                f"condition {cond.word!r} resolved outside the model vocabulary"
            )
    method = gen.method

    session = weights
    if method in ("embedding", "combined") and conds:
        blended = blend_input_embeddings(
            weights.token_embedding_in, resolve_weights(conds, gen.embed_weight)
        )
        session = weights.with_input_embedding(blended)

    prefix_plan = None
    detached_template = None
    if method in ("prefix", "combined") and conds:
        if gen.detached_prefix_experiment:
            detached_template = detached_prefix_setup(session, config, conds, vocabulary)
        else:
            prefix_plan = build_prefix(conds, vocabulary, gen.early_stopping_steps)

    # A prefix sentence is followed by a space, so the prompt takes its
    # mid-text (leading-space) token form whenever a prefix is in front.
    if prompt:
        prompt_ids = tuple(vocabulary.encode(" " + prompt if prefix_plan else prompt))
    else:
        prompt_ids = ()

    prefix_len = len(prefix_plan.token_ids) if prefix_plan else 0
    if detached_template is not None:
        prefix_len = detached_template.length
    if not prompt_ids and prefix_plan is None and detached_template is None:
        raise UsageError("prompt encodes to no tokens and no prefix is active")
    if not prompt_ids and detached_template is not None:
        raise UsageError("detached prefix mode requires a non-empty prompt")
    if prefix_len + len(prompt_ids) + gen.max_tokens > config.context_len:
        raise CapacityError(
            f"prefix ({prefix_len}) + prompt ({len(prompt_ids)}) + max_tokens "
            f"({gen.max_tokens}) exceeds context window {config.context_len}"
        )

    attn_conditions = (
        resolve_weights(conds, gen.attention_weight)
        if method in ("attention", "combined") and conds
        else []
    )
    nt_conditions = (
        resolve_weights(conds, gen.condition_weight)
        if method in ("next-token", "combined") and conds
        else []
    )
    kv_table = (
        ConditionKVTable(session, config, attn_conditions) if attn_conditions else None
    )
    return _Pipeline(
        weights=session,
        config=config,
        vocabulary=vocabulary,
        gen=gen,
        prompt=prompt,
        prompt_ids=prompt_ids,
        prefix_plan=prefix_plan,
        detached_template=detached_template,
        attn_conditions=attn_conditions,
        nt_conditions=nt_conditions,
        kv_table=kv_table,
    )


def _run_sample(pipe: _Pipeline, seed: int) -> SampleRecord:
    gen = pipe.gen
    config = pipe.config
    weights = pipe.weights
    rng = Xoshiro256StarStar(seed)

    if pipe.detached_template is not None:
        # Detached-prefix experiment: prefix KV stays, positions restart at 0.
        cache = pipe.detached_template.copy()
        fed = list(pipe.prompt_ids)
        for j, tok in enumerate(fed[:-1]):
            forward_step(weights, config, cache, tok, j)
        pending, pending_pos = fed[-1], len(fed) - 1
        prefix_len = 0
    else:
        prefix_ids = list(pipe.prefix_plan.token_ids) if pipe.prefix_plan else []
        fed = prefix_ids + list(pipe.prompt_ids)
        if len(fed) > 1:
            _, cache = forward_full(weights, config, fed[:-1])
        else:
            cache = KVCache.empty(config)
        pending, pending_pos = fed[-1], len(fed) - 1
        prefix_len = len(prefix_ids)

    generated: list[int] = []
    logprobs: list[float] = []
    cut_pending = pipe.prefix_plan is not None

    for step in range(gen.max_tokens):
        if cut_pending and step == pipe.prefix_plan.cutoff_step:
            covered = (fed + generated)[:-1]  # cache rows; the last token is pending
            cache = apply_prefix_cutoff(
                weights, config, cache, prefix_len, step, pipe.prefix_plan, covered
            )
            pending_pos = len(covered) - prefix_len
            prefix_len = 0
            cut_pending = False

        if pipe.kv_table is not None and cache.length > 0:
            cache = blend_kv(cache, pipe.attn_conditions, step, pipe.kv_table)

        logits, cache = forward_step(weights, config, cache, pending, pending_pos)
        base = logits_to_distribution(logits, gen.temperature)

        if pipe.nt_conditions:
            candidates = top_k_indices(base, gen.top_k)
            scores = []
            for cand in candidates:
                probe_logits = forward_probe(
                    weights, config, cache, int(cand), pending_pos + 1
                )
                probe = logits_to_distribution(probe_logits, 1.0)
                scores.append(score_from_probs(probe, pipe.nt_conditions))
            dist = reweight_distribution(base, candidates, scores)
        else:
            dist = top_k_filter(base, gen.top_k)

        token = sample_multinomial(dist, rng)
        logprobs.append(math.log(max(float(dist[token]), LOGPROB_FLOOR)))
        generated.append(token)
        pending = token
        pending_pos += 1

    return SampleRecord(
        prompt=pipe.prompt,
        conditions=[{"word": c.word, "weight": c.weight} for c in gen.conditions],
        method=gen.method,
        seed=seed,
        tokens=generated,
        text=pipe.vocabulary.decode(generated),
        degenerate=detect_degeneration(generated),
        logprobs=logprobs,
    )


def generate(
    weights: Weights,
    config: ModelConfig,
    vocabulary: Vocabulary,
    gen_config: GenerationConfig,
    prompt: str,
) -> SampleRecord:
    """Generate one passage; fully determined by (weights, config, prompt, seed)."""
    pipe = _build_pipeline(weights, config, vocabulary, gen_config, prompt)
    return _run_sample(pipe, gen_config.seed)


def generate_samples(
    weights: Weights,
    config: ModelConfig,
    vocabulary: Vocabulary,
    gen_config: GenerationConfig,
    prompt: str,
    n_samples: int,
    jobs: int = 1,
) -> list[SampleRecord]:
    """Generate ``n_samples`` passages; sample i uses seed + i.

    Samples are independent; ``jobs`` > 1 runs them concurrently over the
    shared immutable session state, and results come back ordered by index.
    """
    if n_samples < 1:
        raise UsageError(f"n_samples must be >= 1, got {n_samples}")
    if jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {jobs}")
    pipe = _build_pipeline(weights, config, vocabulary, gen_config, prompt)
    seeds = [gen_config.seed + i for i in range(n_samples)]
    if jobs == 1 or n_samples == 1:
        return [_run_sample(pipe, seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: _run_sample(pipe, s), seeds))


def record_to_json(record: SampleRecord) -> str:
    """One JSONL line with the fixed field order of the samples format."""
    return json.dumps(
        {
            "prompt": record.prompt,
            "conditions": record.conditions,
            "method": record.method,
            "seed": record.seed,
            "tokens": record.tokens,
            "text": record.text,
            "degenerate": record.degenerate,
            "logprobs": record.logprobs,
        }
    )


def write_samples(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record_to_json(record))
            f.write("\n")


def read_samples(path) -> list[SampleRecord]:
    """Parse a samples JSONL file; errors name the offending line."""
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(SampleRecord(
                    prompt=obj["prompt"],
                    conditions=list(obj["conditions"]),
                    method=obj["method"],
                    seed=int(obj["seed"]),
                    tokens=[int(t) for t in obj["tokens"]],
                    text=obj["text"],
                    degenerate=bool(obj["degenerate"]),
                    logprobs=[float(x) for x in obj["logprobs"]],
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return records
