"""Automated metrics over sample files: reference-LM perplexity and Dist-n.

Perplexity is teacher-forced under a separately loaded reference model that
shares the generating tokenizer; log-probabilities are accumulated in base 2
(equivalent to the usual natural-log form, but exact for power-of-two
probabilities, e.g. a uniform model over 64 tokens scores exactly 64).
Dist-n is the fraction of n-gram positions holding distinct n-grams,
computed per sample and averaged unweighted across samples. Metrics see only
the generated tokens; prompts and conditional prefixes are never scored.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

from .errors import UsageError
from .model import ModelConfig, Weights, forward_full, logits_to_distribution
from .model_io import read_model
from .sampler import SampleRecord, read_samples

_PROB_FLOOR = 1e-300

KNOWN_METRICS = ("ppl", "dist")


def sequence_log2_probs(
    ref_weights: Weights, ref_config: ModelConfig, token_ids
) -> list[float]:
    """log2 p(x_i | x_1..x_{i-1}) for every position i >= 2, teacher forced."""
    ids = [int(t) for t in token_ids]
    if len(ids) < 2:
        raise UsageError(f"perplexity needs at least 2 tokens, got {len(ids)}")
    logits, _ = forward_full(ref_weights, ref_config, ids)
    out = []
    for i in range(1, len(ids)):
        probs = logits_to_distribution(logits[i - 1], 1.0)
        out.append(math.log2(max(float(probs[ids[i]]), _PROB_FLOOR)))
    return out


def perplexity_from_log2_probs(log2_probs) -> float:
    values = list(log2_probs)
    if not values:
        raise UsageError("cannot compute perplexity of an empty sequence")
    return float(2.0 ** (-(math.fsum(values) / len(values))))


def perplexity(ref_weights: Weights, ref_config: ModelConfig, token_ids) -> float:
    """exp of the mean negative log-likelihood of tokens 2..n under the reference."""
    return perplexity_from_log2_probs(
        sequence_log2_probs(ref_weights, ref_config, token_ids)
    )


def dist_n(token_ids, n: int) -> float:
    """Fraction of n-gram positions occupied by distinct n-grams."""
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    ids = [int(t) for t in token_ids]
    if len(ids) < n:
        raise UsageError(f"need at least {n} tokens for dist-{n}, got {len(ids)}")
    positions = len(ids) - n + 1
    grams = {tuple(ids[i:i + n]) for i in range(positions)}
    return len(grams) / positions


@dataclass
class MetricReport:
    aggregate: dict
    per_sample: list[dict]

    def to_json(self) -> str:
        return json.dumps(
            {"aggregate": self.aggregate, "per_sample": self.per_sample}, indent=2
        )


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def evaluate_records(
    records: list[SampleRecord],
    ref: tuple[ModelConfig, Weights] | None = None,
    metrics=KNOWN_METRICS,
    exclude_degenerate: bool = False,
) -> MetricReport:
    """Score each sample and aggregate with an unweighted mean.

    Degenerate samples are counted and included unless explicitly excluded.
    """
    metrics = tuple(metrics)
    for metric in metrics:
        if metric not in KNOWN_METRICS:
            raise UsageError(f"unknown metric {metric!r}")
    if not metrics:
        raise UsageError("no metrics selected")
    if "ppl" in metrics and ref is None:
        raise UsageError("perplexity requested but no reference model given")
    if not records:
        raise UsageError("no samples to evaluate")

    per_sample = []
    for i, record in enumerate(records):
        entry: dict = {"index": i, "seed": record.seed, "degenerate": record.degenerate}
        if "ppl" in metrics:
            ref_config, ref_weights = ref
            entry["ppl"] = perplexity(ref_weights, ref_config, record.tokens)
        if "dist" in metrics:
            for n in (1, 2, 3):
                entry[f"dist{n}"] = dist_n(record.tokens, n)
        per_sample.append(entry)

    included = [
        entry for entry, record in zip(per_sample, records)
        if not (exclude_degenerate and record.degenerate)
    ]
    if not included:
        raise UsageError("all samples are degenerate and excluded; nothing to aggregate")

    aggregate = {
        "ppl": _mean([e["ppl"] for e in included]) if "ppl" in metrics else None,
        "dist1": _mean([e["dist1"] for e in included]) if "dist" in metrics else None,
        "dist2": _mean([e["dist2"] for e in included]) if "dist" in metrics else None,
        "dist3": _mean([e["dist3"] for e in included]) if "dist" in metrics else None,
        "n": len(included),
        "degenerate": sum(1 for r in records if r.degenerate),
    }
    return MetricReport(aggregate=aggregate, per_sample=per_sample)


def evaluate_file(
    samples_path,
    ref_model_path=None,
    metrics=KNOWN_METRICS,
    exclude_degenerate: bool = False,
) -> MetricReport:
    """Evaluate a sampler JSONL file, optionally against a reference model."""
    records = read_samples(samples_path)
    ref = None
    if ref_model_path is not None:
        ref = read_model(ref_model_path)
    return evaluate_records(
        records, ref=ref, metrics=metrics, exclude_degenerate=exclude_degenerate
    )


_CSV_COLUMNS = ("index", "seed", "degenerate", "ppl", "dist1", "dist2", "dist3")


def write_per_sample_csv(report: MetricReport, path) -> None:
    """Per-sample metrics as a comma-delimited table (blank for unscored)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_COLUMNS)
        for entry in report.per_sample:
            writer.writerow([entry.get(col, "") for col in _CSV_COLUMNS])
