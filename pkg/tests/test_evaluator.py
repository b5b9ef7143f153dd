"""Metric contracts: teacher-forced perplexity, Dist-n, and file-level
aggregation with an independent recomputation oracle."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steered_decoder.conditioning import GenerationConfig, make_condition
from steered_decoder.errors import ParseError, UsageError
from steered_decoder.evaluator import (
    dist_n,
    evaluate_file,
    evaluate_records,
    perplexity,
    perplexity_from_log2_probs,
    sequence_log2_probs,
    write_per_sample_csv,
)
from steered_decoder.model import forward_full
from steered_decoder.sampler import SampleRecord, generate_samples, write_samples


def test_uniform_model_perplexity_is_exactly_v(zero_weights, tiny_config):
    ppl = perplexity(zero_weights, tiny_config, [1, 2, 3, 4, 5, 6, 7, 8])
    assert ppl == 64.0


def test_perfect_model_perplexity_is_one():
    assert perplexity_from_log2_probs([0.0] * 7) == 1.0


def test_perplexity_lower_bound(tiny_weights, tiny_config):
    assert perplexity(tiny_weights, tiny_config, [3, 1, 4, 1, 5]) >= 1.0


def test_perplexity_matches_manual_accumulation(tiny_weights, tiny_config):
    tokens = [3, 1, 4, 1, 5, 9, 2, 6]
    # independent accumulation through the natural-log route
    logits, _ = forward_full(tiny_weights, tiny_config, tokens)
    total = 0.0
    for i in range(1, len(tokens)):
        row = logits[i - 1].astype(np.float64)
        row = row - row.max()
        probs = np.exp(row) / np.exp(row).sum()
        total += math.log(float(probs[tokens[i]]))
    want = math.exp(-total / (len(tokens) - 1))
    got = perplexity(tiny_weights, tiny_config, tokens)
    assert abs(got - want) / want < 1e-6


def test_perplexity_needs_two_tokens(tiny_weights, tiny_config):
    with pytest.raises(UsageError):
        perplexity(tiny_weights, tiny_config, [5])


def test_sequence_log2_probs_length(tiny_weights, tiny_config):
    assert len(sequence_log2_probs(tiny_weights, tiny_config, [1, 2, 3])) == 2


def test_dist1_hand_case():
    assert dist_n([10, 20, 10, 20], 1) == 0.5


def test_dist2_hand_case():
    assert dist_n([10, 20, 10, 20], 2) == pytest.approx(2 / 3, abs=1e-15)


def test_dist_all_distinct_is_one():
    for n in (1, 2, 3):
        assert dist_n(list(range(30)), n) == 1.0


def test_dist_errors():
    with pytest.raises(UsageError):
        dist_n([1, 2], 3)
    with pytest.raises(UsageError):
        dist_n([1, 2], 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=30),
       st.integers(min_value=1, max_value=3))
def test_dist_bounds_and_doubling_property(ids, n):
    if len(ids) < n:
        return
    value = dist_n(ids, n)
    assert 0.0 < value <= 1.0
    assert dist_n(ids + ids, n) <= value + 1e-12


def _record(tokens, degenerate=False, seed=0):
    return SampleRecord(
        prompt="p", conditions=[], method="combined", seed=seed,
        tokens=tokens, text="", degenerate=degenerate,
        logprobs=[-0.1] * len(tokens),
    )


def test_aggregate_is_mean_of_samples():
    records = [_record([1, 2, 1, 2]), _record([1, 2, 3, 4])]
    report = evaluate_records(records, metrics=("dist",))
    assert report.aggregate["dist1"] == pytest.approx(0.75, abs=1e-15)
    assert report.aggregate["ppl"] is None
    assert report.aggregate["n"] == 2
    assert report.aggregate["degenerate"] == 0


def test_aggregate_permutation_invariant(tiny_weights, tiny_config):
    records = [_record([1, 2, 1, 2]), _record([5, 6, 7, 8]), _record([4, 4, 4, 4])]
    forward = evaluate_records(records, ref=(tiny_config, tiny_weights))
    backward = evaluate_records(records[::-1], ref=(tiny_config, tiny_weights))
    assert forward.aggregate == backward.aggregate


def test_degenerate_counted_and_included_by_default():
    records = [_record([1, 2, 3, 4]), _record([9, 9, 9, 9], degenerate=True)]
    report = evaluate_records(records, metrics=("dist",))
    assert report.aggregate["degenerate"] == 1
    assert report.aggregate["n"] == 2
    assert report.aggregate["dist1"] == pytest.approx((1.0 + 0.25) / 2, abs=1e-15)


def test_degenerate_exclusion_flag():
    records = [_record([1, 2, 3, 4]), _record([9, 9, 9, 9], degenerate=True)]
    report = evaluate_records(records, metrics=("dist",), exclude_degenerate=True)
    assert report.aggregate["n"] == 1
    assert report.aggregate["dist1"] == 1.0
    assert report.aggregate["degenerate"] == 1


def test_ppl_requires_reference():
    with pytest.raises(UsageError):
        evaluate_records([_record([1, 2, 3])], ref=None, metrics=("ppl",))


def test_unknown_metric_rejected():
    with pytest.raises(UsageError):
        evaluate_records([_record([1, 2, 3])], metrics=("bleu",))


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(UsageError):
        evaluate_file(path, metrics=("dist",))


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{nope}\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        evaluate_file(path, metrics=("dist",))
    assert "line 1" in str(err.value)


def test_report_json_shape_and_key_order():
    records = [_record([1, 2, 3, 4])]
    report = evaluate_records(records, metrics=("dist",))
    obj = json.loads(report.to_json())
    assert list(obj.keys()) == ["aggregate", "per_sample"]
    assert list(obj["aggregate"].keys()) == ["ppl", "dist1", "dist2", "dist3", "n",
                                             "degenerate"]


def test_csv_dump(tmp_path):
    records = [_record([1, 2, 3, 4]), _record([5, 5, 5, 5], degenerate=True)]
    report = evaluate_records(records, metrics=("dist",))
    path = tmp_path / "per_sample.csv"
    write_per_sample_csv(report, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "index,seed,degenerate,ppl,dist1,dist2,dist3"
    assert len(lines) == 3


def test_file_evaluation_matches_independent_recomputation(
    tmp_path, toy_weights, toy_config, toy_vocabulary, toy_ref_weights,
):
    from steered_decoder.model_io import write_model

    config = GenerationConfig(
        method="combined",
        conditions=[make_condition("science", toy_vocabulary, None)],
        top_k=8, max_tokens=20, seed=0,
    )
    records = generate_samples(toy_weights, toy_config, toy_vocabulary, config,
                               "The chicken", n_samples=20)
    samples_path = tmp_path / "s.jsonl"
    write_samples(samples_path, records)
    ref_path = tmp_path / "ref.stlm"
    write_model(ref_path, toy_config, toy_ref_weights)

    report = evaluate_file(samples_path, ref_model_path=ref_path)

    # standalone recomputation straight from the JSONL
    ppls, d1, d2, d3 = [], [], [], []
    with open(samples_path, encoding="utf-8") as f:
        for line in f:
            tokens = json.loads(line)["tokens"]
            logits, _ = forward_full(toy_ref_weights, toy_config, tokens)
            total = 0.0
            for i in range(1, len(tokens)):
                row = logits[i - 1].astype(np.float64)
                row = row - row.max()
                probs = np.exp(row) / np.exp(row).sum()
                total += math.log(float(probs[tokens[i]]))
            ppls.append(math.exp(-total / (len(tokens) - 1)))
            for store, n in ((d1, 1), (d2, 2), (d3, 3)):
                grams = {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}
                store.append(len(grams) / (len(tokens) - n + 1))

    assert abs(report.aggregate["ppl"] - sum(ppls) / len(ppls)) < 1e-9
    assert abs(report.aggregate["dist1"] - sum(d1) / len(d1)) < 1e-9
    assert abs(report.aggregate["dist2"] - sum(d2) / len(d2)) < 1e-9
    assert abs(report.aggregate["dist3"] - sum(d3) / len(d3)) < 1e-9
    assert report.aggregate["n"] == 20
