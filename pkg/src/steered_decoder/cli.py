"""Command-line entry points: generate, eval, make-test-model.

Every command that writes an output file also writes ``<out>.manifest.json``
recording the fully resolved configuration, input file hashes, tool version,
and a timestamp. The timestamp honors SOURCE_DATE_EPOCH and otherwise falls
back to the newest input mtime, so re-running an identical command yields
byte-identical outputs and manifests.

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .conditioning import (
    DEFAULT_ATTENTION_WEIGHT,
    DEFAULT_CONDITION_WEIGHT,
    DEFAULT_EARLY_STOPPING,
    DEFAULT_EMBED_WEIGHT,
    DEFAULT_TOP_K,
    METHODS,
    GenerationConfig,
    make_condition,
)
from .errors import EngineError, UsageError
from .evaluator import evaluate_file, write_per_sample_csv
from .model import ModelConfig
from .model_io import make_test_model, read_model, write_model
from .sampler import generate_samples, write_samples
from .tokenizer import Vocabulary

TOOL_NAME = "steered-decoder"
JOBS_ENV_VAR = "STEERED_DECODER_JOBS"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _timestamp(input_paths) -> str:
    """Deterministic run timestamp: SOURCE_DATE_EPOCH, else newest input mtime."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        stamp = float(int(epoch))
    elif input_paths:
        stamp = max(os.path.getmtime(p) for p in input_paths)
    else:
        stamp = 0.0
    return datetime.fromtimestamp(stamp, tz=timezone.utc).isoformat()


def _write_manifest(out_path, command: str, config: dict, input_paths: dict) -> Path:
    manifest = {
        "tool": TOOL_NAME,
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(path)}
            for name, path in input_paths.items()
        },
        "output": {"path": str(out_path), "sha256": _sha256(out_path)},
        "timestamp": _timestamp(list(input_paths.values())),
    }
    manifest_path = Path(str(out_path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def _parse_condition(raw: str) -> tuple[str, float | None]:
    word, sep, weight_text = raw.rpartition(":")
    if not sep:
        return raw, None
    if not word:
        raise UsageError(f"condition {raw!r} has an empty word")
    try:
        weight = float(weight_text)
    except ValueError as exc:
        raise UsageError(f"condition {raw!r}: weight is not a number") from exc
    if weight < 0:
        raise UsageError(f"condition {raw!r}: weight must be >= 0")
    return word, weight


def _default_jobs() -> int:
    env = os.environ.get(JOBS_ENV_VAR)
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Conditioned text generation with a GPT-2-style decoder, "
                    "plus automated evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample conditioned passages to JSONL")
    gen.add_argument("--model", required=True, help="weight file (.stlm)")
    gen.add_argument("--vocab", required=True, help="vocabulary JSON")
    gen.add_argument("--merges", required=True, help="BPE merges file")
    gen.add_argument("--prompt", required=True, help="prompt text")
    gen.add_argument("--condition", action="append", default=[], metavar="WORD[:WEIGHT]",
                     help="attribute word with optional weight; repeatable")
    gen.add_argument("--method", default="combined", choices=METHODS)
    gen.add_argument("--k", type=int, default=DEFAULT_TOP_K, help="top-K cutoff")
    gen.add_argument("--length", type=int, default=60, help="tokens per sample")
    gen.add_argument("--samples", type=int, default=1, help="number of samples")
    gen.add_argument("--seed", type=int, default=0, help="base seed; sample i uses seed+i")
    gen.add_argument("--temperature", type=float, default=1.0)
    gen.add_argument("--embed-weight", type=float, default=DEFAULT_EMBED_WEIGHT)
    gen.add_argument("--attention-weight", type=float, default=DEFAULT_ATTENTION_WEIGHT)
    gen.add_argument("--condition-weight", type=float, default=DEFAULT_CONDITION_WEIGHT)
    gen.add_argument("--early-stopping", type=int, default=DEFAULT_EARLY_STOPPING,
                     help="generated tokens before the conditional prefix is cut off")
    gen.add_argument("--detached-prefix", action="store_true",
                     help="experimental: keep prefix KV but restart positions at 0")
    gen.add_argument("--jobs", type=int, default=None,
                     help=f"parallel samples (default ${JOBS_ENV_VAR} or 1)")
    gen.add_argument("--out", required=True, help="output JSONL path")

    ev = sub.add_parser("eval", help="score a samples file")
    ev.add_argument("--samples", required=True, help="sampler JSONL file")
    ev.add_argument("--ref-model", default=None, help="reference weight file for perplexity")
    ev.add_argument("--metrics", default=None,
                    help="comma list from {ppl,dist}; default depends on --ref-model")
    ev.add_argument("--exclude-degenerate", action="store_true",
                    help="drop degenerate samples from aggregates")
    ev.add_argument("--out", default=None,
                    help="write the JSON report (and per-sample CSV) here instead of stdout")
    ev.add_argument("--figures", action="store_true",
                    help="render metric figures next to --out")

    mk = sub.add_parser("make-test-model", help="write a deterministic test model")
    mk.add_argument("--v", type=int, required=True, help="vocabulary size")
    mk.add_argument("--d", type=int, required=True, help="embedding dimension")
    mk.add_argument("--layers", type=int, required=True)
    mk.add_argument("--heads", type=int, required=True)
    mk.add_argument("--ctx", type=int, required=True, help="context length")
    mk.add_argument("--ln-eps", type=float, default=1e-5)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--zero", action="store_true",
                    help="all-zero weights (uniform-distribution model)")
    mk.add_argument("--out", required=True, help="output weight file")
    return parser


def _cmd_generate(args) -> int:
    conditions_raw = [_parse_condition(c) for c in args.condition]
    config, weights = read_model(args.model)
    vocabulary = Vocabulary.from_files(args.vocab, args.merges)
    conditions = [make_condition(word, vocabulary, weight)
                  for word, weight in conditions_raw]
    gen_config = GenerationConfig(
        method=args.method,
        conditions=conditions,
        top_k=args.k,
        embed_weight=args.embed_weight,
        attention_weight=args.attention_weight,
        condition_weight=args.condition_weight,
        early_stopping_steps=args.early_stopping,
        max_tokens=args.length,
        temperature=args.temperature,
        seed=args.seed,
        detached_prefix_experiment=args.detached_prefix,
    )
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    records = generate_samples(
        weights, config, vocabulary, gen_config, args.prompt,
        n_samples=args.samples, jobs=jobs,
    )
    write_samples(args.out, records)
    resolved = {
        "prompt": args.prompt,
        "method": gen_config.method,
        "conditions": [
            {"word": c.word, "token_id": c.token_id, "weight": c.weight}
            for c in conditions
        ],
        "top_k": gen_config.top_k,
        "embed_weight": gen_config.embed_weight,
        "attention_weight": gen_config.attention_weight,
        "condition_weight": gen_config.condition_weight,
        "early_stopping_steps": gen_config.early_stopping_steps,
        "max_tokens": gen_config.max_tokens,
        "temperature": gen_config.temperature,
        "seed": gen_config.seed,
        "detached_prefix_experiment": gen_config.detached_prefix_experiment,
        "samples": args.samples,
        "jobs": jobs,
    }
    _write_manifest(
        args.out, "generate", resolved,
        {"model": args.model, "vocab": args.vocab, "merges": args.merges},
    )
    degenerate = sum(1 for r in records if r.degenerate)
    print(f"wrote {len(records)} samples to {args.out} ({degenerate} degenerate)")
    return 0


def _cmd_eval(args) -> int:
    if args.metrics is not None:
        metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    else:
        metrics = ("ppl", "dist") if args.ref_model else ("dist",)
    if args.figures and args.out is None:
        raise UsageError("--figures requires --out")
    report = evaluate_file(
        args.samples,
        ref_model_path=args.ref_model,
        metrics=metrics,
        exclude_degenerate=args.exclude_degenerate,
    )
    text = report.to_json()
    if args.out is None:
        print(text)
        return 0

    out = Path(args.out)
    out.write_text(text + "\n", encoding="utf-8")
    csv_path = out.with_suffix(".csv")
    write_per_sample_csv(report, csv_path)
    written = [str(out), str(csv_path)]
    if args.figures:
        from .figures import render_report_figures

        stem = out.parent / out.stem
        written.extend(str(p) for p in render_report_figures(report, stem))
    inputs = {"samples": args.samples}
    if args.ref_model:
        inputs["ref_model"] = args.ref_model
    _write_manifest(
        args.out, "eval",
        {"metrics": list(metrics), "exclude_degenerate": args.exclude_degenerate},
        inputs,
    )
    print("wrote " + ", ".join(written))
    return 0


def _cmd_make_test_model(args) -> int:
    try:
        config = ModelConfig(
            vocab_size=args.v,
            context_len=args.ctx,
            embed_dim=args.d,
            n_layers=args.layers,
            n_heads=args.heads,
            layernorm_eps=args.ln_eps,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    weights = make_test_model(config, args.seed, zero=args.zero)
    write_model(args.out, config, weights)
    _write_manifest(
        args.out, "make-test-model",
        {"vocab_size": args.v, "context_len": args.ctx, "embed_dim": args.d,
         "n_layers": args.layers, "n_heads": args.heads, "layernorm_eps": args.ln_eps,
         "seed": args.seed, "zero": args.zero},
        {},
    )
    print(f"wrote test model to {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "make-test-model": _cmd_make_test_model,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 2
    except (EngineError, OSError) as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
