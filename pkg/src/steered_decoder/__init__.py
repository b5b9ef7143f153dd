"""Conditioned text generation with an unmodified decoder-only language model.

The package bundles a small float32 GPT-2-style inference engine, a byte-level
BPE tokenizer, four decoding-time conditioning strategies (conditional prefix
with early cutoff, input-embedding blending, attention KV blending, and
next-token reweighting), a seeded sampler, and automated perplexity/Dist-n
evaluation over generated samples.
"""

__version__ = "0.1.0"

from .conditioning import Condition, GenerationConfig, PrefixPlan, make_condition
from .errors import (
    CapacityError,
    EngineError,
    FormatError,
    NumericError,
    ParseError,
    UsageError,
    ValidationError,
    VocabularyError,
)
from .evaluator import MetricReport, dist_n, evaluate_file, perplexity
from .model import KVCache, ModelConfig, Weights, forward_full, forward_step
from .model_io import make_test_model, read_model, write_model
from .sampler import SampleRecord, generate, generate_samples
from .tokenizer import Vocabulary, condition_first_token

__all__ = [
    "__version__",
    "Condition",
    "GenerationConfig",
    "PrefixPlan",
    "make_condition",
    "CapacityError",
    "EngineError",
    "FormatError",
    "NumericError",
    "ParseError",
    "UsageError",
    "ValidationError",
    "VocabularyError",
    "MetricReport",
    "dist_n",
    "evaluate_file",
    "perplexity",
    "KVCache",
    "ModelConfig",
    "Weights",
    "forward_full",
    "forward_step",
    "make_test_model",
    "read_model",
    "write_model",
    "SampleRecord",
    "generate",
    "generate_samples",
    "Vocabulary",
    "condition_first_token",
]
