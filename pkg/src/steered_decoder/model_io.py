"""Binary weight file format, loader, and deterministic test-model generator.

File layout (normative, shared with the checkpoint converter):

    magic "STLM" (4 bytes)
    format version, u32 little-endian (currently 1)
    header length, u64 little-endian
    UTF-8 JSON header: {"config": {...}, "tensors": [{"name", "shape",
        "dtype": "f32", "byte_offset"}, ...]}
    payload: row-major little-endian float32, offsets relative to the
        payload start

The tied token embedding is stored once under ``token_embedding`` and
duplicated into the in/out slots on load. Writing the same model twice
produces byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, ValidationError
from .model import LayerWeights, ModelConfig, Weights
from .rng import Xoshiro256StarStar

MAGIC = b"STLM"
FORMAT_VERSION = 1
INIT_STD = 0.02

_CONFIG_KEYS = ("vocab_size", "context_len", "embed_dim", "n_layers", "n_heads",
                "layernorm_eps")

# (suffix, shape builder, drawn from the normal stream or held constant)
_LAYER_TENSORS = (
    ("ln1.gain", lambda d: (d,), "ones"),
    ("ln1.bias", lambda d: (d,), "zeros"),
    ("attn.qkv.weight", lambda d: (d, 3 * d), "normal"),
    ("attn.qkv.bias", lambda d: (3 * d,), "zeros"),
    ("attn.proj.weight", lambda d: (d, d), "normal"),
    ("attn.proj.bias", lambda d: (d,), "zeros"),
    ("ln2.gain", lambda d: (d,), "ones"),
    ("ln2.bias", lambda d: (d,), "zeros"),
    ("mlp.fc.weight", lambda d: (d, 4 * d), "normal"),
    ("mlp.fc.bias", lambda d: (4 * d,), "zeros"),
    ("mlp.proj.weight", lambda d: (4 * d, d), "normal"),
    ("mlp.proj.bias", lambda d: (d,), "zeros"),
)


def tensor_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, init kind) list defining file and draw order."""
    d = config.embed_dim
    layout = [
        ("token_embedding", (config.vocab_size, d), "normal"),
        ("position_embedding", (config.context_len, d), "normal"),
    ]
    for i in range(config.n_layers):
        for suffix, shape_fn, kind in _LAYER_TENSORS:
            layout.append((f"layers.{i}.{suffix}", shape_fn(d), kind))
    layout.append(("final_ln.gain", (d,), "ones"))
    layout.append(("final_ln.bias", (d,), "zeros"))
    return layout


def _weights_to_tensors(config: ModelConfig, weights: Weights) -> dict[str, np.ndarray]:
    tensors = {
        "token_embedding": weights.token_embedding_in,
        "position_embedding": weights.position_embedding,
        "final_ln.gain": weights.final_ln_gain,
        "final_ln.bias": weights.final_ln_bias,
    }
    for i, layer in enumerate(weights.layers):
        prefix = f"layers.{i}."
        tensors[prefix + "ln1.gain"] = layer.ln1_gain
        tensors[prefix + "ln1.bias"] = layer.ln1_bias
        tensors[prefix + "attn.qkv.weight"] = layer.qkv_weight
        tensors[prefix + "attn.qkv.bias"] = layer.qkv_bias
        tensors[prefix + "attn.proj.weight"] = layer.attn_proj_weight
        tensors[prefix + "attn.proj.bias"] = layer.attn_proj_bias
        tensors[prefix + "ln2.gain"] = layer.ln2_gain
        tensors[prefix + "ln2.bias"] = layer.ln2_bias
        tensors[prefix + "mlp.fc.weight"] = layer.mlp_fc_weight
        tensors[prefix + "mlp.fc.bias"] = layer.mlp_fc_bias
        tensors[prefix + "mlp.proj.weight"] = layer.mlp_proj_weight
        tensors[prefix + "mlp.proj.bias"] = layer.mlp_proj_bias
    return tensors


def _tensors_to_weights(config: ModelConfig, tensors: dict[str, np.ndarray]) -> Weights:
    embedding = tensors["token_embedding"]
    layers = []
    for i in range(config.n_layers):
        prefix = f"layers.{i}."
        layers.append(LayerWeights(
            ln1_gain=tensors[prefix + "ln1.gain"],
            ln1_bias=tensors[prefix + "ln1.bias"],
            qkv_weight=tensors[prefix + "attn.qkv.weight"],
            qkv_bias=tensors[prefix + "attn.qkv.bias"],
            attn_proj_weight=tensors[prefix + "attn.proj.weight"],
            attn_proj_bias=tensors[prefix + "attn.proj.bias"],
            ln2_gain=tensors[prefix + "ln2.gain"],
            ln2_bias=tensors[prefix + "ln2.bias"],
            mlp_fc_weight=tensors[prefix + "mlp.fc.weight"],
            mlp_fc_bias=tensors[prefix + "mlp.fc.bias"],
            mlp_proj_weight=tensors[prefix + "mlp.proj.weight"],
            mlp_proj_bias=tensors[prefix + "mlp.proj.bias"],
        ))
    return Weights(
        token_embedding_in=embedding,
        token_embedding_out=embedding,
        position_embedding=tensors["position_embedding"],
        layers=layers,
        final_ln_gain=tensors["final_ln.gain"],
        final_ln_bias=tensors["final_ln.bias"],
    )


def write_model(path, config: ModelConfig, weights: Weights) -> None:
    """Serialize a model; rewriting the same model yields identical bytes."""
    if not np.array_equal(weights.token_embedding_in, weights.token_embedding_out):
        raise ValidationError("cannot write a model with untied embeddings")
    tensors = _weights_to_tensors(config, weights)
    layout = tensor_layout(config)

    entries = []
    offset = 0
    chunks = []
    for name, shape, _ in layout:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        if arr.shape != shape:
            raise ValidationError(
                f"tensor {name} has shape {arr.shape}, expected {shape}"
            )
        entries.append(
            {"name": name, "shape": list(shape), "dtype": "f32", "byte_offset": offset}
        )
        chunks.append(arr.tobytes())
        offset += arr.nbytes

    header = {
        "config": {key: getattr(config, key) for key in _CONFIG_KEYS},
        "tensors": entries,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for chunk in chunks:
            f.write(chunk)


def read_model(path) -> tuple[ModelConfig, Weights]:
    """Load and fully validate a weight file."""
    with open(path, "rb") as f:
        data = f.read()

    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a weight file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    if 16 + header_len > len(data):
        raise OSError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: malformed header JSON: {exc}") from exc

    try:
        config = ModelConfig(**{key: header["config"][key] for key in _CONFIG_KEYS})
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: invalid config: {exc}") from exc

    expected = {name: shape for name, shape, _ in tensor_layout(config)}
    payload = data[16 + header_len:]
    seen: dict[str, np.ndarray] = {}
    spans = []
    for entry in header.get("tensors", []):
        name = entry.get("name")
        if name not in expected:
            raise ValidationError(f"{path}: unexpected tensor {name!r}")
        if name in seen:
            raise ValidationError(f"{path}: tensor {name!r} declared twice")
        if entry.get("dtype") != "f32":
            raise ValidationError(f"{path}: tensor {name!r} has unsupported dtype")
        shape = tuple(entry.get("shape", ()))
        if shape != expected[name]:
            raise ValidationError(
                f"{path}: tensor {name!r} has shape {shape}, expected {expected[name]}"
            )
        count = int(np.prod(shape, dtype=np.int64))
        start = entry.get("byte_offset")
        if not isinstance(start, int) or start < 0:
            raise ValidationError(f"{path}: tensor {name!r} has invalid offset")
        end = start + 4 * count
        if end > len(payload):
            raise OSError(f"{path}: truncated payload for tensor {name!r}")
        spans.append((start, end, name))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        seen[name] = arr.reshape(shape)

    missing = sorted(set(expected) - set(seen))
    if missing:
        raise ValidationError(f"{path}: missing tensors: {', '.join(missing)}")

    spans.sort()
    for (_, prev_end, prev_name), (start, _, name) in zip(spans, spans[1:]):
        if start < prev_end:
            raise ValidationError(
                f"{path}: tensors {prev_name!r} and {name!r} overlap"
            )

    for name, arr in seen.items():
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{path}: tensor {name!r} contains non-finite values")

    return config, _tensors_to_weights(config, seen)


def make_test_model(config: ModelConfig, seed: int, zero: bool = False) -> Weights:
    """Deterministic synthetic model for desk-scale verification.

    Weight matrices and embeddings are drawn from normal(0, 0.02) using the
    seeded generator, consuming the stream tensor by tensor in canonical
    layout order; layernorm gains are 1 and all biases 0. With ``zero`` every
    tensor is zero, which makes every output distribution exactly uniform.
    """
    rng = Xoshiro256StarStar(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in tensor_layout(config):
        if zero or kind == "zeros":
            arr = np.zeros(shape, dtype=np.float32)
        elif kind == "ones":
            arr = np.ones(shape, dtype=np.float32)
        else:
            count = int(np.prod(shape, dtype=np.int64))
            draws = rng.normals(count, sigma=INIT_STD)
            arr = np.array(draws, dtype=np.float32).reshape(shape)
        tensors[name] = arr
    return _tensors_to_weights(config, tensors)
