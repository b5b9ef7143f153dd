/**
 * One-shot checkpoint conversion: GPT-2-family safetensors + vocab/merges in,
 * engine weight file + tokenizer files + conversion manifest out.
 *
 * The source directory must contain model.safetensors, config.json,
 * vocab.json, and merges.txt (the HuggingFace GPT-2 export layout, with or
 * without a "transformer." name prefix). Attention/MLP weights are expected
 * in Conv1D orientation [in, out]; rectangular tensors arriving transposed
 * are detected by shape, transposed back, and recorded in the manifest.
 * Square projections are taken as Conv1D by convention.
 *
 * The manifest also records a 10-token greedy decode of "the chicken"
 * computed here, independently of the engine, as a cross-check fixture.
 */

import { createHash } from "node:crypto";
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { BpeEncoder } from "./bpe.js";
import {
  EngineConfig,
  EngineTensor,
  buildWeightFile,
  readWeightFile,
  tensorLayout,
} from "./engineFormat.js";
import { greedyDecode, modelFromTensors } from "./gpt2Forward.js";
import { TensorEntry, parseSafetensors } from "./safetensors.js";

export class ConversionError extends Error {}

export const FIXTURE_PROMPT = "the chicken";
export const FIXTURE_STEPS = 10;

export interface MappingRecord {
  engine: string;
  source: string;
  transposed: boolean;
}

export interface ConversionManifest {
  source: { path: string; checkpoint: string; config: string };
  config: EngineConfig;
  mapping: MappingRecord[];
  outputs: { model: string; vocab: string; merges: string };
  output_sha256: { model: string; vocab: string; merges: string };
  greedy_fixture: { prompt: string; token_ids: number[] };
}

// buffers exported by some frameworks alongside the parameters
const IGNORED_SUFFIXES = [".attn.bias", ".attn.masked_bias"];

function sha256(data: Buffer | string): string {
  return createHash("sha256").update(data).digest("hex");
}

function readConfig(configJson: string): EngineConfig {
  let raw: Record<string, unknown>;
  try {
    raw = JSON.parse(configJson);
  } catch (err) {
    throw new ConversionError(`config.json is not valid JSON: ${err}`);
  }
  const pick = (...keys: string[]): number => {
    for (const key of keys) {
      const value = raw[key];
      if (typeof value === "number") return value;
    }
    throw new ConversionError(`config.json is missing ${keys.join("/")}`);
  };
  return {
    vocab_size: pick("vocab_size"),
    context_len: pick("n_positions", "n_ctx"),
    embed_dim: pick("n_embd"),
    n_layers: pick("n_layer"),
    n_heads: pick("n_head"),
    layernorm_eps:
      typeof raw["layer_norm_epsilon"] === "number"
        ? (raw["layer_norm_epsilon"] as number)
        : 1e-5,
  };
}

function stripPrefix(tensors: Map<string, TensorEntry>): Map<string, TensorEntry> {
  const names = [...tensors.keys()];
  const prefixed = names.filter((n) => n.startsWith("transformer."));
  if (prefixed.length === 0 || prefixed.length < names.length - 1) {
    // allow a bare lm_head.weight to sit outside the prefix
    if (prefixed.length === 0) return tensors;
  }
  const out = new Map<string, TensorEntry>();
  for (const [name, tensor] of tensors) {
    out.set(name.startsWith("transformer.") ? name.slice("transformer.".length) : name, tensor);
  }
  return out;
}

function transpose(entry: TensorEntry): Float32Array {
  const [rows, cols] = entry.shape;
  const out = new Float32Array(entry.data.length);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      out[c * rows + r] = entry.data[r * cols + c];
    }
  }
  return out;
}

function take(
  source: Map<string, TensorEntry>,
  consumed: Set<string>,
  sourceName: string,
  engineName: string,
  wantShape: number[],
  mapping: MappingRecord[],
): EngineTensor {
  const entry = source.get(sourceName);
  if (!entry) {
    throw new ConversionError(`missing source tensor ${sourceName}`);
  }
  consumed.add(sourceName);
  const shape = entry.shape;
  if (shape.length === wantShape.length && shape.every((s, i) => s === wantShape[i])) {
    mapping.push({ engine: engineName, source: sourceName, transposed: false });
    return { shape: wantShape, data: entry.data };
  }
  if (
    shape.length === 2 &&
    wantShape.length === 2 &&
    shape[0] === wantShape[1] &&
    shape[1] === wantShape[0] &&
    wantShape[0] !== wantShape[1]
  ) {
    mapping.push({ engine: engineName, source: sourceName, transposed: true });
    return { shape: wantShape, data: transpose(entry) };
  }
  throw new ConversionError(
    `tensor ${sourceName}: shape [${shape}] incompatible with expected [${wantShape}]`,
  );
}

const SOURCE_FOR_ENGINE: Array<[RegExp, (m: RegExpMatchArray) => string]> = [
  [/^token_embedding$/, () => "wte.weight"],
  [/^position_embedding$/, () => "wpe.weight"],
  [/^layers\.(\d+)\.ln1\.gain$/, (m) => `h.${m[1]}.ln_1.weight`],
  [/^layers\.(\d+)\.ln1\.bias$/, (m) => `h.${m[1]}.ln_1.bias`],
  [/^layers\.(\d+)\.attn\.qkv\.weight$/, (m) => `h.${m[1]}.attn.c_attn.weight`],
  [/^layers\.(\d+)\.attn\.qkv\.bias$/, (m) => `h.${m[1]}.attn.c_attn.bias`],
  [/^layers\.(\d+)\.attn\.proj\.weight$/, (m) => `h.${m[1]}.attn.c_proj.weight`],
  [/^layers\.(\d+)\.attn\.proj\.bias$/, (m) => `h.${m[1]}.attn.c_proj.bias`],
  [/^layers\.(\d+)\.ln2\.gain$/, (m) => `h.${m[1]}.ln_2.weight`],
  [/^layers\.(\d+)\.ln2\.bias$/, (m) => `h.${m[1]}.ln_2.bias`],
  [/^layers\.(\d+)\.mlp\.fc\.weight$/, (m) => `h.${m[1]}.mlp.c_fc.weight`],
  [/^layers\.(\d+)\.mlp\.fc\.bias$/, (m) => `h.${m[1]}.mlp.c_fc.bias`],
  [/^layers\.(\d+)\.mlp\.proj\.weight$/, (m) => `h.${m[1]}.mlp.c_proj.weight`],
  [/^layers\.(\d+)\.mlp\.proj\.bias$/, (m) => `h.${m[1]}.mlp.c_proj.bias`],
  [/^final_ln\.gain$/, () => "ln_f.weight"],
  [/^final_ln\.bias$/, () => "ln_f.bias"],
];

function sourceNameFor(engineName: string): string {
  for (const [pattern, build] of SOURCE_FOR_ENGINE) {
    const match = engineName.match(pattern);
    if (match) return build(match);
  }
  throw new ConversionError(`no source mapping for engine tensor ${engineName}`);
}

export function convertTensors(
  config: EngineConfig,
  sourceTensors: Map<string, TensorEntry>,
): { tensors: Map<string, EngineTensor>; mapping: MappingRecord[] } {
  const source = stripPrefix(sourceTensors);
  const consumed = new Set<string>();
  const mapping: MappingRecord[] = [];
  const tensors = new Map<string, EngineTensor>();

  for (const [engineName, shape] of tensorLayout(config)) {
    tensors.set(
      engineName,
      take(source, consumed, sourceNameFor(engineName), engineName, shape, mapping),
    );
  }

  // tied output head: must equal the input embedding, stored once
  const lmHead = source.get("lm_head.weight");
  if (lmHead) {
    const wte = tensors.get("token_embedding")!;
    if (
      lmHead.data.length !== wte.data.length ||
      !lmHead.data.every((v, i) => v === wte.data[i])
    ) {
      throw new ConversionError(
        "lm_head.weight differs from wte.weight; untied embeddings are not supported",
      );
    }
    consumed.add("lm_head.weight");
  }

  const leftover = [...source.keys()].filter(
    (name) =>
      !consumed.has(name) && !IGNORED_SUFFIXES.some((suffix) => name.endsWith(suffix)),
  );
  if (leftover.length > 0) {
    throw new ConversionError(
      `unmatched source tensors: ${leftover.sort().join(", ")}`,
    );
  }
  return { tensors, mapping };
}

export function convertCheckpoint(sourceDir: string, outDir: string): ConversionManifest {
  const checkpointPath = join(sourceDir, "model.safetensors");
  const configPath = join(sourceDir, "config.json");
  let checkpoint: Buffer;
  let configJson: string;
  let vocabJson: string;
  let mergesText: string;
  try {
    checkpoint = readFileSync(checkpointPath);
    configJson = readFileSync(configPath, "utf-8");
    vocabJson = readFileSync(join(sourceDir, "vocab.json"), "utf-8");
    mergesText = readFileSync(join(sourceDir, "merges.txt"), "utf-8");
  } catch (err) {
    throw new ConversionError(`cannot read source checkpoint: ${err}`);
  }

  const config = readConfig(configJson);
  const sourceTensors = parseSafetensors(checkpoint);
  const { tensors, mapping } = convertTensors(config, sourceTensors);

  const weightFile = buildWeightFile(config, tensors);
  readWeightFile(weightFile); // self-validation before anything is written

  const encoder = BpeEncoder.fromFiles(vocabJson, mergesText);
  const promptIds = encoder.encode(FIXTURE_PROMPT);
  const model = modelFromTensors(config, tensors);
  const fixtureIds = greedyDecode(model, promptIds, FIXTURE_STEPS);

  mkdirSync(outDir, { recursive: true });
  writeFileSync(join(outDir, "model.stlm"), weightFile);
  writeFileSync(join(outDir, "vocab.json"), vocabJson);
  writeFileSync(join(outDir, "merges.txt"), mergesText);

  const manifest: ConversionManifest = {
    source: { path: sourceDir, checkpoint: "model.safetensors", config: "config.json" },
    config,
    mapping,
    outputs: { model: "model.stlm", vocab: "vocab.json", merges: "merges.txt" },
    output_sha256: {
      model: sha256(weightFile),
      vocab: sha256(vocabJson),
      merges: sha256(mergesText),
    },
    greedy_fixture: { prompt: FIXTURE_PROMPT, token_ids: fixtureIds },
  };
  writeFileSync(
    join(outDir, "conversion_manifest.json"),
    JSON.stringify(manifest, null, 2) + "\n",
  );
  return manifest;
}
