import assert from "node:assert/strict";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, it } from "node:test";

import { BpeEncoder } from "../src/bpe.js";
import {
  ConversionError,
  convertCheckpoint,
  convertTensors,
} from "../src/convert.js";
import { readWeightFile, tensorLayout } from "../src/engineFormat.js";
import { greedyDecode, modelFromTensors } from "../src/gpt2Forward.js";
import { buildSafetensors, parseSafetensors } from "../src/safetensors.js";
import {
  TestModelSpec,
  buildTestCheckpoint,
  buildToyTokenizerFiles,
} from "../src/testModel.js";

const SPEC: TestModelSpec = {
  vocabSize: buildToyTokenizerFiles().vocabSize,
  contextLen: 128,
  embedDim: 32,
  nLayers: 2,
  nHeads: 4,
  seed: 7,
};

function writeCheckpoint(dir: string, spec = SPEC): void {
  const { safetensors, configJson, vocabJson, mergesText } = buildTestCheckpoint(spec);
  writeFileSync(join(dir, "model.safetensors"), safetensors);
  writeFileSync(join(dir, "config.json"), configJson);
  writeFileSync(join(dir, "vocab.json"), vocabJson);
  writeFileSync(join(dir, "merges.txt"), mergesText);
}

function freshDir(label: string): string {
  return mkdtempSync(join(tmpdir(), `conv-${label}-`));
}

describe("safetensors", () => {
  it("round-trips tensors", () => {
    const tensors = new Map([
      ["a", { shape: [2, 3], data: Float32Array.from([1, 2, 3, 4, 5, 6]) }],
      ["b", { shape: [4], data: Float32Array.from([9, 8, 7, 6]) }],
    ]);
    const parsed = parseSafetensors(buildSafetensors(tensors));
    assert.deepEqual(parsed.get("a")!.shape, [2, 3]);
    assert.deepEqual([...parsed.get("a")!.data], [1, 2, 3, 4, 5, 6]);
    assert.deepEqual([...parsed.get("b")!.data], [9, 8, 7, 6]);
  });

  it("rejects truncated files", () => {
    const bytes = buildSafetensors(
      new Map([["a", { shape: [4], data: new Float32Array(4) }]]),
    );
    assert.throws(() => parseSafetensors(bytes.subarray(0, bytes.length - 8)));
  });
});

describe("tokenizer", () => {
  it("encodes the fixture prompt into whole-word tokens", () => {
    const { vocabJson, mergesText } = buildToyTokenizerFiles();
    const encoder = BpeEncoder.fromFiles(vocabJson, mergesText);
    const vocab = JSON.parse(vocabJson) as Record<string, number>;
    assert.deepEqual(encoder.encode("the chicken"), [
      vocab["the"],
      vocab["Ġchicken"],
    ]);
    assert.deepEqual(encoder.encode(""), []);
  });
});

describe("conversion", () => {
  it("produces a weight file the engine format accepts", () => {
    const source = freshDir("src");
    const out = freshDir("out");
    writeCheckpoint(source);
    const manifest = convertCheckpoint(source, out);

    const weightFile = readFileSync(join(out, "model.stlm"));
    const { config, tensors } = readWeightFile(weightFile);
    assert.equal(config.vocab_size, SPEC.vocabSize);
    assert.equal(config.n_layers, SPEC.nLayers);
    assert.equal(tensors.size, tensorLayout(config).length);
    assert.equal(manifest.outputs.model, "model.stlm");
    assert.equal(manifest.greedy_fixture.token_ids.length, 10);
  });

  it("maps every engine tensor exactly once", () => {
    const source = freshDir("src");
    const out = freshDir("out");
    writeCheckpoint(source);
    const manifest = convertCheckpoint(source, out);
    const engineNames = manifest.mapping.map((m) => m.engine).sort();
    const expected = tensorLayout(manifest.config).map(([n]) => n).sort();
    assert.deepEqual(engineNames, expected);
    const sources = new Set(manifest.mapping.map((m) => m.source));
    assert.equal(sources.size, manifest.mapping.length);
  });

  it("is deterministic across runs", () => {
    const source = freshDir("src");
    writeCheckpoint(source);
    const outA = freshDir("outa");
    const outB = freshDir("outb");
    const manifestA = convertCheckpoint(source, outA);
    const manifestB = convertCheckpoint(source, outB);
    assert.deepEqual(manifestA.output_sha256, manifestB.output_sha256);
    assert.deepEqual(manifestA.greedy_fixture, manifestB.greedy_fixture);
    assert.deepEqual(
      readFileSync(join(outA, "model.stlm")),
      readFileSync(join(outB, "model.stlm")),
    );
  });

  it("undoes transposed (Linear-orientation) weights", () => {
    const plain = freshDir("plain");
    const flipped = freshDir("flipped");
    writeCheckpoint(plain, { ...SPEC });
    writeCheckpoint(flipped, { ...SPEC, transposed: true });
    const outPlain = freshDir("outp");
    const outFlipped = freshDir("outf");
    const manifestPlain = convertCheckpoint(plain, outPlain);
    const manifestFlipped = convertCheckpoint(flipped, outFlipped);

    assert.equal(manifestPlain.mapping.every((m) => !m.transposed), true);
    const flippedNames = manifestFlipped.mapping
      .filter((m) => m.transposed)
      .map((m) => m.engine);
    assert.equal(flippedNames.length, SPEC.nLayers * 2 + SPEC.nLayers); // qkv + fc + mlp proj
    // identical logical weights -> byte-identical converted model
    assert.deepEqual(
      readFileSync(join(outFlipped, "model.stlm")),
      readFileSync(join(outPlain, "model.stlm")),
    );
  });

  it("accepts a tied lm_head and rejects an untied one", () => {
    const tied = freshDir("tied");
    writeCheckpoint(tied, { ...SPEC, withLmHead: true });
    convertCheckpoint(tied, freshDir("outtied"));

    const untied = freshDir("untied");
    writeCheckpoint(untied, { ...SPEC, withLmHead: true });
    const bytes = readFileSync(join(untied, "model.safetensors"));
    const tensors = parseSafetensors(bytes);
    tensors.get("lm_head.weight")!.data[0] += 1.0;
    const rebuilt = buildSafetensors(
      new Map(
        [...tensors].map(([n, t]) => [n, { shape: t.shape, data: t.data }]),
      ),
    );
    writeFileSync(join(untied, "model.safetensors"), rebuilt);
    assert.throws(
      () => convertCheckpoint(untied, freshDir("outuntied")),
      /untied/,
    );
  });

  it("lists unmatched tensor names", () => {
    const source = freshDir("extra");
    writeCheckpoint(source);
    const bytes = readFileSync(join(source, "model.safetensors"));
    const tensors = new Map(
      [...parseSafetensors(bytes)].map(([n, t]) => [n, { shape: t.shape, data: t.data }]),
    );
    tensors.set("h.0.mystery.weight", { shape: [4], data: new Float32Array(4) });
    writeFileSync(join(source, "model.safetensors"), buildSafetensors(tensors));
    assert.throws(
      () => convertCheckpoint(source, freshDir("outextra")),
      (err: Error) => err instanceof ConversionError && /h\.0\.mystery\.weight/.test(err.message),
    );
  });

  it("rejects a corrupt checkpoint", () => {
    const source = freshDir("corrupt");
    writeCheckpoint(source);
    writeFileSync(join(source, "model.safetensors"), Buffer.from("garbage"));
    assert.throws(() => convertCheckpoint(source, freshDir("outcorrupt")));
  });

  it("rejects a missing source directory", () => {
    assert.throws(
      () => convertCheckpoint(freshDir("empty"), freshDir("outempty")),
      ConversionError,
    );
  });

  it("skips attention mask buffers", () => {
    const source = freshDir("buffers");
    writeCheckpoint(source);
    const bytes = readFileSync(join(source, "model.safetensors"));
    const tensors = new Map(
      [...parseSafetensors(bytes)].map(([n, t]) => [n, { shape: t.shape, data: t.data }]),
    );
    tensors.set("h.0.attn.bias", { shape: [4], data: new Float32Array(4) });
    tensors.set("h.1.attn.masked_bias", { shape: [1], data: new Float32Array(1) });
    writeFileSync(join(source, "model.safetensors"), buildSafetensors(tensors));
    convertCheckpoint(source, freshDir("outbuffers")); // must not throw
  });
});

describe("greedy fixture", () => {
  it("is reproducible from the converted tensors", () => {
    const source = freshDir("fix");
    const out = freshDir("outfix");
    writeCheckpoint(source);
    const manifest = convertCheckpoint(source, out);

    const { config, tensors } = readWeightFile(readFileSync(join(out, "model.stlm")));
    const model = modelFromTensors(config, tensors);
    const encoder = BpeEncoder.fromFiles(
      readFileSync(join(out, "vocab.json"), "utf-8"),
      readFileSync(join(out, "merges.txt"), "utf-8"),
    );
    const replay = greedyDecode(model, encoder.encode("the chicken"), 10);
    assert.deepEqual(replay, manifest.greedy_fixture.token_ids);
  });
});

describe("tensor mapping unit", () => {
  it("refuses incompatible shapes", () => {
    const source = freshDir("shape");
    writeCheckpoint(source);
    const tensors = parseSafetensors(readFileSync(join(source, "model.safetensors")));
    const wte = tensors.get("wte.weight")!;
    tensors.set("wte.weight", { ...wte, shape: [wte.shape[0], wte.shape[1] + 1] });
    assert.throws(
      () =>
        convertTensors(
          {
            vocab_size: SPEC.vocabSize,
            context_len: SPEC.contextLen,
            embed_dim: SPEC.embedDim,
            n_layers: SPEC.nLayers,
            n_heads: SPEC.nHeads,
            layernorm_eps: 1e-5,
          },
          tensors,
        ),
      ConversionError,
    );
  });
});
