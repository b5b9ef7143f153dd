/**
 * Generate the synthetic checkpoint fixture and convert it, leaving
 * fixtures/source and the requested output directory (default
 * fixtures/converted) ready for the engine's converter-gated acceptance test.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import { convertCheckpoint } from "./convert.js";
import { buildTestCheckpoint, buildToyTokenizerFiles } from "./testModel.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixturesRoot = resolve(here, "..", "..", "fixtures");

const outDir = process.argv[2] ? resolve(process.argv[2]) : join(fixturesRoot, "converted");
const sourceDir = join(fixturesRoot, "source");

const { vocabSize } = buildToyTokenizerFiles();
const checkpoint = buildTestCheckpoint({
  vocabSize,
  contextLen: 256,
  embedDim: 32,
  nLayers: 2,
  nHeads: 4,
  seed: 20240601,
});

mkdirSync(sourceDir, { recursive: true });
writeFileSync(join(sourceDir, "model.safetensors"), checkpoint.safetensors);
writeFileSync(join(sourceDir, "config.json"), checkpoint.configJson);
writeFileSync(join(sourceDir, "vocab.json"), checkpoint.vocabJson);
writeFileSync(join(sourceDir, "merges.txt"), checkpoint.mergesText);

const manifest = convertCheckpoint(sourceDir, outDir);
console.log(`fixture checkpoint converted into ${outDir}`);
console.log(
  `greedy fixture "${manifest.greedy_fixture.prompt}" -> ` +
    manifest.greedy_fixture.token_ids.join(" "),
);
