#!/usr/bin/env node
/**
 * Convert a GPT-2-family checkpoint directory into the engine's formats.
 *
 * Usage:
 *   node dist/src/cli.js <source-dir> <out-dir>
 *
 * The source directory must hold model.safetensors, config.json, vocab.json,
 * and merges.txt. The output directory receives model.stlm, vocab.json,
 * merges.txt, and conversion_manifest.json (including a greedy-decode
 * fixture for cross-checking the engine).
 */

import { convertCheckpoint } from "./convert.js";

function main(argv: string[]): number {
  if (argv.includes("--help") || argv.includes("-h")) {
    console.log("usage: convert <source-dir> <out-dir>");
    return 0;
  }
  if (argv.length !== 2) {
    console.error("usage: convert <source-dir> <out-dir>");
    return 2;
  }
  const [sourceDir, outDir] = argv;
  try {
    const manifest = convertCheckpoint(sourceDir, outDir);
    const transposed = manifest.mapping.filter((m) => m.transposed).length;
    console.log(
      `converted ${manifest.mapping.length} tensors` +
        (transposed ? ` (${transposed} transposed)` : ""),
    );
    console.log(`model sha256:  ${manifest.output_sha256.model}`);
    console.log(
      `greedy fixture "${manifest.greedy_fixture.prompt}" -> ` +
        manifest.greedy_fixture.token_ids.join(" "),
    );
    console.log(`wrote ${outDir}/conversion_manifest.json`);
    return 0;
  } catch (err) {
    console.error(`conversion failed: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
