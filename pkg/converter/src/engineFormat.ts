/**
 * Writer (and validating reader) for the engine's weight-file format.
 *
 * Layout: magic "STLM", u32-LE version 1, u64-LE header length, UTF-8 JSON
 * header { config, tensors: [{ name, shape, dtype: "f32", byte_offset }] },
 * then row-major little-endian float32 payload with offsets relative to the
 * payload start. The tied token embedding is stored once under
 * "token_embedding". Writing is deterministic: same tensors, same bytes.
 */

export interface EngineConfig {
  vocab_size: number;
  context_len: number;
  embed_dim: number;
  n_layers: number;
  n_heads: number;
  layernorm_eps: number;
}

export interface EngineTensor {
  shape: number[];
  data: Float32Array;
}

export class EngineFormatError extends Error {}

const MAGIC = "STLM";
const VERSION = 1;

const LAYER_SUFFIXES: Array<[string, (d: number) => number[]]> = [
  ["ln1.gain", (d) => [d]],
  ["ln1.bias", (d) => [d]],
  ["attn.qkv.weight", (d) => [d, 3 * d]],
  ["attn.qkv.bias", (d) => [3 * d]],
  ["attn.proj.weight", (d) => [d, d]],
  ["attn.proj.bias", (d) => [d]],
  ["ln2.gain", (d) => [d]],
  ["ln2.bias", (d) => [d]],
  ["mlp.fc.weight", (d) => [d, 4 * d]],
  ["mlp.fc.bias", (d) => [4 * d]],
  ["mlp.proj.weight", (d) => [4 * d, d]],
  ["mlp.proj.bias", (d) => [d]],
];

/** Canonical tensor order; defines both the payload layout and validation. */
export function tensorLayout(config: EngineConfig): Array<[string, number[]]> {
  const d = config.embed_dim;
  const layout: Array<[string, number[]]> = [
    ["token_embedding", [config.vocab_size, d]],
    ["position_embedding", [config.context_len, d]],
  ];
  for (let i = 0; i < config.n_layers; i++) {
    for (const [suffix, shapeOf] of LAYER_SUFFIXES) {
      layout.push([`layers.${i}.${suffix}`, shapeOf(d)]);
    }
  }
  layout.push(["final_ln.gain", [d]]);
  layout.push(["final_ln.bias", [d]]);
  return layout;
}

function shapesEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((x, i) => x === b[i]);
}

export function buildWeightFile(
  config: EngineConfig,
  tensors: Map<string, EngineTensor>,
): Buffer {
  const layout = tensorLayout(config);
  const entries: Array<{ name: string; shape: number[]; dtype: string; byte_offset: number }> = [];
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const [name, shape] of layout) {
    const tensor = tensors.get(name);
    if (!tensor) {
      throw new EngineFormatError(`missing tensor ${name}`);
    }
    if (!shapesEqual(tensor.shape, shape)) {
      throw new EngineFormatError(
        `tensor ${name}: shape [${tensor.shape}] does not match expected [${shape}]`,
      );
    }
    for (const value of tensor.data) {
      if (!Number.isFinite(value)) {
        throw new EngineFormatError(`tensor ${name} contains non-finite values`);
      }
    }
    entries.push({ name, shape: shape.slice(), dtype: "f32", byte_offset: offset });
    const bytes = Buffer.from(tensor.data.buffer, tensor.data.byteOffset, tensor.data.byteLength);
    chunks.push(Buffer.from(bytes));
    offset += bytes.length;
  }

  const header = {
    config: {
      vocab_size: config.vocab_size,
      context_len: config.context_len,
      embed_dim: config.embed_dim,
      n_layers: config.n_layers,
      n_heads: config.n_heads,
      layernorm_eps: config.layernorm_eps,
    },
    tensors: entries,
  };
  const headerBytes = Buffer.from(JSON.stringify(header), "utf-8");
  const head = Buffer.alloc(16);
  head.write(MAGIC, 0, "ascii");
  head.writeUInt32LE(VERSION, 4);
  head.writeBigUInt64LE(BigInt(headerBytes.length), 8);
  return Buffer.concat([head, headerBytes, ...chunks]);
}

/** Re-parse a produced weight file; used to validate conversions. */
export function readWeightFile(bytes: Buffer): {
  config: EngineConfig;
  tensors: Map<string, EngineTensor>;
} {
  if (bytes.length < 16 || bytes.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new EngineFormatError("bad magic");
  }
  if (bytes.readUInt32LE(4) !== VERSION) {
    throw new EngineFormatError("unsupported version");
  }
  const headerLen = Number(bytes.readBigUInt64LE(8));
  const header = JSON.parse(bytes.subarray(16, 16 + headerLen).toString("utf-8"));
  const config = header.config as EngineConfig;
  const payload = bytes.subarray(16 + headerLen);
  const expected = new Map(tensorLayout(config).map(([n, s]) => [n, s]));
  const tensors = new Map<string, EngineTensor>();
  for (const entry of header.tensors) {
    const want = expected.get(entry.name);
    if (!want || !shapesEqual(entry.shape, want)) {
      throw new EngineFormatError(`unexpected tensor ${entry.name}`);
    }
    const count = entry.shape.reduce((a: number, b: number) => a * b, 1);
    const raw = Buffer.from(
      payload.subarray(entry.byte_offset, entry.byte_offset + 4 * count),
    );
    if (raw.length !== 4 * count) {
      throw new EngineFormatError(`tensor ${entry.name}: truncated payload`);
    }
    tensors.set(entry.name, {
      shape: entry.shape,
      data: new Float32Array(raw.buffer, raw.byteOffset, count),
    });
  }
  if (tensors.size !== expected.size) {
    throw new EngineFormatError("missing tensors");
  }
  return { config, tensors };
}
