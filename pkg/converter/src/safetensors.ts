/**
 * Minimal safetensors reader/writer, float32 tensors only.
 *
 * Layout: u64-LE header length, JSON header mapping tensor name to
 * { dtype, shape, data_offsets: [begin, end] } (offsets relative to the end
 * of the header), then the raw payload. The optional "__metadata__" entry is
 * ignored on read.
 */

export interface TensorEntry {
  dtype: string;
  shape: number[];
  /** float32 view over the payload, little-endian */
  data: Float32Array;
}

export class SafetensorsError extends Error {}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function parseSafetensors(bytes: Buffer): Map<string, TensorEntry> {
  if (bytes.length < 8) {
    throw new SafetensorsError("file too short for a safetensors header");
  }
  const headerLen = Number(bytes.readBigUInt64LE(0));
  if (8 + headerLen > bytes.length) {
    throw new SafetensorsError("declared header length exceeds file size");
  }
  let header: Record<string, { dtype: string; shape: number[]; data_offsets: [number, number] }>;
  try {
    header = JSON.parse(bytes.subarray(8, 8 + headerLen).toString("utf-8"));
  } catch (err) {
    throw new SafetensorsError(`malformed safetensors header JSON: ${err}`);
  }
  const payload = bytes.subarray(8 + headerLen);
  const tensors = new Map<string, TensorEntry>();
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    if (entry.dtype !== "F32") {
      throw new SafetensorsError(`tensor ${name}: only F32 is supported, got ${entry.dtype}`);
    }
    const [begin, end] = entry.data_offsets;
    const count = numel(entry.shape);
    if (end - begin !== 4 * count) {
      throw new SafetensorsError(`tensor ${name}: offsets inconsistent with shape`);
    }
    if (end > payload.length) {
      throw new SafetensorsError(`tensor ${name}: payload truncated`);
    }
    // copy so the view is aligned regardless of header length
    const raw = Buffer.from(payload.subarray(begin, end));
    tensors.set(name, {
      dtype: "F32",
      shape: entry.shape.slice(),
      data: new Float32Array(raw.buffer, raw.byteOffset, count),
    });
  }
  return tensors;
}

export function buildSafetensors(tensors: Map<string, { shape: number[]; data: Float32Array }>): Buffer {
  const entries: Record<string, { dtype: string; shape: number[]; data_offsets: [number, number] }> = {};
  let offset = 0;
  const chunks: Buffer[] = [];
  for (const [name, tensor] of tensors) {
    const bytes = Buffer.from(tensor.data.buffer, tensor.data.byteOffset, tensor.data.byteLength);
    entries[name] = {
      dtype: "F32",
      shape: tensor.shape.slice(),
      data_offsets: [offset, offset + bytes.length],
    };
    chunks.push(Buffer.from(bytes));
    offset += bytes.length;
  }
  const headerJson = Buffer.from(JSON.stringify(entries), "utf-8");
  const head = Buffer.alloc(8);
  head.writeBigUInt64LE(BigInt(headerJson.length), 0);
  return Buffer.concat([head, headerJson, ...chunks]);
}
