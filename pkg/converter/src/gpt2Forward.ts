/**
 * Minimal float32 GPT-2-style forward pass over engine-layout tensors, used
 * to compute the greedy-decode cross-check fixture at conversion time. This
 * is an independent implementation of the architecture (pre-norm blocks,
 * tanh GELU, causal attention, 1/sqrt(d/H) scaling, tied output embedding);
 * matmuls accumulate in float64 and store float32.
 *
 * Only the final position's logits are materialized, so a 10-step greedy
 * decode stays cheap even for full-size checkpoints.
 */

import { EngineConfig, EngineTensor } from "./engineFormat.js";

export interface LayerTensors {
  ln1Gain: Float32Array;
  ln1Bias: Float32Array;
  qkvWeight: Float32Array; // [d, 3d]
  qkvBias: Float32Array;
  projWeight: Float32Array; // [d, d]
  projBias: Float32Array;
  ln2Gain: Float32Array;
  ln2Bias: Float32Array;
  fcWeight: Float32Array; // [d, 4d]
  fcBias: Float32Array;
  mlpProjWeight: Float32Array; // [4d, d]
  mlpProjBias: Float32Array;
}

export interface ForwardModel {
  config: EngineConfig;
  tokenEmbedding: Float32Array; // [V, d]
  positionEmbedding: Float32Array; // [T, d]
  layers: LayerTensors[];
  finalLnGain: Float32Array;
  finalLnBias: Float32Array;
}

export function modelFromTensors(
  config: EngineConfig,
  tensors: Map<string, EngineTensor>,
): ForwardModel {
  const get = (name: string) => {
    const tensor = tensors.get(name);
    if (!tensor) throw new Error(`missing tensor ${name}`);
    return tensor.data;
  };
  const layers: LayerTensors[] = [];
  for (let i = 0; i < config.n_layers; i++) {
    const p = `layers.${i}.`;
    layers.push({
      ln1Gain: get(p + "ln1.gain"),
      ln1Bias: get(p + "ln1.bias"),
      qkvWeight: get(p + "attn.qkv.weight"),
      qkvBias: get(p + "attn.qkv.bias"),
      projWeight: get(p + "attn.proj.weight"),
      projBias: get(p + "attn.proj.bias"),
      ln2Gain: get(p + "ln2.gain"),
      ln2Bias: get(p + "ln2.bias"),
      fcWeight: get(p + "mlp.fc.weight"),
      fcBias: get(p + "mlp.fc.bias"),
      mlpProjWeight: get(p + "mlp.proj.weight"),
      mlpProjBias: get(p + "mlp.proj.bias"),
    });
  }
  return {
    config,
    tokenEmbedding: get("token_embedding"),
    positionEmbedding: get("position_embedding"),
    layers,
    finalLnGain: get("final_ln.gain"),
    finalLnBias: get("final_ln.bias"),
  };
}

/** rows [t, inDim] @ weight [inDim, outDim] + bias, f64 accumulation */
function matmulBias(
  rows: Float32Array,
  t: number,
  inDim: number,
  weight: Float32Array,
  outDim: number,
  bias: Float32Array | null,
): Float32Array {
  const out = new Float32Array(t * outDim);
  for (let r = 0; r < t; r++) {
    for (let o = 0; o < outDim; o++) {
      let acc = bias ? bias[o] : 0;
      for (let i = 0; i < inDim; i++) {
        acc += rows[r * inDim + i] * weight[i * outDim + o];
      }
      out[r * outDim + o] = acc;
    }
  }
  return out;
}

function layerNorm(
  rows: Float32Array,
  t: number,
  d: number,
  gain: Float32Array,
  bias: Float32Array,
  eps: number,
): Float32Array {
  const out = new Float32Array(t * d);
  for (let r = 0; r < t; r++) {
    let mean = 0;
    for (let i = 0; i < d; i++) mean += rows[r * d + i];
    mean /= d;
    let variance = 0;
    for (let i = 0; i < d; i++) {
      const delta = rows[r * d + i] - mean;
      variance += delta * delta;
    }
    variance /= d;
    const inv = 1 / Math.sqrt(variance + eps);
    for (let i = 0; i < d; i++) {
      out[r * d + i] = (rows[r * d + i] - mean) * inv * gain[i] + bias[i];
    }
  }
  return out;
}

function geluInPlace(values: Float32Array): void {
  const c = Math.sqrt(2 / Math.PI);
  for (let i = 0; i < values.length; i++) {
    const x = values[i];
    values[i] = 0.5 * x * (1 + Math.tanh(c * (x + 0.044715 * x * x * x)));
  }
}

/** Logits of the final position after running the full sequence. */
export function lastLogits(model: ForwardModel, tokens: number[]): Float64Array {
  const { config } = model;
  const d = config.embed_dim;
  const heads = config.n_heads;
  const headDim = d / heads;
  const t = tokens.length;
  if (t < 1 || t > config.context_len) {
    throw new Error(`sequence length ${t} outside [1, ${config.context_len}]`);
  }

  let x = new Float32Array(t * d);
  for (let r = 0; r < t; r++) {
    const tok = tokens[r];
    if (tok < 0 || tok >= config.vocab_size) {
      throw new Error(`token id ${tok} outside vocabulary`);
    }
    for (let i = 0; i < d; i++) {
      x[r * d + i] = model.tokenEmbedding[tok * d + i] + model.positionEmbedding[r * d + i];
    }
  }

  const scale = 1 / Math.sqrt(headDim);
  for (const layer of model.layers) {
    const normed = layerNorm(x, t, d, layer.ln1Gain, layer.ln1Bias, config.layernorm_eps);
    const qkv = matmulBias(normed, t, d, layer.qkvWeight, 3 * d, layer.qkvBias);
    const attnOut = new Float32Array(t * d);
    for (let h = 0; h < heads; h++) {
      const qOff = h * headDim;
      const kOff = d + h * headDim;
      const vOff = 2 * d + h * headDim;
      for (let r = 0; r < t; r++) {
        // causal: position r attends to 0..r
        const scores = new Float64Array(r + 1);
        let maxScore = -Infinity;
        for (let c = 0; c <= r; c++) {
          let dot = 0;
          for (let i = 0; i < headDim; i++) {
            dot += qkv[r * 3 * d + qOff + i] * qkv[c * 3 * d + kOff + i];
          }
          const value = Math.fround(dot * scale);
          scores[c] = value;
          if (value > maxScore) maxScore = value;
        }
        let total = 0;
        for (let c = 0; c <= r; c++) {
          scores[c] = Math.exp(scores[c] - maxScore);
          total += scores[c];
        }
        for (let i = 0; i < headDim; i++) {
          let acc = 0;
          for (let c = 0; c <= r; c++) {
            acc += (scores[c] / total) * qkv[c * 3 * d + vOff + i];
          }
          attnOut[r * d + qOff + i] = acc;
        }
      }
    }
    const projected = matmulBias(attnOut, t, d, layer.projWeight, d, layer.projBias);
    for (let i = 0; i < x.length; i++) x[i] = Math.fround(x[i] + projected[i]);

    const normed2 = layerNorm(x, t, d, layer.ln2Gain, layer.ln2Bias, config.layernorm_eps);
    const hidden = matmulBias(normed2, t, d, layer.fcWeight, 4 * d, layer.fcBias);
    geluInPlace(hidden);
    const mlpOut = matmulBias(hidden, t, 4 * d, layer.mlpProjWeight, d, layer.mlpProjBias);
    for (let i = 0; i < x.length; i++) x[i] = Math.fround(x[i] + mlpOut[i]);
  }

  const finalNormed = layerNorm(
    x.subarray((t - 1) * d),
    1, d, model.finalLnGain, model.finalLnBias, config.layernorm_eps,
  );
  const logits = new Float64Array(config.vocab_size);
  for (let v = 0; v < config.vocab_size; v++) {
    let acc = 0;
    for (let i = 0; i < d; i++) {
      acc += finalNormed[i] * model.tokenEmbedding[v * d + i];
    }
    logits[v] = Math.fround(acc);
  }
  return logits;
}

/** Greedy (argmax, lowest id wins ties) continuation of a prompt. */
export function greedyDecode(
  model: ForwardModel,
  promptIds: number[],
  steps: number,
): number[] {
  const tokens = promptIds.slice();
  const out: number[] = [];
  for (let s = 0; s < steps; s++) {
    const logits = lastLogits(model, tokens);
    let best = 0;
    for (let v = 1; v < logits.length; v++) {
      if (logits[v] > logits[best]) best = v;
    }
    out.push(best);
    tokens.push(best);
  }
  return out;
}
