/**
 * Pull the first five conv layers out of a tfjs layers model and rewrite them
 * as a ConvStack.
 *
 * Supported source shapes, walking the model's layer list in order:
 *  - Conv2D with fused relu, or linear Conv2D later closed by an
 *    Activation('relu') / ReLU layer
 *  - BatchNormalization directly after a still-linear conv (folded into the
 *    conv's weights and bias; exact up to float32 re-quantization)
 *  - MaxPooling2D with 'valid' padding
 *  - InputLayer / Dropout (no-ops at inference)
 *
 * Anything else appearing before the fifth conv is a hard error: the target
 * format has no way to express it, and silently skipping would change the
 * numbers. Layers after the fifth conv (the classifier head) are ignored.
 */

import * as tf from '@tensorflow/tfjs';
import { ConvLayer, ConvStack, ConversionError, Layer } from './stack';

export const WANT_CONVS = 5;

interface PendingConv {
  layer: ConvLayer;
  sourceName: string;
}

function pair(value: number | number[], what: string, src: string): number {
  if (typeof value === 'number') return value;
  if (value.length === 2 && value[0] === value[1]) return value[0];
  throw new ConversionError(`layer '${src}': non-square ${what} [${value}] is not supported`);
}

function convPad(padding: string, k: number, stride: number, src: string): number {
  if (padding === 'valid') return 0;
  if (padding === 'same') {
    if (stride === 1 && k % 2 === 1) return (k - 1) / 2;
    throw new ConversionError(
      `layer '${src}': 'same' padding is only symmetric for stride 1 and an odd kernel ` +
      `(got k=${k}, stride=${stride})`);
  }
  throw new ConversionError(`layer '${src}': unsupported padding mode '${padding}'`);
}

function takeConv(layer: tf.layers.Layer, index: number): { conv: ConvLayer; relu: boolean } {
  const cfg = layer.getConfig() as Record<string, unknown>;
  const src = layer.name;
  if (cfg['dataFormat'] && cfg['dataFormat'] !== 'channelsLast') {
    throw new ConversionError(`layer '${src}': only channelsLast data is supported`);
  }
  const dilation = pair((cfg['dilationRate'] as number | number[]) ?? 1, 'dilation', src);
  if (dilation !== 1) {
    throw new ConversionError(`layer '${src}': dilated convolutions are not supported`);
  }
  const k = pair(cfg['kernelSize'] as number | number[], 'kernel', src);
  const stride = pair((cfg['strides'] as number | number[]) ?? 1, 'stride', src);
  const pad = convPad(cfg['padding'] as string, k, stride, src);
  const activation = (cfg['activation'] as string) ?? 'linear';
  if (activation !== 'relu' && activation !== 'linear') {
    throw new ConversionError(
      `layer '${src}': activation '${activation}' has no equivalent (conv layers are conv+relu)`);
  }
  const useBias = (cfg['useBias'] as boolean) ?? true;
  const tensors = layer.getWeights();
  const kernel = tensors[0]; // (k, k, in, out)
  const inChannels = kernel.shape[2] as number;
  const outChannels = kernel.shape[3] as number;
  const oihw = tf.tidy(() => tf.transpose(kernel, [3, 2, 0, 1]));
  const weights = oihw.dataSync() as Float32Array;
  oihw.dispose();
  const bias = useBias ? (tensors[1].dataSync() as Float32Array) : null;
  return {
    conv: {
      kind: 'conv', name: `conv${index}`, tap: `conv-${index}`,
      outChannels, inChannels, kernel: k, stride, pad, weights, bias,
    },
    relu: activation === 'relu',
  };
}

/** Fold batch-norm statistics into a not-yet-activated conv. */
function foldBatchNorm(layer: tf.layers.Layer, pending: PendingConv): void {
  const cfg = layer.getConfig() as Record<string, unknown>;
  const axis = (cfg['axis'] as number) ?? -1;
  if (axis !== -1 && axis !== 3) {
    throw new ConversionError(`layer '${layer.name}': batch norm over axis ${axis} cannot be folded`);
  }
  const eps = (cfg['epsilon'] as number) ?? 1e-3;
  const hasScale = (cfg['scale'] as boolean) ?? true;
  const hasCenter = (cfg['center'] as boolean) ?? true;
  const tensors = layer.getWeights().map((t) => t.dataSync() as Float32Array);
  let i = 0;
  const conv = pending.layer;
  const n = conv.outChannels;
  const ones = new Float32Array(n).fill(1);
  const zeros = new Float32Array(n);
  const gamma = hasScale ? tensors[i++] : ones;
  const beta = hasCenter ? tensors[i++] : zeros;
  const mean = tensors[i++];
  const variance = tensors[i++];
  if (mean.length !== n) {
    throw new ConversionError(
      `layer '${layer.name}': ${mean.length} batch-norm channels for a ${n}-channel conv`);
  }
  const perIn = conv.inChannels * conv.kernel * conv.kernel;
  for (let o = 0; o < n; o++) {
    const scale = gamma[o] / Math.sqrt(variance[o] + eps);
    for (let j = o * perIn; j < (o + 1) * perIn; j++) {
      conv.weights[j] = Math.fround(conv.weights[j] * scale);
    }
    const b = conv.bias ? conv.bias[o] : 0.0;
    zeros[o] = Math.fround((b - mean[o]) * scale + beta[o]);
  }
  conv.bias = zeros; // folding always leaves an effective bias behind
}

function isPlainRelu(layer: tf.layers.Layer, cls: string): boolean {
  const cfg = layer.getConfig() as Record<string, unknown>;
  if (cls === 'Activation') {
    const act = cfg['activation'] as string;
    if (act === 'relu') return true;
    throw new ConversionError(
      `layer '${layer.name}': activation '${act}' has no equivalent in the target format`);
  }
  // Standalone ReLU layer: only the plain variant matches conv+relu.
  const maxValue = cfg['maxValue'];
  const slope = (cfg['negativeSlope'] as number) ?? 0;
  const threshold = (cfg['threshold'] as number) ?? 0;
  if (maxValue == null && slope === 0 && threshold === 0) return true;
  throw new ConversionError(
    `layer '${layer.name}': clipped or leaky relu has no equivalent in the target format`);
}

export interface Extraction {
  stack: ConvStack;
  /** Human-readable mapping from emitted layers to source layers. */
  notes: string[];
  /** Source-graph tensors equal to each emitted tap (post-relu), in order. */
  tapOutputs: tf.SymbolicTensor[];
}

export function extractStack(model: tf.LayersModel, preprocess: string[]): Extraction {
  const layers: Layer[] = [];
  const notes: string[] = [];
  const tapOutputs: tf.SymbolicTensor[] = [];
  let convCount = 0;
  let poolCount = 0;
  let pending: PendingConv | null = null;
  let inputChannels: number | null = null;

  const closePending = (reason: string) => {
    if (pending) {
      throw new ConversionError(
        `conv '${pending.sourceName}' is linear and never gets a relu before ${reason}; ` +
        `the target format only has conv+relu layers`);
    }
  };

  for (const layer of model.layers) {
    if (convCount >= WANT_CONVS) break; // fifth conv reached: the rest is head
    const cls = layer.getClassName();
    if (cls === 'InputLayer') continue;
    if (cls === 'Dropout') {
      notes.push(`dropped '${layer.name}' (inference no-op)`);
      continue;
    }
    if (cls === 'Conv2D') {
      closePending(`conv '${layer.name}'`);
      const { conv, relu } = takeConv(layer, convCount + 1);
      if (inputChannels === null) inputChannels = conv.inChannels;
      if (relu) {
        layers.push(conv);
        convCount += 1;
        notes.push(`${conv.name} <- '${layer.name}' (relu fused)`);
        tapOutputs.push(layer.output as tf.SymbolicTensor);
      } else {
        pending = { layer: conv, sourceName: layer.name };
      }
    } else if (cls === 'BatchNormalization') {
      if (!pending) {
        throw new ConversionError(
          `layer '${layer.name}': batch norm can only be folded into the linear conv ` +
          `directly before it`);
      }
      foldBatchNorm(layer, pending);
      notes.push(`folded '${layer.name}' into ${pending.layer.name}`);
    } else if (cls === 'Activation' || cls === 'ReLU') {
      if (!isPlainRelu(layer, cls)) continue;
      if (!pending) {
        throw new ConversionError(
          `layer '${layer.name}': relu without a preceding linear conv`);
      }
      layers.push(pending.layer);
      convCount += 1;
      notes.push(`${pending.layer.name} <- '${pending.sourceName}' + '${layer.name}'`);
      tapOutputs.push(layer.output as tf.SymbolicTensor);
      pending = null;
    } else if (cls === 'MaxPooling2D') {
      closePending(`pool '${layer.name}'`);
      const cfg = layer.getConfig() as Record<string, unknown>;
      if ((cfg['padding'] as string) !== 'valid') {
        throw new ConversionError(
          `layer '${layer.name}': pooling is only supported with 'valid' padding`);
      }
      const k = pair(cfg['poolSize'] as number | number[], 'pool size', layer.name);
      const stride = pair((cfg['strides'] as number | number[]) ?? k, 'stride', layer.name);
      poolCount += 1;
      layers.push({ kind: 'maxpool', name: `pool${poolCount}`, kernel: k, stride });
      notes.push(`pool${poolCount} <- '${layer.name}'`);
    } else {
      throw new ConversionError(
        `layer '${layer.name}' (${cls}) appears before the fifth conv and cannot be converted`);
    }
  }
  closePending('the end of the model');
  if (convCount < WANT_CONVS) {
    throw new ConversionError(
      `model has ${convCount} conv layer(s) before its head; need ${WANT_CONVS}`);
  }
  if (inputChannels === null) {
    throw new ConversionError('model has no conv layers at all');
  }
  // Channel chaining sanity check: a branchy graph flattened into layer order
  // would show up here as an impossible in-channel count.
  let inC = inputChannels;
  for (const layer of layers) {
    if (layer.kind !== 'conv') continue;
    if (layer.inChannels !== inC) {
      throw new ConversionError(
        `${layer.name} expects ${layer.inChannels} input channels but gets ${inC}; ` +
        `the model is not a simple chain`);
    }
    inC = layer.outChannels;
  }
  return { stack: { inputChannels, preprocess, layers }, notes, tapOutputs };
}
