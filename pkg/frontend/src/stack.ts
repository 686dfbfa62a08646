/**
 * The converted network: a flat stack of conv+relu and maxpool layers in the
 * grasptrace weight-bank layout, plus a float64 reference forward pass.
 *
 * Conventions shared with the python side:
 *  - conv kernels are stored (out, in, k, k) in C order, float32 little-endian
 *  - a conv layer always applies ReLU after the (optional) bias
 *  - convolution is cross-correlation (no kernel flip), zero padding
 *  - spatial sizing is floor((in + 2*pad - k) / stride) + 1
 *  - maxpool has no padding
 */

import * as fs from 'fs';
import * as path from 'path';

export const MANIFEST_MAGIC = 'grasptrace-weights v1';
export const MANIFEST_NAME = 'manifest.txt';

export interface ConvLayer {
  kind: 'conv';
  name: string;
  tap: string | null;
  outChannels: number;
  inChannels: number;
  kernel: number;
  stride: number;
  pad: number;
  /** (out, in, k, k) C order. */
  weights: Float32Array;
  /** (out,) or null when the layer has no bias term. */
  bias: Float32Array | null;
}

export interface PoolLayer {
  kind: 'maxpool';
  name: string;
  kernel: number;
  stride: number;
}

export type Layer = ConvLayer | PoolLayer;

export interface ConvStack {
  inputChannels: number;
  preprocess: string[];
  layers: Layer[];
}

export class ConversionError extends Error {}

/** Channels-first tensor with a plain float64 backing array. */
export interface Tensor3 {
  channels: number;
  height: number;
  width: number;
  /** (c, h, w) C order. */
  data: Float64Array;
}

export function tensor3(channels: number, height: number, width: number): Tensor3 {
  return { channels, height, width, data: new Float64Array(channels * height * width) };
}

function outHw(inH: number, inW: number, kernel: number, stride: number, pad: number): [number, number] {
  const oh = Math.floor((inH + 2 * pad - kernel) / stride) + 1;
  const ow = Math.floor((inW + 2 * pad - kernel) / stride) + 1;
  if (oh < 1 || ow < 1) {
    throw new ConversionError(
      `window ${kernel} (stride ${stride}, pad ${pad}) does not fit input ${inH}x${inW}`);
  }
  return [oh, ow];
}

function convForward(x: Tensor3, layer: ConvLayer): Tensor3 {
  if (x.channels !== layer.inChannels) {
    throw new ConversionError(
      `layer ${layer.name}: input has ${x.channels} channels, kernel expects ${layer.inChannels}`);
  }
  const k = layer.kernel;
  const [oh, ow] = outHw(x.height, x.width, k, layer.stride, layer.pad);
  const out = tensor3(layer.outChannels, oh, ow);
  const { height: h, width: w } = x;
  for (let o = 0; o < layer.outChannels; o++) {
    const bias = layer.bias ? layer.bias[o] : 0.0;
    const wBase = o * layer.inChannels * k * k;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        let acc = bias;
        const y0 = oy * layer.stride - layer.pad;
        const x0 = ox * layer.stride - layer.pad;
        for (let c = 0; c < layer.inChannels; c++) {
          const xBase = c * h * w;
          const wcBase = wBase + c * k * k;
          for (let ky = 0; ky < k; ky++) {
            const y = y0 + ky;
            if (y < 0 || y >= h) continue;
            const row = xBase + y * w;
            const wRow = wcBase + ky * k;
            for (let kx = 0; kx < k; kx++) {
              const xx = x0 + kx;
              if (xx < 0 || xx >= w) continue;
              acc += x.data[row + xx] * layer.weights[wRow + kx];
            }
          }
        }
        out.data[(o * oh + oy) * ow + ox] = acc > 0 ? acc : 0;
      }
    }
  }
  return out;
}

function poolForward(x: Tensor3, layer: PoolLayer): Tensor3 {
  const k = layer.kernel;
  const [oh, ow] = outHw(x.height, x.width, k, layer.stride, 0);
  const out = tensor3(x.channels, oh, ow);
  for (let c = 0; c < x.channels; c++) {
    const base = c * x.height * x.width;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        let best = -Infinity;
        for (let ky = 0; ky < k; ky++) {
          const row = base + (oy * layer.stride + ky) * x.width + ox * layer.stride;
          for (let kx = 0; kx < k; kx++) {
            const v = x.data[row + kx];
            if (v > best) best = v;
          }
        }
        out.data[(c * oh + oy) * ow + ox] = best;
      }
    }
  }
  return out;
}

/** Run the stack, returning the post-ReLU activations of every tapped conv. */
export function forward(stack: ConvStack, image: Tensor3): Map<string, Tensor3> {
  if (image.channels !== stack.inputChannels) {
    throw new ConversionError(
      `image has ${image.channels} channels, stack expects ${stack.inputChannels}`);
  }
  const taps = new Map<string, Tensor3>();
  let cur = image;
  for (const layer of stack.layers) {
    if (layer.kind === 'conv') {
      cur = convForward(cur, layer);
      if (layer.tap) taps.set(layer.tap, cur);
    } else {
      cur = poolForward(cur, layer);
    }
  }
  return taps;
}

// ---------------------------------------------------------------------------
// Manifest i/o
// ---------------------------------------------------------------------------

/** float32 little-endian bytes regardless of platform endianness. */
export function f32leBytes(values: Float32Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf;
}

export function f32leRead(buf: Buffer): Float32Array {
  if (buf.length % 4 !== 0) throw new ConversionError(`blob length ${buf.length} is not a multiple of 4`);
  const out = new Float32Array(buf.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = buf.readFloatLE(i * 4);
  return out;
}

export function manifestText(stack: ConvStack): string {
  const lines = [MANIFEST_MAGIC, `input channels=${stack.inputChannels}`];
  for (const p of stack.preprocess) lines.push(`preprocess ${p}`);
  for (const layer of stack.layers) {
    if (layer.kind === 'conv') {
      const parts = [
        `layer name=${layer.name}`, 'kind=conv', `out=${layer.outChannels}`,
        `k=${layer.kernel}`, `stride=${layer.stride}`, `pad=${layer.pad}`,
        `bias=${layer.bias ? 1 : 0}`,
      ];
      if (layer.tap) parts.push(`tap=${layer.tap}`);
      parts.push(`blob=${layer.name}.bin`);
      lines.push(parts.join(' '));
    } else {
      lines.push(`layer name=${layer.name} kind=maxpool k=${layer.kernel} stride=${layer.stride}`);
    }
  }
  return lines.join('\n') + '\n';
}

/** Write manifest.txt plus one <name>.bin blob per conv layer. */
export function writeStack(outDir: string, stack: ConvStack): void {
  fs.mkdirSync(outDir, { recursive: true });
  for (const layer of stack.layers) {
    if (layer.kind !== 'conv') continue;
    const expect = layer.outChannels * layer.inChannels * layer.kernel * layer.kernel;
    if (layer.weights.length !== expect) {
      throw new ConversionError(
        `layer ${layer.name}: ${layer.weights.length} kernel values, shape wants ${expect}`);
    }
    if (layer.bias && layer.bias.length !== layer.outChannels) {
      throw new ConversionError(
        `layer ${layer.name}: ${layer.bias.length} bias values for ${layer.outChannels} channels`);
    }
    const parts = [f32leBytes(layer.weights)];
    if (layer.bias) parts.push(f32leBytes(layer.bias));
    fs.writeFileSync(path.join(outDir, `${layer.name}.bin`), Buffer.concat(parts));
  }
  fs.writeFileSync(path.join(outDir, MANIFEST_NAME), manifestText(stack));
}

function parseKv(tokens: string[], line: string): Record<string, string> {
  const out: Record<string, string> = {};
  for (const tok of tokens) {
    const eq = tok.indexOf('=');
    if (eq < 0) throw new ConversionError(`malformed manifest entry '${tok}' in: ${line}`);
    out[tok.slice(0, eq)] = tok.slice(eq + 1);
  }
  return out;
}

/** Read a weight-bank directory back. Used to prove round-trips are exact. */
export function readStack(inDir: string): ConvStack {
  const manifestPath = path.join(inDir, MANIFEST_NAME);
  const lines = fs.readFileSync(manifestPath, 'utf8')
    .split('\n')
    .map((ln) => ln.trim())
    .filter((ln, i, all) => ln.length > 0 && !all[i].startsWith('#'));
  if (lines.length === 0 || lines[0] !== MANIFEST_MAGIC) {
    throw new ConversionError(`${manifestPath}: not a '${MANIFEST_MAGIC}' manifest`);
  }
  let inputChannels: number | null = null;
  const preprocess: string[] = [];
  const layers: Layer[] = [];
  const blobs = new Map<string, string>();
  for (const line of lines.slice(1)) {
    const tokens = line.split(/\s+/);
    if (tokens[0] === 'input') {
      inputChannels = parseInt(parseKv(tokens.slice(1), line)['channels'], 10);
    } else if (tokens[0] === 'preprocess') {
      preprocess.push(line.slice('preprocess '.length));
    } else if (tokens[0] === 'layer') {
      const kv = parseKv(tokens.slice(1), line);
      if (kv['kind'] === 'conv') {
        layers.push({
          kind: 'conv', name: kv['name'], tap: kv['tap'] ?? null,
          outChannels: parseInt(kv['out'], 10), inChannels: 0,
          kernel: parseInt(kv['k'], 10), stride: parseInt(kv['stride'] ?? '1', 10),
          pad: parseInt(kv['pad'] ?? '0', 10), weights: new Float32Array(0),
          bias: parseInt(kv['bias'] ?? '1', 10) ? new Float32Array(0) : null,
        });
        blobs.set(kv['name'], kv['blob']);
      } else if (kv['kind'] === 'maxpool') {
        layers.push({
          kind: 'maxpool', name: kv['name'],
          kernel: parseInt(kv['k'], 10), stride: parseInt(kv['stride'] ?? '1', 10),
        });
      } else {
        throw new ConversionError(`${manifestPath}: unsupported layer kind '${kv['kind']}'`);
      }
    } else {
      throw new ConversionError(`${manifestPath}: unknown manifest line: ${line}`);
    }
  }
  if (inputChannels === null) {
    throw new ConversionError(`${manifestPath}: missing 'input channels=' line`);
  }
  let inC = inputChannels;
  for (const layer of layers) {
    if (layer.kind !== 'conv') continue;
    layer.inChannels = inC;
    const raw = f32leRead(fs.readFileSync(path.join(inDir, blobs.get(layer.name)!)));
    const nKernel = layer.outChannels * inC * layer.kernel * layer.kernel;
    const nBias = layer.bias ? layer.outChannels : 0;
    if (raw.length !== nKernel + nBias) {
      throw new ConversionError(
        `${blobs.get(layer.name)}: expected ${nKernel + nBias} float32 values ` +
        `(${nKernel} kernel + ${nBias} bias), got ${raw.length}`);
    }
    layer.weights = raw.slice(0, nKernel);
    if (layer.bias) layer.bias = raw.slice(nKernel);
    inC = layer.outChannels;
  }
  return { inputChannels, preprocess, layers };
}
