/**
 * Probe fixtures: a frozen random image plus the activations the source
 * runtime computed for it, so any reimplementation of the converted stack can
 * be checked against the original numbers.
 *
 * Layout inside a converted directory:
 *   probe_image.bin  raw float32 little-endian, C order, (channels, h, w)
 *   probe.json       checksums (full-tap sums) and spot samples per tap
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';
import { Extraction } from './extract';
import {
  ConversionError, Tensor3, f32leBytes, f32leRead, forward, readStack, tensor3,
} from './stack';
import { mulberry32, uniformF32 } from './rng';

export const PROBE_FILE = 'probe.json';
export const PROBE_IMAGE = 'probe_image.bin';
export const PROBE_FORMAT = 'grasptrace-probe';
export const SAMPLES_PER_TAP = 5;

export interface ProbeSample {
  f: number;
  row: number;
  col: number;
  value: number;
}

export interface ProbeFixture {
  format: typeof PROBE_FORMAT;
  version: 1;
  image: { file: string; height: number; width: number; channels: number; dtype: 'float32' };
  preprocess: string[];
  taps: Record<string, { checksum: number; samples: ProbeSample[] }>;
}

/** Seeded probe image in [0, 1], stored (c, h, w) like the python side reads it. */
export function makeProbeImage(seed: number, channels: number, height: number, width: number): Float32Array {
  return uniformF32(mulberry32(seed), channels * height * width, 0, 1);
}

function chwToNhwc(chw: Float32Array, c: number, h: number, w: number): Float32Array {
  const out = new Float32Array(chw.length);
  for (let ch = 0; ch < c; ch++) {
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        out[(y * w + x) * c + ch] = chw[(ch * h + y) * w + x];
      }
    }
  }
  return out;
}

/**
 * Run the source model on the probe image and collect per-tap numbers.
 *
 * The activations come from the source runtime's own predict, not from our
 * rewritten stack: the fixture exists to pin the original behaviour down.
 * Checksums are full-tap sums accumulated in float64 over the float32 values.
 */
export function buildProbe(
  model: tf.LayersModel, extraction: Extraction, imageChw: Float32Array,
  channels: number, height: number, width: number, seed: number,
): ProbeFixture {
  const nhwc = chwToNhwc(imageChw, channels, height, width);
  const input = tf.tensor4d(nhwc, [1, height, width, channels]);
  const tapModel = tf.model({
    inputs: (model as tf.LayersModel).inputs,
    outputs: extraction.tapOutputs,
  });
  const raw = tapModel.predict(input);
  const outputs = Array.isArray(raw) ? raw : [raw];
  const rand = mulberry32(seed ^ 0x5f3759df);
  const taps: ProbeFixture['taps'] = {};
  const tapNames: string[] = [];
  for (const layer of extraction.stack.layers) {
    if (layer.kind === 'conv' && layer.tap) tapNames.push(layer.tap);
  }
  outputs.forEach((tensor, i) => {
    const [, oh, ow, oc] = tensor.shape as number[];
    const data = tensor.dataSync() as Float32Array; // (oh, ow, oc)
    let checksum = 0;
    for (let j = 0; j < data.length; j++) checksum += data[j];
    const samples: ProbeSample[] = [];
    for (let s = 0; s < SAMPLES_PER_TAP; s++) {
      const f = Math.floor(rand() * oc);
      const row = Math.floor(rand() * oh);
      const col = Math.floor(rand() * ow);
      samples.push({ f, row, col, value: data[(row * ow + col) * oc + f] });
    }
    taps[tapNames[i]] = { checksum, samples };
  });
  input.dispose();
  outputs.forEach((t) => t.dispose());
  return {
    format: PROBE_FORMAT,
    version: 1,
    image: { file: PROBE_IMAGE, height, width, channels, dtype: 'float32' },
    preprocess: extraction.stack.preprocess,
    taps,
  };
}

export function writeProbe(outDir: string, fixture: ProbeFixture, imageChw: Float32Array): void {
  fs.mkdirSync(outDir, { recursive: true });
  fs.writeFileSync(path.join(outDir, PROBE_IMAGE), f32leBytes(imageChw));
  fs.writeFileSync(path.join(outDir, PROBE_FILE), JSON.stringify(fixture, null, 2) + '\n');
}

export interface ProbeCheck {
  worstSample: number;
  worstChecksumRel: number;
}

/**
 * Re-run the converted stack (float64 reference forward) over a written probe
 * directory and compare against the recorded numbers. This is the same check
 * the python side performs, so it catches packaging mistakes before handoff.
 */
export function checkProbeDir(dir: string, tol: number): ProbeCheck {
  const fixturePath = path.join(dir, PROBE_FILE);
  if (!fs.existsSync(fixturePath)) {
    throw new ConversionError(`no ${PROBE_FILE} in ${dir}`);
  }
  const fixture = JSON.parse(fs.readFileSync(fixturePath, 'utf8')) as ProbeFixture;
  if (fixture.format !== PROBE_FORMAT) {
    throw new ConversionError(`${fixturePath}: not a probe fixture`);
  }
  const stack = readStack(dir);
  const { height, width, channels } = fixture.image;
  const raw = f32leRead(fs.readFileSync(path.join(dir, fixture.image.file)));
  if (raw.length !== channels * height * width) {
    throw new ConversionError(
      `${fixture.image.file}: ${raw.length} values for shape (${channels}, ${height}, ${width})`);
  }
  const image: Tensor3 = tensor3(channels, height, width);
  image.data.set(raw);
  const tapActs = forward(stack, image);
  let worstSample = 0;
  let worstChecksumRel = 0;
  for (const [tap, expect] of Object.entries(fixture.taps)) {
    const acts = tapActs.get(tap);
    if (!acts) throw new ConversionError(`probe tap '${tap}' is not tapped by the stack`);
    let checksum = 0;
    for (let j = 0; j < acts.data.length; j++) checksum += acts.data[j];
    const rel = Math.abs(checksum - expect.checksum) / Math.max(1, Math.abs(expect.checksum));
    worstChecksumRel = Math.max(worstChecksumRel, rel);
    if (rel > tol) {
      throw new ConversionError(
        `tap ${tap}: checksum ${checksum} != ${expect.checksum} (rel ${rel.toExponential(2)})`);
    }
    for (const s of expect.samples) {
      const got = acts.data[(s.f * acts.height + s.row) * acts.width + s.col];
      const err = Math.abs(got - s.value);
      worstSample = Math.max(worstSample, err);
      if (err > tol) {
        throw new ConversionError(
          `tap ${tap} unit (f=${s.f}, r=${s.row}, c=${s.col}): ${got} != ${s.value}`);
      }
    }
  }
  return { worstSample, worstChecksumRel };
}
