/**
 * File-backed load/save for tfjs layers models.
 *
 * The plain @tensorflow/tfjs package ships without the node file:// handlers,
 * so the CLI provides its own: model.json next to one or more weight shards,
 * exactly the layout produced by model.save() everywhere else.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';
import { ConversionError } from './stack';

function joinBuffers(data: ArrayBuffer | ArrayBuffer[]): ArrayBuffer {
  if (!Array.isArray(data)) return data;
  const total = data.reduce((n, b) => n + b.byteLength, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const b of data) {
    out.set(new Uint8Array(b), off);
    off += b.byteLength;
  }
  return out.buffer;
}

/** Load handler for a model.json path (weight shards resolved next to it). */
export function fileLoadHandler(modelJsonPath: string): tf.io.IOHandler {
  return {
    load: async () => {
      const dir = path.dirname(modelJsonPath);
      const raw = JSON.parse(fs.readFileSync(modelJsonPath, 'utf8'));
      const artifacts: tf.io.ModelArtifacts = {
        modelTopology: raw.modelTopology,
        format: raw.format,
        generatedBy: raw.generatedBy,
        convertedBy: raw.convertedBy,
      };
      if (raw.weightsManifest) {
        const specs: tf.io.WeightsManifestEntry[] = [];
        const shards: ArrayBuffer[] = [];
        for (const group of raw.weightsManifest) {
          specs.push(...group.weights);
          for (const rel of group.paths) {
            const buf = fs.readFileSync(path.join(dir, rel));
            shards.push(buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength));
          }
        }
        artifacts.weightSpecs = specs;
        artifacts.weightData = joinBuffers(shards);
      }
      return artifacts;
    },
  };
}

/** Save handler writing model.json + weights.bin into a directory. */
export function fileSaveHandler(dir: string): tf.io.IOHandler {
  return {
    save: async (artifacts: tf.io.ModelArtifacts) => {
      fs.mkdirSync(dir, { recursive: true });
      const manifest = {
        modelTopology: artifacts.modelTopology,
        format: artifacts.format,
        generatedBy: artifacts.generatedBy,
        convertedBy: artifacts.convertedBy ?? null,
        weightsManifest: [
          { paths: ['weights.bin'], weights: artifacts.weightSpecs ?? [] },
        ],
      };
      fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(manifest));
      const data = artifacts.weightData;
      if (data) {
        fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(joinBuffers(data)));
      }
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON',
        },
      };
    },
  };
}

/** Load a layers model from a model.json path, with a friendlier error. */
export async function loadModelFile(modelJsonPath: string): Promise<tf.LayersModel> {
  if (!fs.existsSync(modelJsonPath)) {
    throw new ConversionError(`no such model file: ${modelJsonPath}`);
  }
  return tf.loadLayersModel(fileLoadHandler(modelJsonPath));
}
