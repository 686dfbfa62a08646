/**
 * A fully seeded stand-in for the classic five-conv image backbone.
 *
 * Same topology as the usual 227-input network (big strided first conv, two
 * early pools, three 3x3 convs) but thinner and on a 131 input so the
 * committed fixtures stay small. Weights are He-scaled gaussians from a fixed
 * PRNG stream, quantized to float32 at creation, so the same seed rebuilds
 * the exact same model on any machine. The dense head exists only to make the
 * model shaped like a real classifier; conversion stops before it.
 */

import * as tf from '@tensorflow/tfjs';
import { gaussianF32, mulberry32, uniformF32 } from './rng';

export const ALEXNET_INPUT = 131;

/** Overwrite every weight in the model from one seeded PRNG stream. */
export function seedWeights(model: tf.LayersModel, seed: number): void {
  const rand = mulberry32(seed);
  for (const layer of model.layers) {
    const current = layer.getWeights();
    if (current.length === 0) continue;
    const fresh = current.map((t) => {
      if (t.shape.length >= 2) {
        const fanIn = t.shape.slice(0, -1).reduce((a, b) => a * b, 1);
        return tf.tensor(gaussianF32(rand, t.size, Math.sqrt(2 / fanIn)), t.shape);
      }
      return tf.tensor(uniformF32(rand, t.size, -0.05, 0.05), t.shape);
    });
    layer.setWeights(fresh);
    fresh.forEach((t) => t.dispose());
  }
}

export function seededAlexnet(seed = 7): tf.LayersModel {
  const model = tf.sequential({
    layers: [
      tf.layers.conv2d({
        inputShape: [ALEXNET_INPUT, ALEXNET_INPUT, 3], filters: 16, kernelSize: 11,
        strides: 4, padding: 'valid', activation: 'relu', name: 'feat1',
      }),
      tf.layers.maxPooling2d({ poolSize: 3, strides: 2, name: 'down1' }),
      tf.layers.conv2d({ filters: 32, kernelSize: 5, padding: 'same', activation: 'relu', name: 'feat2' }),
      tf.layers.maxPooling2d({ poolSize: 3, strides: 2, name: 'down2' }),
      tf.layers.conv2d({ filters: 48, kernelSize: 3, padding: 'same', activation: 'relu', name: 'feat3' }),
      tf.layers.conv2d({ filters: 48, kernelSize: 3, padding: 'same', activation: 'relu', name: 'feat4' }),
      tf.layers.conv2d({ filters: 32, kernelSize: 3, padding: 'same', activation: 'relu', name: 'feat5' }),
      tf.layers.flatten({ name: 'head_flat' }),
      tf.layers.dense({ units: 10, name: 'head' }),
    ],
  });
  seedWeights(model, seed);
  return model;
}
