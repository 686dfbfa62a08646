/** Small deterministic PRNG so fixtures can be regenerated bit-for-bit. */

/** mulberry32: 32-bit state, good enough statistics for weight seeding. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export type Rand = () => number;

/** Standard normal via Box-Muller (one value per call, no caching). */
export function gaussian(rand: Rand): number {
  let u = 0;
  while (u === 0) u = rand(); // avoid log(0)
  const v = rand();
  return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
}

/** Float32Array of N(0, std^2) draws, quantized to float32 at creation. */
export function gaussianF32(rand: Rand, n: number, std: number): Float32Array {
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = Math.fround(gaussian(rand) * std);
  return out;
}

/** Float32Array of uniform draws in [lo, hi). */
export function uniformF32(rand: Rand, n: number, lo: number, hi: number): Float32Array {
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = Math.fround(lo + rand() * (hi - lo));
  return out;
}
