/** Deterministic fixtures: a seeded weights file and synthetic PGM
 * images, so tests never depend on downloaded checkpoints. */

import { writeFileSync } from "node:fs";

import type { WeightsFile } from "../src/model.js";
import { encodePgm } from "../src/pgm.js";

/** mulberry32: tiny deterministic PRNG for fixture data */
export function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function layer(r: () => number, shape: number[], scale: number) {
  const size = shape.reduce((a, b) => a * b, 1);
  const values = Array.from({ length: size }, () =>
    Math.fround((r() * 2 - 1) * scale),
  );
  return { shape, values };
}

export function makeWeights(seed = 1234, dim = 32): WeightsFile {
  const r = rng(seed);
  const [c1, c2, c3] = [8, 16, 16];
  return {
    format: "featnet-v1",
    descriptorDim: dim,
    layers: {
      "conv1/kernel": layer(r, [3, 3, 1, c1], 0.8),
      "conv1/bias": layer(r, [c1], 0.1),
      "conv2/kernel": layer(r, [3, 3, c1, c2], 0.3),
      "conv2/bias": layer(r, [c2], 0.1),
      "conv3/kernel": layer(r, [3, 3, c2, c3], 0.3),
      "conv3/bias": layer(r, [c3], 0.1),
      "det/kernel": layer(r, [1, 1, c3, 65], 0.5),
      "det/bias": layer(r, [65], 0.1),
      "desc/kernel": layer(r, [1, 1, c3, dim], 0.5),
      "desc/bias": layer(r, [dim], 0.1),
    },
  };
}

export function writeWeights(path: string, seed = 1234, dim = 32): void {
  writeFileSync(path, JSON.stringify(makeWeights(seed, dim)));
}

/** Textured synthetic image: smooth gradients plus seeded speckle. */
export function makeImage(width: number, height: number, seed = 7) {
  const r = rng(seed);
  const data = new Float32Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const v =
        0.5 +
        0.25 * Math.sin(x * 0.23 + 2 * Math.sin(y * 0.07)) *
          Math.cos(y * 0.31) +
        0.2 * (r() - 0.5);
      data[y * width + x] = Math.min(1, Math.max(0, v));
    }
  }
  return { width, height, data };
}

export function writeImage(
  path: string,
  width: number,
  height: number,
  seed = 7,
): void {
  writeFileSync(path, encodePgm(makeImage(width, height, seed)));
}
