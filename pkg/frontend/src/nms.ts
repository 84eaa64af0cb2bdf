/** Greedy non-maximum suppression on a dense score map.
 *
 * Candidates above the threshold are visited in descending score order
 * (ties broken by row then column, so output order is deterministic);
 * each accepted point suppresses everything within the given Euclidean
 * radius. Output is capped at maxKeypoints.
 */

import type { Keypoint } from "./feat.js";

export function nonMaxSuppress(
  scores: Float32Array,
  width: number,
  height: number,
  threshold: number,
  radius: number,
  maxKeypoints: number,
): Keypoint[] {
  const candidates: Keypoint[] = [];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const s = scores[y * width + x];
      if (s >= threshold) candidates.push({ x, y, score: s });
    }
  }
  candidates.sort(
    (a, b) => b.score - a.score || a.y - b.y || a.x - b.x,
  );
  if (radius <= 0) return candidates.slice(0, maxKeypoints);

  const suppressed = new Uint8Array(width * height);
  const r = Math.ceil(radius);
  const r2 = radius * radius;
  const out: Keypoint[] = [];
  for (const k of candidates) {
    if (out.length >= maxKeypoints) break;
    if (suppressed[k.y * width + k.x]) continue;
    out.push(k);
    for (let dy = -r; dy <= r; dy++) {
      const yy = k.y + dy;
      if (yy < 0 || yy >= height) continue;
      for (let dx = -r; dx <= r; dx++) {
        const xx = k.x + dx;
        if (xx < 0 || xx >= width) continue;
        if (dx * dx + dy * dy <= r2) suppressed[yy * width + xx] = 1;
      }
    }
  }
  return out;
}
