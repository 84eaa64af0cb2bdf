/** FEAT binary format: magic "FEAT", u32 version (=1), u32 width,
 * u32 height, u32 N, u32 D (all little-endian); then N * (x f32, y f32,
 * score f32); then N*D f32 descriptors row-major.
 *
 * Encoding is canonical: the same feature set always produces the same
 * bytes, so repeat runs are byte-stable.
 */

import { FormatError } from "./errors.js";

export const FEAT_MAGIC = "FEAT";
export const FEAT_VERSION = 1;
export const HEADER_BYTES = 24;

export interface Keypoint {
  x: number;
  y: number;
  score: number;
}

export interface FeatureSet {
  imageWidth: number;
  imageHeight: number;
  keypoints: Keypoint[];
  /** keypoints.length rows of `dim` floats each */
  descriptors: Float32Array;
  dim: number;
}

export function validateFeatureSet(fs: FeatureSet): void {
  if (fs.descriptors.length !== fs.keypoints.length * fs.dim) {
    throw new FormatError(
      `descriptor buffer holds ${fs.descriptors.length} floats, ` +
        `expected ${fs.keypoints.length} x ${fs.dim}`,
    );
  }
  for (const k of fs.keypoints) {
    if (k.x < 0 || k.y < 0 || k.x >= fs.imageWidth || k.y >= fs.imageHeight) {
      throw new FormatError(
        `keypoint (${k.x}, ${k.y}) outside ` +
          `${fs.imageWidth}x${fs.imageHeight}`,
      );
    }
    if (k.score < 0) {
      throw new FormatError(`negative keypoint score ${k.score}`);
    }
  }
}

export function encodeFeat(fs: FeatureSet): Uint8Array {
  validateFeatureSet(fs);
  const n = fs.keypoints.length;
  const out = new Uint8Array(HEADER_BYTES + n * 12 + n * fs.dim * 4);
  const view = new DataView(out.buffer);
  for (let i = 0; i < 4; i++) out[i] = FEAT_MAGIC.charCodeAt(i);
  view.setUint32(4, FEAT_VERSION, true);
  view.setUint32(8, fs.imageWidth, true);
  view.setUint32(12, fs.imageHeight, true);
  view.setUint32(16, n, true);
  view.setUint32(20, fs.dim, true);
  let off = HEADER_BYTES;
  for (const k of fs.keypoints) {
    view.setFloat32(off, Math.fround(k.x), true);
    view.setFloat32(off + 4, Math.fround(k.y), true);
    view.setFloat32(off + 8, Math.fround(k.score), true);
    off += 12;
  }
  for (let i = 0; i < fs.descriptors.length; i++) {
    view.setFloat32(off + 4 * i, fs.descriptors[i], true);
  }
  return out;
}

export function decodeFeat(bytes: Uint8Array): FeatureSet {
  if (bytes.length < HEADER_BYTES) {
    throw new FormatError(
      `${bytes.length} bytes, header needs ${HEADER_BYTES}`,
    );
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const magic = String.fromCharCode(bytes[0], bytes[1], bytes[2], bytes[3]);
  if (magic !== FEAT_MAGIC) throw new FormatError(`bad magic ${magic}`);
  const version = view.getUint32(4, true);
  if (version !== FEAT_VERSION) {
    throw new FormatError(`unsupported version ${version}`);
  }
  const imageWidth = view.getUint32(8, true);
  const imageHeight = view.getUint32(12, true);
  const n = view.getUint32(16, true);
  const dim = view.getUint32(20, true);
  const expected = HEADER_BYTES + n * 12 + n * dim * 4;
  if (bytes.length !== expected) {
    throw new FormatError(
      `${bytes.length} bytes, format implies ${expected}`,
    );
  }
  const keypoints: Keypoint[] = [];
  let off = HEADER_BYTES;
  for (let i = 0; i < n; i++) {
    keypoints.push({
      x: view.getFloat32(off, true),
      y: view.getFloat32(off + 4, true),
      score: view.getFloat32(off + 8, true),
    });
    off += 12;
  }
  const descriptors = new Float32Array(n * dim);
  for (let i = 0; i < descriptors.length; i++) {
    descriptors[i] = view.getFloat32(off + 4 * i, true);
  }
  const fs = { imageWidth, imageHeight, keypoints, descriptors, dim };
  validateFeatureSet(fs);
  return fs;
}
