/** Learned detector/descriptor network (SuperPoint-style architecture):
 * a shared convolutional encoder at 1/8 resolution feeding two heads,
 * one scoring interest points per 8x8 cell (with a dustbin channel),
 * one emitting a coarse descriptor map sampled bilinearly at keypoints.
 *
 * Weights load from a plain JSON file so any checkpoint converted to the
 * documented layout can be used; inference runs on the deterministic
 * tfjs CPU backend.
 */

import { readFileSync } from "node:fs";
import * as tf from "@tensorflow/tfjs";

import { ModelLoadError } from "./errors.js";
import type { GrayImage } from "./pgm.js";

export const CELL = 8;
export const WEIGHTS_FORMAT = "featnet-v1";

interface LayerSpec {
  shape: number[];
  values: number[];
}

export interface WeightsFile {
  format: string;
  descriptorDim: number;
  layers: Record<string, LayerSpec>;
}

const REQUIRED_LAYERS = [
  "conv1/kernel",
  "conv1/bias",
  "conv2/kernel",
  "conv2/bias",
  "conv3/kernel",
  "conv3/bias",
  "det/kernel",
  "det/bias",
  "desc/kernel",
  "desc/bias",
];

export interface ModelOutput {
  /** per-pixel interest score, row-major width*height, in [0, 1] */
  scores: Float32Array;
  /** coarse descriptor map, row-major coarseHeight*coarseWidth*dim */
  coarseDescriptors: Float32Array;
  coarseWidth: number;
  coarseHeight: number;
  dim: number;
}

export class FeatureModel {
  private constructor(
    private readonly weights: Map<string, tf.Tensor>,
    readonly descriptorDim: number,
  ) {}

  static load(weightsPath: string): FeatureModel {
    let spec: WeightsFile;
    try {
      spec = JSON.parse(readFileSync(weightsPath, "utf8")) as WeightsFile;
    } catch (e) {
      throw new ModelLoadError(
        `cannot load weights from ${weightsPath}: ${(e as Error).message}`,
      );
    }
    if (spec.format !== WEIGHTS_FORMAT) {
      throw new ModelLoadError(
        `weights format ${JSON.stringify(spec.format)}, ` +
          `expected ${WEIGHTS_FORMAT}`,
      );
    }
    const weights = new Map<string, tf.Tensor>();
    for (const name of REQUIRED_LAYERS) {
      const layer = spec.layers?.[name];
      if (!layer) throw new ModelLoadError(`missing layer ${name}`);
      const size = layer.shape.reduce((a, b) => a * b, 1);
      if (layer.values.length !== size) {
        throw new ModelLoadError(
          `layer ${name}: ${layer.values.length} values for shape ` +
            `[${layer.shape}]`,
        );
      }
      weights.set(
        name,
        tf.tensor(Float32Array.from(layer.values), layer.shape as number[]),
      );
    }
    const detOut = weights.get("det/kernel")!.shape.at(-1);
    if (detOut !== CELL * CELL + 1) {
      throw new ModelLoadError(
        `det head emits ${detOut} channels, expected ${CELL * CELL + 1}`,
      );
    }
    const dim = weights.get("desc/kernel")!.shape.at(-1)!;
    if (dim !== spec.descriptorDim) {
      throw new ModelLoadError(
        `descriptorDim ${spec.descriptorDim} != desc head ${dim}`,
      );
    }
    return new FeatureModel(weights, dim);
  }

  run(img: GrayImage): ModelOutput {
    const padW = Math.ceil(img.width / CELL) * CELL;
    const padH = Math.ceil(img.height / CELL) * CELL;
    const out = tf.tidy(() => {
      let x: tf.Tensor4D = tf
        .tensor(img.data, [1, img.height, img.width, 1]);
      if (padW !== img.width || padH !== img.height) {
        x = tf.pad(x, [
          [0, 0],
          [0, padH - img.height],
          [0, padW - img.width],
          [0, 0],
        ]);
      }
      x = this.block(x, "conv1");
      x = this.block(x, "conv2");
      x = this.block(x, "conv3");

      // detector head: 65 channels per 8x8 cell, softmax, drop the
      // dustbin, expand cells back to pixels
      let det = this.conv(x, "det", 1);
      det = tf.softmax(det, 3);
      det = tf.slice(det, [0, 0, 0, 0], [1, -1, -1, CELL * CELL]);
      const heat = tf.depthToSpace(det, CELL) as tf.Tensor4D;

      const desc = this.conv(x, "desc", 1);
      return [heat, desc];
    });
    const [heat, desc] = out;
    const heatFull = heat.dataSync() as Float32Array;
    const scores = new Float32Array(img.width * img.height);
    for (let y = 0; y < img.height; y++) {
      scores.set(
        heatFull.subarray(y * padW, y * padW + img.width),
        y * img.width,
      );
    }
    const result: ModelOutput = {
      scores,
      coarseDescriptors: desc.dataSync() as Float32Array,
      coarseWidth: padW / CELL,
      coarseHeight: padH / CELL,
      dim: this.descriptorDim,
    };
    heat.dispose();
    desc.dispose();
    return result;
  }

  dispose(): void {
    for (const t of this.weights.values()) t.dispose();
  }

  private block(x: tf.Tensor4D, name: string): tf.Tensor4D {
    const y = tf.relu(this.conv(x, name, 1)) as tf.Tensor4D;
    return tf.maxPool(y, 2, 2, "same");
  }

  private conv(x: tf.Tensor4D, name: string, stride: number): tf.Tensor4D {
    const k = this.weights.get(`${name}/kernel`) as tf.Tensor4D;
    const b = this.weights.get(`${name}/bias`)!;
    return tf.add(tf.conv2d(x, k, stride, "same"), b) as tf.Tensor4D;
  }
}

/** Bilinearly sample the coarse descriptor map at image coordinates and
 * L2-normalize. Returns null when the interpolated vector has no norm. */
export function sampleDescriptor(
  out: ModelOutput,
  x: number,
  y: number,
): Float32Array | null {
  // coarse cell (i, j) is centered at image pixel (CELL*j + 3.5, ...)
  const u = Math.min(Math.max((x - (CELL - 1) / 2) / CELL, 0), out.coarseWidth - 1);
  const v = Math.min(Math.max((y - (CELL - 1) / 2) / CELL, 0), out.coarseHeight - 1);
  const j0 = Math.min(Math.floor(u), out.coarseWidth - 1);
  const i0 = Math.min(Math.floor(v), out.coarseHeight - 1);
  const j1 = Math.min(j0 + 1, out.coarseWidth - 1);
  const i1 = Math.min(i0 + 1, out.coarseHeight - 1);
  const fu = u - j0;
  const fv = v - i0;
  const d = out.dim;
  const vec = new Float32Array(d);
  const w00 = (1 - fu) * (1 - fv);
  const w01 = fu * (1 - fv);
  const w10 = (1 - fu) * fv;
  const w11 = fu * fv;
  const row0 = (i0 * out.coarseWidth + j0) * d;
  const row0b = (i0 * out.coarseWidth + j1) * d;
  const row1 = (i1 * out.coarseWidth + j0) * d;
  const row1b = (i1 * out.coarseWidth + j1) * d;
  const m = out.coarseDescriptors;
  let norm2 = 0;
  for (let c = 0; c < d; c++) {
    const val =
      w00 * m[row0 + c] + w01 * m[row0b + c] +
      w10 * m[row1 + c] + w11 * m[row1b + c];
    vec[c] = val;
    norm2 += val * val;
  }
  if (norm2 < 1e-24) return null;
  const inv = 1 / Math.sqrt(norm2);
  for (let c = 0; c < d; c++) vec[c] = Math.fround(vec[c] * inv);
  return vec;
}
