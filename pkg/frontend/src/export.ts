/** Batch export: run the feature model over an image directory and
 * write one FEAT file per image, plus a sidecar metadata file recording
 * the exact configuration, weights file, and per-image resolution
 * (checkpoint and input resolution are deployment choices, so they are
 * recorded rather than assumed). */

import { createHash } from "node:crypto";
import { mkdirSync, readdirSync, readFileSync, writeFileSync } from "node:fs";
import { basename, join } from "node:path";
import * as tf from "@tensorflow/tfjs";
import { z } from "zod";

import { ConfigError, ImageReadError } from "./errors.js";
import { encodeFeat, type FeatureSet, type Keypoint } from "./feat.js";
import { FeatureModel, sampleDescriptor } from "./model.js";
import { nonMaxSuppress } from "./nms.js";
import { decodePgm } from "./pgm.js";

export const ExportConfigSchema = z.object({
  imageDir: z.string().min(1),
  outDir: z.string().min(1),
  weightsPath: z.string().min(1),
  scoreThreshold: z.number().min(0).default(0.015),
  nmsRadius: z.number().min(0).default(4),
  maxKeypoints: z.number().int().positive().default(2000),
});

export type ExportConfig = z.infer<typeof ExportConfigSchema>;

export function parseConfig(raw: unknown): ExportConfig {
  const parsed = ExportConfigSchema.safeParse(raw);
  if (!parsed.success) {
    throw new ConfigError(parsed.error.issues
      .map((i) => `${i.path.join(".")}: ${i.message}`).join("; "));
  }
  return parsed.data;
}

export interface ExportResult {
  filesWritten: number;
  metadataPath: string;
}

export async function exportFeatures(
  cfg: ExportConfig,
): Promise<ExportResult> {
  await tf.setBackend("cpu");
  const model = FeatureModel.load(cfg.weightsPath);
  try {
    let images: string[];
    try {
      images = readdirSync(cfg.imageDir)
        .filter((f) => f.toLowerCase().endsWith(".pgm"))
        .sort();
    } catch (e) {
      throw new ImageReadError(
        `cannot list ${cfg.imageDir}: ${(e as Error).message}`,
      );
    }
    mkdirSync(cfg.outDir, { recursive: true });

    const perImage: Array<{
      image: string;
      width: number;
      height: number;
      keypoints: number;
    }> = [];
    for (const name of images) {
      const path = join(cfg.imageDir, name);
      let bytes: Uint8Array;
      try {
        bytes = readFileSync(path);
      } catch (e) {
        throw new ImageReadError(`cannot read ${path}: ${(e as Error).message}`);
      }
      const img = decodePgm(bytes);
      const fs = extract(model, img, cfg);
      const stem = basename(name, ".pgm");
      writeFileSync(join(cfg.outDir, `${stem}.feat`), encodeFeat(fs));
      perImage.push({
        image: name,
        width: img.width,
        height: img.height,
        keypoints: fs.keypoints.length,
      });
    }

    const metadataPath = join(cfg.outDir, "metadata.json");
    writeFileSync(
      metadataPath,
      JSON.stringify(
        {
          exporter: "feat-export 0.1.0",
          weightsPath: cfg.weightsPath,
          weightsSha256: sha256File(cfg.weightsPath),
          descriptorDim: model.descriptorDim,
          scoreThreshold: cfg.scoreThreshold,
          nmsRadius: cfg.nmsRadius,
          maxKeypoints: cfg.maxKeypoints,
          images: perImage,
        },
        null,
        2,
      ) + "\n",
    );
    return { filesWritten: perImage.length, metadataPath };
  } finally {
    model.dispose();
  }
}

function extract(
  model: FeatureModel,
  img: { width: number; height: number; data: Float32Array },
  cfg: ExportConfig,
): FeatureSet {
  const out = model.run(img);
  const raw = nonMaxSuppress(
    out.scores,
    img.width,
    img.height,
    cfg.scoreThreshold,
    cfg.nmsRadius,
    cfg.maxKeypoints,
  );
  const keypoints: Keypoint[] = [];
  const rows: Float32Array[] = [];
  for (const k of raw) {
    const d = sampleDescriptor(out, k.x, k.y);
    if (d === null) continue;
    keypoints.push(k);
    rows.push(d);
  }
  const descriptors = new Float32Array(rows.length * out.dim);
  rows.forEach((r, i) => descriptors.set(r, i * out.dim));
  return {
    imageWidth: img.width,
    imageHeight: img.height,
    keypoints,
    descriptors,
    dim: out.dim,
  };
}

function sha256File(path: string): string {
  return createHash("sha256").update(readFileSync(path)).digest("hex");
}
