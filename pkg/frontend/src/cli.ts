#!/usr/bin/env node
/** Command line: mirror ExportConfig one-to-one. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { ExportError } from "./errors.js";
import { exportFeatures, parseConfig } from "./export.js";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName("feat-export")
    .usage("$0 --images <dir> --out <dir> --weights <file> [options]")
    .option("images", { type: "string", demandOption: true,
                        describe: "directory of PGM images" })
    .option("out", { type: "string", demandOption: true,
                     describe: "output directory for FEAT files" })
    .option("weights", { type: "string", demandOption: true,
                         describe: "model weights JSON" })
    .option("score-threshold", { type: "number", default: 0.015 })
    .option("nms-radius", { type: "number", default: 4 })
    .option("max-keypoints", { type: "number", default: 2000 })
    .strict()
    .parse();

  try {
    const cfg = parseConfig({
      imageDir: args.images,
      outDir: args.out,
      weightsPath: args.weights,
      scoreThreshold: args["score-threshold"],
      nmsRadius: args["nms-radius"],
      maxKeypoints: args["max-keypoints"],
    });
    const result = await exportFeatures(cfg);
    console.log(
      `wrote ${result.filesWritten} FEAT files; ${result.metadataPath}`,
    );
    return 0;
  } catch (e) {
    if (e instanceof ExportError) {
      console.error(`error: ${e.message}`);
      return e.exitCode;
    }
    throw e;
  }
}

const isDirect = process.argv[1]?.endsWith("cli.ts")
  || process.argv[1]?.endsWith("cli.js");
if (isDirect) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
