/** Binary PGM (P5) reader producing a grayscale image in [0, 1]. */

import { ImageReadError } from "./errors.js";

export interface GrayImage {
  width: number;
  height: number;
  /** row-major, length width*height, values in [0, 1] */
  data: Float32Array;
}

export function decodePgm(bytes: Uint8Array): GrayImage {
  let pos = 0;

  function token(): string {
    // skip whitespace and '#' comment lines between header tokens
    for (;;) {
      while (pos < bytes.length && isSpace(bytes[pos])) pos++;
      if (pos < bytes.length && bytes[pos] === 0x23 /* '#' */) {
        while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
        continue;
      }
      break;
    }
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
    if (start === pos) throw new ImageReadError("truncated PGM header");
    return String.fromCharCode(...bytes.subarray(start, pos));
  }

  const magic = token();
  if (magic !== "P5") {
    throw new ImageReadError(`not a binary PGM (magic ${magic})`);
  }
  const width = parseDim(token(), "width");
  const height = parseDim(token(), "height");
  const maxval = parseDim(token(), "maxval");
  if (maxval <= 0 || maxval > 65535) {
    throw new ImageReadError(`maxval ${maxval} out of range`);
  }
  pos++; // single whitespace byte after maxval
  const twoByte = maxval > 255;
  const need = width * height * (twoByte ? 2 : 1);
  if (bytes.length - pos < need) {
    throw new ImageReadError(
      `PGM payload ${bytes.length - pos} bytes, need ${need}`,
    );
  }
  const data = new Float32Array(width * height);
  for (let i = 0; i < width * height; i++) {
    const v = twoByte
      ? (bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]
      : bytes[pos + i];
    data[i] = v / maxval;
  }
  return { width, height, data };
}

export function encodePgm(img: GrayImage): Uint8Array {
  const header = `P5\n${img.width} ${img.height}\n255\n`;
  const out = new Uint8Array(header.length + img.width * img.height);
  for (let i = 0; i < header.length; i++) out[i] = header.charCodeAt(i);
  for (let i = 0; i < img.data.length; i++) {
    out[header.length + i] = Math.max(
      0,
      Math.min(255, Math.round(img.data[i] * 255)),
    );
  }
  return out;
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}

function parseDim(tok: string, name: string): number {
  const v = Number(tok);
  if (!Number.isInteger(v) || v <= 0) {
    throw new ImageReadError(`bad PGM ${name}: ${tok}`);
  }
  return v;
}
