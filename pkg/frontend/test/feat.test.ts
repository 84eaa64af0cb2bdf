import { describe, expect, it } from "vitest";

import { FormatError } from "../src/errors.js";
import {
  decodeFeat,
  encodeFeat,
  type FeatureSet,
  HEADER_BYTES,
} from "../src/feat.js";

function sample(): FeatureSet {
  return {
    imageWidth: 640,
    imageHeight: 480,
    keypoints: [
      { x: 10.5, y: 20.25, score: 0.9 },
      { x: 300, y: 400, score: 0.1 },
    ],
    descriptors: new Float32Array([1, 0, 0, 0, 0.6, 0.8, 0, 0]),
    dim: 4,
  };
}

describe("FEAT encoding", () => {
  it("round-trips byte-exactly", () => {
    const bytes = encodeFeat(sample());
    const back = decodeFeat(bytes);
    expect(encodeFeat(back)).toEqual(bytes);
    expect(back.keypoints).toEqual(
      sample().keypoints.map((k) => ({
        x: Math.fround(k.x),
        y: Math.fround(k.y),
        score: Math.fround(k.score),
      })),
    );
    expect(Array.from(back.descriptors)).toEqual(
      Array.from(sample().descriptors),
    );
  });

  it("writes the documented header layout", () => {
    const bytes = encodeFeat(sample());
    const view = new DataView(bytes.buffer);
    expect(String.fromCharCode(...bytes.subarray(0, 4))).toBe("FEAT");
    expect(view.getUint32(4, true)).toBe(1); // version
    expect(view.getUint32(8, true)).toBe(640);
    expect(view.getUint32(12, true)).toBe(480);
    expect(view.getUint32(16, true)).toBe(2); // N
    expect(view.getUint32(20, true)).toBe(4); // D
    expect(bytes.length).toBe(HEADER_BYTES + 2 * 12 + 2 * 4 * 4);
    expect(view.getFloat32(HEADER_BYTES, true)).toBeCloseTo(10.5, 6);
  });

  it("is deterministic", () => {
    expect(encodeFeat(sample())).toEqual(encodeFeat(sample()));
  });

  it("handles the empty set", () => {
    const fs: FeatureSet = {
      imageWidth: 100,
      imageHeight: 50,
      keypoints: [],
      descriptors: new Float32Array(0),
      dim: 32,
    };
    const back = decodeFeat(encodeFeat(fs));
    expect(back.keypoints).toHaveLength(0);
    expect(back.dim).toBe(32);
  });

  it("rejects bad magic, truncation, and out-of-bounds keypoints", () => {
    const bytes = encodeFeat(sample());
    const bad = bytes.slice();
    bad[0] = 0x58;
    expect(() => decodeFeat(bad)).toThrow(FormatError);
    expect(() => decodeFeat(bytes.subarray(0, bytes.length - 1))).toThrow(
      FormatError,
    );
    const oob = sample();
    oob.keypoints[0] = { x: 640, y: 0, score: 0 };
    expect(() => encodeFeat(oob)).toThrow(FormatError);
  });

  it("rejects descriptor/keypoint count mismatch", () => {
    const fs = sample();
    fs.descriptors = new Float32Array(7);
    expect(() => encodeFeat(fs)).toThrow(FormatError);
  });
});
