/**
 * SVHN cropped-digit MAT files store images as a 32x32x3xN uint8 array "X"
 * (column-major) and labels as "y" with values 1..10, where 10 denotes the
 * digit 0. Conversion permutes pixels to image-major (n, c, 32, 32) row-major
 * order, remaps label 10 to 0, and emits an .ftc container. RGB is kept;
 * greyscale conversion belongs to the consuming toolchain.
 */

import { createHash } from "crypto";
import * as fs from "fs";

import { writeFtc, IMG_SIZE } from "./ftc";
import { readMatFile, MatFormatError } from "./mat";

export class MissingVariableError extends Error {}
export class ShapeMismatchError extends Error {}
export class LabelRangeError extends Error {}

export interface ConvertSummary {
  count: number;
  checksum: string;
}

/**
 * sha256 over the 256-bin byte histogram (little-endian u64 counts): a
 * multiset fingerprint that is invariant under any pixel reordering. The
 * primary toolchain's check-data command prints the same value.
 */
export function pixelChecksum(pixels: Uint8Array): string {
  const counts = new BigUint64Array(256);
  for (const p of pixels) {
    counts[p] += 1n;
  }
  const buf = Buffer.alloc(256 * 8);
  for (let i = 0; i < 256; i++) {
    buf.writeBigUInt64LE(counts[i], i * 8);
  }
  return createHash("sha256").update(buf).digest("hex");
}

export function convertBuffer(matBytes: Buffer): { ftc: Buffer; summary: ConvertSummary } {
  const vars = readMatFile(matBytes);
  const X = vars.get("X");
  if (!X) {
    throw new MissingVariableError("variable X (image array) not found in MAT file");
  }
  const y = vars.get("y");
  if (!y) {
    throw new MissingVariableError("variable y (label vector) not found in MAT file");
  }
  if (
    X.dims.length !== 4 ||
    X.dims[0] !== IMG_SIZE ||
    X.dims[1] !== IMG_SIZE ||
    X.dims[2] !== 3
  ) {
    throw new ShapeMismatchError(
      `X has dims [${X.dims.join("x")}], expected [32x32x3xN]`
    );
  }
  const n = X.dims[3];
  const labelCount = y.data.length;
  if (labelCount !== n || y.dims.reduce((a, b) => a * b, 1) !== n) {
    throw new ShapeMismatchError(`y has ${labelCount} labels for ${n} images`);
  }

  // column-major strides of [32, 32, 3, N]: i + 32 j + 1024 k + 3072 n
  const pixels = new Uint8Array(n * 3 * IMG_SIZE * IMG_SIZE);
  for (let img = 0; img < n; img++) {
    const srcImg = 3072 * img;
    for (let k = 0; k < 3; k++) {
      const srcChan = srcImg + 1024 * k;
      const dstChan = (img * 3 + k) * 1024;
      for (let i = 0; i < IMG_SIZE; i++) {
        const dstRow = dstChan + i * IMG_SIZE;
        for (let j = 0; j < IMG_SIZE; j++) {
          pixels[dstRow + j] = X.data[srcChan + i + IMG_SIZE * j];
        }
      }
    }
  }

  const labels = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    const v = y.data[i];
    if (!Number.isInteger(v) || v < 1 || v > 10) {
      throw new LabelRangeError(`label ${v} at index ${i} outside the SVHN range 1..10`);
    }
    labels[i] = v === 10 ? 0 : v;
  }

  return {
    ftc: writeFtc(pixels, labels, 3),
    summary: { count: n, checksum: pixelChecksum(pixels) },
  };
}

export function convertFile(matPath: string, outPath: string): ConvertSummary {
  const matBytes = fs.readFileSync(matPath);
  const { ftc, summary } = convertBuffer(matBytes);
  fs.writeFileSync(outPath, ftc);
  return summary;
}

export { MatFormatError };
