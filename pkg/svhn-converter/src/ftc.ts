/**
 * The .ftc image container, little-endian:
 *   magic "FTC1" | u8 channels | u32 image count n |
 *   n*c*32*32 pixel bytes (image-major, channel-major, row-major) |
 *   n label bytes (0..9)
 */

export const FTC_MAGIC = "FTC1";
export const IMG_SIZE = 32;

export class FtcFormatError extends Error {}

export function writeFtc(pixels: Uint8Array, labels: Uint8Array, channels: number): Buffer {
  const n = labels.length;
  if (pixels.length !== n * channels * IMG_SIZE * IMG_SIZE) {
    throw new FtcFormatError(
      `pixel payload ${pixels.length} does not match ${n} images x ${channels} channels`
    );
  }
  const header = Buffer.alloc(9);
  header.write(FTC_MAGIC, 0, "ascii");
  header.writeUInt8(channels, 4);
  header.writeUInt32LE(n, 5);
  return Buffer.concat([header, Buffer.from(pixels), Buffer.from(labels)]);
}

export interface FtcContents {
  channels: number;
  count: number;
  pixels: Uint8Array;
  labels: Uint8Array;
}

export function readFtc(buf: Buffer): FtcContents {
  if (buf.length < 9 || buf.toString("ascii", 0, 4) !== FTC_MAGIC) {
    throw new FtcFormatError("bad magic, not an .ftc container");
  }
  const channels = buf.readUInt8(4);
  const count = buf.readUInt32LE(5);
  const pixelBytes = count * channels * IMG_SIZE * IMG_SIZE;
  if (buf.length !== 9 + pixelBytes + count) {
    throw new FtcFormatError(
      `expected ${9 + pixelBytes + count} bytes for ${count} images, found ${buf.length}`
    );
  }
  const pixels = new Uint8Array(buf.subarray(9, 9 + pixelBytes));
  const labels = new Uint8Array(buf.subarray(9 + pixelBytes));
  for (const l of labels) {
    if (l > 9) {
      throw new FtcFormatError(`label ${l} out of range 0..9`);
    }
  }
  return { channels, count, pixels, labels };
}
