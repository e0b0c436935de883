/**
 * Minimal reader for Level 5 MAT-files, covering what SVHN's cropped-digit
 * distribution needs: little-endian files, zlib-compressed or plain elements,
 * and real numeric N-D arrays (column-major).
 */

import * as zlib from "zlib";

export class MatFormatError extends Error {}

// data element type tags
const MI_INT8 = 1;
const MI_UINT8 = 2;
const MI_INT16 = 3;
const MI_UINT16 = 4;
const MI_INT32 = 5;
const MI_UINT32 = 6;
const MI_SINGLE = 7;
const MI_DOUBLE = 9;
const MI_INT64 = 12;
const MI_UINT64 = 13;
const MI_MATRIX = 14;
const MI_COMPRESSED = 15;
const MI_UTF8 = 16;

export interface MatArray {
  name: string;
  /** column-major extents, as stored */
  dims: number[];
  /** values flattened in column-major order */
  data: Float64Array;
}

interface RawElement {
  type: number;
  bytes: Buffer;
}

function readElement(buf: Buffer, offset: number): { elem: RawElement; next: number } {
  if (offset + 8 > buf.length) {
    throw new MatFormatError("truncated data element tag");
  }
  const first = buf.readUInt32LE(offset);
  const small = (first & 0xffff0000) !== 0;
  if (small) {
    const type = first & 0xffff;
    const size = first >>> 16;
    if (size > 4) {
      throw new MatFormatError(`small element claims ${size} bytes`);
    }
    return {
      elem: { type, bytes: buf.subarray(offset + 4, offset + 4 + size) },
      next: offset + 8,
    };
  }
  const type = first;
  const size = buf.readUInt32LE(offset + 4);
  const start = offset + 8;
  if (start + size > buf.length) {
    throw new MatFormatError("truncated data element payload");
  }
  // miCOMPRESSED is the one element type stored without 8-byte padding
  const padded =
    type === MI_COMPRESSED || size % 8 === 0 ? size : size + (8 - (size % 8));
  return {
    elem: { type, bytes: buf.subarray(start, start + size) },
    next: start + padded,
  };
}

function numericValues(type: number, bytes: Buffer): Float64Array {
  const copy = Buffer.from(bytes); // guarantee alignment for typed views
  const view = (ctor: any, width: number) => {
    if (copy.length % width !== 0) {
      throw new MatFormatError("numeric payload length not a multiple of its width");
    }
    return new ctor(copy.buffer, copy.byteOffset, copy.length / width);
  };
  let src: ArrayLike<number | bigint>;
  switch (type) {
    case MI_INT8:
      src = view(Int8Array, 1);
      break;
    case MI_UINT8:
    case MI_UTF8:
      src = view(Uint8Array, 1);
      break;
    case MI_INT16:
      src = view(Int16Array, 2);
      break;
    case MI_UINT16:
      src = view(Uint16Array, 2);
      break;
    case MI_INT32:
      src = view(Int32Array, 4);
      break;
    case MI_UINT32:
      src = view(Uint32Array, 4);
      break;
    case MI_SINGLE:
      src = view(Float32Array, 4);
      break;
    case MI_DOUBLE:
      src = view(Float64Array, 8);
      break;
    case MI_INT64:
      src = view(BigInt64Array, 8);
      break;
    case MI_UINT64:
      src = view(BigUint64Array, 8);
      break;
    default:
      throw new MatFormatError(`unsupported numeric storage type ${type}`);
  }
  const out = new Float64Array(src.length);
  for (let i = 0; i < src.length; i++) {
    out[i] = Number(src[i]);
  }
  return out;
}

function parseMatrix(bytes: Buffer): MatArray | null {
  let offset = 0;
  const flags = readElement(bytes, offset);
  if (flags.elem.type !== MI_UINT32 || flags.elem.bytes.length < 8) {
    throw new MatFormatError("matrix missing array-flags sub-element");
  }
  const flagWord = flags.elem.bytes.readUInt32LE(0);
  const complex = (flagWord & 0x0800) !== 0;
  offset = flags.next;

  const dimsElem = readElement(bytes, offset);
  if (dimsElem.elem.type !== MI_INT32) {
    throw new MatFormatError("matrix missing dimensions sub-element");
  }
  const dims: number[] = [];
  for (let i = 0; i + 4 <= dimsElem.elem.bytes.length; i += 4) {
    dims.push(dimsElem.elem.bytes.readInt32LE(i));
  }
  offset = dimsElem.next;

  const nameElem = readElement(bytes, offset);
  if (nameElem.elem.type !== MI_INT8 && nameElem.elem.type !== MI_UTF8) {
    throw new MatFormatError("matrix missing name sub-element");
  }
  const name = nameElem.elem.bytes.toString("ascii");
  offset = nameElem.next;

  const classId = flagWord & 0xff;
  // numeric classes are 6..13 (double..uint32 plus 64-bit); anything else
  // (cell, struct, char, sparse...) is outside this reader's scope
  if (classId < 6 || classId > 15) {
    return null;
  }
  if (offset >= bytes.length) {
    throw new MatFormatError(`matrix ${name} has no data sub-element`);
  }
  const dataElem = readElement(bytes, offset);
  const data = numericValues(dataElem.elem.type, dataElem.elem.bytes);
  const expected = dims.reduce((a, b) => a * b, 1);
  if (data.length !== expected) {
    throw new MatFormatError(
      `matrix ${name} has ${data.length} values for dims [${dims.join("x")}]`
    );
  }
  if (complex) {
    throw new MatFormatError(`matrix ${name} is complex; expected real pixel data`);
  }
  return { name, dims, data };
}

/** Parse every top-level real numeric array in the file, keyed by name. */
export function readMatFile(buf: Buffer): Map<string, MatArray> {
  if (buf.length < 128) {
    throw new MatFormatError("file shorter than the 128-byte MAT header");
  }
  const endian = buf.toString("ascii", 126, 128);
  if (endian !== "IM") {
    throw new MatFormatError(`unsupported endianness marker ${JSON.stringify(endian)}`);
  }
  const out = new Map<string, MatArray>();
  let offset = 128;
  while (offset < buf.length) {
    const { elem, next } = readElement(buf, offset);
    offset = next;
    let payload = elem;
    if (elem.type === MI_COMPRESSED) {
      let inflated: Buffer;
      try {
        inflated = zlib.inflateSync(elem.bytes);
      } catch (err) {
        throw new MatFormatError(`corrupt compressed element: ${(err as Error).message}`);
      }
      payload = readElement(inflated, 0).elem;
    }
    if (payload.type !== MI_MATRIX) {
      continue; // skip non-matrix elements (e.g. subsystem data)
    }
    const arr = parseMatrix(payload.bytes);
    if (arr) {
      out.set(arr.name, arr);
    }
  }
  return out;
}
