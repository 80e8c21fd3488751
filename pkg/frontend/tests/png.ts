// Minimal PNG writer for tests (node-only): enough to hand the service a
// real image and to exercise the header parser. Not used by the app.

import { crc32, deflateSync, inflateSync } from "node:zlib";

function chunk(type: string, data: Uint8Array): Uint8Array {
  const head = Buffer.alloc(8);
  head.writeUInt32BE(data.length, 0);
  head.write(type, 4, "ascii");
  const crcBuf = Buffer.alloc(4);
  crcBuf.writeUInt32BE(crc32(Buffer.concat([head.subarray(4), data])) >>> 0, 0);
  return Buffer.concat([head, data, crcBuf]);
}

function encodePng(width: number, height: number, colorType: 0 | 2, pixels: Uint8Array): Uint8Array {
  const channels = colorType === 2 ? 3 : 1;
  if (pixels.length !== width * height * channels) {
    throw new Error(`expected ${width * height * channels} bytes, got ${pixels.length}`);
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr[8] = 8; // bit depth
  ihdr[9] = colorType;
  const stride = width * channels;
  const raw = Buffer.alloc((stride + 1) * height); // filter byte 0 per row
  for (let y = 0; y < height; y++) {
    Buffer.from(pixels.subarray(y * stride, (y + 1) * stride)).copy(raw, y * (stride + 1) + 1);
  }
  return Buffer.concat([
    Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
    chunk("IHDR", ihdr),
    chunk("IDAT", deflateSync(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

export function encodeGrayPng(width: number, height: number, gray: Uint8Array): Uint8Array {
  return encodePng(width, height, 0, gray);
}

export function encodeRgbPng(width: number, height: number, rgb: Uint8Array): Uint8Array {
  return encodePng(width, height, 2, rgb);
}

/** Decode an 8-bit grayscale PNG (any row filters) back to raw bytes. Only
 * what the live test needs to read a lambda map off the wire. */
export function decodeGrayPng(bytes: Uint8Array): { width: number; height: number; gray: Uint8Array } {
  const buf = Buffer.from(bytes);
  if (buf.readUInt32BE(0) !== 0x89504e47) throw new Error("not a PNG");
  let width = 0;
  let height = 0;
  const idat: Buffer[] = [];
  for (let o = 8; o + 8 <= buf.length; ) {
    const len = buf.readUInt32BE(o);
    const type = buf.toString("ascii", o + 4, o + 8);
    const data = buf.subarray(o + 8, o + 8 + len);
    if (type === "IHDR") {
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      if (data[8] !== 8 || data[9] !== 0) {
        throw new Error(`want 8-bit grayscale, got depth ${data[8]} color ${data[9]}`);
      }
      if (data[12] !== 0) throw new Error("interlaced PNG not supported");
    } else if (type === "IDAT") {
      idat.push(Buffer.from(data));
    } else if (type === "IEND") {
      break;
    }
    o += 12 + len;
  }
  const raw = inflateSync(Buffer.concat(idat));
  const gray = new Uint8Array(width * height);
  const paeth = (a: number, b: number, c: number) => {
    const p = a + b - c;
    const pa = Math.abs(p - a);
    const pb = Math.abs(p - b);
    const pc = Math.abs(p - c);
    return pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
  };
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (width + 1)];
    for (let x = 0; x < width; x++) {
      const v = raw[y * (width + 1) + 1 + x];
      const left = x > 0 ? gray[y * width + x - 1] : 0;
      const up = y > 0 ? gray[(y - 1) * width + x] : 0;
      const upLeft = x > 0 && y > 0 ? gray[(y - 1) * width + x - 1] : 0;
      let out: number;
      switch (filter) {
        case 0: out = v; break;
        case 1: out = v + left; break;
        case 2: out = v + up; break;
        case 3: out = v + ((left + up) >> 1); break;
        case 4: out = v + paeth(left, up, upLeft); break;
        default: throw new Error(`unknown row filter ${filter}`);
      }
      gray[y * width + x] = out & 0xff;
    }
  }
  return { width, height, gray };
}

/** Deterministic 32x32 test card: bright upper-left disc on a dark field. */
export function testCardPng(size = 32): Uint8Array {
  const rgb = new Uint8Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const inDisc = (x - size / 3) ** 2 + (y - size / 3) ** 2 < (size / 4) ** 2;
      const o = (y * size + x) * 3;
      rgb[o] = inDisc ? 230 : 40;
      rgb[o + 1] = inDisc ? 140 : 60;
      rgb[o + 2] = inDisc ? 60 : 90;
    }
  }
  return encodeRgbPng(size, size, rgb);
}
