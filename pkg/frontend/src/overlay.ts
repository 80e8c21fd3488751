// Pure pixel math for the lambda heat overlay. The browser decodes the
// grayscale PNG via an <img> + canvas; everything past getImageData lives
// here so it can be unit-tested without a DOM.
//
// Convention: the service's lambda map stores the mixing coefficient of the
// ORIGINAL image, so untouched regions sit near 1 and edited regions near 0.
// The overlay highlights what changed, i.e. heat = 1 - lambda.

/** Extract one channel (default R) from RGBA canvas data as bytes. */
export function lambdaFromRgba(rgba: Uint8ClampedArray): Uint8Array {
  if (rgba.length % 4 !== 0) {
    throw new Error(`RGBA buffer length ${rgba.length} not a multiple of 4`);
  }
  const out = new Uint8Array(rgba.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = rgba[i * 4];
  return out;
}

/** Mean of byte-encoded lambda values, back in [0, 1]. */
export function meanLambda(lambda: Uint8Array): number {
  if (lambda.length === 0) throw new Error("empty lambda map");
  let sum = 0;
  for (const v of lambda) sum += v;
  return sum / (255 * lambda.length);
}

/** Colorize byte-encoded lambda into RGBA heat pixels: cold transparent blue
 * where the image is untouched, warm opaque red where it was edited. Opacity
 * scales the whole ramp (the UI slider). */
export function heatRgba(lambda: Uint8Array, opacity: number): Uint8ClampedArray {
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new Error(`opacity must be in [0, 1], got ${opacity}`);
  }
  const out = new Uint8ClampedArray(lambda.length * 4);
  for (let i = 0; i < lambda.length; i++) {
    const heat = 1 - lambda[i] / 255;
    out[i * 4] = Math.round(255 * heat);
    out[i * 4 + 1] = Math.round(64 * heat * (1 - heat) * 4); // dim green mid-ramp
    out[i * 4 + 2] = Math.round(255 * (1 - heat));
    out[i * 4 + 3] = Math.round(255 * opacity * heat);
  }
  return out;
}

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

/** Read width/height from a PNG's IHDR without decoding it; throws on
 * anything that is not a PNG. Enough to validate payload shapes. */
export function pngDims(bytes: Uint8Array): { width: number; height: number } {
  if (bytes.length < 24 || PNG_SIGNATURE.some((b, i) => bytes[i] !== b)) {
    throw new Error("not a PNG");
  }
  const ihdr = String.fromCharCode(bytes[12], bytes[13], bytes[14], bytes[15]);
  if (ihdr !== "IHDR") throw new Error("PNG missing IHDR");
  const be32 = (o: number) =>
    ((bytes[o] << 24) | (bytes[o + 1] << 16) | (bytes[o + 2] << 8) | bytes[o + 3]) >>> 0;
  return { width: be32(16), height: be32(20) };
}

export function b64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}
