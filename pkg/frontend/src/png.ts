/**
 * Minimal PNG codec for annotation masks.
 *
 * Encoding targets exactly what the annotation endpoint needs: 8-bit
 * grayscale, non-interlaced, zlib stream built from stored (uncompressed)
 * deflate blocks, so no compression dependency is required in any runtime.
 *
 * Decoding handles the PNGs this service produces (8-bit grayscale, RGB and
 * RGBA, non-interlaced, all five scanline filters). The zlib inflate step is
 * pluggable: pass node:zlib's inflateSync in tests, or a DecompressionStream
 * wrapper in the browser.
 */

export interface DecodedPng {
  width: number;
  height: number;
  channels: number;
  /** Row-major samples, `channels` bytes per pixel. */
  data: Uint8Array;
}

export type Inflate = (compressed: Uint8Array) => Uint8Array;

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    crc = CRC_TABLE[(crc ^ bytes[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(value: number): Uint8Array {
  return new Uint8Array([
    (value >>> 24) & 0xff, (value >>> 16) & 0xff,
    (value >>> 8) & 0xff, value & 0xff,
  ]);
}

function chunk(type: string, body: Uint8Array): Uint8Array {
  const typed = new Uint8Array(4 + body.length);
  for (let i = 0; i < 4; i++) typed[i] = type.charCodeAt(i);
  typed.set(body, 4);
  const out = new Uint8Array(4 + typed.length + 4);
  out.set(u32(body.length), 0);
  out.set(typed, 4);
  out.set(u32(crc32(typed)), 4 + typed.length);
  return out;
}

/** zlib stream with stored deflate blocks: header, blocks, adler checksum. */
function storedZlib(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const max = 0xffff;
  for (let offset = 0; offset < raw.length || offset === 0; offset += max) {
    const slice = raw.subarray(offset, Math.min(offset + max, raw.length));
    const final = offset + max >= raw.length ? 1 : 0;
    const header = new Uint8Array([
      final,
      slice.length & 0xff, (slice.length >>> 8) & 0xff,
      ~slice.length & 0xff, (~slice.length >>> 8) & 0xff,
    ]);
    blocks.push(header, slice);
    if (final) break;
  }
  blocks.push(u32(adler32(raw)));
  let total = 0;
  for (const b of blocks) total += b.length;
  const out = new Uint8Array(total);
  let at = 0;
  for (const b of blocks) {
    out.set(b, at);
    at += b.length;
  }
  return out;
}

function assemblePng(width: number, height: number, colorType: number,
                     raw: Uint8Array): Uint8Array {
  const ihdr = new Uint8Array(13);
  ihdr.set(u32(width), 0);
  ihdr.set(u32(height), 4);
  ihdr[8] = 8; // bit depth
  ihdr[9] = colorType;
  const parts = [
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", storedZlib(raw)),
    chunk("IEND", new Uint8Array(0)),
  ];
  let total = 0;
  for (const p of parts) total += p.length;
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

/** Encode 8-bit grayscale pixels (row-major, length w*h) as a PNG. */
export function encodeGrayPng(pixels: Uint8Array, width: number,
                              height: number): Uint8Array {
  if (pixels.length !== width * height) {
    throw new Error(`expected ${width * height} pixels, got ${pixels.length}`);
  }
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter: none
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  return assemblePng(width, height, 0, raw);
}

/** Test/low-level hook: wrap pre-filtered scanline bytes into a PNG. */
export function wrapScanlines(width: number, height: number,
                              colorType: number,
                              raw: Uint8Array): Uint8Array {
  return assemblePng(width, height, colorType, raw);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

const CHANNELS: Record<number, number> = { 0: 1, 2: 3, 4: 2, 6: 4 };

export function decodePng(bytes: Uint8Array, inflate: Inflate): DecodedPng {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let at = 8;
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Uint8Array[] = [];
  while (at < bytes.length) {
    const length = view.getUint32(at);
    const type = String.fromCharCode(bytes[at + 4], bytes[at + 5],
                                     bytes[at + 6], bytes[at + 7]);
    const body = bytes.subarray(at + 8, at + 8 + length);
    if (type === "IHDR") {
      width = view.getUint32(at + 8);
      height = view.getUint32(at + 12);
      const bitDepth = body[8];
      const colorType = body[9];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (!(colorType in CHANNELS)) {
        throw new Error(`unsupported color type ${colorType}`);
      }
      if (body[12] !== 0) throw new Error("interlaced PNGs not supported");
      channels = CHANNELS[colorType];
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    at += 12 + length;
  }
  if (!width || !height) throw new Error("missing IHDR");
  let compressed: Uint8Array;
  if (idat.length === 1) {
    compressed = idat[0];
  } else {
    let total = 0;
    for (const part of idat) total += part.length;
    compressed = new Uint8Array(total);
    let offset = 0;
    for (const part of idat) {
      compressed.set(part, offset);
      offset += part.length;
    }
  }
  const raw = inflate(compressed);
  const stride = width * channels;
  if (raw.length !== height * (stride + 1)) {
    throw new Error(`decompressed size ${raw.length} does not match `
      + `${height}x(${stride}+1)`);
  }
  const out = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const row = out.subarray(y * stride, (y + 1) * stride);
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? row[x - channels] : 0;
      const up = prev ? prev[x] : 0;
      const upLeft = prev && x >= channels ? prev[x - channels] : 0;
      let value = line[x];
      switch (filter) {
        case 0: break;
        case 1: value += left; break;
        case 2: value += up; break;
        case 3: value += (left + up) >> 1; break;
        case 4: value += paeth(left, up, upLeft); break;
        default: throw new Error(`unknown scanline filter ${filter}`);
      }
      row[x] = value & 0xff;
    }
  }
  return { width, height, channels, data: out };
}

/** Inflate backed by DecompressionStream, for browser use. */
export async function browserInflate(compressed: Uint8Array): Promise<Uint8Array> {
  const stream = new Blob([compressed as BlobPart]).stream()
    .pipeThrough(new DecompressionStream("deflate"));
  const buffer = await new Response(stream).arrayBuffer();
  return new Uint8Array(buffer);
}

/** Decode with an async inflate (browser path). */
export async function decodePngAsync(
  bytes: Uint8Array,
  inflate: (compressed: Uint8Array) => Promise<Uint8Array>,
): Promise<DecodedPng> {
  let inflated: Uint8Array | null = null;
  const collect: Inflate = (compressed) => {
    if (inflated === null) throw new Error("inflate not resolved");
    return inflated;
  };
  // run the parse twice: first pass only to find the IDAT payload
  try {
    decodePng(bytes, (compressed) => {
      throw new IdatPayload(compressed);
    });
  } catch (err) {
    if (err instanceof IdatPayload) {
      inflated = await inflate(err.payload);
      return decodePng(bytes, collect);
    }
    throw err;
  }
  throw new Error("unreachable");
}

class IdatPayload extends Error {
  constructor(public payload: Uint8Array) {
    super("idat");
  }
}
