/**
 * Boolean annotation raster plus drawing primitives.
 *
 * The raster always matches the session image dimensions; tools mutate
 * pixels but never the shape. Values are 0 or 255 so the buffer doubles as
 * grayscale PNG payload.
 */

export interface Raster {
  width: number;
  height: number;
  data: Uint8Array; // 0 | 255
}

export interface Point {
  x: number;
  y: number;
}

export function createRaster(width: number, height: number): Raster {
  if (width < 1 || height < 1) {
    throw new Error(`raster dims must be positive, got ${width}x${height}`);
  }
  return { width, height, data: new Uint8Array(width * height) };
}

export function cloneRaster(raster: Raster): Raster {
  return { width: raster.width, height: raster.height,
           data: new Uint8Array(raster.data) };
}

export function paintedFraction(raster: Raster): number {
  let count = 0;
  for (let i = 0; i < raster.data.length; i++) {
    if (raster.data[i]) count++;
  }
  return count / raster.data.length;
}

/** Circular brush stamp; `erase` clears instead of painting. */
export function stampBrush(raster: Raster, cx: number, cy: number,
                           radius: number, erase = false): void {
  const value = erase ? 0 : 255;
  const r2 = radius * radius;
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(raster.width - 1, Math.ceil(cx + radius));
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(raster.height - 1, Math.ceil(cy + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) {
        raster.data[y * raster.width + x] = value;
      }
    }
  }
}

/** Stroke: brush stamps along the segment so fast pointer moves stay solid. */
export function strokeBrush(raster: Raster, from: Point, to: Point,
                            radius: number, erase = false): void {
  const dist = Math.hypot(to.x - from.x, to.y - from.y);
  const steps = Math.max(1, Math.ceil(dist));
  for (let i = 0; i <= steps; i++) {
    const t = i / steps;
    stampBrush(raster, from.x + t * (to.x - from.x),
               from.y + t * (to.y - from.y), radius, erase);
  }
}

/** Even-odd scanline polygon fill over pixel centers. */
export function fillPolygon(raster: Raster, points: Point[],
                            erase = false): void {
  if (points.length < 3) return;
  const value = erase ? 0 : 255;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const p of points) {
    minY = Math.min(minY, p.y);
    maxY = Math.max(maxY, p.y);
  }
  const y0 = Math.max(0, Math.floor(minY));
  const y1 = Math.min(raster.height - 1, Math.ceil(maxY));
  for (let y = y0; y <= y1; y++) {
    const cy = y + 0.5;
    const crossings: number[] = [];
    for (let i = 0; i < points.length; i++) {
      const a = points[i];
      const b = points[(i + 1) % points.length];
      if ((a.y <= cy && b.y > cy) || (b.y <= cy && a.y > cy)) {
        crossings.push(a.x + ((cy - a.y) / (b.y - a.y)) * (b.x - a.x));
      }
    }
    crossings.sort((p, q) => p - q);
    for (let i = 0; i + 1 < crossings.length; i += 2) {
      const xStart = Math.max(0, Math.ceil(crossings[i] - 0.5));
      const xEnd = Math.min(raster.width - 1, Math.floor(crossings[i + 1] - 0.5));
      for (let x = xStart; x <= xEnd; x++) {
        raster.data[y * raster.width + x] = value;
      }
    }
  }
}

export function rastersEqual(a: Raster, b: Raster): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if ((a.data[i] !== 0) !== (b.data[i] !== 0)) return false;
  }
  return true;
}
