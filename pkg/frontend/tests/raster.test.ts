import { describe, expect, it } from "vitest";

import {
  createRaster,
  fillPolygon,
  paintedFraction,
  rastersEqual,
  stampBrush,
  strokeBrush,
} from "../src/raster.js";

describe("createRaster", () => {
  it("starts empty with the requested dims", () => {
    const raster = createRaster(16, 9);
    expect(raster.data.length).toBe(144);
    expect(paintedFraction(raster)).toBe(0);
  });

  it("rejects degenerate dims", () => {
    expect(() => createRaster(0, 5)).toThrow();
  });
});

describe("brush", () => {
  it("paints a filled disc around the center", () => {
    const raster = createRaster(21, 21);
    stampBrush(raster, 10, 10, 5);
    expect(raster.data[10 * 21 + 10]).toBe(255);
    expect(raster.data[10 * 21 + 15]).toBe(255); // on the radius
    expect(raster.data[10 * 21 + 16]).toBe(0);   // just outside
    // symmetric: same count left/right of center
    let left = 0;
    let right = 0;
    for (let x = 0; x < 10; x++) left += raster.data[10 * 21 + x] ? 1 : 0;
    for (let x = 11; x < 21; x++) right += raster.data[10 * 21 + x] ? 1 : 0;
    expect(left).toBe(right);
  });

  it("clips at the borders instead of wrapping", () => {
    const raster = createRaster(8, 8);
    stampBrush(raster, 0, 0, 3);
    expect(raster.data[0]).toBe(255);
    // nothing on the far side (no wraparound artifacts)
    for (let y = 0; y < 8; y++) expect(raster.data[y * 8 + 7]).toBe(0);
  });

  it("erases with the same geometry", () => {
    const raster = createRaster(9, 9);
    stampBrush(raster, 4, 4, 3);
    stampBrush(raster, 4, 4, 3, true);
    expect(paintedFraction(raster)).toBe(0);
  });

  it("stroke covers the segment without gaps", () => {
    const raster = createRaster(40, 10);
    strokeBrush(raster, { x: 2, y: 5 }, { x: 37, y: 5 }, 2);
    for (let x = 2; x <= 37; x++) {
      expect(raster.data[5 * 40 + x]).toBe(255);
    }
  });
});

describe("polygon fill", () => {
  it("fills an axis-aligned rectangle exactly", () => {
    const raster = createRaster(12, 12);
    fillPolygon(raster, [
      { x: 2, y: 2 }, { x: 9, y: 2 }, { x: 9, y: 8 }, { x: 2, y: 8 },
    ]);
    let count = 0;
    for (let y = 0; y < 12; y++) {
      for (let x = 0; x < 12; x++) {
        const inside = x >= 2 && x < 9 && y >= 2 && y < 8;
        expect(raster.data[y * 12 + x] !== 0).toBe(inside);
        if (inside) count++;
      }
    }
    expect(count).toBe(7 * 6);
  });

  it("handles concave outlines with even-odd parity", () => {
    const raster = createRaster(20, 12);
    // U shape: the notch between the prongs stays empty
    fillPolygon(raster, [
      { x: 2, y: 2 }, { x: 7, y: 2 }, { x: 7, y: 8 }, { x: 12, y: 8 },
      { x: 12, y: 2 }, { x: 17, y: 2 }, { x: 17, y: 11 }, { x: 2, y: 11 },
    ]);
    expect(raster.data[4 * 20 + 4]).toBe(255);   // left prong
    expect(raster.data[4 * 20 + 14]).toBe(255);  // right prong
    expect(raster.data[4 * 20 + 9]).toBe(0);     // notch
    expect(raster.data[9 * 20 + 9]).toBe(255);   // base
  });

  it("ignores degenerate polygons", () => {
    const raster = createRaster(8, 8);
    fillPolygon(raster, [{ x: 1, y: 1 }, { x: 5, y: 5 }]);
    expect(paintedFraction(raster)).toBe(0);
  });
});

describe("rastersEqual", () => {
  it("compares by painted pattern", () => {
    const a = createRaster(6, 6);
    const b = createRaster(6, 6);
    stampBrush(a, 3, 3, 2);
    stampBrush(b, 3, 3, 2);
    expect(rastersEqual(a, b)).toBe(true);
    stampBrush(b, 0, 0, 1);
    expect(rastersEqual(a, b)).toBe(false);
    expect(rastersEqual(a, createRaster(6, 5))).toBe(false);
  });
});
