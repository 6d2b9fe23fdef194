import { describe, expect, it } from "vitest";

import { valueToColor, colorSpan } from "../src/colormap.js";
import { Framebuffer, parseColor, rasterize } from "../src/raster.js";
import { bandThreshold, sliceToImage } from "../src/renderer.js";
import { sliceMsg } from "./fixtures.js";

function pixel(fb: Framebuffer, x: number, y: number): number[] {
  const o = (y * fb.width + x) * 4;
  return [fb.data[o], fb.data[o + 1], fb.data[o + 2], fb.data[o + 3]];
}

describe("software rasterizer", () => {
  it("parses hex and rgba colors", () => {
    expect(parseColor("#10151b")).toEqual([16, 21, 27, 255]);
    expect(parseColor("rgba(250, 204, 21, 0.5)")).toEqual([250, 204, 21, 128]);
  });

  it("clears to the requested color", () => {
    const fb = rasterize([{ kind: "clear", color: "#336699" }], new Framebuffer(8, 8));
    expect(pixel(fb, 0, 0)).toEqual([51, 102, 153, 255]);
    expect(pixel(fb, 7, 7)).toEqual([51, 102, 153, 255]);
  });

  it("fills rects within bounds only", () => {
    const fb = rasterize(
      [
        { kind: "clear", color: "#000000" },
        { kind: "rect", x: 2, y: 2, w: 3, h: 3, style: { fill: "#ff0000" } },
      ],
      new Framebuffer(8, 8),
    );
    expect(pixel(fb, 3, 3)).toEqual([255, 0, 0, 255]);
    expect(pixel(fb, 6, 6)).toEqual([0, 0, 0, 255]);
  });

  it("fills circles symmetrically", () => {
    const fb = rasterize(
      [
        { kind: "clear", color: "#000000" },
        { kind: "circle", cx: 10, cy: 10, r: 4, style: { fill: "#00ff00" } },
      ],
      new Framebuffer(21, 21),
    );
    expect(pixel(fb, 10, 10)[1]).toBe(255);
    expect(pixel(fb, 13, 10)).toEqual(pixel(fb, 7, 10));
    expect(pixel(fb, 10, 13)).toEqual(pixel(fb, 10, 7));
    expect(pixel(fb, 0, 0)).toEqual([0, 0, 0, 255]);
  });

  it("blits images with nearest-neighbor scaling", () => {
    const tile = new Uint8ClampedArray([255, 0, 0, 255, 0, 0, 255, 255]); // red, blue
    const fb = rasterize(
      [
        { kind: "clear", color: "#000000" },
        { kind: "image", data: tile, w: 2, h: 1, dx: 0, dy: 0, dw: 8, dh: 4 },
      ],
      new Framebuffer(8, 4),
    );
    expect(pixel(fb, 1, 1)).toEqual([255, 0, 0, 255]);
    expect(pixel(fb, 6, 2)).toEqual([0, 0, 255, 255]);
  });
});

describe("field colormap", () => {
  it("maps sign to hue and NaN to transparent", () => {
    const span = 1;
    const unsafe = valueToColor(-1, span);
    const safe = valueToColor(1, span);
    const zero = valueToColor(0, span);
    expect(unsafe.r).toBeGreaterThan(unsafe.g);
    expect(safe.g).toBeGreaterThan(safe.r);
    expect(zero.r).toBeGreaterThan(200);
    expect(valueToColor(NaN, span).a).toBe(0);
  });

  it("normalizes by the largest finite magnitude", () => {
    expect(colorSpan([0.2, -0.7, NaN, 0.1])).toBeCloseTo(0.7);
    expect(colorSpan([])).toBe(1);
  });

  it("highlights only near-boundary cells in the active band image", () => {
    const slice = sliceMsg(0);
    const band = bandThreshold(slice.values, slice.shape);
    expect(band).toBeGreaterThan(0);
    const plain = sliceToImage(slice, null);
    const banded = sliceToImage(slice, band);
    let changed = 0;
    for (let i = 0; i < plain.data.length; i += 4) {
      if (plain.data[i] !== banded.data[i]) changed += 1;
    }
    expect(changed).toBeGreaterThan(0);
    expect(changed).toBeLessThan(slice.values.length); // not everything
  });
});
