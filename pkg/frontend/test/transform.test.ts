import { describe, expect, it } from "vitest";

import {
  makeTransform,
  screenToWorld,
  Viewport,
  worldLengthToPixels,
  worldToScreen,
} from "../src/transform.js";

const vp: Viewport = {
  width: 900,
  height: 640,
  margin: 24,
  extent: { x: [-2, 2], y: [-1.5, 1.5] },
};

describe("world to screen mapping", () => {
  it("round trips within one pixel everywhere in the extent", () => {
    const t = makeTransform(vp);
    for (let i = 0; i <= 20; i++) {
      for (let j = 0; j <= 20; j++) {
        const wx = -2 + (4 * i) / 20;
        const wy = -1.5 + (3 * j) / 20;
        const [sx, sy] = worldToScreen(t, wx, wy);
        const [bx, by] = screenToWorld(t, sx, sy);
        expect(Math.abs(worldLengthToPixels(t, Math.hypot(bx - wx, by - wy)))).toBeLessThan(1);
      }
    }
  });

  it("keeps the whole extent inside the margins", () => {
    const t = makeTransform(vp);
    for (const [wx, wy] of [
      [-2, -1.5],
      [-2, 1.5],
      [2, -1.5],
      [2, 1.5],
    ]) {
      const [sx, sy] = worldToScreen(t, wx, wy);
      expect(sx).toBeGreaterThanOrEqual(vp.margin - 1e-9);
      expect(sx).toBeLessThanOrEqual(vp.width - vp.margin + 1e-9);
      expect(sy).toBeGreaterThanOrEqual(vp.margin - 1e-9);
      expect(sy).toBeLessThanOrEqual(vp.height - vp.margin + 1e-9);
    }
  });

  it("uses the same scale on both axes", () => {
    const t = makeTransform(vp);
    const [x0] = worldToScreen(t, 0, 0);
    const [x1] = worldToScreen(t, 1, 0);
    const [, y0] = worldToScreen(t, 0, 0);
    const [, y1] = worldToScreen(t, 0, 1);
    expect(Math.abs(x1 - x0)).toBeCloseTo(Math.abs(y1 - y0), 10);
  });

  it("points world y up on screen", () => {
    const t = makeTransform(vp);
    const [, low] = worldToScreen(t, 0, -1);
    const [, high] = worldToScreen(t, 0, 1);
    expect(high).toBeLessThan(low);
  });

  it("rejects empty extents", () => {
    expect(() => makeTransform({ ...vp, extent: { x: [1, 1], y: [0, 1] } })).toThrow();
  });
});
