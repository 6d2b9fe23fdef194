import { describe, expect, it } from "vitest";

import { beginDrag, dragShape, endDrag, moveDrag } from "../src/interact.js";
import { makeTransform, worldToScreen } from "../src/transform.js";
import { windCommand, nextPreset } from "../src/wind.js";

const t = makeTransform({
  width: 900,
  height: 640,
  margin: 24,
  extent: { x: [-2, 2], y: [-1.5, 1.5] },
});

describe("obstacle placement gestures", () => {
  it("drags out a circle centered on the press point", () => {
    const [sx, sy] = worldToScreen(t, 0.5, 0.5);
    const [ex, ey] = worldToScreen(t, 0.8, 0.5);
    const drag = moveDrag(beginDrag("obstacle-circle", sx, sy), ex, ey);
    const cmd = endDrag(drag, t, "c1");
    expect(cmd?.type).toBe("add_obstacle");
    if (cmd?.type !== "add_obstacle") return;
    expect(cmd.command_id).toBe("c1");
    expect(cmd.shape.kind).toBe("circle");
    if (cmd.shape.kind !== "circle") return;
    expect(cmd.shape.center[0]).toBeCloseTo(0.5, 6);
    expect(cmd.shape.center[1]).toBeCloseTo(0.5, 6);
    expect(cmd.shape.radius).toBeCloseTo(0.3, 6);
  });

  it("drags out an axis-aligned box between the corners", () => {
    const [sx, sy] = worldToScreen(t, 0.9, -0.2);
    const [ex, ey] = worldToScreen(t, 0.3, 0.4);
    const drag = moveDrag(beginDrag("obstacle-box", sx, sy), ex, ey);
    const cmd = endDrag(drag, t, "c2");
    expect(cmd?.type).toBe("add_obstacle");
    if (cmd?.type !== "add_obstacle" || cmd.shape.kind !== "box") return;
    expect(cmd.shape.lows[0]).toBeCloseTo(0.3, 6);
    expect(cmd.shape.lows[1]).toBeCloseTo(-0.2, 6);
    expect(cmd.shape.highs[0]).toBeCloseTo(0.9, 6);
    expect(cmd.shape.highs[1]).toBeCloseTo(0.4, 6);
  });

  it("suppresses degenerate drags instead of sending zero-size shapes", () => {
    const [sx, sy] = worldToScreen(t, 0, 0);
    const click = beginDrag("obstacle-circle", sx, sy);
    expect(dragShape(click, t)).toBeNull();
    expect(endDrag(click, t, "c3")).toBeNull();
    const sliver = moveDrag(beginDrag("obstacle-box", sx, sy), sx + 80, sy + 1);
    expect(endDrag(sliver, t, "c4")).toBeNull();
  });

  it("moves the goal to the release point", () => {
    const [sx, sy] = worldToScreen(t, -1, 1);
    const cmd = endDrag(beginDrag("goal", sx, sy), t, "c5");
    expect(cmd?.type).toBe("set_goal");
    if (cmd?.type !== "set_goal") return;
    expect(cmd.goal[0]).toBeCloseTo(-1, 6);
    expect(cmd.goal[1]).toBeCloseTo(1, 6);
  });
});

describe("wind presets", () => {
  it("cycles off, low, high and back", () => {
    expect(nextPreset("off")).toBe("fan-low");
    expect(nextPreset("fan-low")).toBe("fan-high");
    expect(nextPreset("fan-high")).toBe("off");
  });

  it("emits symmetric disturbance bounds of the requested dimension", () => {
    const cmd = windCommand("fan-high", 2, "w1");
    expect(cmd.type).toBe("set_disturbance_bounds");
    if (cmd.type !== "set_disturbance_bounds") return;
    expect(cmd.lows).toEqual([-0.3, -0.3]);
    expect(cmd.highs).toEqual([0.3, 0.3]);
    const off = windCommand("off", 1);
    if (off.type !== "set_disturbance_bounds") return;
    expect(off.lows).toEqual([0]);
    expect(off.highs).toEqual([0]);
  });
});
