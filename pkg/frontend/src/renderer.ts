/**
 * Pure scene construction: (ViewState, Viewport) -> list of draw operations.
 *
 * Nothing here touches the DOM, the clock, or randomness. The same view and
 * viewport always produce a structurally identical operation list, so frames
 * are reproducible; executing the operations is left to a Surface (real
 * canvas in the app, software rasterizer in the tests).
 */

import { colorSpan, valueToColor } from "./colormap.js";
import { isStale, visibleObstacles, ViewState } from "./state.js";
import { makeTransform, Transform, Viewport, worldToScreen } from "./transform.js";
import { FieldSliceMessage, ObstacleShape } from "./types.js";

export type Style = {
  stroke?: string;
  fill?: string;
  width?: number;
  dash?: number[];
};

export type DrawOp =
  | { kind: "clear"; color: string }
  | {
      kind: "image";
      data: Uint8ClampedArray;
      w: number;
      h: number;
      dx: number;
      dy: number;
      dw: number;
      dh: number;
    }
  | { kind: "poly"; points: [number, number][]; close: boolean; style: Style }
  | { kind: "circle"; cx: number; cy: number; r: number; style: Style }
  | { kind: "rect"; x: number; y: number; w: number; h: number; style: Style }
  | { kind: "text"; text: string; x: number; y: number; color: string; size: number };

export const COLORS = {
  background: "#10151b",
  contour: "#0b7a43",
  activeBand: "rgba(250, 204, 21, 0.55)",
  obstacleFill: "rgba(15, 23, 42, 0.85)",
  obstacleStroke: "#0f172a",
  pendingStroke: "#94a3b8",
  goal: "#38bdf8",
  robot: "#f1f5f9",
  arrow: "#f59e0b",
  stale: "#ef4444",
  toast: "#fca5a5",
  statuses: {
    inactive: "#60a5fa",
    active: "#f59e0b",
    infeasible: "#ef4444",
    out_of_bounds: "#c084fc",
  } as Record<string, string>,
};

/** Near-boundary band threshold derived from the slice itself: a small
 * multiple of the typical neighbor-to-neighbor value step. */
export function bandThreshold(values: number[], shape: [number, number]): number {
  const [n0, n1] = shape;
  let sum = 0;
  let count = 0;
  for (let i = 0; i < n0; i++) {
    for (let j = 0; j + 1 < n1; j++) {
      const a = values[i * n1 + j];
      const b = values[i * n1 + j + 1];
      if (Number.isFinite(a) && Number.isFinite(b)) {
        sum += Math.abs(b - a);
        count += 1;
      }
    }
  }
  return count > 0 ? (2 * sum) / count : 0;
}

/** Rasterize the slice into an RGBA tile, one pixel per grid node.
 * Pixel row 0 is the top of the screen, i.e. the largest world y. */
export function sliceToImage(slice: FieldSliceMessage, band: number | null): {
  data: Uint8ClampedArray;
  w: number;
  h: number;
} {
  const [n0, n1] = slice.shape;
  const span = colorSpan(slice.values);
  const data = new Uint8ClampedArray(n0 * n1 * 4);
  for (let j = 0; j < n1; j++) {
    const row = n1 - 1 - j; // flip: world y up, screen y down
    for (let i = 0; i < n0; i++) {
      const v = slice.values[i * n1 + j];
      const c = valueToColor(v, span);
      const o = (row * n0 + i) * 4;
      if (band !== null && Number.isFinite(v) && Math.abs(v) <= band) {
        // blend the active-band highlight over the heatmap color
        data[o] = Math.round(0.45 * c.r + 0.55 * 250);
        data[o + 1] = Math.round(0.45 * c.g + 0.55 * 204);
        data[o + 2] = Math.round(0.45 * c.b + 0.55 * 21);
        data[o + 3] = 255;
      } else {
        data[o] = c.r;
        data[o + 1] = c.g;
        data[o + 2] = c.b;
        data[o + 3] = c.a;
      }
    }
  }
  return { data, w: n0, h: n1 };
}

function obstacleOps(t: Transform, shape: ObstacleShape, pending: boolean): DrawOp[] {
  const style: Style = pending
    ? { stroke: COLORS.pendingStroke, width: 2, dash: [6, 4] }
    : { fill: COLORS.obstacleFill, stroke: COLORS.obstacleStroke, width: 2 };
  if (shape.kind === "circle") {
    const [cx, cy] = worldToScreen(t, shape.center[0], shape.center[1]);
    return [{ kind: "circle", cx, cy, r: t.scale * shape.radius, style }];
  }
  const [x0, y0] = worldToScreen(t, shape.lows[0], shape.highs[1]);
  const [x1, y1] = worldToScreen(t, shape.highs[0], shape.lows[1]);
  return [{ kind: "rect", x: x0, y: y0, w: x1 - x0, h: y1 - y0, style }];
}

export function renderFrame(view: ViewState, viewport: Viewport): DrawOp[] {
  const ops: DrawOp[] = [{ kind: "clear", color: COLORS.background }];
  const slice = view.slice;
  if (!slice) {
    ops.push({
      kind: "text",
      text: view.connection === "open" ? "waiting for field data" : "connecting",
      x: viewport.width / 2,
      y: viewport.height / 2,
      color: COLORS.robot,
      size: 14,
    });
    return ops;
  }
  const t = makeTransform({
    ...viewport,
    extent: { x: slice.extent[0], y: slice.extent[1] },
  });

  // heatmap (with the near-boundary band baked in when toggled on)
  const band = view.overlays.activeBand ? bandThreshold(slice.values, slice.shape) : null;
  const img = sliceToImage(slice, band);
  const [left, top] = worldToScreen(t, slice.extent[0][0], slice.extent[1][1]);
  const [right, bottom] = worldToScreen(t, slice.extent[0][1], slice.extent[1][0]);
  ops.push({
    kind: "image",
    data: img.data,
    w: img.w,
    h: img.h,
    dx: left,
    dy: top,
    dw: right - left,
    dh: bottom - top,
  });

  // zero-level contour polylines
  if (view.overlays.contour) {
    for (const poly of slice.contours) {
      ops.push({
        kind: "poly",
        points: poly.map(([wx, wy]) => worldToScreen(t, wx, wy)),
        close: false,
        style: { stroke: COLORS.contour, width: 2.5 },
      });
    }
  }

  for (const { shape, pending } of visibleObstacles(view)) {
    ops.push(...obstacleOps(t, shape, pending));
  }

  // goal marker: small diamond
  if (slice.goal.length >= 2) {
    const [gx, gy] = worldToScreen(t, slice.goal[0], slice.goal[1]);
    const r = 7;
    ops.push({
      kind: "poly",
      points: [
        [gx, gy - r],
        [gx + r, gy],
        [gx, gy + r],
        [gx - r, gy],
      ],
      close: true,
      style: { stroke: COLORS.goal, width: 2 },
    });
  }

  // trajectory history, colored by the filter status at each sample
  if (view.overlays.trajectory && view.trajectory.length > 1) {
    for (let i = 1; i < view.trajectory.length; i++) {
      const a = view.trajectory[i - 1];
      const b = view.trajectory[i];
      ops.push({
        kind: "poly",
        points: [worldToScreen(t, a.x, a.y), worldToScreen(t, b.x, b.y)],
        close: false,
        style: { stroke: COLORS.statuses[b.status] ?? COLORS.robot, width: 1.5 },
      });
    }
  }

  // robot pose plus velocity arrow
  const last = view.trajectory[view.trajectory.length - 1];
  if (last) {
    const [rx, ry] = worldToScreen(t, last.x, last.y);
    ops.push({ kind: "circle", cx: rx, cy: ry, r: 5, style: { fill: COLORS.robot } });
    const speed = Math.hypot(last.vx, last.vy);
    if (speed > 1e-6) {
      const scale = 0.4; // seconds of look-ahead drawn
      const [ax, ay] = worldToScreen(t, last.x + last.vx * scale, last.y + last.vy * scale);
      ops.push({
        kind: "poly",
        points: [
          [rx, ry],
          [ax, ay],
        ],
        close: false,
        style: { stroke: COLORS.arrow, width: 2 },
      });
    }
  }

  // staleness badge: the filter runs on a newer field than the one shown
  if (isStale(view)) {
    ops.push({
      kind: "rect",
      x: viewport.width - 110,
      y: 8,
      w: 102,
      h: 22,
      style: { fill: "rgba(0,0,0,0.6)", stroke: COLORS.stale, width: 1 },
    });
    ops.push({
      kind: "text",
      text: "STALE FIELD",
      x: viewport.width - 59,
      y: 23,
      color: COLORS.stale,
      size: 12,
    });
  }

  // rejection toasts
  view.toasts.forEach((toast, i) => {
    ops.push({
      kind: "text",
      text: toast.text,
      x: viewport.width / 2,
      y: viewport.height - 12 - 16 * (view.toasts.length - 1 - i),
      color: COLORS.toast,
      size: 12,
    });
  });
  return ops;
}
