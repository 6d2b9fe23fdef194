/**
 * Minimal deterministic software rasterizer for draw operations.
 *
 * Used by the replay tests to prove pixel-identical frames, and usable
 * headless for exporting session stills. Fidelity is deliberately simple
 * (no antialiasing, dashes drawn solid); determinism is the contract.
 */

import { DrawOp, Style } from "./renderer.js";

export class Framebuffer {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8ClampedArray;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
    this.data = new Uint8ClampedArray(width * height * 4);
  }
}

export function parseColor(color: string): [number, number, number, number] {
  if (color.startsWith("#")) {
    const hex = color.slice(1);
    return [
      parseInt(hex.slice(0, 2), 16),
      parseInt(hex.slice(2, 4), 16),
      parseInt(hex.slice(4, 6), 16),
      255,
    ];
  }
  const m = color.match(/rgba?\(([^)]+)\)/);
  if (!m) throw new Error(`unsupported color ${color}`);
  const parts = m[1].split(",").map((s) => parseFloat(s.trim()));
  return [
    Math.round(parts[0]),
    Math.round(parts[1]),
    Math.round(parts[2]),
    parts.length > 3 ? Math.round(parts[3] * 255) : 255,
  ];
}

function blend(fb: Framebuffer, x: number, y: number, rgba: [number, number, number, number]) {
  if (x < 0 || y < 0 || x >= fb.width || y >= fb.height) return;
  const o = (y * fb.width + x) * 4;
  const a = rgba[3] / 255;
  fb.data[o] = Math.round(rgba[0] * a + fb.data[o] * (1 - a));
  fb.data[o + 1] = Math.round(rgba[1] * a + fb.data[o + 1] * (1 - a));
  fb.data[o + 2] = Math.round(rgba[2] * a + fb.data[o + 2] * (1 - a));
  fb.data[o + 3] = Math.max(fb.data[o + 3], rgba[3]);
}

function fillRect(fb: Framebuffer, x: number, y: number, w: number, h: number, color: string) {
  const rgba = parseColor(color);
  const x0 = Math.max(0, Math.round(x));
  const y0 = Math.max(0, Math.round(y));
  const x1 = Math.min(fb.width, Math.round(x + w));
  const y1 = Math.min(fb.height, Math.round(y + h));
  for (let py = y0; py < y1; py++) {
    for (let px = x0; px < x1; px++) blend(fb, px, py, rgba);
  }
}

function strokeSegment(
  fb: Framebuffer,
  ax: number,
  ay: number,
  bx: number,
  by: number,
  color: string,
  width: number,
) {
  const rgba = parseColor(color);
  const r = Math.max(width / 2, 0.5);
  const x0 = Math.floor(Math.min(ax, bx) - r - 1);
  const x1 = Math.ceil(Math.max(ax, bx) + r + 1);
  const y0 = Math.floor(Math.min(ay, by) - r - 1);
  const y1 = Math.ceil(Math.max(ay, by) + r + 1);
  const dx = bx - ax;
  const dy = by - ay;
  const len2 = dx * dx + dy * dy;
  for (let py = y0; py <= y1; py++) {
    for (let px = x0; px <= x1; px++) {
      const t = len2 > 0 ? Math.max(0, Math.min(1, ((px - ax) * dx + (py - ay) * dy) / len2)) : 0;
      const qx = ax + t * dx;
      const qy = ay + t * dy;
      if (Math.hypot(px - qx, py - qy) <= r) blend(fb, px, py, rgba);
    }
  }
}

function drawCircle(fb: Framebuffer, cx: number, cy: number, r: number, style: Style) {
  const x0 = Math.floor(cx - r - 2);
  const x1 = Math.ceil(cx + r + 2);
  const y0 = Math.floor(cy - r - 2);
  const y1 = Math.ceil(cy + r + 2);
  const strokeW = style.width ?? 1;
  const fillRgba = style.fill ? parseColor(style.fill) : null;
  const strokeRgba = style.stroke ? parseColor(style.stroke) : null;
  for (let py = y0; py <= y1; py++) {
    for (let px = x0; px <= x1; px++) {
      const d = Math.hypot(px - cx, py - cy);
      if (fillRgba && d <= r) blend(fb, px, py, fillRgba);
      if (strokeRgba && Math.abs(d - r) <= strokeW / 2) blend(fb, px, py, strokeRgba);
    }
  }
}

function drawImage(fb: Framebuffer, op: Extract<DrawOp, { kind: "image" }>) {
  const x0 = Math.max(0, Math.round(op.dx));
  const y0 = Math.max(0, Math.round(op.dy));
  const x1 = Math.min(fb.width, Math.round(op.dx + op.dw));
  const y1 = Math.min(fb.height, Math.round(op.dy + op.dh));
  for (let py = y0; py < y1; py++) {
    const sy = Math.min(op.h - 1, Math.floor(((py - op.dy) / op.dh) * op.h));
    for (let px = x0; px < x1; px++) {
      const sx = Math.min(op.w - 1, Math.floor(((px - op.dx) / op.dw) * op.w));
      const so = (sy * op.w + sx) * 4;
      blend(fb, px, py, [op.data[so], op.data[so + 1], op.data[so + 2], op.data[so + 3]]);
    }
  }
}

export function rasterize(ops: DrawOp[], fb: Framebuffer): Framebuffer {
  for (const op of ops) {
    switch (op.kind) {
      case "clear":
        fb.data.fill(0);
        fillRect(fb, 0, 0, fb.width, fb.height, op.color);
        break;
      case "image":
        drawImage(fb, op);
        break;
      case "rect":
        if (op.style.fill) fillRect(fb, op.x, op.y, op.w, op.h, op.style.fill);
        if (op.style.stroke) {
          const w = op.style.width ?? 1;
          strokeSegment(fb, op.x, op.y, op.x + op.w, op.y, op.style.stroke, w);
          strokeSegment(fb, op.x + op.w, op.y, op.x + op.w, op.y + op.h, op.style.stroke, w);
          strokeSegment(fb, op.x + op.w, op.y + op.h, op.x, op.y + op.h, op.style.stroke, w);
          strokeSegment(fb, op.x, op.y + op.h, op.x, op.y, op.style.stroke, w);
        }
        break;
      case "circle":
        drawCircle(fb, op.cx, op.cy, op.r, op.style);
        break;
      case "poly": {
        const pts = op.close && op.points.length > 1 ? op.points.concat([op.points[0]]) : op.points;
        const color = op.style.stroke ?? "#ffffff";
        const w = op.style.width ?? 1;
        for (let i = 1; i < pts.length; i++) {
          strokeSegment(fb, pts[i - 1][0], pts[i - 1][1], pts[i][0], pts[i][1], color, w);
        }
        break;
      }
      case "text":
        // text fidelity is out of scope for the rasterizer; the op list
        // itself is compared by the determinism tests
        break;
    }
  }
  return fb;
}
