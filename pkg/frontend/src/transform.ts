/**
 * World <-> screen coordinate mapping for the position-plane view.
 *
 * The viewport letterboxes the world extent into the canvas while keeping
 * the aspect ratio, with the world y axis pointing up on screen. All drawing
 * code goes through these two functions, so round-tripping within one pixel
 * is the single correctness property the whole scene relies on.
 */

export interface Extent {
  x: [number, number];
  y: [number, number];
}

export interface Viewport {
  width: number; // pixels
  height: number;
  extent: Extent;
  margin: number; // pixels reserved on every side
}

export interface Transform {
  scale: number; // pixels per world unit (shared by both axes)
  offsetX: number;
  offsetY: number;
  viewport: Viewport;
}

export function makeTransform(viewport: Viewport): Transform {
  const { width, height, extent, margin } = viewport;
  const spanX = extent.x[1] - extent.x[0];
  const spanY = extent.y[1] - extent.y[0];
  if (spanX <= 0 || spanY <= 0) {
    throw new Error("viewport extent must have positive span");
  }
  const innerW = Math.max(width - 2 * margin, 1);
  const innerH = Math.max(height - 2 * margin, 1);
  const scale = Math.min(innerW / spanX, innerH / spanY);
  // center the letterboxed world inside the canvas
  const offsetX = margin + (innerW - scale * spanX) / 2 - scale * extent.x[0];
  const offsetY = margin + (innerH - scale * spanY) / 2 + scale * extent.y[1];
  return { scale, offsetX, offsetY, viewport };
}

export function worldToScreen(t: Transform, wx: number, wy: number): [number, number] {
  return [t.offsetX + t.scale * wx, t.offsetY - t.scale * wy];
}

export function screenToWorld(t: Transform, sx: number, sy: number): [number, number] {
  return [(sx - t.offsetX) / t.scale, (t.offsetY - sy) / t.scale];
}

/** Pixel length of a world-space distance (isotropic by construction). */
export function worldLengthToPixels(t: Transform, length: number): number {
  return t.scale * length;
}
