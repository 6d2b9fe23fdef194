/**
 * Pointer interaction: translate drag gestures on the canvas into commands.
 *
 * Two tools exist. The obstacle tool places a circle (press, drag out a
 * radius, release) or a box (with the box modifier, drag a corner to the
 * opposite corner). The goal tool moves the goal to the click point.
 * Degenerate drags (radius or box side below a couple of pixels) are
 * dropped rather than sent, so stray clicks never spawn invisible geometry.
 */

import { screenToWorld, Transform, worldLengthToPixels } from "./transform.js";
import { ClientCommand, ObstacleShape } from "./types.js";

export type Tool = "obstacle-circle" | "obstacle-box" | "goal";

export interface DragState {
  tool: Tool;
  startScreen: [number, number];
  currentScreen: [number, number];
}

/** Smallest gesture, in pixels, that still counts as a shape. */
export const MIN_DRAG_PIXELS = 2;

export function beginDrag(tool: Tool, sx: number, sy: number): DragState {
  return { tool, startScreen: [sx, sy], currentScreen: [sx, sy] };
}

export function moveDrag(drag: DragState, sx: number, sy: number): DragState {
  return { ...drag, currentScreen: [sx, sy] };
}

/** Shape the drag describes so far, for the live preview; null while the
 * gesture is still degenerate. */
export function dragShape(drag: DragState, t: Transform): ObstacleShape | null {
  const [wx0, wy0] = screenToWorld(t, drag.startScreen[0], drag.startScreen[1]);
  const [wx1, wy1] = screenToWorld(t, drag.currentScreen[0], drag.currentScreen[1]);
  if (drag.tool === "obstacle-circle") {
    const radius = Math.hypot(wx1 - wx0, wy1 - wy0);
    if (worldLengthToPixels(t, radius) < MIN_DRAG_PIXELS) return null;
    return { kind: "circle", center: [wx0, wy0], radius };
  }
  if (drag.tool === "obstacle-box") {
    const lows = [Math.min(wx0, wx1), Math.min(wy0, wy1)];
    const highs = [Math.max(wx0, wx1), Math.max(wy0, wy1)];
    const side = Math.min(highs[0] - lows[0], highs[1] - lows[1]);
    if (worldLengthToPixels(t, side) < MIN_DRAG_PIXELS) return null;
    return { kind: "box", lows, highs };
  }
  return null;
}

/** Command to send when the pointer is released, or null for a no-op
 * gesture. Obstacle commands carry the given id so the optimistic draft
 * can be matched to its ack. */
export function endDrag(
  drag: DragState,
  t: Transform,
  commandId: string,
): ClientCommand | null {
  if (drag.tool === "goal") {
    const [wx, wy] = screenToWorld(t, drag.currentScreen[0], drag.currentScreen[1]);
    return { type: "set_goal", command_id: commandId, goal: [wx, wy] };
  }
  const shape = dragShape(drag, t);
  if (!shape) return null;
  return { type: "add_obstacle", command_id: commandId, shape };
}
