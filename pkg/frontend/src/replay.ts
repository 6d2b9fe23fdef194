/**
 * Session replay: turn a recorded message log back into frames.
 *
 * A recording is just the ordered list of server messages a client received.
 * Replaying folds them through the same reducer the live app uses and renders
 * with the same pure frame builder, so a log played twice yields identical
 * draw operations and, through the software rasterizer, identical pixels.
 */

import { ingestBatch, initialViewState, ViewState } from "./state.js";
import { DrawOp, renderFrame } from "./renderer.js";
import { parseServerMessage, ServerMessage } from "./types.js";
import { Viewport } from "./transform.js";

export interface RecordedFrame {
  /** messages that arrived since the previous frame */
  messages: ServerMessage[];
}

/** Parse a newline-delimited JSON recording. Lines starting with "#" and
 * unknown message types are skipped. A blank line marks a frame boundary. */
export function parseRecording(text: string): RecordedFrame[] {
  const frames: RecordedFrame[] = [];
  let current: ServerMessage[] = [];
  for (const line of text.split("\n")) {
    const trimmed = line.trim();
    if (trimmed.startsWith("#")) continue;
    if (trimmed === "") {
      if (current.length > 0) {
        frames.push({ messages: current });
        current = [];
      }
      continue;
    }
    const msg = parseServerMessage(trimmed);
    if (msg) current.push(msg);
  }
  if (current.length > 0) frames.push({ messages: current });
  return frames;
}

/** Replay a recording, returning the draw plan of every frame. */
export function replayFrames(frames: RecordedFrame[], viewport: Viewport): DrawOp[][] {
  let view: ViewState = initialViewState();
  const plans: DrawOp[][] = [];
  for (const frame of frames) {
    view = ingestBatch(view, frame.messages);
    plans.push(renderFrame(view, viewport));
  }
  return plans;
}

/** Replay and keep only the final view, for resuming a recording live. */
export function replayState(frames: RecordedFrame[]): ViewState {
  let view: ViewState = initialViewState();
  for (const frame of frames) {
    view = ingestBatch(view, frame.messages);
  }
  return view;
}
