import { describe, expect, it } from "vitest";

import { parseRecording, replayFrames, replayState } from "../src/replay.js";
import { Framebuffer, rasterize } from "../src/raster.js";
import { renderFrame } from "../src/renderer.js";
import { initialViewState } from "../src/state.js";
import { Viewport } from "../src/transform.js";
import { recordedSession, recordingText } from "./fixtures.js";

const viewport: Viewport = {
  width: 320,
  height: 240,
  margin: 16,
  extent: { x: [0, 1], y: [0, 1] }, // placeholder; the renderer uses the slice extent
};

function framebuffers(plans: ReturnType<typeof replayFrames>): Uint8ClampedArray[] {
  return plans.map((plan) => rasterize(plan, new Framebuffer(viewport.width, viewport.height)).data);
}

describe("deterministic replay", () => {
  const text = recordingText(recordedSession());

  it("parses frame-grouped newline-delimited recordings", () => {
    const frames = parseRecording(text);
    expect(frames).toHaveLength(5);
    expect(frames[0].messages[0].type).toBe("hello");
    expect(frames[3].messages[0].type).toBe("field_slice");
  });

  it("skips comments, blanks and unknown message types", () => {
    const noisy = `# session header\n{"type":"hello","schema_version":1,"session":{"scenario":"s","mode":"running","sim_time":0,"field_version":0,"connected_clients":1,"revision":0,"step":0}}\n{"type":"mystery"}\nnot json\n`;
    const frames = parseRecording(noisy);
    expect(frames).toHaveLength(1);
    expect(frames[0].messages).toHaveLength(1);
  });

  it("renders the same recording to identical draw plans twice", () => {
    const a = replayFrames(parseRecording(text), viewport);
    const b = replayFrames(parseRecording(text), viewport);
    expect(a.length).toBe(b.length);
    expect(JSON.stringify(a)).toBe(JSON.stringify(b));
  });

  it("rasterizes the same recording to pixel-identical frames twice", () => {
    const a = framebuffers(replayFrames(parseRecording(text), viewport));
    const b = framebuffers(replayFrames(parseRecording(text), viewport));
    expect(a.length).toBe(b.length);
    for (let i = 0; i < a.length; i++) {
      expect(Buffer.from(a[i]).equals(Buffer.from(b[i]))).toBe(true);
    }
  });

  it("produces frames that actually change as the session evolves", () => {
    const frames = framebuffers(replayFrames(parseRecording(text), viewport));
    // field refresh with the revealed obstacle must repaint something
    expect(Buffer.from(frames[2]).equals(Buffer.from(frames[3]))).toBe(false);
  });

  it("recovers the final view state for live resume", () => {
    const view = replayState(parseRecording(text));
    expect(view.slice?.version).toBe(1);
    expect(view.slice?.obstacles).toHaveLength(1);
    expect(view.trajectory).toHaveLength(5);
    expect(view.events).toHaveLength(1);
  });
});

describe("frame builder", () => {
  it("draws a placeholder before the first slice arrives", () => {
    const plan = renderFrame(initialViewState(), viewport);
    expect(plan[0].kind).toBe("clear");
    const text = plan.find((op) => op.kind === "text");
    expect(text && "text" in text ? text.text : "").toBe("connecting");
  });
});
