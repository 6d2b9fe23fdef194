import { describe, expect, it } from "vitest";

import {
  ingest,
  ingestBatch,
  initialViewState,
  isStale,
  visibleObstacles,
} from "../src/state.js";
import { ackMsg, helloMsg, sliceMsg, stateMsg } from "./fixtures.js";

describe("message reducer", () => {
  it("opens the connection and stores the session on hello", () => {
    const view = ingest(initialViewState(), helloMsg());
    expect(view.connection).toBe("open");
    expect(view.session?.scenario).toBe("corridor");
  });

  it("appends trajectory points with differenced velocity", () => {
    let view = ingest(initialViewState(), helloMsg());
    view = ingest(view, stateMsg(1, 1.0, [0, 0]));
    view = ingest(view, stateMsg(2, 1.5, [1, -0.5]));
    expect(view.trajectory).toHaveLength(2);
    expect(view.trajectory[1].vx).toBeCloseTo(2.0);
    expect(view.trajectory[1].vy).toBeCloseTo(-1.0);
  });

  it("caps trajectory history at the configured length", () => {
    let view = initialViewState();
    view = { ...view, overlays: { ...view.overlays, trajectoryLength: 5 } };
    for (let i = 0; i < 20; i++) {
      view = ingest(view, stateMsg(i, i * 0.1, [i, 0]));
    }
    expect(view.trajectory).toHaveLength(5);
    expect(view.trajectory[4].t).toBeCloseTo(1.9);
  });

  it("confirms an optimistic obstacle on applied ack", () => {
    let view = initialViewState();
    view = {
      ...view,
      pending: [{ commandId: "c1", shape: { kind: "circle", center: [0, 0], radius: 0.1 } }],
    };
    expect(visibleObstacles(view)).toHaveLength(1);
    view = ingest(view, ackMsg("c1", "applied"));
    expect(view.pending).toHaveLength(0);
    expect(view.toasts).toHaveLength(0);
  });

  it("drops the draft and raises a toast on rejected ack", () => {
    let view = initialViewState();
    view = {
      ...view,
      pending: [{ commandId: "c2", shape: { kind: "circle", center: [9, 9], radius: 0.1 } }],
    };
    view = ingest(view, ackMsg("c2", "rejected", "outside grid"));
    expect(view.pending).toHaveLength(0);
    expect(view.toasts).toHaveLength(1);
    expect(view.toasts[0].text).toContain("rejected");
    expect(view.toasts[0].text).toContain("outside grid");
  });

  it("shows confirmed obstacles from the slice alongside drafts", () => {
    let view = ingest(
      initialViewState(),
      sliceMsg(1, 9, [{ kind: "circle", id: "a", center: [0, 0], radius: 0.2 }]),
    );
    view = {
      ...view,
      pending: [{ commandId: "c3", shape: { kind: "box", lows: [0, 0], highs: [1, 1] } }],
    };
    const shapes = visibleObstacles(view);
    expect(shapes).toHaveLength(2);
    expect(shapes[0].pending).toBe(false);
    expect(shapes[1].pending).toBe(true);
  });

  it("flags staleness only once the filter runs well ahead of the shown field", () => {
    let view = ingest(initialViewState(), sliceMsg(0));
    view = ingest(view, stateMsg(1, 0.1, [0, 0], { field_version: 3 }));
    expect(isStale(view)).toBe(false);
    view = ingest(view, stateMsg(2, 0.2, [0, 0], { field_version: 9 }));
    expect(isStale(view)).toBe(true);
    view = ingest(view, sliceMsg(9));
    expect(isStale(view)).toBe(false);
  });

  it("coalesces buffered slices to the newest, never drops state updates", () => {
    const view = ingestBatch(initialViewState(), [
      helloMsg(),
      sliceMsg(1),
      stateMsg(1, 0.1, [0, 0]),
      sliceMsg(2),
      stateMsg(2, 0.2, [0.1, 0]),
      sliceMsg(5),
    ]);
    expect(view.slice?.version).toBe(5);
    expect(view.trajectory).toHaveLength(2);
  });

  it("keeps a bounded event buffer", () => {
    let view = initialViewState();
    for (let i = 0; i < 300; i++) {
      view = ingest(view, { type: "event_log", schema_version: 1, t: i, message: `e${i}` });
    }
    expect(view.events.length).toBe(200);
    expect(view.events[view.events.length - 1]).toContain("e299");
  });
});
