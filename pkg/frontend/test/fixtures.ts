/** Deterministic hand-built message stream used across the tests. */

import {
  AckMessage,
  FieldSliceMessage,
  HelloMessage,
  SCHEMA_VERSION,
  ServerMessage,
  StateUpdateMessage,
} from "../src/types.js";

export function helloMsg(): HelloMessage {
  return {
    type: "hello",
    schema_version: SCHEMA_VERSION,
    session: {
      scenario: "corridor",
      mode: "running",
      sim_time: 0,
      field_version: 0,
      connected_clients: 1,
      revision: 0,
      step: 0,
    },
  };
}

export function stateMsg(step: number, t: number, x: number[], opts: Partial<StateUpdateMessage> = {}): StateUpdateMessage {
  return {
    type: "state_update",
    schema_version: SCHEMA_VERSION,
    step,
    t,
    x,
    u: [0, 0],
    u_nom: [0, 0],
    h: 0.4,
    ell: 0.5,
    status: "inactive",
    field_version: 0,
    ...opts,
  };
}

/** Small slice over [-1,1]^2: signed distance to a centered disc of radius
 * 0.6, sampled on an n-by-n grid. */
export function sliceMsg(version: number, n = 9, obstacles: FieldSliceMessage["obstacles"] = []): FieldSliceMessage {
  const values: number[] = [];
  for (let i = 0; i < n; i++) {
    const x = -1 + (2 * i) / (n - 1);
    for (let j = 0; j < n; j++) {
      const y = -1 + (2 * j) / (n - 1);
      values.push(Math.hypot(x, y) - 0.6 + 0.01 * version);
    }
  }
  return {
    type: "field_slice",
    schema_version: SCHEMA_VERSION,
    version,
    slice: { dims: [0, 1], fixed: {} },
    shape: [n, n],
    extent: [
      [-1, 1],
      [-1, 1],
    ],
    values,
    contours: [
      [
        [0.6, 0],
        [0, 0.6],
        [-0.6, 0],
        [0, -0.6],
        [0.6, 0],
      ],
    ],
    obstacles,
    goal: [0.8, 0.8],
  };
}

export function ackMsg(commandId: string, status: "applied" | "rejected", reason?: string): AckMessage {
  return {
    type: "ack",
    schema_version: SCHEMA_VERSION,
    command_id: commandId,
    command: "add_obstacle",
    status,
    revision: 1,
    reason,
  };
}

/** A short session: connect, a few steps, a field refresh revealing an
 * obstacle, and more steps. Frames are groups of messages. */
export function recordedSession(): ServerMessage[][] {
  const disc = { kind: "circle" as const, id: "obs-1", center: [0.3, -0.2], radius: 0.15 };
  return [
    [helloMsg(), sliceMsg(0)],
    [stateMsg(1, 0.02, [-0.8, -0.8]), stateMsg(2, 0.04, [-0.78, -0.79])],
    [stateMsg(3, 0.06, [-0.75, -0.77], { status: "active" })],
    [sliceMsg(1, 9, [disc]), stateMsg(4, 0.08, [-0.71, -0.74], { field_version: 1 })],
    [
      stateMsg(5, 0.1, [-0.66, -0.7], { field_version: 1 }),
      {
        type: "event_log",
        schema_version: SCHEMA_VERSION,
        t: 0.1,
        message: "obstacle obs-1 added",
      },
    ],
  ];
}

export function recordingText(frames: ServerMessage[][]): string {
  return frames.map((f) => f.map((m) => JSON.stringify(m)).join("\n")).join("\n\n") + "\n";
}
