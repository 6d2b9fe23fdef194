/**
 * Message and command types mirroring the live service wire schema
 * (docs/wire_schema.md in the repository root, schema version 1).
 *
 * Everything the dashboard knows about the backend comes through these
 * shapes; there are no other API calls.
 */

export const SCHEMA_VERSION = 1;

export type Vec = number[];

export interface CircleShape {
  kind: "circle";
  id?: string;
  center: Vec;
  radius: number;
}

export interface BoxShape {
  kind: "box";
  id?: string;
  lows: Vec;
  highs: Vec;
}

export type ObstacleShape = CircleShape | BoxShape;

export interface SessionInfo {
  scenario: string;
  mode: "running" | "paused";
  sim_time: number;
  field_version: number;
  connected_clients: number;
  revision: number;
  step: number;
}

export interface HelloMessage {
  type: "hello";
  schema_version: number;
  session: SessionInfo;
}

export type FilterStatus = "inactive" | "active" | "infeasible" | "out_of_bounds";

export interface StateUpdateMessage {
  type: "state_update";
  schema_version: number;
  step: number;
  t: number;
  x: Vec;
  u: Vec;
  u_nom: Vec;
  h: number;
  ell: number;
  status: FilterStatus;
  field_version: number;
}

export interface SliceSpec {
  dims: [number, number];
  fixed: Record<string, number>;
}

export interface FieldSliceMessage {
  type: "field_slice";
  schema_version: number;
  version: number;
  slice: SliceSpec;
  shape: [number, number];
  extent: [[number, number], [number, number]];
  values: number[]; // row-major, rows follow slice.dims[0]
  contours: Vec[][];
  obstacles: ObstacleShape[];
  goal: Vec;
}

export interface AckMessage {
  type: "ack";
  schema_version: number;
  command_id?: string;
  command: string;
  status: "applied" | "rejected";
  revision: number;
  reason?: string;
  obstacle_id?: string;
}

export interface EventLogMessage {
  type: "event_log";
  schema_version: number;
  t: number;
  message: string;
}

export interface MetricsMessage {
  type: "metrics";
  schema_version: number;
  t: number;
  solver: { iterations: number; node_updates: number; publishes: number };
  revision: number;
  mode: string;
}

export type ServerMessage =
  | HelloMessage
  | StateUpdateMessage
  | FieldSliceMessage
  | AckMessage
  | EventLogMessage
  | MetricsMessage;

export type ClientCommand =
  | { type: "add_obstacle"; command_id?: string; shape: ObstacleShape }
  | { type: "remove_obstacle"; command_id?: string; id: string }
  | { type: "set_disturbance_bounds"; command_id?: string; lows: Vec; highs: Vec }
  | { type: "set_control_bounds"; command_id?: string; lows: Vec; highs: Vec }
  | { type: "set_goal"; command_id?: string; goal: Vec }
  | { type: "set_slice"; command_id?: string; fixed: Record<string, number>; dims?: [number, number] }
  | { type: "pause"; command_id?: string }
  | { type: "resume"; command_id?: string }
  | { type: "reset"; command_id?: string };

/** Parse one raw socket payload; returns null for unknown message types,
 * which the schema tells clients to ignore. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const type = (data as { type?: unknown }).type;
  switch (type) {
    case "hello":
    case "state_update":
    case "field_slice":
    case "ack":
    case "event_log":
    case "metrics":
      return data as ServerMessage;
    default:
      return null;
  }
}
