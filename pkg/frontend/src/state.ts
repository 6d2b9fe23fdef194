/**
 * Dashboard view state and the message reducer.
 *
 * `ingest` is a pure function from (ViewState, ServerMessage) to ViewState;
 * the whole scene a frame renders is derived from the state produced here,
 * which is what makes replaying a recorded log reproduce identical frames.
 */

import {
  AckMessage,
  FieldSliceMessage,
  ObstacleShape,
  ServerMessage,
  SessionInfo,
  SliceSpec,
  StateUpdateMessage,
} from "./types.js";

export interface TrajectoryPoint {
  t: number;
  x: number;
  y: number;
  vx: number;
  vy: number;
  status: StateUpdateMessage["status"];
}

export interface PendingObstacle {
  commandId: string;
  shape: ObstacleShape;
}

export interface Toast {
  t: number;
  text: string;
}

export interface OverlayToggles {
  contour: boolean;
  activeBand: boolean;
  trajectory: boolean;
  trajectoryLength: number; // points of history kept
}

export interface ViewState {
  connection: "connecting" | "open" | "closed";
  session: SessionInfo | null;
  slice: FieldSliceMessage | null;
  sliceSpec: SliceSpec | null; // grid-snapped by the server echo
  lastState: StateUpdateMessage | null;
  trajectory: TrajectoryPoint[];
  pending: PendingObstacle[]; // optimistic drafts awaiting their ack
  toasts: Toast[];
  events: string[];
  overlays: OverlayToggles;
  /** field versions the filter may run ahead of the displayed slice before
   * the staleness badge shows */
  staleThreshold: number;
  positionDims: [number, number];
}

export function initialViewState(): ViewState {
  return {
    connection: "connecting",
    session: null,
    slice: null,
    sliceSpec: null,
    lastState: null,
    trajectory: [],
    pending: [],
    toasts: [],
    events: [],
    overlays: {
      contour: true,
      activeBand: false,
      trajectory: true,
      trajectoryLength: 400,
    },
    staleThreshold: 5,
    positionDims: [0, 1],
  };
}

const EVENT_BUFFER = 200;
const TOAST_BUFFER = 8;

function pushTrajectory(view: ViewState, msg: StateUpdateMessage): TrajectoryPoint[] {
  const [dx, dy] = view.positionDims;
  const x = msg.x[dx] ?? 0;
  const y = msg.x[dy] ?? 0;
  // model-agnostic velocity estimate: difference against the previous sample
  const prev = view.trajectory[view.trajectory.length - 1];
  const dt = prev ? msg.t - prev.t : 0;
  const point: TrajectoryPoint = {
    t: msg.t,
    x,
    y,
    vx: prev && dt > 0 ? (x - prev.x) / dt : 0,
    vy: prev && dt > 0 ? (y - prev.y) / dt : 0,
    status: msg.status,
  };
  const keep = Math.max(view.overlays.trajectoryLength, 1);
  const next = view.trajectory.concat(point);
  return next.length > keep ? next.slice(next.length - keep) : next;
}

function applyAck(view: ViewState, msg: AckMessage): ViewState {
  const pending = view.pending.filter((p) => p.commandId !== msg.command_id);
  let toasts = view.toasts;
  if (msg.status === "rejected") {
    const text = `${msg.command} rejected: ${msg.reason ?? "unknown reason"}`;
    toasts = view.toasts.concat({ t: view.lastState?.t ?? 0, text }).slice(-TOAST_BUFFER);
  }
  let sliceSpec = view.sliceSpec;
  // reset drops whatever slice the operator had asked for
  if (msg.status === "applied" && msg.command === "reset") {
    sliceSpec = null;
  }
  return { ...view, pending, toasts, sliceSpec };
}

export function ingest(view: ViewState, msg: ServerMessage): ViewState {
  switch (msg.type) {
    case "hello":
      return { ...view, connection: "open", session: msg.session };
    case "state_update":
      return {
        ...view,
        lastState: msg,
        trajectory: view.overlays.trajectory ? pushTrajectory(view, msg) : view.trajectory,
        session: view.session
          ? { ...view.session, sim_time: msg.t, step: msg.step, field_version: msg.field_version }
          : view.session,
      };
    case "field_slice":
      return { ...view, slice: msg, sliceSpec: msg.slice };
    case "ack":
      return applyAck(view, msg);
    case "event_log":
      return {
        ...view,
        events: view.events.concat(`[t=${msg.t.toFixed(2)}] ${msg.message}`).slice(-EVENT_BUFFER),
      };
    case "metrics":
      return view.session
        ? { ...view, session: { ...view.session, mode: msg.mode as SessionInfo["mode"], revision: msg.revision } }
        : view;
  }
}

/**
 * Apply a frame's worth of buffered messages. Slices are coalesced to the
 * newest one before applying (the schema marks them droppable and older
 * frames carry no information the newest does not).
 */
export function ingestBatch(view: ViewState, batch: ServerMessage[]): ViewState {
  let lastSlice: FieldSliceMessage | null = null;
  for (const msg of batch) {
    if (msg.type === "field_slice") lastSlice = msg;
  }
  let next = view;
  for (const msg of batch) {
    if (msg.type === "field_slice" && msg !== lastSlice) continue;
    next = ingest(next, msg);
  }
  return next;
}

/** Displayed field lags what the safety filter is actually using. */
export function isStale(view: ViewState): boolean {
  if (!view.slice || !view.lastState) return false;
  return view.lastState.field_version - view.slice.version > view.staleThreshold;
}

/** Obstacles to draw: confirmed ones from the latest slice plus optimistic
 * drafts still waiting for their ack. */
export function visibleObstacles(view: ViewState): { shape: ObstacleShape; pending: boolean }[] {
  const confirmed = (view.slice?.obstacles ?? []).map((shape) => ({ shape, pending: false }));
  const drafts = view.pending.map((p) => ({ shape: p.shape, pending: true }));
  return confirmed.concat(drafts);
}
