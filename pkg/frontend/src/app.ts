/**
 * Browser entry point: wires the socket, the reducer, the frame builder and
 * the canvas together. One requestAnimationFrame loop drains the socket
 * buffer, folds the batch through the reducer and repaints; no other code
 * path mutates the view, so the app stays single threaded and glitch free.
 */

import { executeOnCanvas } from "./canvas.js";
import { LiveClient } from "./client.js";
import { beginDrag, dragShape, DragState, endDrag, moveDrag, Tool } from "./interact.js";
import { renderFrame } from "./renderer.js";
import { ingestBatch, initialViewState, PendingObstacle, ViewState } from "./state.js";
import { makeTransform, Transform, Viewport } from "./transform.js";
import { nextPreset, WindPreset, windCommand } from "./wind.js";

const MARGIN = 24;
const DRAG_ID = "__drag__";

function socketUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  const session = new URLSearchParams(location.search).get("session") ?? "default";
  return `${proto}://${location.host}/ws/${session}`;
}

export function startApp(root: Document = document): void {
  const canvas = root.getElementById("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unavailable");

  let view: ViewState = initialViewState();
  let drag: DragState | null = null;
  let transform: Transform | null = null;
  let windPreset: WindPreset = "off";
  let paused = false;
  const recording: string[] = [];

  const client = new LiveClient(new WebSocket(socketUrl()));
  client.onRaw = (line) => recording.push(line);

  const viewport = (): Viewport => ({
    width: canvas.width,
    height: canvas.height,
    margin: MARGIN,
    extent: view.slice
      ? { x: view.slice.extent[0], y: view.slice.extent[1] }
      : { x: [0, 1], y: [0, 1] },
  });

  function currentTool(): Tool {
    const sel = root.getElementById("tool") as HTMLSelectElement | null;
    return (sel?.value as Tool) ?? "obstacle-circle";
  }

  canvas.addEventListener("pointerdown", (ev) => {
    if (!view.slice) return;
    const rect = canvas.getBoundingClientRect();
    drag = beginDrag(currentTool(), ev.clientX - rect.left, ev.clientY - rect.top);
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!drag) return;
    const rect = canvas.getBoundingClientRect();
    drag = moveDrag(drag, ev.clientX - rect.left, ev.clientY - rect.top);
  });
  canvas.addEventListener("pointerup", () => {
    if (!drag || !transform) {
      drag = null;
      return;
    }
    const id = client.nextCommandId();
    const command = endDrag(drag, transform, id);
    if (command) {
      client.send(command);
      if (command.type === "add_obstacle") {
        const draft: PendingObstacle = { commandId: id, shape: command.shape };
        view = { ...view, pending: view.pending.concat(draft) };
      }
    }
    drag = null;
  });

  function bind(id: string, handler: () => void) {
    root.getElementById(id)?.addEventListener("click", handler);
  }
  bind("wind", () => {
    windPreset = nextPreset(windPreset);
    const dim = view.lastState ? Math.max(1, Math.floor(view.lastState.x.length / 2)) : 1;
    client.send(windCommand(windPreset, dim, client.nextCommandId()));
    const label = root.getElementById("wind");
    if (label) label.textContent = `wind: ${windPreset}`;
  });
  bind("pause", () => {
    paused = !paused;
    client.send({ type: paused ? "pause" : "resume", command_id: client.nextCommandId() });
    const label = root.getElementById("pause");
    if (label) label.textContent = paused ? "resume" : "pause";
  });
  bind("reset", () => {
    client.send({ type: "reset", command_id: client.nextCommandId() });
    view = { ...initialViewState(), connection: view.connection, session: view.session };
  });
  bind("contour", () => {
    view = { ...view, overlays: { ...view.overlays, contour: !view.overlays.contour } };
  });
  bind("band", () => {
    view = { ...view, overlays: { ...view.overlays, activeBand: !view.overlays.activeBand } };
  });
  bind("save", () => {
    const blob = new Blob([recording.join("\n") + "\n"], { type: "application/x-ndjson" });
    const a = root.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "session.ndjson";
    a.click();
  });

  function frame() {
    view = ingestBatch(view, client.drain());
    if (view.connection !== "closed" && client.closed) {
      view = { ...view, connection: "closed" };
    }
    const vp = viewport();
    transform = view.slice ? makeTransform(vp) : null;

    // overlay the in-progress drag as a pending draft for this frame only
    let shown = view;
    if (drag && transform) {
      const preview = dragShape(drag, transform);
      if (preview) {
        shown = { ...view, pending: view.pending.concat({ commandId: DRAG_ID, shape: preview }) };
      }
    }
    executeOnCanvas(renderFrame(shown, vp), ctx!);

    const status = root.getElementById("status");
    if (status && view.session) {
      status.textContent =
        `${view.session.scenario} | ${view.session.mode} | t=${view.session.sim_time.toFixed(2)}` +
        ` | field v${view.session.field_version} | rev ${view.session.revision}`;
    }
    const events = root.getElementById("events");
    if (events) events.textContent = view.events.slice(-8).join("\n");

    requestAnimationFrame(frame);
  }
  requestAnimationFrame(frame);
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  startApp();
}
