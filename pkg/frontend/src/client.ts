/**
 * Websocket client with per-frame message buffering.
 *
 * Incoming messages are queued as they arrive and handed over in one batch
 * when the render loop asks (once per animation frame). That keeps all state
 * transitions on the frame boundary: the reducer sees the same batched view
 * of the stream a recording replays, and a burst of field slices costs one
 * repaint instead of many.
 */

import { ClientCommand, parseServerMessage, ServerMessage } from "./types.js";

export type SocketLike = {
  send(data: string): void;
  close(): void;
  addEventListener(type: string, listener: (ev: { data?: unknown }) => void): void;
};

export class LiveClient {
  private socket: SocketLike;
  private buffer: ServerMessage[] = [];
  private counter = 0;
  private idPrefix: string;
  open = false;
  closed = false;
  /** optional tap for recording the raw stream */
  onRaw: ((line: string) => void) | null = null;

  constructor(socket: SocketLike, idPrefix = "ui") {
    this.socket = socket;
    this.idPrefix = idPrefix;
    socket.addEventListener("open", () => {
      this.open = true;
    });
    socket.addEventListener("close", () => {
      this.open = false;
      this.closed = true;
    });
    socket.addEventListener("message", (ev) => {
      if (typeof ev.data !== "string") return;
      const msg = parseServerMessage(ev.data);
      if (msg) {
        this.buffer.push(msg);
        if (this.onRaw) this.onRaw(ev.data);
      }
    });
  }

  /** Drain everything received since the last drain. */
  drain(): ServerMessage[] {
    const batch = this.buffer;
    this.buffer = [];
    return batch;
  }

  nextCommandId(): string {
    this.counter += 1;
    return `${this.idPrefix}-${this.counter}`;
  }

  send(command: ClientCommand): void {
    this.socket.send(JSON.stringify(command));
  }

  close(): void {
    this.socket.close();
  }
}
