/** Protocol client: one in-flight act, FIFO key queue, reconnect with the
 * same session id so the server replays the strip. No inference client-side.
 */

import { encodeClientMessage, parseServerMessage } from "./protocol.js";
import type { ServerMessage } from "./protocol.js";
import { initialView, reduce } from "./state.js";
import type { LogEntry, SessionView } from "./state.js";

/** Minimal socket surface so tests can substitute a mock server. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((data: string) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export type ConnectionStatus = "connecting" | "open" | "retrying";

export interface PlayClientOptions {
  seed?: number;
  now?: () => number;
  retryDelayMs?: number;
  /** scheduling hook; tests replace setTimeout */
  schedule?: (fn: () => void, ms: number) => void;
  onUpdate?: (view: SessionView, status: ConnectionStatus) => void;
}

export class PlayClient {
  view: SessionView = initialView;
  status: ConnectionStatus = "connecting";
  readonly log: LogEntry[] = [];

  private socket: SocketLike | null = null;
  private readonly queue: number[] = [];
  private readonly connect: () => SocketLike;
  private readonly now: () => number;
  private readonly retryDelayMs: number;
  private readonly schedule: (fn: () => void, ms: number) => void;
  private readonly onUpdate: (view: SessionView, status: ConnectionStatus) => void;
  private readonly seed: number | undefined;
  private stopped = false;

  constructor(connect: () => SocketLike, opts: PlayClientOptions = {}) {
    this.connect = connect;
    this.seed = opts.seed;
    this.now = opts.now ?? (() => Date.now());
    this.retryDelayMs = opts.retryDelayMs ?? 1000;
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.onUpdate = opts.onUpdate ?? (() => {});
    this.open();
  }

  get inFlight(): boolean {
    return this.view.pendingAction !== null;
  }

  /** Queue or dispatch a keypress; order is always preserved. */
  press(action: number): void {
    if (this.status !== "open" || this.inFlight || this.view.session === null) {
      this.queue.push(action);
      return;
    }
    this.sendAct(action);
  }

  stop(): void {
    this.stopped = true;
    this.socket?.close();
  }

  private open(): void {
    this.status = "connecting";
    this.socket = this.connect();
    this.socket.onopen = () => {
      this.status = "open";
      const reset = this.view.session === null
        ? { type: "reset" as const, seed: this.seed }
        : { type: "reset" as const, session: this.view.session };
      // An act that was in flight when the connection dropped is lost; the
      // server replay after reset reflects only committed steps.
      if (this.view.pendingAction !== null) {
        this.view = { ...this.view, pendingAction: null, pendingSince: null };
      }
      this.socket!.send(encodeClientMessage(reset));
      this.emit();
    };
    this.socket.onmessage = (data) => this.handle(parseServerMessage(data));
    this.socket.onclose = () => {
      if (this.stopped) return;
      this.status = "retrying";
      this.emit();
      this.schedule(() => this.open(), this.retryDelayMs);
    };
  }

  private sendAct(action: number): void {
    this.apply({ kind: "act", action, at: this.now() });
    this.socket!.send(encodeClientMessage(
      { type: "act", session: this.view.session!, action }));
  }

  private handle(msg: ServerMessage): void {
    this.apply({ kind: "server", msg, at: this.now() });
    if (this.status === "open" && !this.inFlight && this.view.session !== null
        && this.queue.length > 0) {
      this.sendAct(this.queue.shift()!);
    }
  }

  private apply(entry: LogEntry): void {
    this.log.push(entry);
    this.view = reduce(this.view, entry);
    this.emit();
  }

  private emit(): void {
    this.onUpdate(this.view, this.status);
  }
}
