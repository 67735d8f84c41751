/** Session view as a pure reduction of the message log.
 *
 * Every mutation of the UI state goes through `reduce`, and `replay` of the
 * recorded log reproduces the exact view — the reproducibility invariant the
 * tests assert.
 */

import type { ServerMessage } from "./protocol.js";

export const CONDITIONING_FRAMES = 4;

export type LogEntry =
  | { kind: "act"; action: number; at: number }
  | { kind: "server"; msg: ServerMessage; at: number };

export interface SessionView {
  session: string | null;
  /** base64 PNG per tile; index < conditioning are conditioning frames */
  frames: string[];
  conditioning: number;
  step: number;
  actions: number[];
  /** action sent but not yet answered (at most one in flight) */
  pendingAction: number | null;
  pendingSince: number | null;
  lastLatencyMs: number | null;
  lastError: { code: string; msg: string } | null;
}

export const initialView: SessionView = {
  session: null,
  frames: [],
  conditioning: 0,
  step: 0,
  actions: [],
  pendingAction: null,
  pendingSince: null,
  lastLatencyMs: null,
  lastError: null,
};

export function reduce(view: SessionView, entry: LogEntry): SessionView {
  if (entry.kind === "act") {
    return { ...view, pendingAction: entry.action, pendingSince: entry.at,
             lastError: null };
  }
  const msg = entry.msg;
  if (msg.type === "error") {
    // Frameless error: keep the strip, drop the in-flight action.
    return { ...view, pendingAction: null, pendingSince: null,
             lastError: { code: msg.code, msg: msg.msg } };
  }
  if (view.pendingAction === null) {
    // Reset reply (or server-side replay on reconnect): replace the strip.
    const conditioning = Math.min(CONDITIONING_FRAMES, msg.png_base64.length);
    return {
      ...view,
      session: msg.session,
      frames: msg.png_base64.slice(),
      conditioning,
      step: msg.step,
      actions: [],
      lastLatencyMs: null,
      lastError: null,
    };
  }
  // Act reply: append exactly the returned frames, record the action.
  return {
    ...view,
    session: msg.session,
    frames: view.frames.concat(msg.png_base64),
    step: msg.step,
    actions: view.actions.concat([view.pendingAction]),
    pendingAction: null,
    pendingSince: null,
    lastLatencyMs: view.pendingSince === null ? null : entry.at - view.pendingSince,
    lastError: null,
  };
}

export function replay(log: LogEntry[]): SessionView {
  return log.reduce(reduce, initialView);
}

/** Strip length = conditioning + steps taken; history length = steps taken. */
export function checkInvariants(view: SessionView): void {
  const taken = view.actions.length;
  if (view.frames.length !== view.conditioning + taken) {
    throw new Error(
      `strip length ${view.frames.length} != conditioning ${view.conditioning} + steps ${taken}`);
  }
}
