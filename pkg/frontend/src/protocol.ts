/** Play protocol: JSON messages over a persistent websocket. */

export interface ResetMessage {
  type: "reset";
  seed?: number;
  session?: string;
}

export interface ActMessage {
  type: "act";
  session: string;
  action: number;
}

export type ClientMessage = ResetMessage | ActMessage;

export interface FramesMessage {
  type: "frames";
  session: string;
  step: number;
  png_base64: string[];
}

export interface ErrorMessage {
  type: "error";
  code: string;
  msg: string;
}

export type ServerMessage = FramesMessage | ErrorMessage;

export class ProtocolError extends Error {}

function isStringArray(v: unknown): v is string[] {
  return Array.isArray(v) && v.every((x) => typeof x === "string");
}

/** Parse and validate a raw server payload; throws ProtocolError on junk. */
export function parseServerMessage(raw: string): ServerMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    throw new ProtocolError("payload is not valid JSON");
  }
  if (typeof obj !== "object" || obj === null) {
    throw new ProtocolError("payload is not an object");
  }
  const m = obj as Record<string, unknown>;
  if (m.type === "frames") {
    if (typeof m.session !== "string" || typeof m.step !== "number" ||
        !isStringArray(m.png_base64)) {
      throw new ProtocolError("malformed frames message");
    }
    return { type: "frames", session: m.session, step: m.step,
             png_base64: m.png_base64 };
  }
  if (m.type === "error") {
    if (typeof m.code !== "string" || typeof m.msg !== "string") {
      throw new ProtocolError("malformed error message");
    }
    return { type: "error", code: m.code, msg: m.msg };
  }
  throw new ProtocolError(`unknown message type ${String(m.type)}`);
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
