import { describe, expect, it } from "vitest";

import { ProtocolError, encodeClientMessage,
         parseServerMessage } from "../src/protocol.js";

describe("parseServerMessage", () => {
  it("parses a frames message", () => {
    const msg = parseServerMessage(JSON.stringify(
      { type: "frames", session: "s0", step: 3, png_base64: ["aa", "bb"] }));
    expect(msg).toEqual({ type: "frames", session: "s0", step: 3,
                          png_base64: ["aa", "bb"] });
  });

  it("parses an error message", () => {
    const msg = parseServerMessage(JSON.stringify(
      { type: "error", code: "bad_action", msg: "nope" }));
    expect(msg).toEqual({ type: "error", code: "bad_action", msg: "nope" });
  });

  it("rejects non-JSON, non-objects, and unknown types", () => {
    expect(() => parseServerMessage("{oops")).toThrow(ProtocolError);
    expect(() => parseServerMessage("42")).toThrow(ProtocolError);
    expect(() => parseServerMessage('{"type":"surprise"}')).toThrow(ProtocolError);
  });

  it("rejects malformed frames payloads", () => {
    expect(() => parseServerMessage(JSON.stringify(
      { type: "frames", session: "s0", step: "3", png_base64: [] })))
      .toThrow(ProtocolError);
    expect(() => parseServerMessage(JSON.stringify(
      { type: "frames", session: "s0", step: 3, png_base64: [1, 2] })))
      .toThrow(ProtocolError);
    expect(() => parseServerMessage(JSON.stringify(
      { type: "error", code: "x" }))).toThrow(ProtocolError);
  });

  it("round-trips client messages", () => {
    expect(JSON.parse(encodeClientMessage({ type: "reset", seed: 7 })))
      .toEqual({ type: "reset", seed: 7 });
    expect(JSON.parse(encodeClientMessage(
      { type: "act", session: "s1", action: 4 })))
      .toEqual({ type: "act", session: "s1", action: 4 });
  });
});
