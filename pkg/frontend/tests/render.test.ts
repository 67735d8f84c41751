import { describe, expect, it } from "vitest";

import { decodeFrame, integerScale, tileLayout } from "../src/render.js";
import { MockServer, fakePng } from "./mock_server.js";
import { PlayClient } from "../src/client.js";

const flush = (): Promise<void> => new Promise((r) => queueMicrotask(r));

describe("integerScale", () => {
  it("picks the largest integer factor fitting the target", () => {
    expect(integerScale(64, 128)).toBe(2);
    expect(integerScale(64, 127)).toBe(1);
    expect(integerScale(64, 64)).toBe(1);
    expect(integerScale(64, 400)).toBe(6);
  });

  it("never scales below 1 even for tiny targets", () => {
    expect(integerScale(64, 10)).toBe(1);
  });
});

describe("tileLayout", () => {
  it("lays out one rect per frame, row-major", () => {
    const rects = tileLayout(16, 64, 8, 0);
    expect(rects).toHaveLength(16);
    expect(rects[0]).toEqual({ x: 0, y: 0, w: 64, h: 64 });
    expect(rects[7]).toEqual({ x: 448, y: 0, w: 64, h: 64 });
    expect(rects[8]).toEqual({ x: 0, y: 64, w: 64, h: 64 });
  });

  it("empty session yields an empty layout", () => {
    expect(tileLayout(0, 64, 8)).toEqual([]);
  });
});

describe("decodeFrame", () => {
  const markerDecoder = async (png: string): Promise<ImageBitmap> => {
    const text = Buffer.from(png, "base64").toString();
    if (!text.startsWith("PNG:")) throw new Error("corrupt");
    return { width: 64, height: 64 } as ImageBitmap;
  };

  it("decodes well-formed frames", async () => {
    const img = await decodeFrame(fakePng("s0", 1), markerDecoder);
    expect(img).not.toBeNull();
  });

  it("returns null for corrupt frames instead of throwing", async () => {
    const img = await decodeFrame(
      Buffer.from("!!not-a-png!!").toString("base64"), markerDecoder);
    expect(img).toBeNull();
  });

  it("a corrupt frame from the server leaves the session usable", async () => {
    const server = new MockServer();
    const client = new PlayClient(() => server.connect(), {
      schedule: () => {}, now: () => 0,
    });
    await flush();
    server.corruptNextFrame = true;
    client.press(0);
    client.press(1);
    const decoded = await Promise.all(
      client.view.frames.map((f) => decodeFrame(f, markerDecoder)));
    // tile 4 is the corrupt one -> error tile; the session continued
    expect(decoded[4]).toBeNull();
    expect(decoded[5]).not.toBeNull();
    expect(client.view.frames).toHaveLength(6);
    expect(client.view.actions).toEqual([0, 1]);
  });
});
