/** Canvas strip rendering: 64x64 native frames, integer upscaling, action
 * history overlay, error badge tiles for frames that fail to decode.
 */

import type { SessionView } from "./state.js";

export const NATIVE_SIZE = 64;

export interface TileRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Largest integer factor that keeps a native tile within the target size. */
export function integerScale(native: number, target: number): number {
  return Math.max(1, Math.floor(target / native));
}

/** Row-major tile layout with a fixed column count. */
export function tileLayout(count: number, tile: number, cols: number,
                           gap = 4): TileRect[] {
  const rects: TileRect[] = [];
  for (let i = 0; i < count; i++) {
    const col = i % cols;
    const row = Math.floor(i / cols);
    rects.push({ x: col * (tile + gap), y: row * (tile + gap), w: tile, h: tile });
  }
  return rects;
}

export type FrameDecoder = (pngBase64: string) => Promise<ImageBitmap>;

const defaultDecoder: FrameDecoder = async (pngBase64) => {
  const bytes = Uint8Array.from(atob(pngBase64), (c) => c.charCodeAt(0));
  return createImageBitmap(new Blob([bytes], { type: "image/png" }));
};

/** Decode one frame; null signals the caller to draw an error tile. */
export async function decodeFrame(pngBase64: string,
                                  decoder: FrameDecoder = defaultDecoder):
    Promise<ImageBitmap | null> {
  try {
    return await decoder(pngBase64);
  } catch {
    return null;
  }
}

export interface StripOptions {
  cols?: number;
  maxTile?: number;
  decoder?: FrameDecoder;
}

/** Draw the whole session strip; a decode failure yields an error tile and
 * the rest of the strip still renders. */
export async function renderStrip(canvas: HTMLCanvasElement, view: SessionView,
                                  opts: StripOptions = {}): Promise<void> {
  const cols = opts.cols ?? 8;
  const scale = integerScale(NATIVE_SIZE, opts.maxTile ?? 128);
  const tile = NATIVE_SIZE * scale;
  const gap = 4;
  const count = view.frames.length;
  const rows = Math.max(1, Math.ceil(count / cols));
  canvas.width = cols * (tile + gap);
  canvas.height = rows * (tile + gap);
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  const rects = tileLayout(count, tile, cols, gap);
  const images = await Promise.all(
    view.frames.map((f) => decodeFrame(f, opts.decoder)));
  images.forEach((img, i) => {
    const r = rects[i];
    if (img === null) {
      ctx.fillStyle = "#3a1020";
      ctx.fillRect(r.x, r.y, r.w, r.h);
      ctx.fillStyle = "#ff5577";
      ctx.font = `${Math.floor(r.h / 3)}px monospace`;
      ctx.textAlign = "center";
      ctx.textBaseline = "middle";
      ctx.fillText("!", r.x + r.w / 2, r.y + r.h / 2);
    } else {
      ctx.drawImage(img, r.x, r.y, r.w, r.h);
    }
    if (i < view.conditioning) {
      ctx.strokeStyle = "#4488ff";
      ctx.lineWidth = 2;
      ctx.strokeRect(r.x + 1, r.y + 1, r.w - 2, r.h - 2);
    }
    const actionIdx = i - view.conditioning;
    if (actionIdx >= 0 && actionIdx < view.actions.length) {
      ctx.fillStyle = "#eee";
      ctx.font = "12px monospace";
      ctx.textAlign = "left";
      ctx.textBaseline = "top";
      ctx.fillText(`a=${view.actions[actionIdx]}`, r.x + 4, r.y + 4);
    }
  });
}
