/** DOM wiring: websocket connection with retry banner, keyboard input with
 * the one-in-flight contract, on-screen action palette, canvas strip.
 */

import { PlayClient } from "./client.js";
import type { SocketLike } from "./client.js";
import { keyLegend, mapKey } from "./keymap.js";
import type { ControlMode } from "./keymap.js";
import { renderStrip } from "./render.js";
import type { SessionView } from "./state.js";

function wrapWebSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const wrapper: SocketLike = {
    send: (d) => ws.send(d),
    close: () => ws.close(),
    onmessage: null,
    onopen: null,
    onclose: null,
  };
  ws.onmessage = (ev) => wrapper.onmessage?.(String(ev.data));
  ws.onopen = () => wrapper.onopen?.();
  ws.onclose = () => wrapper.onclose?.();
  ws.onerror = () => ws.close();
  return wrapper;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

export function boot(): void {
  const canvas = el<HTMLCanvasElement>("strip");
  const statusLine = el<HTMLDivElement>("status");
  const banner = el<HTMLDivElement>("banner");
  const palette = el<HTMLDivElement>("palette");
  const hint = el<HTMLDivElement>("hint");
  const modeSelect = el<HTMLSelectElement>("mode");
  const vocabInput = el<HTMLInputElement>("vocab");

  const mode = (): ControlMode =>
    modeSelect.value === "ground_truth" ? "ground_truth" : "latent";
  const vocab = (): number => Math.max(2, Number(vocabInput.value) || 6);

  const proto = location.protocol === "https:" ? "wss" : "ws";
  const url = `${proto}://${location.host}/ws`;

  const draw = (view: SessionView, status: string): void => {
    banner.hidden = status === "open";
    banner.textContent = status === "retrying"
      ? "connection lost — retrying…" : "connecting…";
    const err = view.lastError ? ` | error: ${view.lastError.code}` : "";
    const lat = view.lastLatencyMs === null
      ? "" : ` | ${view.lastLatencyMs.toFixed(0)} ms`;
    const busy = view.pendingAction !== null ? " | waiting for frame…" : "";
    statusLine.textContent =
      `session ${view.session ?? "–"} | step ${view.step}${lat}${busy}${err}`;
    void renderStrip(canvas, view);
  };

  const client = new PlayClient(() => wrapWebSocket(url), { onUpdate: draw });

  const rebuildPalette = (): void => {
    palette.replaceChildren(...keyLegend(mode(), vocab()).map(({ key, action }) => {
      const btn = document.createElement("button");
      btn.textContent = `${key} → ${action}`;
      btn.onclick = () => client.press(action);
      return btn;
    }));
  };
  modeSelect.onchange = rebuildPalette;
  vocabInput.onchange = rebuildPalette;
  rebuildPalette();

  document.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement ||
        ev.target instanceof HTMLSelectElement) return;
    const action = mapKey(ev.key, mode(), vocab());
    if (action === null) {
      hint.textContent = `unmapped key "${ev.key}" — see palette below`;
      return;
    }
    hint.textContent = "";
    ev.preventDefault();
    client.press(action);
  });
}

boot();
