/** Keyboard-to-action mapping.
 *
 * Latent mode: digit keys select latent action ids (a 6-code vocabulary maps
 * keys 0-5). Ground-truth mode uses the environment's 7 actions:
 * 0 stay, 1 left, 2 right, 3 jump, 4 jump-left, 5 jump-right, 6 drop.
 */

export type ControlMode = "latent" | "ground_truth";

const GT_KEYS: Record<string, number> = {
  " ": 0,
  ArrowLeft: 1,
  ArrowRight: 2,
  ArrowUp: 3,
  q: 4,
  e: 5,
  ArrowDown: 6,
};

/** Returns the action id, or null for unmapped keys (caller shows a hint). */
export function mapKey(key: string, mode: ControlMode, vocab: number): number | null {
  if (mode === "latent") {
    if (key.length === 1 && key >= "0" && key <= "9") {
      const id = key.charCodeAt(0) - 48;
      return id < vocab ? id : null;
    }
    return null;
  }
  const id = GT_KEYS[key];
  return id !== undefined && id < vocab ? id : null;
}

/** Human-readable legend for the on-screen palette. */
export function keyLegend(mode: ControlMode, vocab: number): Array<{ key: string; action: number }> {
  if (mode === "latent") {
    return Array.from({ length: vocab }, (_, i) => ({ key: String(i), action: i }));
  }
  return Object.entries(GT_KEYS)
    .filter(([, id]) => id < vocab)
    .map(([key, action]) => ({ key: key === " " ? "space" : key, action }));
}
