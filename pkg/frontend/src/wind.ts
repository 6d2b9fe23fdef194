/**
 * Disturbance presets for the wind toggle in the toolbar.
 *
 * Each preset is a symmetric bound magnitude; the command it produces resizes
 * the disturbance box the solver and filter assume. "off" collapses the box
 * to zero, which is a legal (empty-ish) bound rather than a removal.
 */

import { ClientCommand } from "./types.js";

export type WindPreset = "off" | "fan-low" | "fan-high";

export const WIND_MAGNITUDES: Record<WindPreset, number> = {
  off: 0,
  "fan-low": 0.1,
  "fan-high": 0.3,
};

export const WIND_ORDER: WindPreset[] = ["off", "fan-low", "fan-high"];

/** Build the bounds command for a preset given the disturbance dimension. */
export function windCommand(
  preset: WindPreset,
  dim: number,
  commandId?: string,
): ClientCommand {
  const m = WIND_MAGNITUDES[preset];
  const lo = m === 0 ? 0 : -m; // avoid JSON-visible negative zero
  return {
    type: "set_disturbance_bounds",
    command_id: commandId,
    lows: Array(dim).fill(lo),
    highs: Array(dim).fill(m),
  };
}

export function nextPreset(current: WindPreset): WindPreset {
  const i = WIND_ORDER.indexOf(current);
  return WIND_ORDER[(i + 1) % WIND_ORDER.length];
}
