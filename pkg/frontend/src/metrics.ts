// Small pure helpers for the metric panels and value display.

import type { MetricsDoc, NormStats, WhatIfResponse } from "./types.js";
import { VARIABLE_SLOTS } from "./types.js";

export interface MetricDelta {
  dRmse: number;
  dMae: number;
  dAcc: number;
}

/** Change introduced by an occlusion: after minus before, per metric. */
export function whatIfDelta(resp: WhatIfResponse): MetricDelta {
  return {
    dRmse: resp.after.rmse - resp.before.rmse,
    dMae: resp.after.mae - resp.before.mae,
    dAcc: resp.after.acc - resp.before.acc,
  };
}

export function formatMetrics(m: MetricsDoc): string {
  return `RMSE ${m.rmse.toFixed(4)} · MAE ${m.mae.toFixed(4)} · ACC ${m.acc.toFixed(4)}`;
}

/**
 * Denormalize masked value slots with the server's statistics:
 * raw = v * std + mean. Unmasked slots stay blank.
 */
export function displayValues(
  values: number[],
  mask: boolean[],
  stats: NormStats | null,
): { slot: string; text: string }[] {
  const out: { slot: string; text: string }[] = [];
  for (let i = 0; i < VARIABLE_SLOTS.length; i++) {
    if (!mask[i]) continue;
    const raw = stats === null ? values[i] : values[i] * stats.std[i] + stats.mean[i];
    out.push({ slot: VARIABLE_SLOTS[i], text: raw.toFixed(3) });
  }
  return out;
}

/** Bar lengths for the impacts dashboard, as fractions of the max mean. */
export function barFractions(means: number[]): number[] {
  const max = Math.max(0, ...means);
  return means.map((m) => (max > 0 ? Math.max(0, m) / max : 0));
}
