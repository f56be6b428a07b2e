// Glyph sizing and the 12-kind color key. Sizes are max-normalized per
// explanation: absolute cross-explanation comparisons belong to the
// impacts dashboard, not the map.

export const BASE_GLYPH_PX = 4; // uniform size before any explanation
export const MIN_GLYPH_PX = 2.5;
export const MAX_GLYPH_PX = 14;

export const KIND_COLORS: Record<string, string> = {
  GridPoint: "#9aa4b2",
  AIRCRAFT: "#e6194b",
  GPSRO: "#3cb44b",
  SONDE: "#ffe119",
  AMV: "#4363d8",
  "AMSU-A": "#f58231",
  AMSR2: "#911eb4",
  ATMS: "#46f0f0",
  CrIS: "#f032e6",
  GK2A: "#bcf60c",
  IASI: "#fabebe",
  MHS: "#008080",
};

/**
 * Pixel radius per node id. Without importances every glyph gets the
 * uniform base size; with them, sizes scale linearly with |importance|
 * relative to the per-explanation maximum, clamped to [MIN, MAX]. Nodes
 * absent from the importance map keep the base size ("others unchanged").
 */
export function glyphRadii(
  nodeIds: number[],
  importances: Map<number, number> | null,
): Map<number, number> {
  const radii = new Map<number, number>();
  if (importances === null || importances.size === 0) {
    for (const id of nodeIds) radii.set(id, BASE_GLYPH_PX);
    return radii;
  }
  let max = 0;
  for (const v of importances.values()) max = Math.max(max, Math.abs(v));
  for (const id of nodeIds) {
    const imp = importances.get(id);
    if (imp === undefined) {
      radii.set(id, BASE_GLYPH_PX);
    } else if (max === 0) {
      radii.set(id, MIN_GLYPH_PX);
    } else {
      const frac = Math.abs(imp) / max;
      radii.set(id, MIN_GLYPH_PX + (MAX_GLYPH_PX - MIN_GLYPH_PX) * Math.min(1, frac));
    }
  }
  return radii;
}

export interface LegendEntry {
  kind: string;
  color: string;
}

/** Legend rows for exactly the kinds present, in canonical order. */
export function legendEntries(kindsPresent: Iterable<string>): LegendEntry[] {
  const present = new Set(kindsPresent);
  return Object.entries(KIND_COLORS)
    .filter(([kind]) => present.has(kind))
    .map(([kind, color]) => ({ kind, color }));
}
