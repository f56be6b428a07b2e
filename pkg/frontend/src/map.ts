// Map view: every node of the selected snapshot as a glyph on an
// equirectangular canvas. Pure glyph computation is separated from DOM
// rendering so the sizing rules are directly testable.

import { boundsOf, makeProjector } from "./geo.js";
import { BASE_GLYPH_PX, KIND_COLORS, glyphRadii, legendEntries } from "./scale.js";
import { twoHopContext } from "./context.js";
import type { ExplainResponse, GraphPayload } from "./types.js";
import type { LegendEntry } from "./scale.js";

export interface MapGlyph {
  id: number;
  x: number;
  y: number;
  r: number;
  color: string;
  kind: string;
  isGrid: boolean;
  isTarget: boolean;
  occluded: boolean;
  inContext: boolean;
}

export interface MapModel {
  glyphs: MapGlyph[];
  legend: LegendEntry[];
}

/**
 * Computes glyph geometry for one snapshot. Before any explanation every
 * glyph has the uniform base size; after one, nodes inside the target's
 * 2-hop context are sized by their absolute relevance and everything else
 * keeps the base size.
 */
export function computeMapModel(
  payload: GraphPayload,
  explain: ExplainResponse | null,
  occlusion: Set<number>,
  width = 900,
  height = 600,
): MapModel {
  const nodes = payload.graph.nodes;
  const project = makeProjector(boundsOf(nodes), width, height);

  let context = new Set<number>();
  let importances: Map<number, number> | null = null;
  if (explain !== null) {
    context = twoHopContext(payload.graph.edges, explain.target.node_id);
    importances = new Map(
      explain.nodes.filter((n) => context.has(n.id)).map((n) => [n.id, n.abs]),
    );
  }
  const radii = glyphRadii(nodes.map((n) => n.id), importances);

  const glyphs: MapGlyph[] = nodes.map((n) => {
    const [x, y] = project(n.lat, n.lon);
    return {
      id: n.id,
      x,
      y,
      r: radii.get(n.id) ?? BASE_GLYPH_PX,
      color: KIND_COLORS[n.kind] ?? "#ffffff",
      kind: n.kind,
      isGrid: n.kind === "GridPoint",
      isTarget: explain !== null && n.id === explain.target.node_id,
      occluded: occlusion.has(n.id),
      inContext: context.has(n.id),
    };
  });
  return { glyphs, legend: legendEntries(nodes.map((n) => n.kind)) };
}

const SVG_NS = "http://www.w3.org/2000/svg";

export interface MapHandlers {
  onNodeClick: (id: number, shiftKey: boolean) => void;
}

export function renderMap(svg: SVGSVGElement, model: MapModel, handlers: MapHandlers): void {
  svg.innerHTML = "";
  for (const glyph of model.glyphs) {
    const el = document.createElementNS(SVG_NS, glyph.isGrid ? "rect" : "circle");
    if (glyph.isGrid) {
      el.setAttribute("x", String(glyph.x - glyph.r));
      el.setAttribute("y", String(glyph.y - glyph.r));
      el.setAttribute("width", String(2 * glyph.r));
      el.setAttribute("height", String(2 * glyph.r));
    } else {
      el.setAttribute("cx", String(glyph.x));
      el.setAttribute("cy", String(glyph.y));
      el.setAttribute("r", String(glyph.r));
    }
    el.setAttribute("fill", glyph.color);
    el.classList.add("glyph");
    if (glyph.isTarget) el.classList.add("target");
    if (glyph.occluded) el.classList.add("occluded");
    if (glyph.inContext) el.classList.add("in-context");
    el.addEventListener("click", (ev) => handlers.onNodeClick(glyph.id, (ev as MouseEvent).shiftKey));
    svg.appendChild(el);
  }
}

export function renderLegend(container: HTMLElement, legend: LegendEntry[]): void {
  container.innerHTML = "";
  for (const entry of legend) {
    const item = document.createElement("span");
    item.className = "legend-item";
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = entry.color;
    item.appendChild(swatch);
    item.appendChild(document.createTextNode(entry.kind));
    container.appendChild(item);
  }
}
