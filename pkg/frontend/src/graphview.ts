// Node-link view of the explained 2-hop context: target at the center,
// neighbors ringed by hop count, angles from true bearings so the layout
// matches the map's geography. Edge hovers show great-circle distance.

import { haversineKm } from "./geo.js";
import { twoHopContext } from "./context.js";
import { BASE_GLYPH_PX, KIND_COLORS, glyphRadii } from "./scale.js";
import type { ExplainResponse, GraphDoc, NodeDoc } from "./types.js";

export interface ContextNode {
  id: number;
  x: number;
  y: number;
  r: number;
  color: string;
  kind: string;
  hop: number;
}

export interface ContextEdge {
  a: number;
  b: number;
  distanceKm: number;
}

export interface ContextModel {
  nodes: ContextNode[];
  edges: ContextEdge[];
}

function hopsFrom(edges: [number, number][], target: number, maxHop: number): Map<number, number> {
  const adj = new Map<number, number[]>();
  for (const [a, b] of edges) {
    if (!adj.has(a)) adj.set(a, []);
    if (!adj.has(b)) adj.set(b, []);
    adj.get(a)!.push(b);
    adj.get(b)!.push(a);
  }
  const hop = new Map<number, number>([[target, 0]]);
  let frontier = [target];
  for (let depth = 1; depth <= maxHop; depth++) {
    const next: number[] = [];
    for (const node of frontier) {
      for (const nb of adj.get(node) ?? []) {
        if (!hop.has(nb)) {
          hop.set(nb, depth);
          next.push(nb);
        }
      }
    }
    frontier = next;
  }
  return hop;
}

export function computeContextModel(
  graph: GraphDoc,
  explain: ExplainResponse,
  width = 420,
  height = 420,
): ContextModel {
  const target = explain.target.node_id;
  const keep = twoHopContext(graph.edges, target);
  const byId = new Map<number, NodeDoc>(graph.nodes.map((n) => [n.id, n]));
  const hops = hopsFrom(graph.edges, target, 2);
  const center = byId.get(target)!;
  const cx = width / 2;
  const cy = height / 2;
  const ring = Math.min(width, height) / 2 - 30;

  const importances = new Map(
    explain.nodes.filter((n) => keep.has(n.id)).map((n) => [n.id, n.abs]),
  );
  const radii = glyphRadii([...keep], importances);

  const nodes: ContextNode[] = [];
  for (const id of keep) {
    const doc = byId.get(id)!;
    const hop = hops.get(id) ?? 2;
    let x = cx;
    let y = cy;
    if (hop > 0) {
      // bearing-ish angle keeps the sketch aligned with the map
      const angle = Math.atan2(doc.lat - center.lat, doc.lon - center.lon);
      const dist = (ring * hop) / 2;
      x = cx + dist * Math.cos(angle);
      y = cy - dist * Math.sin(angle);
    }
    nodes.push({
      id,
      x,
      y,
      r: radii.get(id) ?? BASE_GLYPH_PX,
      color: KIND_COLORS[doc.kind] ?? "#fff",
      kind: doc.kind,
      hop,
    });
  }
  const edges: ContextEdge[] = [];
  for (const [a, b] of graph.edges) {
    if (keep.has(a) && keep.has(b)) {
      const na = byId.get(a)!;
      const nb = byId.get(b)!;
      edges.push({ a, b, distanceKm: haversineKm(na.lat, na.lon, nb.lat, nb.lon) });
    }
  }
  return { nodes, edges };
}

const SVG_NS = "http://www.w3.org/2000/svg";

export function renderContext(
  svg: SVGSVGElement,
  model: ContextModel,
  onNodeClick: (id: number) => void,
): void {
  svg.innerHTML = "";
  const pos = new Map(model.nodes.map((n) => [n.id, n]));
  for (const edge of model.edges) {
    const a = pos.get(edge.a)!;
    const b = pos.get(edge.b)!;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(a.x));
    line.setAttribute("y1", String(a.y));
    line.setAttribute("x2", String(b.x));
    line.setAttribute("y2", String(b.y));
    line.classList.add("ctx-edge");
    const title = document.createElementNS(SVG_NS, "title");
    title.textContent = `${edge.distanceKm.toFixed(1)} km`;
    line.appendChild(title);
    svg.appendChild(line);
  }
  for (const node of model.nodes) {
    const el = document.createElementNS(SVG_NS, "circle");
    el.setAttribute("cx", String(node.x));
    el.setAttribute("cy", String(node.y));
    el.setAttribute("r", String(node.r));
    el.setAttribute("fill", node.color);
    el.classList.add("glyph");
    if (node.hop === 0) el.classList.add("target");
    el.addEventListener("click", () => onNodeClick(node.id));
    const title = document.createElementNS(SVG_NS, "title");
    title.textContent = `${node.kind} #${node.id} (hop ${node.hop})`;
    el.appendChild(title);
    svg.appendChild(el);
  }
}
