import type { ExplainResponse, GraphPayload, NodeDoc } from "../src/types.js";

export function node(id: number, kind: string, lat: number, lon: number): NodeDoc {
  const isGrid = kind === "GridPoint";
  return {
    id,
    kind,
    lat,
    lon,
    pressure: 500,
    time: 0,
    values: isGrid ? [0.1, 0.2, 0.3, 0.4, 0, 0] : [0, 0, 0, 0, 0, 0.5],
    mask: isGrid ? [true, true, true, true, false, false] : [false, false, false, false, false, true],
  };
}

/** Path 0-1-2-3-4 with node 5 isolated far away. */
export function pathPayload(): GraphPayload {
  const nodes = [
    node(0, "GridPoint", 0.0, 0.0),
    node(1, "ATMS", 0.2, 0.0),
    node(2, "GridPoint", 0.4, 0.0),
    node(3, "SONDE", 0.6, 0.0),
    node(4, "GridPoint", 0.8, 0.0),
    node(5, "GPSRO", 20.0, 20.0),
  ];
  return {
    graph: {
      region: { name: "Asia" },
      time_index: 0,
      radius_km: 50,
      normalized: true,
      nodes,
      edges: [
        [0, 1],
        [1, 2],
        [2, 3],
        [3, 4],
      ],
      targets: { "0": [0, 0, 0, 0], "2": [0, 0, 0, 0], "4": [0, 0, 0, 0] },
    },
    predictions: null,
    importances: null,
    norm_stats: { mean: [0, 0, 0, 0, 0, 0], std: [1, 1, 1, 1, 1, 1] },
    climatology: [0, 0, 0, 0],
  };
}

export function explainAt(targetId: number, abs: Record<number, number>): ExplainResponse {
  return {
    target: { region: "Asia", time: 0, node_id: targetId, variable: "ALL" },
    epsilon: 1e-6,
    output_value: 1.0,
    conservation_residual: 0.001,
    nodes: Object.entries(abs).map(([id, a]) => ({ id: Number(id), signed: a, abs: a })),
  };
}
