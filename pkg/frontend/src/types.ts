// Payload shapes of the analysis service. The UI renders these bytes as-is
// (optionally denormalized with norm_stats) and never derives new numbers.

export type Variable = "U" | "V" | "T" | "Q" | "ALL";

export const VARIABLE_SLOTS = ["U", "V", "T", "Q", "BA", "TB"] as const;

export interface RegionInfo {
  name: string;
  lat_min: number;
  lat_max: number;
  lon_min: number;
  lon_max: number;
  snapshot_count: number;
}

export interface NodeDoc {
  id: number;
  kind: string;
  lat: number;
  lon: number;
  pressure: number;
  time: number;
  values: number[];
  mask: boolean[];
}

export interface GraphDoc {
  region: { name: string } | null;
  time_index: number;
  radius_km: number;
  normalized: boolean;
  nodes: NodeDoc[];
  edges: [number, number][];
  targets: Record<string, number[]>;
}

export interface NormStats {
  mean: number[];
  std: number[];
}

export interface GraphPayload {
  graph: GraphDoc;
  predictions: Record<string, number[]> | null;
  importances: Record<string, number> | null;
  norm_stats: NormStats | null;
  climatology: number[] | null;
}

export interface ExplainNode {
  id: number;
  signed: number;
  abs: number;
}

export interface ExplainResponse {
  target: { region: string; time: number; node_id: number; variable: string };
  epsilon: number;
  output_value: number;
  conservation_residual: number;
  nodes: ExplainNode[];
}

export interface ImpactRow {
  key: string;
  mean: number;
  count: number;
  std: number;
}

export interface ImpactTable {
  group_key: string;
  rows: ImpactRow[];
}

export interface MetricsDoc {
  rmse: number;
  mae: number;
  acc: number;
}

export interface WhatIfResponse {
  occluded: number[];
  before: MetricsDoc;
  after: MetricsDoc;
}

export interface SearchResult {
  id: number;
  kind: string;
  lat: number;
  lon: number;
  time_index: number;
  region: string;
}

export interface SearchResponse {
  total: number;
  results: SearchResult[];
}

export interface FidelityDoc {
  fi_plus: number;
  fi_minus: number;
  fraction: number;
  n_targets: number;
  n_graphs: number;
  fi_plus_rmse: number;
  fi_minus_rmse: number;
}

export interface JobDoc {
  id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  message: string;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
