// Thin typed client. Every UI action maps to exactly one of these calls.
// Identical concurrent requests share one in-flight promise, and LatestGate
// lets a view drop responses that a newer selection has superseded.

import type {
  ExplainResponse,
  FidelityDoc,
  GraphPayload,
  ImpactTable,
  JobDoc,
  RegionInfo,
  SearchResponse,
  Variable,
  WhatIfResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let code = "http_error";
    let message = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      // non-JSON error body; keep the generic message
    }
    throw new ApiError(resp.status, code, message);
  }
  return resp.json() as Promise<T>;
}

export class ApiClient {
  private inflight = new Map<string, Promise<unknown>>();

  constructor(
    private baseUrl = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private dedupe<T>(key: string, start: () => Promise<T>): Promise<T> {
    const existing = this.inflight.get(key);
    if (existing) return existing as Promise<T>;
    const p = start().finally(() => this.inflight.delete(key));
    this.inflight.set(key, p);
    return p;
  }

  private getJson<T>(path: string): Promise<T> {
    return this.dedupe(`GET ${path}`, () =>
      this.fetchFn(this.baseUrl + path).then((r) => parseOrThrow<T>(r)),
    );
  }

  private postJson<T>(path: string, body: unknown): Promise<T> {
    const payload = JSON.stringify(body);
    return this.dedupe(`POST ${path} ${payload}`, () =>
      this.fetchFn(this.baseUrl + path, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: payload,
      }).then((r) => parseOrThrow<T>(r)),
    );
  }

  regions(): Promise<RegionInfo[]> {
    return this.getJson("/api/regions");
  }

  graph(region: string, time: number): Promise<GraphPayload> {
    return this.getJson(`/api/graph?region=${encodeURIComponent(region)}&time=${time}`);
  }

  explain(region: string, time: number, nodeId: number, variable: Variable): Promise<ExplainResponse> {
    return this.postJson("/api/explain", { region, time, node_id: nodeId, variable });
  }

  impacts(params: {
    group_by: string;
    region?: string;
    time_from?: number;
    time_to?: number;
    time_window?: number;
    grid_cell_deg?: number;
  }): Promise<ImpactTable> {
    const q = new URLSearchParams();
    for (const [k, v] of Object.entries(params)) {
      if (v !== undefined) q.set(k, String(v));
    }
    return this.getJson(`/api/impacts?${q.toString()}`);
  }

  whatif(region: string, time: number, nodeIds: number[]): Promise<WhatIfResponse> {
    return this.postJson("/api/whatif", { region, time, node_ids: nodeIds });
  }

  fidelity(region?: string, fraction?: number): Promise<FidelityDoc> {
    return this.postJson("/api/fidelity", { region, fraction });
  }

  search(params: { bbox?: string; type?: string; time?: number; region?: string; limit?: number }): Promise<SearchResponse> {
    const q = new URLSearchParams();
    for (const [k, v] of Object.entries(params)) {
      if (v !== undefined && v !== "") q.set(k, String(v));
    }
    return this.getJson(`/api/observations/search?${q.toString()}`);
  }

  job(id: string): Promise<JobDoc> {
    return this.getJson(`/api/jobs/${id}`);
  }
}

// Monotonic gate: wrap() tags a promise with a sequence number; a resolved
// value is forwarded only if no newer wrap() happened in the meantime.
export class LatestGate {
  private seq = 0;

  wrap<T>(p: Promise<T>): Promise<T | undefined> {
    const mine = ++this.seq;
    return p.then((value) => (mine === this.seq ? value : undefined));
  }

  invalidate(): void {
    this.seq++;
  }
}
