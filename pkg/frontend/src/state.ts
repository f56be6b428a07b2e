// Single mutable view state with the selection rules enforced in one place:
// explanation targets must be grid nodes, the time index stays inside the
// dataset range, and the what-if occlusion set survives time scrubbing
// until explicitly cleared.

import type { NodeDoc, Variable } from "./types.js";

export type GroupKey = "observation_type" | "region" | "time_window" | "grid_cell";

export interface ViewState {
  region: string | null;
  time: number;
  maxTime: number;
  targetId: number | null;
  variable: Variable;
  groupBy: GroupKey;
  occlusion: Set<number>;
}

export type Listener = (state: ViewState) => void;

export class Store {
  readonly state: ViewState = {
    region: null,
    time: 0,
    maxTime: 0,
    targetId: null,
    variable: "ALL",
    groupBy: "observation_type",
    occlusion: new Set(),
  };

  private kinds = new Map<number, string>();
  private listeners: Listener[] = [];

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  /** Register the nodes of the currently shown graph for validation. */
  setGraphNodes(nodes: NodeDoc[]): void {
    this.kinds = new Map(nodes.map((n) => [n.id, n.kind]));
    if (this.state.targetId !== null && !this.kinds.has(this.state.targetId)) {
      this.state.targetId = null; // ids are per-snapshot
    }
  }

  setRegion(region: string, maxTime: number): void {
    if (region === this.state.region) return;
    this.state.region = region;
    this.state.maxTime = maxTime;
    this.state.time = Math.min(this.state.time, maxTime);
    this.state.targetId = null;
    this.state.occlusion = new Set(); // a new region means new node ids
    this.emit();
  }

  setTime(time: number): void {
    const clamped = Math.max(0, Math.min(this.state.maxTime, Math.round(time)));
    if (clamped === this.state.time) return;
    this.state.time = clamped;
    this.state.targetId = null; // ids are per-snapshot; occlusion persists
    this.emit();
  }

  /** Returns true when the node is a selectable explanation target. */
  selectTarget(nodeId: number): boolean {
    if (this.kinds.get(nodeId) !== "GridPoint") return false;
    this.state.targetId = nodeId;
    this.emit();
    return true;
  }

  clearTarget(): void {
    this.state.targetId = null;
    this.emit();
  }

  setVariable(v: Variable): void {
    this.state.variable = v;
    this.emit();
  }

  setGroupBy(key: GroupKey): void {
    this.state.groupBy = key;
    this.emit();
  }

  /** Toggle an observation in the what-if selection; grid nodes are refused. */
  toggleOcclusion(nodeId: number): boolean {
    const kind = this.kinds.get(nodeId);
    if (kind === undefined || kind === "GridPoint") return false;
    if (this.state.occlusion.has(nodeId)) {
      this.state.occlusion.delete(nodeId);
    } else {
      this.state.occlusion.add(nodeId);
    }
    this.emit();
    return true;
  }

  clearOcclusion(): void {
    this.state.occlusion = new Set();
    this.emit();
  }

  /** Occlusion ids present in the current graph (valid for /api/whatif). */
  occlusionInGraph(): number[] {
    return [...this.state.occlusion].filter((id) => this.kinds.has(id)).sort((a, b) => a - b);
  }
}
