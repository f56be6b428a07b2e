// Main wiring: one Store, one ApiClient, and DOM panels. Every interaction
// issues exactly one API call; per-view LatestGates drop superseded
// responses when the user outpaces the network.

import { ApiClient, ApiError, LatestGate } from "./api.js";
import { computeContextModel, renderContext } from "./graphview.js";
import { computeMapModel, renderLegend, renderMap } from "./map.js";
import { barFractions, displayValues, formatMetrics, whatIfDelta } from "./metrics.js";
import { Store } from "./state.js";
import type { GroupKey } from "./state.js";
import type {
  ExplainResponse,
  GraphPayload,
  RegionInfo,
  SearchResult,
  Variable,
} from "./types.js";

const VARIABLES: Variable[] = ["ALL", "U", "V", "T", "Q"];
const GROUP_KEYS: GroupKey[] = ["observation_type", "region", "time_window", "grid_cell"];

class App {
  private api = new ApiClient();
  private store = new Store();
  private graphGate = new LatestGate();
  private explainGate = new LatestGate();
  private regions: RegionInfo[] = [];
  private payload: GraphPayload | null = null;
  private explanation: ExplainResponse | null = null;

  constructor(private root: Document) {}

  private el<T extends HTMLElement>(id: string): T {
    return this.root.getElementById(id) as T;
  }

  private status(text: string): void {
    this.el("status").textContent = text;
  }

  async start(): Promise<void> {
    try {
      this.regions = await this.api.regions();
    } catch (err) {
      this.status(err instanceof ApiError ? `service: ${err.message}` : String(err));
      return;
    }
    const regionSel = this.el<HTMLSelectElement>("region-select");
    regionSel.innerHTML = "";
    for (const r of this.regions) {
      const opt = this.root.createElement("option");
      opt.value = r.name;
      opt.textContent = `${r.name} (${r.snapshot_count})`;
      regionSel.appendChild(opt);
    }
    regionSel.addEventListener("change", () => this.pickRegion(regionSel.value));

    const varSel = this.el<HTMLSelectElement>("variable-select");
    for (const v of VARIABLES) {
      const opt = this.root.createElement("option");
      opt.value = v;
      opt.textContent = v;
      varSel.appendChild(opt);
    }
    varSel.addEventListener("change", () => {
      this.store.setVariable(varSel.value as Variable);
      if (this.store.state.targetId !== null) void this.explain(this.store.state.targetId);
    });

    const slider = this.el<HTMLInputElement>("time-slider");
    slider.addEventListener("input", () => {
      this.store.setTime(Number(slider.value));
      this.el("time-label").textContent = `t = ${this.store.state.time}`;
      void this.loadGraph();
    });

    this.el("whatif-run").addEventListener("click", () => void this.runWhatIf());
    this.el("whatif-clear").addEventListener("click", () => {
      this.store.clearOcclusion();
      this.refreshWhatIfPanel();
      this.redrawMap();
    });
    this.el("search-run").addEventListener("click", () => void this.runSearch());

    const groupSel = this.el<HTMLSelectElement>("group-select");
    for (const k of GROUP_KEYS) {
      const opt = this.root.createElement("option");
      opt.value = k;
      opt.textContent = k.replace("_", " ");
      groupSel.appendChild(opt);
    }
    groupSel.addEventListener("change", () => this.store.setGroupBy(groupSel.value as GroupKey));
    this.el("impacts-run").addEventListener("click", () => void this.loadImpacts());

    for (const tab of Array.from(this.root.querySelectorAll<HTMLElement>(".tab"))) {
      tab.addEventListener("click", () => {
        for (const other of Array.from(this.root.querySelectorAll(".tab"))) other.classList.remove("active");
        for (const panel of Array.from(this.root.querySelectorAll(".panel"))) panel.classList.remove("active");
        tab.classList.add("active");
        this.el(tab.dataset.panel!).classList.add("active");
      });
    }

    if (this.regions.length > 0) this.pickRegion(this.regions[0].name);
  }

  private pickRegion(name: string): void {
    const info = this.regions.find((r) => r.name === name);
    if (!info) return;
    this.store.setRegion(name, Math.max(0, info.snapshot_count - 1));
    const slider = this.el<HTMLInputElement>("time-slider");
    slider.max = String(this.store.state.maxTime);
    slider.value = String(this.store.state.time);
    this.el("time-label").textContent = `t = ${this.store.state.time}`;
    void this.loadGraph();
  }

  private async loadGraph(): Promise<void> {
    const { region, time } = this.store.state;
    if (region === null) return;
    this.explanation = null;
    this.explainGate.invalidate();
    this.status("loading graph ...");
    try {
      const payload = await this.graphGate.wrap(this.api.graph(region, time));
      if (payload === undefined) return; // superseded by a newer selection
      this.payload = payload;
      this.store.setGraphNodes(payload.graph.nodes);
      this.status(
        `${payload.graph.nodes.length} nodes, ${payload.graph.edges.length} edges` +
          (payload.predictions === null ? " · no model loaded" : ""),
      );
      this.redrawMap();
      this.refreshWhatIfPanel();
      this.el("context-svg").innerHTML = "";
      this.el("context-note").textContent = "click a grid node on the map to explain it";
    } catch (err) {
      this.status(err instanceof ApiError ? err.message : String(err));
    }
  }

  private redrawMap(): void {
    if (this.payload === null) return;
    const svg = this.el<HTMLElement>("map-svg") as unknown as SVGSVGElement;
    const model = computeMapModel(this.payload, this.explanation, this.store.state.occlusion);
    renderMap(svg, model, {
      onNodeClick: (id, shift) => this.onNodeClick(id, shift),
    });
    renderLegend(this.el("legend"), model.legend);
  }

  private onNodeClick(id: number, shift: boolean): void {
    if (this.payload === null) return;
    const node = this.payload.graph.nodes.find((n) => n.id === id);
    if (!node) return;
    this.showNodeCard(id);
    if (node.kind === "GridPoint") {
      if (this.store.selectTarget(id)) void this.explain(id);
      return;
    }
    if (shift) {
      this.store.toggleOcclusion(id);
      this.refreshWhatIfPanel();
      this.redrawMap();
    }
  }

  private showNodeCard(id: number): void {
    if (this.payload === null) return;
    const node = this.payload.graph.nodes.find((n) => n.id === id);
    if (!node) return;
    const parts = displayValues(node.values, node.mask, this.payload.norm_stats)
      .map((v) => `${v.slot}=${v.text}`)
      .join("  ");
    const impact = this.payload.importances?.[String(id)];
    this.el("node-card").textContent =
      `${node.kind} #${id} @ (${node.lat.toFixed(2)}, ${node.lon.toFixed(2)}) ` +
      `${parts}${impact !== undefined ? `  mean impact ${impact.toFixed(4)}` : ""}`;
  }

  private async explain(nodeId: number): Promise<void> {
    const { region, time, variable } = this.store.state;
    if (region === null || this.payload === null) return;
    this.status("explaining ...");
    try {
      const resp = await this.explainGate.wrap(this.api.explain(region, time, nodeId, variable));
      if (resp === undefined) return;
      this.explanation = resp;
      this.redrawMap();
      const svg = this.el<HTMLElement>("context-svg") as unknown as SVGSVGElement;
      const model = computeContextModel(this.payload.graph, resp);
      renderContext(svg, model, (id) => this.onNodeClick(id, false));
      this.el("context-note").textContent =
        `target #${nodeId} (${variable}) · output ${resp.output_value.toFixed(4)} · ` +
        `${model.nodes.length} nodes in context · residual ${resp.conservation_residual.toExponential(1)}`;
      this.status("explanation ready");
    } catch (err) {
      this.status(err instanceof ApiError ? err.message : String(err));
    }
  }

  private refreshWhatIfPanel(): void {
    const valid = this.store.occlusionInGraph();
    const total = this.store.state.occlusion.size;
    this.el("whatif-selection").textContent =
      total === 0
        ? "no observations selected (shift-click circles on the map)"
        : `${total} selected, ${valid.length} present in this snapshot`;
  }

  private async runWhatIf(): Promise<void> {
    const { region, time } = this.store.state;
    if (region === null) return;
    try {
      const resp = await this.api.whatif(region, time, this.store.occlusionInGraph());
      const delta = whatIfDelta(resp);
      this.el("whatif-before").textContent = `before: ${formatMetrics(resp.before)}`;
      this.el("whatif-after").textContent = `after:  ${formatMetrics(resp.after)}`;
      this.el("whatif-delta").textContent =
        `change: ΔRMSE ${delta.dRmse >= 0 ? "+" : ""}${delta.dRmse.toFixed(4)} · ` +
        `ΔACC ${delta.dAcc >= 0 ? "+" : ""}${delta.dAcc.toFixed(4)}`;
    } catch (err) {
      this.el("whatif-delta").textContent = err instanceof ApiError ? err.message : String(err);
    }
  }

  private async runSearch(): Promise<void> {
    const type = this.el<HTMLSelectElement>("search-type").value || undefined;
    const bbox = this.el<HTMLInputElement>("search-bbox").value.trim() || undefined;
    const timeText = this.el<HTMLInputElement>("search-time").value.trim();
    const list = this.el("search-results");
    list.innerHTML = "";
    try {
      const resp = await this.api.search({
        type,
        bbox,
        time: timeText === "" ? undefined : Number(timeText),
        limit: 50,
      });
      this.el("search-note").textContent = `${resp.total} match(es)`;
      for (const result of resp.results) {
        const li = this.root.createElement("li");
        li.textContent = `${result.kind} #${result.id} · ${result.region} t=${result.time_index} · ` +
          `(${result.lat.toFixed(2)}, ${result.lon.toFixed(2)})`;
        li.addEventListener("click", () => void this.jumpTo(result));
        list.appendChild(li);
      }
    } catch (err) {
      this.el("search-note").textContent = err instanceof ApiError ? err.message : String(err);
    }
  }

  private async jumpTo(result: SearchResult): Promise<void> {
    this.pickRegionAndTime(result.region, result.time_index);
    await this.loadGraph();
    this.showNodeCard(result.id);
  }

  private pickRegionAndTime(region: string, time: number): void {
    const regionSel = this.el<HTMLSelectElement>("region-select");
    if (this.store.state.region !== region) {
      regionSel.value = region;
      this.pickRegion(region);
    }
    this.store.setTime(time);
    const slider = this.el<HTMLInputElement>("time-slider");
    slider.value = String(this.store.state.time);
    this.el("time-label").textContent = `t = ${this.store.state.time}`;
  }

  private async loadImpacts(): Promise<void> {
    const from = this.el<HTMLInputElement>("impacts-from").value.trim();
    const to = this.el<HTMLInputElement>("impacts-to").value.trim();
    const container = this.el("impacts-table");
    container.innerHTML = "loading ...";
    try {
      const table = await this.api.impacts({
        group_by: this.store.state.groupBy,
        region: this.store.state.region ?? undefined,
        time_from: from === "" ? undefined : Number(from),
        time_to: to === "" ? undefined : Number(to),
      });
      container.innerHTML = "";
      const fractions = barFractions(table.rows.map((r) => r.mean));
      table.rows.forEach((row, i) => {
        const rowEl = this.root.createElement("div");
        rowEl.className = "impact-row";
        const label = this.root.createElement("span");
        label.className = "impact-key";
        label.textContent = row.key;
        const bar = this.root.createElement("span");
        bar.className = "impact-bar";
        bar.style.width = `${Math.round(fractions[i] * 240)}px`;
        const value = this.root.createElement("span");
        value.className = "impact-value";
        value.textContent = `${row.mean.toFixed(4)} (n=${row.count})`;
        rowEl.append(label, bar, value);
        container.appendChild(rowEl);
      });
      if (table.rows.length === 0) container.textContent = "no samples in this window";
    } catch (err) {
      container.textContent = err instanceof ApiError ? err.message : String(err);
    }
  }
}

export function initApp(root: Document): void {
  void new App(root).start();
}

if (typeof document !== "undefined" && document.getElementById("map-svg")) {
  initApp(document);
}
