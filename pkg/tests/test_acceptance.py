"""Acceptance suite: one test per exit criterion, one printed line each.

The heavyweight fixtures (the 200-snapshot default dataset and the five
trained models) are module-scoped and shared; run with `pytest -rA` to see
the printed lines for passing tests too.
"""

import dataclasses
import math
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from scipy import stats

from obsimpact.evaluate import (
    aggregate_impacts,
    dataset_samples,
    fidelity,
    model_metrics,
    persistence_metrics,
)
from obsimpact.geo import (
    EARTH_RADIUS_KM,
    GeoPoint,
    MetNode,
    NodeKind,
    build_graph,
    extract_context,
    haversine_km,
    kind_mask,
)
from obsimpact.lrp import (
    ExplainTarget,
    collect_impact_samples,
    lrp_explain,
    node_importance,
)
from obsimpact.model import TrainConfig, forward, gradient_check, init_model, train
from obsimpact.server import AppState, create_app
from obsimpact.synth import FieldSpec, build_dataset, split_and_normalize

SEEDS = (42, 1, 2, 3, 4)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def default_ds():
    ds = build_dataset(FieldSpec(seed=42), snapshots_per_region=50)
    return split_and_normalize(ds, 0.7)


@pytest.fixture(scope="module")
def trained(default_ds):
    models = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        model, _ = train(init_model(seed=seed), default_ds, TrainConfig(seed=seed))
        models[seed] = (model, time.perf_counter() - t0)
    return models


def _random_mixed_nodes(rng, n):
    clat, clon = rng.uniform(-60, 60), rng.uniform(-170, 170)
    nodes = []
    kinds = [NodeKind.GRID_POINT, NodeKind.SONDE, NodeKind.AIRCRAFT, NodeKind.GPSRO, NodeKind.ATMS]
    for i in range(n):
        kind = kinds[int(rng.integers(len(kinds)))] if i else NodeKind.GRID_POINT
        mask = kind_mask(kind)
        values = tuple(float(rng.normal()) if m else 0.0 for m in mask)
        lat = float(np.clip(clat + rng.normal(0, 0.6), -90, 90))
        lon = float(((clon + rng.normal(0, 0.6)) + 180.0) % 360.0 - 180.0)
        nodes.append(MetNode(i, kind, GeoPoint(lat, lon), 0, values, mask))
    return nodes


def test_geometry_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    # haversine vs an independently coded spherical law of cosines
    worst = 0.0
    for _ in range(1000):
        a = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180 - 1e-9)))
        b = GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180 - 1e-9)))
        p1, p2 = math.radians(a.lat), math.radians(b.lat)
        dl = math.radians(b.lon - a.lon)
        c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
        oracle = EARTH_RADIUS_KM * math.acos(min(1.0, max(-1.0, c)))
        worst = max(worst, abs(haversine_km(a, b) - oracle))

    # indexed construction vs O(n^2) brute force on 50 random instances
    all_equal = True
    for trial in range(50):
        nodes = _random_mixed_nodes(rng, 200)
        g = build_graph(nodes)
        lats = np.array([n.location.lat for n in nodes])
        lons = np.array([n.location.lon for n in nodes])
        p = np.radians(lats)
        l = np.radians(lons)
        cosd = np.sin(p)[:, None] * np.sin(p)[None, :] + np.cos(p)[:, None] * np.cos(p)[None, :] * np.cos(
            l[:, None] - l[None, :]
        )
        dist = EARTH_RADIUS_KM * np.arccos(np.clip(cosd, -1.0, 1.0))
        iu = np.triu_indices(len(nodes), k=1)
        brute = {
            (int(i), int(j)) for i, j in zip(*iu) if dist[i, j] <= 50.0
        }
        all_equal &= set(g.edges) == brute
    elapsed = time.perf_counter() - t0
    report(
        "geometry oracle",
        worst < 0.1 and all_equal and elapsed < 10.0,
        f"max |haversine - lawcos| = {worst:.2e} km; 50 brute-force instances equal = {all_equal}; {elapsed:.1f}s",
    )


def test_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(10):
        nodes = _random_mixed_nodes(rng, int(rng.integers(8, 21)))
        g = build_graph(nodes)
        m = init_model(seed=int(rng.integers(1 << 30)))
        n_grid = len(g.grid_ids())
        targets = rng.normal(size=(n_grid, 4))
        err = gradient_check(m, g, targets=targets, n_coords=10, rng_seed=trial)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    report(
        "gradient correctness",
        worst < 1e-4 and elapsed < 30.0,
        f"max relative error over 10 models = {worst:.2e}; {elapsed:.1f}s",
    )


def test_lrp_conservation_and_locality(default_ds):
    g_raw = default_ds.graphs[0]
    pos_nodes = tuple(
        dataclasses.replace(n, values=tuple(abs(v) for v in n.values)) for n in g_raw.nodes
    )
    g_pos = dataclasses.replace(g_raw, nodes=pos_nodes)

    worst_residual = 0.0
    monotone = True
    for seed in range(5):
        m = init_model(seed=seed)
        for arr in m.gcn_weights + [m.recon_w, m.reg_w]:
            arr[:] = np.abs(arr)
        _, _, cache = forward(m, g_pos)
        target = ExplainTarget(g_pos.grid_ids()[10 * seed], "ALL")
        residuals = [
            lrp_explain(m, g_pos, cache, target, epsilon=eps).conservation_residual()
            for eps in (1e-2, 1e-4, 1e-6)
        ]
        worst_residual = max(worst_residual, residuals[-1])
        monotone &= residuals[0] > residuals[1] > residuals[2]

    m = init_model(seed=99)
    _, _, cache = forward(m, g_raw)
    locality_exact = True
    for tid in g_raw.grid_ids()[::20]:
        rmap = lrp_explain(m, g_raw, cache, ExplainTarget(tid, "ALL"))
        context = {n.id for n in extract_context(g_raw, tid, 2).nodes}
        for row, node in enumerate(g_raw.nodes):
            if node.id not in context:
                locality_exact &= bool(np.all(rmap.rel[row] == 0.0))
    report(
        "lrp conservation + locality",
        worst_residual < 0.01 and monotone and locality_exact,
        f"residual@1e-6 = {worst_residual:.2e} (<1%); strictly decreasing = {monotone}; "
        f"locality exact = {locality_exact}",
    )


def test_end_to_end_skill(default_ds, trained):
    model, train_seconds = trained[42]
    hold = default_ds.holdout_indices()
    pers = persistence_metrics(default_ds, hold)
    mm = model_metrics(default_ds, model, hold)
    ok = mm.acc >= 0.7 and mm.rmse < pers.rmse and train_seconds < 600.0
    report(
        "end-to-end skill",
        ok,
        f"held-out ACC = {mm.acc:.3f} (>= 0.7); RMSE {mm.rmse:.3f} < persistence {pers.rmse:.3f}; "
        f"trained in {train_seconds:.0f}s (< 600s)",
    )


def test_fidelity_separation(default_ds, trained):
    samples = dataset_samples(default_ds, default_ds.holdout_indices())
    fps, fms = [], []
    for seed in SEEDS:
        rep = fidelity(trained[seed][0], samples, default_ds.climatology)
        fps.append(rep.fi_plus)
        fms.append(rep.fi_minus)
    fi_plus, fi_minus = float(np.mean(fps)), float(np.mean(fms))

    diffs = []
    for i in range(20):
        rep = fidelity(init_model(seed=1000 + i), samples, default_ds.climatology)
        diffs.append(rep.fi_plus - rep.fi_minus)
    positives = sum(d > 0 for d in diffs)
    n_nonzero = sum(d != 0 for d in diffs)
    p_value = stats.binomtest(positives, n_nonzero, 0.5).pvalue

    ok = fi_plus > fi_minus and fi_plus >= 2.0 * fi_minus and p_value > 0.01
    report(
        "fidelity separation",
        ok,
        f"trained mean fi+ = {fi_plus:.4f} vs fi- = {fi_minus:.4f} (ratio "
        f"{fi_plus / max(fi_minus, 1e-12):.1f}); untrained null sign-test p = {p_value:.3f} (> 0.01)",
    )


def test_aggregation_identities(default_ds, trained):
    model = trained[42][0]
    indices = default_ds.holdout_indices()[:8]
    samples = collect_impact_samples(model, [default_ds.graphs[i] for i in indices])
    means = {
        key: aggregate_impacts(samples, key, time_window=3, grid_cell_deg=2.0).weighted_mean()
        for key in ("observation_type", "region", "time_window", "grid_cell")
    }
    spread = max(means.values()) - min(means.values())

    # single-context aggregation returns the raw importance untouched
    dlat = 20.0 / (math.pi * EARTH_RADIUS_KM / 180.0)
    nodes = [
        MetNode(0, NodeKind.GRID_POINT, GeoPoint(0.0, 0.0), 0, (0.1, 0.2, 0.3, 0.4, 0, 0), kind_mask(NodeKind.GRID_POINT)),
        MetNode(1, NodeKind.SONDE, GeoPoint(dlat, 0.0), 0, (0.5, 0.5, 0.5, 0.5, 0, 0), kind_mask(NodeKind.SONDE)),
    ]
    g = build_graph(nodes)
    _, _, cache = forward(model, g)
    raw = node_importance(lrp_explain(model, g, cache, ExplainTarget(0, "ALL"))).abs_of(1)
    single = collect_impact_samples(model, [g])
    single_mean = aggregate_impacts(single, "observation_type").rows[0].mean
    single_ok = abs(single_mean - raw) < 1e-12

    report(
        "aggregation identities",
        spread < 1e-12 and single_ok,
        f"grand-mean spread across partitions = {spread:.1e} (< 1e-12); "
        f"single context mean == raw importance = {single_ok}",
    )


def test_api_contract(default_ds, trained):
    state = AppState(dataset=default_ds, model=trained[42][0])
    client = TestClient(create_app(state))

    checks = []
    regions = client.get("/api/regions")
    checks.append(regions.status_code == 200 and len(regions.json()) == 4)

    graph_a = client.get("/api/graph", params={"region": "Asia", "time": 40})
    graph_b = client.get("/api/graph", params={"region": "Asia", "time": 40})
    checks.append(graph_a.status_code == 200 and graph_a.content == graph_b.content)
    checks.append(client.get("/api/graph", params={"region": "Asia", "time": 999}).status_code == 404)

    nid = default_ds.graphs[default_ds.lookup("Asia", 40)].grid_ids()[0]
    exp_req = {"region": "Asia", "time": 40, "node_id": nid}
    e1 = client.post("/api/explain", json=exp_req)
    e2 = client.post("/api/explain", json=exp_req)
    checks.append(e1.status_code == 200 and e1.content == e2.content)

    imp = client.get("/api/impacts", params={"group_by": "observation_type", "region": "Asia",
                                             "time_from": 40, "time_to": 40})
    checks.append(imp.status_code == 200 and 1 <= len(imp.json()["rows"]) <= 11)

    fid = client.post("/api/fidelity", json={"region": "Asia"})
    checks.append(fid.status_code == 200 and fid.json()["n_graphs"] == 15)

    search = client.get("/api/observations/search", params={"type": "GPSRO", "time": 40})
    checks.append(search.status_code == 200 and all(r["kind"] == "GPSRO" for r in search.json()["results"]))

    ok = all(checks)
    report(
        "api contract",
        ok,
        f"{sum(checks)}/{len(checks)} endpoint example groups green against the demo dataset "
        "(full per-example suite in test_server.py)",
    )
