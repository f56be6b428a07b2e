import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obsimpact.evaluate import (
    FidelityReport,
    ImpactTable,
    Metrics,
    aggregate_impacts,
    compute_metrics,
    dataset_samples,
    fidelity,
    model_metrics,
    occlude,
    persistence_metrics,
)
from obsimpact.geo import GeoPoint, MetNode, NodeKind, build_graph, kind_mask
from obsimpact.lrp import ImpactSample, collect_impact_samples
from obsimpact.model import forward, grid_row_mask, init_model, targets_matrix
from obsimpact.synth import split_and_normalize

from test_model import grid_node, obs_node, line_graph
from test_synth import tiny_dataset


@pytest.fixture(scope="module")
def demo():
    ds = split_and_normalize(tiny_dataset(n=4), 0.5)
    m = init_model(seed=8)
    return ds, m


class TestComputeMetrics:
    def test_perfect(self):
        truth = np.arange(12.0).reshape(3, 4)
        m = compute_metrics(truth, truth, [0, 0, 0, 0])
        assert m.rmse == 0.0 and m.mae == 0.0 and m.acc == pytest.approx(1.0)

    def test_constant_offset(self):
        truth = np.arange(12.0).reshape(3, 4)
        m = compute_metrics(truth + 0.1, truth, [0, 0, 0, 0])
        assert m.rmse == pytest.approx(0.1)
        assert m.mae == pytest.approx(0.1)
        assert m.acc == pytest.approx(1.0)

    def test_against_streaming_oracle(self):
        # independent one-pass (Welford-style) accumulation
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(1000, 4))
        truth = rng.normal(size=(1000, 4))
        clim = rng.normal(size=4)
        m = compute_metrics(pred, truth, clim)

        n = 0
        sq = ab = 0.0
        mean_p = mean_t = m2p = m2t = cov = 0.0
        for p, t, c in zip(pred.ravel(), truth.ravel(), np.tile(clim, 1000)):
            n += 1
            d = p - t
            sq += d * d
            ab += abs(d)
            pa, ta = p - c, t - c
            dp = pa - mean_p
            dt = ta - mean_t
            mean_p += dp / n
            mean_t += dt / n
            m2p += dp * (pa - mean_p)
            m2t += dt * (ta - mean_t)
            cov += dp * (ta - mean_t)
        assert m.rmse == pytest.approx(math.sqrt(sq / n), abs=1e-10)
        assert m.mae == pytest.approx(ab / n, abs=1e-10)
        assert m.acc == pytest.approx(cov / math.sqrt(m2p * m2t), abs=1e-10)

    def test_zero_variance_anomaly_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(np.ones((3, 4)), np.arange(12.0).reshape(3, 4), [0, 0, 0, 0])

    @given(st.integers(min_value=1, max_value=50), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50)
    def test_rmse_dominates_mae(self, n, seed):
        rng = np.random.default_rng(seed)
        pred = rng.normal(size=(n, 4))
        truth = rng.normal(size=(n, 4))
        try:
            m = compute_metrics(pred, truth, np.zeros(4))
        except ValueError:
            return
        assert m.rmse >= m.mae >= 0.0

    def test_invariant_under_reordering(self):
        rng = np.random.default_rng(3)
        pred = rng.normal(size=(20, 4))
        truth = rng.normal(size=(20, 4))
        perm = rng.permutation(20)
        a = compute_metrics(pred, truth, np.zeros(4))
        b = compute_metrics(pred[perm], truth[perm], np.zeros(4))
        assert a.rmse == pytest.approx(b.rmse, abs=1e-14)
        assert a.acc == pytest.approx(b.acc, abs=1e-14)


class TestOcclude:
    def test_empty_set_identity(self):
        g = line_graph(5)
        assert occlude(g, []) == g

    def test_gpsro_slots_cleared(self):
        g = build_graph([grid_node(0, 0, 0), obs_node(1, 0.1, 0.0, NodeKind.GPSRO, value=0.7)])
        out = occlude(g, [1])
        node = out.node_by_id(1)
        assert node.values == (0.0,) * 6
        assert node.mask == (False,) * 6
        assert out.edges == g.edges

    def test_idempotent(self):
        g = line_graph(6)
        ids = g.observation_ids()[:2]
        once = occlude(g, ids)
        assert occlude(once, ids) == once

    def test_grid_node_rejected(self):
        g = line_graph(4)
        with pytest.raises(ValueError):
            occlude(g, [g.grid_ids()[0]])

    def test_unknown_id_rejected(self):
        g = line_graph(4)
        with pytest.raises(KeyError):
            occlude(g, [999])

    def test_occlude_all_obs_equals_grid_only_graph(self, demo):
        # structural equivalence: a fully occluded sensor behaves exactly
        # like a graph that never contained it
        ds, m = demo
        g = ds.graphs[0]
        blanked = occlude(g, g.observation_ids())
        pred_occ, _, _ = forward(m, blanked)
        grid_only = build_graph(
            [n for n in g.nodes if n.kind is NodeKind.GRID_POINT],
            radius_km=g.radius_km,
            region=g.region,
        )
        pred_grid, _, _ = forward(m, grid_only)
        rows = [blanked.index_of[nid] for nid in grid_only.index_of]
        assert np.array_equal(pred_occ[rows], pred_grid)


class TestFidelity:
    def test_graphs_without_observations_skipped(self, demo):
        ds, m = demo
        g = ds.graphs[0]
        grid_only = build_graph(
            [n for n in g.nodes if n.kind is NodeKind.GRID_POINT], region=g.region
        )
        targets = ds.snapshots[0].targets
        rep = fidelity(m, [(grid_only, targets), (g, targets)], ds.climatology)
        assert rep.n_graphs == 1

    def test_all_skipped_rejected(self, demo):
        ds, m = demo
        g = ds.graphs[0]
        grid_only = build_graph(
            [n for n in g.nodes if n.kind is NodeKind.GRID_POINT], region=g.region
        )
        with pytest.raises(ValueError):
            fidelity(m, [(grid_only, ds.snapshots[0].targets)], ds.climatology)

    def test_fraction_validated(self, demo):
        ds, m = demo
        with pytest.raises(ValueError):
            fidelity(m, dataset_samples(ds, [0]), ds.climatology, fraction=0.0)

    def test_at_least_one_node_occluded(self, demo):
        # ceil guarantees a non-empty selection for any fraction > 0
        ds, m = demo
        rep = fidelity(m, dataset_samples(ds, [0]), ds.climatology, fraction=0.01)
        assert rep.n_graphs == 1
        assert rep.fi_plus != 0.0 or rep.fi_minus != 0.0 or rep.fi_plus == rep.fi_minus

    def test_tied_importances_give_equal_fi(self, demo):
        # with every importance tied, top-k and bottom-k are the same
        # ascending-id set, so the two drops coincide exactly
        ds, m = demo
        g, targets = dataset_samples(ds, [0])[0]
        ties = [{nid: 1.0 for nid in g.observation_ids()}]
        rep = fidelity(m, [(g, targets)], ds.climatology, impacts=ties)
        assert rep.fi_plus == rep.fi_minus
        assert rep.fi_plus_rmse == rep.fi_minus_rmse

    def test_report_fields(self, demo):
        ds, m = demo
        rep = fidelity(m, dataset_samples(ds, [0, 1]), ds.climatology)
        assert rep.fraction == 0.2
        assert rep.n_graphs == 2
        assert rep.n_targets == sum(len(ds.graphs[i].grid_ids()) for i in (0, 1))
        doc = rep.to_dict()
        assert set(doc) == {"fi_plus", "fi_minus", "fraction", "n_targets", "n_graphs",
                            "fi_plus_rmse", "fi_minus_rmse"}


def sample(obs_id, kind, lat, lon, t, region, imp):
    return ImpactSample(obs_id=obs_id, kind=kind, lat=lat, lon=lon,
                        time_index=t, region=region, target_id=0, importance=imp)


class TestAggregateImpacts:
    def test_single_observation_single_row(self):
        samples = [sample(1, NodeKind.SONDE, 10.0, 20.0, 0, "Asia", 0.5)] * 3
        table = aggregate_impacts(samples, "observation_type")
        assert len(table.rows) == 1
        row = table.rows[0]
        assert row.key == "SONDE" and row.mean == 0.5 and row.count == 3

    def test_two_types_arithmetic(self):
        samples = [
            sample(1, NodeKind.AIRCRAFT, 0, 0, 0, "Asia", 0.1),
            sample(2, NodeKind.GPSRO, 0, 0, 0, "Asia", 0.3),
            sample(2, NodeKind.GPSRO, 0, 0, 0, "Asia", 0.5),
        ]
        table = aggregate_impacts(samples, "observation_type")
        means = {r.key: r.mean for r in table.rows}
        assert means == {"AIRCRAFT": pytest.approx(0.1), "GPSRO": pytest.approx(0.4)}

    def test_three_context_mean(self):
        samples = [sample(7, NodeKind.ATMS, 0, 0, 0, "Asia", v) for v in (0.2, 0.4, 0.6)]
        table = aggregate_impacts(samples, "observation_type")
        assert table.rows[0].mean == pytest.approx(0.4)

    def test_degenerate_grid_cell_partition(self):
        rng = np.random.default_rng(1)
        samples = [
            sample(i, NodeKind.SONDE, float(rng.uniform(0, 5)), float(rng.uniform(0, 5)), 0, "Asia",
                   float(rng.uniform(0, 1)))
            for i in range(40)
        ]
        table = aggregate_impacts(samples, "grid_cell", grid_cell_deg=360.0)
        assert len(table.rows) == 1
        assert table.rows[0].mean == pytest.approx(np.mean([s.importance for s in samples]))

    def test_grand_weighted_mean_identical_across_partitions(self, demo):
        ds, m = demo
        samples = collect_impact_samples(m, [ds.graphs[i] for i in range(4)])
        means = []
        for key in ("observation_type", "region", "time_window", "grid_cell"):
            table = aggregate_impacts(samples, key, time_window=2, grid_cell_deg=2.0)
            # every grouping partitions the same (obs, context) sample set
            assert sum(r.count for r in table.rows) == len(samples)
            means.append(table.weighted_mean())
        for v in means[1:]:
            assert abs(v - means[0]) < 1e-12

    def test_unknown_group_key(self):
        with pytest.raises(ValueError):
            aggregate_impacts([], "satellite")

    def test_row_order_deterministic(self):
        samples = [
            sample(1, NodeKind.MHS, 0, 0, 5, "Asia", 0.1),
            sample(2, NodeKind.AMV, 0, 0, 1, "Asia", 0.2),
            sample(3, NodeKind.CRIS, 0, 0, 3, "Asia", 0.3),
        ]
        t = aggregate_impacts(samples, "time_window", time_window=2)
        assert [r.key for r in t.rows] == ["0", "1", "2"]
        t2 = aggregate_impacts(samples, "observation_type")
        assert [r.key for r in t2.rows] == sorted(["MHS", "AMV", "CrIS"])

    def test_csv_export(self):
        samples = [sample(1, NodeKind.SONDE, 0, 0, 0, "Asia", 0.25)]
        text = aggregate_impacts(samples, "region").to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "group_key,key,mean_impact,count,std"
        assert lines[1].startswith("region,Asia,0.25,1,")


class TestBaselines:
    def test_persistence_and_model_metrics(self, demo):
        ds, m = demo
        hold = ds.holdout_indices()
        pers = persistence_metrics(ds, hold)
        mm = model_metrics(ds, m, hold)
        assert pers.rmse > 0
        assert -1.0 <= mm.acc <= 1.0

    def test_unnormalized_dataset_rejected(self):
        ds = tiny_dataset(n=3)
        with pytest.raises(ValueError):
            persistence_metrics(ds, [0])
