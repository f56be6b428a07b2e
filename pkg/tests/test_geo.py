import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obsimpact.geo import (
    DEFAULT_REGIONS,
    EARTH_RADIUS_KM,
    GeoPoint,
    MetGraph,
    MetNode,
    NodeKind,
    Region,
    assign_region,
    build_graph,
    extract_context,
    graph_from_dict,
    graph_hash,
    graph_to_dict,
    haversine_km,
    kind_mask,
)

lat_st = st.floats(min_value=-90.0, max_value=90.0, allow_nan=False)
lon_st = st.floats(min_value=-180.0, max_value=179.999999, allow_nan=False)
point_st = st.builds(GeoPoint, lat_st, lon_st)


def lawcos_km(a: GeoPoint, b: GeoPoint) -> float:
    # Independent oracle: spherical law of cosines.
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_KM * math.acos(min(1.0, max(-1.0, c)))


def obs_node(nid, lat, lon, kind=NodeKind.GPSRO, t=0, value=0.5):
    values = tuple(value if m else 0.0 for m in kind_mask(kind))
    return MetNode(nid, kind, GeoPoint(lat, lon), t, values, kind_mask(kind))


class TestHaversine:
    def test_identity(self):
        p = GeoPoint(0.0, 0.0)
        assert haversine_km(p, p) == 0.0

    def test_quarter_circle(self):
        # (0,0) to (0,90) is a quarter of the circumference: pi * R / 2.
        d = haversine_km(GeoPoint(0.0, 0.0), GeoPoint(0.0, 90.0))
        assert d == pytest.approx(math.pi * EARTH_RADIUS_KM / 2.0, abs=1e-9)
        assert d == pytest.approx(10007.5572, abs=1e-3)

    def test_seoul_tokyo_against_law_of_cosines(self):
        a, b = GeoPoint(37.57, 126.98), GeoPoint(35.68, 139.69)
        assert abs(haversine_km(a, b) - lawcos_km(a, b)) < 0.1

    @given(point_st, point_st)
    def test_symmetry(self, a, b):
        assert haversine_km(a, b) == pytest.approx(haversine_km(b, a), abs=1e-12)

    @given(point_st, point_st)
    def test_nonnegative_and_zero_iff_same(self, a, b):
        d = haversine_km(a, b)
        assert d >= 0.0
        if (a.lat, a.lon) == (b.lat, b.lon):
            assert d == 0.0

    @given(point_st, point_st, point_st)
    @settings(max_examples=200)
    def test_triangle_inequality(self, a, b, c):
        assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9

    def test_ignores_pressure(self):
        a = GeoPoint(10.0, 20.0, 500.0)
        b = GeoPoint(10.0, 20.0, 850.0)
        assert haversine_km(a, b) == 0.0


class TestGeoPointValidation:
    @pytest.mark.parametrize("lat,lon", [(91, 0), (-91, 0), (0, 180), (0, -181)])
    def test_out_of_bounds(self, lat, lon):
        with pytest.raises(ValueError):
            GeoPoint(lat, lon)

    def test_nonpositive_pressure(self):
        with pytest.raises(ValueError):
            GeoPoint(0, 0, pressure_level=0.0)


class TestNodeKinds:
    def test_twelve_variants(self):
        assert len(NodeKind) == 12
        assert len([k for k in NodeKind if k.is_observation]) == 11

    def test_variable_sets(self):
        assert NodeKind.AIRCRAFT.variables == ("U", "V", "T")
        assert NodeKind.GPSRO.variables == ("BA",)
        assert NodeKind.SONDE.variables == ("U", "V", "T", "Q")
        for k in (NodeKind.AMV, NodeKind.AMSU_A, NodeKind.AMSR2, NodeKind.ATMS,
                  NodeKind.CRIS, NodeKind.GK2A, NodeKind.IASI, NodeKind.MHS):
            assert k.variables == ("TB",)

    def test_grid_mask(self):
        assert kind_mask(NodeKind.GRID_POINT) == (True, True, True, True, False, False)

    def test_node_mask_value_consistency(self):
        with pytest.raises(ValueError):
            MetNode(0, NodeKind.GPSRO, GeoPoint(0, 0), 0, (1, 0, 0, 0, 0.5, 0), kind_mask(NodeKind.GPSRO))

    def test_node_wrong_mask(self):
        with pytest.raises(ValueError):
            MetNode(0, NodeKind.GPSRO, GeoPoint(0, 0), 0, (0.5, 0, 0, 0, 0, 0), (True, False, False, False, False, False))


class TestAssignRegion:
    def test_seoul_in_asia(self):
        assert assign_region(GeoPoint(37.5, 127.0)).name == "Asia"

    def test_open_ocean_none(self):
        assert assign_region(GeoPoint(0.0, -30.0)) is None

    def test_london_in_europe(self):
        assert assign_region(GeoPoint(51.5, 0.0)).name == "Europe"

    def test_boxes_disjoint(self):
        rng = np.random.default_rng(0)
        for lat, lon in zip(rng.uniform(-90, 90, 2000), rng.uniform(-180, 180, 2000)):
            p = GeoPoint(float(lat), float(lon))
            hits = [r for r in DEFAULT_REGIONS if r.contains(p)]
            assert len(hits) <= 1


def _random_nodes(rng, n, lat_range=(-75, 75), lon_range=(-180, 179.99), spread=3.0):
    # Clustered so a useful number of pairs fall inside 50 km.
    clat = rng.uniform(*lat_range)
    clon = rng.uniform(-170, 170)
    lats = np.clip(clat + rng.normal(0, spread, n), -90, 90)
    lons = ((clon + rng.normal(0, spread, n)) + 180.0) % 360.0 - 180.0
    return [obs_node(i, float(lats[i]), float(lons[i])) for i in range(n)]


class TestBuildGraph:
    def test_edge_inside_radius(self):
        # 49.9 km north-south: 49.9 km / (km per degree)
        dlat = 49.9 / (math.pi * EARTH_RADIUS_KM / 180.0)
        g = build_graph([obs_node(0, 0.0, 0.0), obs_node(1, dlat, 0.0)])
        assert g.edges == ((0, 1),)

    def test_no_edge_outside_radius(self):
        dlat = 50.1 / (math.pi * EARTH_RADIUS_KM / 180.0)
        g = build_graph([obs_node(0, 0.0, 0.0), obs_node(1, dlat, 0.0)])
        assert g.edges == ()

    def test_matches_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            nodes = _random_nodes(rng, 200)
            g = build_graph(nodes)
            expected = {
                (a.id, b.id)
                for i, a in enumerate(nodes)
                for b in nodes[i + 1 :]
                if haversine_km(a.location, b.location) <= 50.0
            }
            assert set(g.edges) == expected

    def test_high_latitude_matches_bruteforce(self):
        # 0.5 deg lon cells span < 50 km up here; the index must widen.
        rng = np.random.default_rng(5)
        nodes = _random_nodes(rng, 120, lat_range=(68, 72), spread=1.0)
        g = build_graph(nodes)
        expected = {
            (a.id, b.id)
            for i, a in enumerate(nodes)
            for b in nodes[i + 1 :]
            if haversine_km(a.location, b.location) <= 50.0
        }
        assert set(g.edges) == expected

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            build_graph([obs_node(1, 0, 0), obs_node(1, 1, 1)])

    def test_mixed_time_steps_rejected(self):
        with pytest.raises(ValueError):
            build_graph([obs_node(0, 0, 0, t=0), obs_node(1, 0.1, 0, t=1)])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        nodes = _random_nodes(rng, 60)
        g1 = build_graph(nodes)
        shuffled = list(nodes)
        rng.shuffle(shuffled)
        g2 = build_graph(shuffled)
        assert g1 == g2

    def test_all_edges_within_radius(self):
        rng = np.random.default_rng(9)
        g = build_graph(_random_nodes(rng, 150))
        for i, j in g.edges:
            d = haversine_km(g.node_by_id(i).location, g.node_by_id(j).location)
            assert d <= g.radius_km


class TestExtractContext:
    def _line_graph(self, n, gap_km=30.0):
        dlat = gap_km / (math.pi * EARTH_RADIUS_KM / 180.0)
        nodes = [obs_node(i, i * dlat, 0.0) for i in range(n)]
        return build_graph(nodes)

    def test_isolated_target(self):
        nodes = [obs_node(0, 0.0, 0.0), obs_node(1, 40.0, 40.0)]
        g = build_graph(nodes)
        sub = extract_context(g, 0, hops=2)
        assert [n.id for n in sub.nodes] == [0]
        assert sub.edges == ()

    def test_one_hop_path(self):
        g = self._line_graph(3)
        sub = extract_context(g, 0, hops=1)
        assert [n.id for n in sub.nodes] == [0, 1]
        assert sub.edges == ((0, 1),)

    def test_matches_bfs_oracle(self):
        rng = np.random.default_rng(21)
        g = build_graph(_random_nodes(rng, 80, spread=1.0))
        adj = {n.id: set() for n in g.nodes}
        for i, j in g.edges:
            adj[i].add(j)
            adj[j].add(i)
        target = g.nodes[7].id
        reach = {target}
        frontier = {target}
        for _ in range(2):
            frontier = {nb for f in frontier for nb in adj[f]} - reach
            reach |= frontier
        sub = extract_context(g, target, hops=2)
        assert {n.id for n in sub.nodes} == reach

    def test_monotone_in_hops(self):
        g = self._line_graph(8)
        prev = set()
        for hops in range(1, 6):
            ids = {n.id for n in extract_context(g, 3, hops).nodes}
            assert prev <= ids
            prev = ids

    def test_unknown_target(self):
        g = self._line_graph(3)
        with pytest.raises(KeyError):
            extract_context(g, 99, hops=2)

    def test_ids_preserved(self):
        g = self._line_graph(5)
        sub = extract_context(g, 2, hops=1)
        assert [n.id for n in sub.nodes] == [1, 2, 3]


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        nodes = _random_nodes(rng, 40)
        g = build_graph(nodes, region=DEFAULT_REGIONS[0])
        doc = graph_to_dict(g)
        assert graph_from_dict(doc) == g

    def test_hash_changes_with_content(self):
        nodes = [obs_node(0, 0.0, 0.0), obs_node(1, 0.1, 0.0)]
        g1 = build_graph(nodes)
        g2 = build_graph([obs_node(0, 0.0, 0.0), obs_node(1, 0.2, 0.0)])
        assert graph_hash(g1) != graph_hash(g2)
        assert graph_hash(g1) == graph_hash(build_graph(nodes))

    def test_region_validation(self):
        with pytest.raises(ValueError):
            Region("Bad", 10.0, 0.0, 0.0, 1.0)
