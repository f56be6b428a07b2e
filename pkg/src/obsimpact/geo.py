"""Geodesic geometry, region boxes, and spatial graph construction.

Nodes are observations or forecast-grid points on a single pressure level.
Edges connect every pair of nodes within a great-circle radius (50 km by
default), mirroring how an assimilation system lets observations influence
nearby grid points.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

EARTH_RADIUS_KM = 6371.0088
DEFAULT_RADIUS_KM = 50.0
KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0

VARIABLES = ("U", "V", "T", "Q", "BA", "TB")


class NodeKind(Enum):
    """Grid points plus the 11 observation source families."""

    GRID_POINT = "GridPoint"
    AIRCRAFT = "AIRCRAFT"
    GPSRO = "GPSRO"
    SONDE = "SONDE"
    AMV = "AMV"
    AMSU_A = "AMSU-A"
    AMSR2 = "AMSR2"
    ATMS = "ATMS"
    CRIS = "CrIS"
    GK2A = "GK2A"
    IASI = "IASI"
    MHS = "MHS"

    @property
    def one_hot_index(self) -> int:
        return _KIND_INDEX[self]

    @property
    def variables(self) -> tuple[str, ...]:
        return KIND_VARIABLES[self]

    @property
    def is_observation(self) -> bool:
        return self is not NodeKind.GRID_POINT


_KIND_INDEX = {kind: i for i, kind in enumerate(NodeKind)}

OBSERVATION_KINDS = tuple(k for k in NodeKind if k is not NodeKind.GRID_POINT)

# Physical variables each source reports, in the fixed slot order above.
KIND_VARIABLES: Mapping[NodeKind, tuple[str, ...]] = {
    NodeKind.GRID_POINT: ("U", "V", "T", "Q"),
    NodeKind.AIRCRAFT: ("U", "V", "T"),
    NodeKind.GPSRO: ("BA",),
    NodeKind.SONDE: ("U", "V", "T", "Q"),
    NodeKind.AMV: ("TB",),
    NodeKind.AMSU_A: ("TB",),
    NodeKind.AMSR2: ("TB",),
    NodeKind.ATMS: ("TB",),
    NodeKind.CRIS: ("TB",),
    NodeKind.GK2A: ("TB",),
    NodeKind.IASI: ("TB",),
    NodeKind.MHS: ("TB",),
}


def kind_mask(kind: NodeKind) -> tuple[bool, ...]:
    """Presence mask over the fixed [U, V, T, Q, BA, TB] slots for one kind."""
    present = KIND_VARIABLES[kind]
    return tuple(v in present for v in VARIABLES)


@dataclass(frozen=True)
class GeoPoint:
    """A location on the sphere at a single pressure level (hPa)."""

    lat: float
    lon: float
    pressure_level: float = 500.0

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if not self.pressure_level > 0:
            raise ValueError(f"pressure level must be positive: {self.pressure_level}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km; the pressure level is ignored."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class MetNode:
    """One graph node: a grid point or a single observation.

    `values` holds the six fixed slots [U, V, T, Q, BA, TB]; `mask` marks
    which slots the node actually reports. Slots outside the mask are zero.
    An observation whose mask is entirely false is "occluded": it stays in
    the graph but carries no readings.
    """

    id: int
    kind: NodeKind
    location: GeoPoint
    time_index: int
    values: tuple[float, ...]
    mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "mask", tuple(bool(m) for m in self.mask))
        if len(self.values) != len(VARIABLES) or len(self.mask) != len(VARIABLES):
            raise ValueError("values and mask must have six slots")
        for v, m in zip(self.values, self.mask):
            if not m and v != 0.0:
                raise ValueError("unmasked value slots must be zero")
        expected = kind_mask(self.kind)
        if self.kind is NodeKind.GRID_POINT:
            if self.mask != expected:
                raise ValueError("grid points must carry exactly [U, V, T, Q]")
        elif self.mask != expected and any(self.mask):
            raise ValueError(f"mask does not match the {self.kind.value} variable set")

    @property
    def is_occluded(self) -> bool:
        return not any(self.mask)


@dataclass(frozen=True)
class Region:
    """Named latitude/longitude box used to partition the data."""

    name: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if not self.lat_min < self.lat_max:
            raise ValueError("lat_min must be below lat_max")
        if not self.lon_min < self.lon_max:
            raise ValueError("lon_min must be below lon_max")

    def contains(self, p: GeoPoint) -> bool:
        return (
            self.lat_min <= p.lat <= self.lat_max
            and self.lon_min <= p.lon <= self.lon_max
        )


DEFAULT_REGIONS = (
    Region("Asia", 0.0, 60.0, 60.0, 150.0),
    Region("Europe", 35.0, 70.0, -10.0, 40.0),
    Region("NorthAmerica", 15.0, 70.0, -170.0, -50.0),
    Region("Australia", -45.0, -10.0, 110.0, 155.0),
)


def region_by_name(name: str, regions: Sequence[Region] = DEFAULT_REGIONS) -> Region:
    for r in regions:
        if r.name == name:
            return r
    raise ValueError(f"unknown region: {name!r}")


def assign_region(p: GeoPoint, regions: Sequence[Region] = DEFAULT_REGIONS) -> Optional[Region]:
    """Return the box containing `p`, or None (boxes are disjoint)."""
    for r in regions:
        if r.contains(p):
            return r
    return None


@dataclass(frozen=True)
class MetGraph:
    """Immutable spatial graph over one region and one time step.

    Nodes are stored sorted by id; edges are (id_i, id_j) pairs with
    id_i < id_j, sorted. `normalized` records whether node values have been
    z-scored by the owning dataset.
    """

    nodes: tuple[MetNode, ...]
    edges: tuple[tuple[int, int], ...]
    region: Optional[Region] = None
    time_index: int = 0
    radius_km: float = DEFAULT_RADIUS_KM
    normalized: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        if ids != sorted(ids):
            raise ValueError("nodes must be sorted by id")
        known = set(ids)
        for i, j in self.edges:
            if i >= j:
                raise ValueError(f"edge ({i}, {j}) must satisfy i < j")
            if i not in known or j not in known:
                raise ValueError(f"edge ({i}, {j}) references unknown node")

    @cached_property
    def index_of(self) -> Mapping[int, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def neighbors(self) -> Mapping[int, frozenset[int]]:
        adj: dict[int, set[int]] = {n.id: set() for n in self.nodes}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return {k: frozenset(v) for k, v in adj.items()}

    def node_by_id(self, node_id: int) -> MetNode:
        try:
            return self.nodes[self.index_of[node_id]]
        except KeyError:
            raise KeyError(f"unknown node id: {node_id}") from None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def grid_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.GRID_POINT]

    def observation_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind.is_observation]


def _lat_cell_span(radius_km: float, cell_deg: float) -> int:
    return max(1, math.ceil(radius_km / (cell_deg * KM_PER_DEG)))


def _lon_cell_span(radius_km: float, cell_deg: float, worst_abs_lat: float, n_lon_cells: int) -> int:
    width_km = cell_deg * KM_PER_DEG * math.cos(math.radians(min(worst_abs_lat, 90.0)))
    if width_km <= 0.0:
        return n_lon_cells // 2
    return min(n_lon_cells // 2, max(1, math.ceil(radius_km / width_km)))


def build_graph(
    nodes: Iterable[MetNode],
    radius_km: float = DEFAULT_RADIUS_KM,
    region: Optional[Region] = None,
    normalized: bool = True,
) -> MetGraph:
    """Connect every node pair within `radius_km` (inclusive), all kinds alike.

    Uses a 0.5-degree bucket index. The longitude neighborhood is widened
    near the poles where cells narrow, so the edge set matches a brute-force
    pairwise scan exactly.
    """
    nodes = sorted(nodes, key=lambda n: n.id)
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids")
    times = {n.time_index for n in nodes}
    if len(times) > 1:
        raise ValueError(f"nodes span several time steps: {sorted(times)}")
    time_index = times.pop() if times else 0

    cell_deg = 0.5
    n_lon_cells = int(round(360.0 / cell_deg))
    buckets: dict[tuple[int, int], list[int]] = {}
    cells: list[tuple[int, int]] = []
    for idx, node in enumerate(nodes):
        r = math.floor((node.location.lat + 90.0) / cell_deg)
        c = math.floor((node.location.lon + 180.0) / cell_deg) % n_lon_cells
        cells.append((r, c))
        buckets.setdefault((r, c), []).append(idx)

    lat_span = _lat_cell_span(radius_km, cell_deg)
    edges: list[tuple[int, int]] = []
    for idx, node in enumerate(nodes):
        r, c = cells[idx]
        for dr in range(-lat_span, lat_span + 1):
            rr = r + dr
            # Worst-case |lat| within the candidate row decides how many
            # longitude cells 'radius_km' can span there.
            band_edges = (abs(rr * cell_deg - 90.0), abs((rr + 1) * cell_deg - 90.0))
            lon_span = _lon_cell_span(radius_km, cell_deg, max(band_edges), n_lon_cells)
            for dc in range(-lon_span, lon_span + 1):
                cc = (c + dc) % n_lon_cells
                for jdx in buckets.get((rr, cc), ()):
                    if jdx <= idx:
                        continue
                    if haversine_km(node.location, nodes[jdx].location) <= radius_km:
                        edges.append((node.id, nodes[jdx].id))

    return MetGraph(
        nodes=tuple(nodes),
        edges=tuple(sorted(set(edges))),
        region=region,
        time_index=time_index,
        radius_km=radius_km,
        normalized=normalized,
    )


def extract_context(g: MetGraph, target_id: int, hops: int = 2) -> MetGraph:
    """Induced subgraph of everything within `hops` edges of the target.

    The default matches the model's two message-passing layers, i.e. the
    receptive field of one prediction.
    """
    if target_id not in g.index_of:
        raise KeyError(f"unknown node id: {target_id}")
    if hops < 1:
        raise ValueError("hops must be at least 1")
    seen = {target_id}
    frontier = deque([(target_id, 0)])
    while frontier:
        nid, depth = frontier.popleft()
        if depth == hops:
            continue
        for nb in g.neighbors[nid]:
            if nb not in seen:
                seen.add(nb)
                frontier.append((nb, depth + 1))
    kept_nodes = tuple(n for n in g.nodes if n.id in seen)
    kept_edges = tuple(e for e in g.edges if e[0] in seen and e[1] in seen)
    return replace(g, nodes=kept_nodes, edges=kept_edges)


def graph_to_dict(g: MetGraph) -> dict:
    """JSON-ready form of a graph; key order is the documented canonical order."""
    return {
        "region": None if g.region is None else {
            "name": g.region.name,
            "lat_min": g.region.lat_min,
            "lat_max": g.region.lat_max,
            "lon_min": g.region.lon_min,
            "lon_max": g.region.lon_max,
        },
        "time_index": g.time_index,
        "radius_km": g.radius_km,
        "normalized": g.normalized,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "lat": n.location.lat,
                "lon": n.location.lon,
                "pressure": n.location.pressure_level,
                "time": n.time_index,
                "values": list(n.values),
                "mask": list(n.mask),
            }
            for n in g.nodes
        ],
        "edges": [list(e) for e in g.edges],
    }


def graph_from_dict(doc: Mapping) -> MetGraph:
    region = None
    if doc.get("region") is not None:
        r = doc["region"]
        region = Region(r["name"], r["lat_min"], r["lat_max"], r["lon_min"], r["lon_max"])
    nodes = tuple(
        MetNode(
            id=n["id"],
            kind=NodeKind(n["kind"]),
            location=GeoPoint(n["lat"], n["lon"], n["pressure"]),
            time_index=n["time"],
            values=tuple(n["values"]),
            mask=tuple(n["mask"]),
        )
        for n in doc["nodes"]
    )
    return MetGraph(
        nodes=nodes,
        edges=tuple((e[0], e[1]) for e in doc["edges"]),
        region=region,
        time_index=doc["time_index"],
        radius_km=doc.get("radius_km", DEFAULT_RADIUS_KM),
        normalized=doc.get("normalized", True),
    )


def graph_hash(g: MetGraph) -> str:
    """Stable content hash used to detect stale activation caches."""
    payload = json.dumps(graph_to_dict(g), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
