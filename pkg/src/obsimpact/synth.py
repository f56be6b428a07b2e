"""Synthetic atmosphere: smooth drifting fields, grid snapshots, noisy obs.

The ground truth for each base variable (U, V, T, Q) is a sum of Gaussian
bumps in lat/lon that advect eastward over time. Each region has a fixed
sampling tile (a small grid centered in its box); bump centers are seeded
in a strip extending upstream of every tile so the field stays lively over
the whole supported time range. Bending angle (BA) and brightness
temperature (TB) are fixed linear proxies of T and Q, so multi-source
observations stay informative about the regression targets without any
radiative-transfer physics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .geo import (
    DEFAULT_RADIUS_KM,
    DEFAULT_REGIONS,
    GeoPoint,
    MetGraph,
    MetNode,
    NodeKind,
    OBSERVATION_KINDS,
    Region,
    VARIABLES,
    build_graph,
    kind_mask,
)

BASE_VARIABLES = ("U", "V", "T", "Q")

# Proxies: BA = 0.1*T + 0.05*Q + 0.2, TB = T + 0.3*Q.
DERIVED_COEFFS = {
    "BA": {"T": 0.1, "Q": 0.05, "const": 0.2},
    "TB": {"T": 1.0, "Q": 0.3, "const": 0.0},
}

DEFAULT_GRID_SHAPE = (12, 12)
DEFAULT_GRID_SPACING_DEG = 0.45

# 60 obs per snapshot: 20% aircraft, 15% sonde, 10% GPS-RO, rest satellites.
DEFAULT_OBS_COUNTS = {
    "AIRCRAFT": 12,
    "SONDE": 9,
    "GPSRO": 6,
    "AMV": 5,
    "AMSU-A": 4,
    "AMSR2": 4,
    "ATMS": 4,
    "CrIS": 4,
    "GK2A": 4,
    "IASI": 4,
    "MHS": 4,
}

DEFAULT_NOISE_STD = {
    "AIRCRAFT": 0.08,
    "GPSRO": 0.05,
    "SONDE": 0.05,
    "AMV": 0.12,
    "AMSU-A": 0.10,
    "AMSR2": 0.12,
    "ATMS": 0.10,
    "CrIS": 0.08,
    "GK2A": 0.12,
    "IASI": 0.08,
    "MHS": 0.12,
}

# Time steps the bump strips are provisioned for; later steps drift off-field.
SUPPORTED_STEPS = 64

ID_STRIDE = 10_000


@dataclass(frozen=True)
class FieldSpec:
    """Parameters of the synthetic truth field.

    n_modes counts Gaussian bumps per variable per region tile. noise_std
    maps observation source names to the Gaussian noise applied to their
    readings (truth units).
    """

    seed: int = 42
    n_modes: int = 280
    amplitude_range: tuple[float, float] = (-2.0, 2.0)
    length_scale_deg: float = 2.5
    drift_deg_per_step: float = 2.5
    noise_std: tuple[tuple[str, float], ...] = tuple(sorted(DEFAULT_NOISE_STD.items()))

    def __post_init__(self) -> None:
        if isinstance(self.noise_std, Mapping):
            object.__setattr__(self, "noise_std", tuple(sorted(self.noise_std.items())))
        if self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")
        if not self.length_scale_deg > 0:
            raise ValueError("length_scale_deg must be positive")
        for name, std in self.noise_std:
            if std < 0:
                raise ValueError(f"negative noise std for {name}")
            if name not in DEFAULT_NOISE_STD:
                raise ValueError(f"unknown observation source: {name!r}")

    def noise_for(self, source: str) -> float:
        for name, std in self.noise_std:
            if name == source:
                return std
        raise ValueError(f"unknown observation source: {source!r}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_modes": self.n_modes,
            "amplitude_range": list(self.amplitude_range),
            "length_scale_deg": self.length_scale_deg,
            "drift_deg_per_step": self.drift_deg_per_step,
            "noise_std": dict(self.noise_std),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FieldSpec":
        return cls(
            seed=doc["seed"],
            n_modes=doc["n_modes"],
            amplitude_range=tuple(doc["amplitude_range"]),
            length_scale_deg=doc["length_scale_deg"],
            drift_deg_per_step=doc["drift_deg_per_step"],
            noise_std=tuple(sorted(doc["noise_std"].items())),
        )


@dataclass(frozen=True)
class Tile:
    """The fixed sampling window of one region: a small regular grid."""

    lat0: float
    lon0: float
    n_lat: int
    n_lon: int
    spacing_deg: float

    @property
    def lat_max(self) -> float:
        return self.lat0 + (self.n_lat - 1) * self.spacing_deg

    @property
    def lon_max(self) -> float:
        return self.lon0 + (self.n_lon - 1) * self.spacing_deg


def region_tile(
    region: Region,
    grid_shape: tuple[int, int] = DEFAULT_GRID_SHAPE,
    spacing_deg: float = DEFAULT_GRID_SPACING_DEG,
) -> Tile:
    """Grid tile centered in the region box."""
    n_lat, n_lon = grid_shape
    clat = (region.lat_min + region.lat_max) / 2.0
    clon = (region.lon_min + region.lon_max) / 2.0
    return Tile(
        lat0=clat - (n_lat - 1) * spacing_deg / 2.0,
        lon0=clon - (n_lon - 1) * spacing_deg / 2.0,
        n_lat=n_lat,
        n_lon=n_lon,
        spacing_deg=spacing_deg,
    )


@lru_cache(maxsize=64)
def _bump_table(spec: FieldSpec, var: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bump centers (at t=0) and amplitudes for one base variable.

    Centers are drawn per region tile inside a strip padded by 3 length
    scales and extended westward by the total drift over SUPPORTED_STEPS,
    so bumps keep passing over the tile as they advect east.
    """
    var_idx = BASE_VARIABLES.index(var)
    pad = 3.0 * spec.length_scale_deg
    upstream = spec.drift_deg_per_step * SUPPORTED_STEPS
    clats, clons, amps = [], [], []
    for tile_idx, region in enumerate(DEFAULT_REGIONS):
        tile = region_tile(region)
        rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, var_idx, tile_idx])
        clats.append(rng.uniform(tile.lat0 - pad, tile.lat_max + pad, spec.n_modes))
        clons.append(
            rng.uniform(tile.lon0 - pad - upstream, tile.lon_max + pad + spec.drift_deg_per_step, spec.n_modes)
        )
        lo, hi = spec.amplitude_range
        amps.append(rng.uniform(lo, hi, spec.n_modes))
    return np.concatenate(clats), np.concatenate(clons), np.concatenate(amps)


def _eval_base(spec: FieldSpec, var: str, lats: np.ndarray, lons: np.ndarray, t: int) -> np.ndarray:
    clat, clon, amp = _bump_table(spec, var)
    clon_t = clon + spec.drift_deg_per_step * t
    ell2 = 2.0 * spec.length_scale_deg**2
    d2 = (lats[:, None] - clat[None, :]) ** 2 + (lons[:, None] - clon_t[None, :]) ** 2
    return (amp[None, :] * np.exp(-d2 / ell2)).sum(axis=1)


def eval_field_array(spec: FieldSpec, var: str, lats: np.ndarray, lons: np.ndarray, t: int) -> np.ndarray:
    """Truth field values at many points; deterministic in (spec, var, t)."""
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    if var in BASE_VARIABLES:
        return _eval_base(spec, var, lats, lons, t)
    if var in DERIVED_COEFFS:
        coeffs = DERIVED_COEFFS[var]
        out = np.full(lats.shape, coeffs["const"], dtype=float)
        for base, c in coeffs.items():
            if base != "const":
                out += c * _eval_base(spec, base, lats, lons, t)
        return out
    raise ValueError(f"unknown variable: {var!r}")


def eval_field(spec: FieldSpec, var: str, p: GeoPoint, t: int) -> float:
    return float(eval_field_array(spec, var, np.array([p.lat]), np.array([p.lon]), t)[0])


def field_step_bound(spec: FieldSpec, var: str) -> float:
    """Upper bound on |field(t+1) - field(t)| at any point.

    A bump of amplitude a and scale l has gradient magnitude at most
    |a| * exp(-1/2) / l, and its center moves drift degrees per step.
    """
    if var in DERIVED_COEFFS:
        coeffs = DERIVED_COEFFS[var]
        return sum(c * field_step_bound(spec, base) for base, c in coeffs.items() if base != "const")
    _, _, amp = _bump_table(spec, var)
    max_grad = np.abs(amp).sum() * math.exp(-0.5) / spec.length_scale_deg
    return float(max_grad * spec.drift_deg_per_step)


@dataclass
class Snapshot:
    """One (region, time) sample: background grid, fresh obs, and truth targets.

    Grid node values hold the field at t-1 (the stand-in forecast
    background); observation values hold the field at t plus source noise;
    targets hold the true [U, V, T, Q] at t for every grid node.
    """

    region: Region
    time_index: int
    grid_nodes: tuple[MetNode, ...]
    obs_nodes: tuple[MetNode, ...]
    targets: dict[int, tuple[float, float, float, float]]
    normalized: bool = False

    @property
    def all_nodes(self) -> tuple[MetNode, ...]:
        return tuple(sorted(self.grid_nodes + self.obs_nodes, key=lambda n: n.id))


def make_snapshot(
    spec: FieldSpec,
    region: Region,
    grid_spacing_deg: float = DEFAULT_GRID_SPACING_DEG,
    obs_counts: Optional[Mapping[str, int]] = None,
    t: int = 0,
    rng_seed: int = 0,
    grid_shape: tuple[int, int] = DEFAULT_GRID_SHAPE,
    id_base: int = 0,
) -> Snapshot:
    """Sample the field into one snapshot of the region's tile.

    Observation locations are uniform over the tile so every observation
    can actually reach a grid point within the adjacency radius.
    """
    if not grid_spacing_deg > 0:
        raise ValueError("grid_spacing_deg must be positive")
    counts = dict(DEFAULT_OBS_COUNTS if obs_counts is None else obs_counts)
    known = {k.value for k in OBSERVATION_KINDS}
    for name in counts:
        if name not in known:
            raise ValueError(f"unknown observation source: {name!r}")

    tile = region_tile(region, grid_shape, grid_spacing_deg)
    glats = tile.lat0 + np.arange(tile.n_lat) * grid_spacing_deg
    glons = tile.lon0 + np.arange(tile.n_lon) * grid_spacing_deg
    lat_grid, lon_grid = [a.ravel() for a in np.meshgrid(glats, glons, indexing="ij")]

    background = {v: eval_field_array(spec, v, lat_grid, lon_grid, t - 1) for v in BASE_VARIABLES}
    truth = {v: eval_field_array(spec, v, lat_grid, lon_grid, t) for v in BASE_VARIABLES}

    grid_nodes = []
    targets: dict[int, tuple[float, float, float, float]] = {}
    gmask = kind_mask(NodeKind.GRID_POINT)
    for i in range(lat_grid.size):
        nid = id_base + i
        values = tuple(background[v][i] for v in BASE_VARIABLES) + (0.0, 0.0)
        grid_nodes.append(
            MetNode(
                id=nid,
                kind=NodeKind.GRID_POINT,
                location=GeoPoint(float(lat_grid[i]), float(lon_grid[i])),
                time_index=t,
                values=values,
                mask=gmask,
            )
        )
        targets[nid] = tuple(float(truth[v][i]) for v in BASE_VARIABLES)

    rng = np.random.default_rng(rng_seed & 0x7FFFFFFFFFFFFFFF)
    obs_nodes = []
    next_id = id_base + lat_grid.size
    for kind in OBSERVATION_KINDS:
        count = counts.get(kind.value, 0)
        if count == 0:
            continue
        olats = rng.uniform(tile.lat0, tile.lat_max, count)
        olons = rng.uniform(tile.lon0, tile.lon_max, count)
        sigma = spec.noise_for(kind.value)
        readings = {}
        for var in kind.variables:
            clean = eval_field_array(spec, var, olats, olons, t)
            readings[var] = clean + rng.normal(0.0, sigma, count)
        mask = kind_mask(kind)
        for i in range(count):
            values = tuple(
                float(readings[var][i]) if var in kind.variables else 0.0 for var in VARIABLES
            )
            obs_nodes.append(
                MetNode(
                    id=next_id,
                    kind=kind,
                    location=GeoPoint(float(olats[i]), float(olons[i])),
                    time_index=t,
                    values=values,
                    mask=mask,
                )
            )
            next_id += 1

    return Snapshot(
        region=region,
        time_index=t,
        grid_nodes=tuple(grid_nodes),
        obs_nodes=tuple(obs_nodes),
        targets=targets,
        normalized=False,
    )


@dataclass(frozen=True)
class NormStats:
    """Per-variable z-score statistics fit on the training split."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.mean) != len(VARIABLES) or len(self.std) != len(VARIABLES):
            raise ValueError("norm stats must cover the six variables")
        if any(s <= 0 for s in self.std):
            raise ValueError("normalization std must be positive")

    def normalize(self, value: float, var_idx: int) -> float:
        return (value - self.mean[var_idx]) / self.std[var_idx]

    def denormalize(self, value: float, var_idx: int) -> float:
        return value * self.std[var_idx] + self.mean[var_idx]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "NormStats":
        return cls(mean=tuple(doc["mean"]), std=tuple(doc["std"]))


class DegenerateVariableError(ValueError):
    """A variable present in the training split has zero variance."""


@dataclass
class Dataset:
    """Ordered snapshots plus the graphs built from them.

    `snapshots[i]` and `graphs[i]` are parallel. After split_and_normalize,
    norm_stats / climatology / the split time indices are populated and all
    values (including targets) are in z-score units.
    """

    spec: FieldSpec
    snapshots: tuple[Snapshot, ...]
    graphs: tuple[MetGraph, ...]
    regions: tuple[Region, ...]
    grid_shape: tuple[int, int] = DEFAULT_GRID_SHAPE
    grid_spacing_deg: float = DEFAULT_GRID_SPACING_DEG
    obs_counts: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_OBS_COUNTS))
    radius_km: float = DEFAULT_RADIUS_KM
    norm_stats: Optional[NormStats] = None
    climatology: Optional[tuple[float, float, float, float]] = None
    train_fraction: Optional[float] = None
    train_time_indices: tuple[int, ...] = ()
    holdout_time_indices: tuple[int, ...] = ()

    def time_indices(self) -> list[int]:
        return sorted({s.time_index for s in self.snapshots})

    def indices_for(self, time_indices: Sequence[int]) -> list[int]:
        wanted = set(time_indices)
        return [i for i, s in enumerate(self.snapshots) if s.time_index in wanted]

    def train_indices(self) -> list[int]:
        return self.indices_for(self.train_time_indices)

    def holdout_indices(self) -> list[int]:
        return self.indices_for(self.holdout_time_indices)

    def lookup(self, region_name: str, time_index: int) -> Optional[int]:
        for i, s in enumerate(self.snapshots):
            if s.region.name == region_name and s.time_index == time_index:
                return i
        return None


def build_dataset(
    spec: FieldSpec,
    regions: Sequence[Region] = DEFAULT_REGIONS,
    snapshots_per_region: int = 50,
    grid_shape: tuple[int, int] = DEFAULT_GRID_SHAPE,
    grid_spacing_deg: float = DEFAULT_GRID_SPACING_DEG,
    obs_counts: Optional[Mapping[str, int]] = None,
    radius_km: float = DEFAULT_RADIUS_KM,
) -> Dataset:
    """Generate snapshots for every region at t = 0..n-1 and wire up graphs.

    Per-snapshot RNG seeds derive from (spec.seed, region, t), so any
    snapshot can be regenerated independently and the whole dataset is
    bit-reproducible.
    """
    if snapshots_per_region > SUPPORTED_STEPS:
        raise ValueError(f"at most {SUPPORTED_STEPS} steps are supported per region")
    counts = dict(DEFAULT_OBS_COUNTS if obs_counts is None else obs_counts)
    snapshots: list[Snapshot] = []
    graphs: list[MetGraph] = []
    for t in range(snapshots_per_region):
        for r_idx, region in enumerate(regions):
            ordinal = t * len(regions) + r_idx
            seed_words = np.random.SeedSequence([spec.seed & 0x7FFFFFFF, r_idx, t]).generate_state(1)
            snap = make_snapshot(
                spec,
                region,
                grid_spacing_deg=grid_spacing_deg,
                obs_counts=counts,
                t=t,
                rng_seed=int(seed_words[0]),
                grid_shape=grid_shape,
                id_base=ordinal * ID_STRIDE,
            )
            snapshots.append(snap)
            graphs.append(
                build_graph(snap.all_nodes, radius_km=radius_km, region=region, normalized=False)
            )
    return Dataset(
        spec=spec,
        snapshots=tuple(snapshots),
        graphs=tuple(graphs),
        regions=tuple(regions),
        grid_shape=grid_shape,
        grid_spacing_deg=grid_spacing_deg,
        obs_counts=counts,
        radius_km=radius_km,
    )


def _normalize_node(node: MetNode, stats: NormStats) -> MetNode:
    values = tuple(
        stats.normalize(v, i) if m else 0.0 for i, (v, m) in enumerate(zip(node.values, node.mask))
    )
    return replace(node, values=values)


def split_and_normalize(ds: Dataset, train_fraction: float = 0.7) -> Dataset:
    """Split by time (earliest fraction trains) and z-score all values.

    Statistics pool every masked value slot of the training snapshots, per
    variable; targets are normalized with the same [U, V, T, Q] statistics.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if len(ds.snapshots) < 2:
        raise ValueError("need at least two snapshots to split")
    times = ds.time_indices()
    n_train = min(len(times) - 1, max(1, math.floor(train_fraction * len(times))))
    train_times = tuple(times[:n_train])
    holdout_times = tuple(times[n_train:])

    pools: list[list[float]] = [[] for _ in VARIABLES]
    target_pool: list[tuple[float, ...]] = []
    train_set = set(train_times)
    for snap in ds.snapshots:
        if snap.time_index not in train_set:
            continue
        for node in snap.grid_nodes + snap.obs_nodes:
            for i, (v, m) in enumerate(zip(node.values, node.mask)):
                if m:
                    pools[i].append(v)
        target_pool.extend(snap.targets.values())

    means, stds = [], []
    for i, pool in enumerate(pools):
        if not pool:
            means.append(0.0)
            stds.append(1.0)
            continue
        arr = np.asarray(pool)
        mean, std = float(arr.mean()), float(arr.std())
        if std < 1e-15:
            raise DegenerateVariableError(f"variable {VARIABLES[i]} is constant on the training split")
        means.append(mean)
        stds.append(std)
    stats = NormStats(mean=tuple(means), std=tuple(stds))

    t_arr = np.asarray(target_pool)
    climatology = tuple(
        float(stats.normalize(t_arr[:, i].mean(), i)) for i in range(len(BASE_VARIABLES))
    )

    new_snaps: list[Snapshot] = []
    new_graphs: list[MetGraph] = []
    for snap, graph in zip(ds.snapshots, ds.graphs):
        grid_nodes = tuple(_normalize_node(n, stats) for n in snap.grid_nodes)
        obs_nodes = tuple(_normalize_node(n, stats) for n in snap.obs_nodes)
        targets = {
            nid: tuple(stats.normalize(v, i) for i, v in enumerate(vals))
            for nid, vals in snap.targets.items()
        }
        new_snaps.append(
            Snapshot(
                region=snap.region,
                time_index=snap.time_index,
                grid_nodes=grid_nodes,
                obs_nodes=obs_nodes,
                targets=targets,
                normalized=True,
            )
        )
        nodes = tuple(sorted(grid_nodes + obs_nodes, key=lambda n: n.id))
        new_graphs.append(replace(graph, nodes=nodes, normalized=True))

    return replace(
        ds,
        snapshots=tuple(new_snaps),
        graphs=tuple(new_graphs),
        norm_stats=stats,
        climatology=climatology,
        train_fraction=train_fraction,
        train_time_indices=train_times,
        holdout_time_indices=holdout_times,
    )


def _snapshot_file_name(snap: Snapshot) -> str:
    return f"{snap.region.name.lower()}_{snap.time_index:04d}.json"


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    """Write meta.json plus one graph-with-targets JSON per snapshot."""
    from .geo import graph_to_dict

    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    entries = []
    for snap, graph in zip(ds.snapshots, ds.graphs):
        doc = graph_to_dict(graph)
        doc["targets"] = {str(nid): list(vals) for nid, vals in sorted(snap.targets.items())}
        name = _snapshot_file_name(snap)
        (out / "snapshots" / name).write_text(json.dumps(doc), encoding="utf-8")
        entries.append({"region": snap.region.name, "time_index": snap.time_index, "file": f"snapshots/{name}"})
    meta = {
        "field_spec": ds.spec.to_dict(),
        "regions": [
            {"name": r.name, "lat_min": r.lat_min, "lat_max": r.lat_max, "lon_min": r.lon_min, "lon_max": r.lon_max}
            for r in ds.regions
        ],
        "grid_shape": list(ds.grid_shape),
        "grid_spacing_deg": ds.grid_spacing_deg,
        "obs_counts": dict(ds.obs_counts),
        "radius_km": ds.radius_km,
        "norm_stats": None if ds.norm_stats is None else ds.norm_stats.to_dict(),
        "climatology": None if ds.climatology is None else list(ds.climatology),
        "split": None
        if ds.train_fraction is None
        else {
            "train_fraction": ds.train_fraction,
            "train_time_indices": list(ds.train_time_indices),
            "holdout_time_indices": list(ds.holdout_time_indices),
        },
        "snapshots": entries,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_dataset(data_dir: str | Path) -> Dataset:
    from .geo import graph_from_dict

    root = Path(data_dir)
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    regions = tuple(
        Region(r["name"], r["lat_min"], r["lat_max"], r["lon_min"], r["lon_max"]) for r in meta["regions"]
    )
    snapshots: list[Snapshot] = []
    graphs: list[MetGraph] = []
    for entry in meta["snapshots"]:
        doc = json.loads((root / entry["file"]).read_text(encoding="utf-8"))
        graph = graph_from_dict(doc)
        targets = {int(k): tuple(v) for k, v in doc["targets"].items()}
        grid_nodes = tuple(n for n in graph.nodes if n.kind is NodeKind.GRID_POINT)
        obs_nodes = tuple(n for n in graph.nodes if n.kind.is_observation)
        snapshots.append(
            Snapshot(
                region=graph.region,
                time_index=graph.time_index,
                grid_nodes=grid_nodes,
                obs_nodes=obs_nodes,
                targets=targets,
                normalized=graph.normalized,
            )
        )
        graphs.append(graph)
    split = meta.get("split")
    return Dataset(
        spec=FieldSpec.from_dict(meta["field_spec"]),
        snapshots=tuple(snapshots),
        graphs=tuple(graphs),
        regions=regions,
        grid_shape=tuple(meta["grid_shape"]),
        grid_spacing_deg=meta["grid_spacing_deg"],
        obs_counts=meta["obs_counts"],
        radius_km=meta["radius_km"],
        norm_stats=None if meta["norm_stats"] is None else NormStats.from_dict(meta["norm_stats"]),
        climatology=None if meta["climatology"] is None else tuple(meta["climatology"]),
        train_fraction=None if split is None else split["train_fraction"],
        train_time_indices=() if split is None else tuple(split["train_time_indices"]),
        holdout_time_indices=() if split is None else tuple(split["holdout_time_indices"]),
    )
