"""Prediction metrics, occlusion fidelity, and impact aggregation tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geo import MetGraph, NodeKind
from .lrp import DEFAULT_EPSILON, ImpactSample, aggregate_contexts
from .model import Model, forward, grid_row_mask, targets_matrix
from .synth import Dataset


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    acc: float  # anomaly correlation, in [-1, 1]


def compute_metrics(
    pred: np.ndarray,
    truth: np.ndarray,
    climatology: Sequence[float],
) -> Metrics:
    """Pooled RMSE/MAE over nodes x variables, plus anomaly correlation.

    ACC is the Pearson correlation of (pred - climatology) against
    (truth - climatology), flattened over everything. Zero-variance anomaly
    vectors make the correlation undefined and raise.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth shapes differ")
    clim = np.asarray(climatology, dtype=float)
    diff = pred - truth
    rmse = float(np.sqrt((diff**2).mean()))
    mae = float(np.abs(diff).mean())
    pa = (pred - clim).ravel()
    ta = (truth - clim).ravel()
    pa = pa - pa.mean()
    ta = ta - ta.mean()
    denom = math.sqrt(float((pa**2).sum()) * float((ta**2).sum()))
    if denom == 0.0:
        raise ValueError("anomaly correlation undefined: zero-variance anomalies")
    acc = float((pa * ta).sum() / denom)
    return Metrics(rmse=rmse, mae=mae, acc=acc)


def occlude(g: MetGraph, node_ids: Iterable[int]) -> MetGraph:
    """Blank the selected observations: values zeroed, mask cleared.

    The node list and edge list keep their shape; message passing treats a
    fully-masked node as absent. Grid nodes carry the prediction targets
    and may never be occluded.
    """
    wanted = set(node_ids)
    unknown = wanted - set(n.id for n in g.nodes)
    if unknown:
        raise KeyError(f"unknown node ids: {sorted(unknown)}")
    for nid in wanted:
        if g.node_by_id(nid).kind is NodeKind.GRID_POINT:
            raise ValueError(f"cannot occlude grid target node {nid}")
    zeros = (0.0,) * 6
    blank = (False,) * 6
    nodes = tuple(
        replace(n, values=zeros, mask=blank) if n.id in wanted else n for n in g.nodes
    )
    return replace(g, nodes=nodes)


@dataclass(frozen=True)
class FidelityReport:
    """Mean prediction-quality drop after occluding top/bottom observations.

    fi_plus / fi_minus are ACC drops (original minus occluded); the RMSE
    increases are carried along as secondary diagnostics.
    """

    fi_plus: float
    fi_minus: float
    fraction: float
    n_targets: int
    n_graphs: int
    fi_plus_rmse: float
    fi_minus_rmse: float

    def to_dict(self) -> dict:
        return {
            "fi_plus": self.fi_plus,
            "fi_minus": self.fi_minus,
            "fraction": self.fraction,
            "n_targets": self.n_targets,
            "n_graphs": self.n_graphs,
            "fi_plus_rmse": self.fi_plus_rmse,
            "fi_minus_rmse": self.fi_minus_rmse,
        }


def _graph_metrics(m: Model, g: MetGraph, targets: Mapping, climatology) -> Metrics:
    pred, _, _ = forward(m, g)
    rows = grid_row_mask(g)
    return compute_metrics(pred[rows], targets_matrix(g, targets), climatology)


def fidelity(
    m: Model,
    samples: Sequence[tuple[MetGraph, Mapping[int, Sequence[float]]]],
    climatology: Sequence[float],
    impacts: Optional[Sequence[Mapping[int, float]]] = None,
    fraction: float = 0.2,
    epsilon: float = DEFAULT_EPSILON,
) -> FidelityReport:
    """Occlude the top / bottom `fraction` of observations by importance.

    `samples` pairs each graph with its targets map. `impacts`, when given,
    supplies per-graph {obs id: importance}; otherwise importances are
    aggregated from fresh explanations of every grid node. Graphs without
    observations are skipped; ranking ties break toward the lower node id.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    plus_drops, minus_drops = [], []
    plus_rmse, minus_rmse = [], []
    n_targets = 0
    n_graphs = 0
    for idx, (g, targets) in enumerate(samples):
        obs_ids = g.observation_ids()
        if not obs_ids:
            continue
        if impacts is not None:
            graph_impacts = impacts[idx]
        else:
            graph_impacts = aggregate_contexts(m, [g], epsilon=epsilon)
        ranked = sorted(obs_ids, key=lambda nid: (-graph_impacts.get(nid, 0.0), nid))
        k = math.ceil(fraction * len(obs_ids))
        top = ranked[:k]
        bottom = sorted(obs_ids, key=lambda nid: (graph_impacts.get(nid, 0.0), nid))[:k]

        base = _graph_metrics(m, g, targets, climatology)
        top_m = _graph_metrics(m, occlude(g, top), targets, climatology)
        bot_m = _graph_metrics(m, occlude(g, bottom), targets, climatology)
        plus_drops.append(base.acc - top_m.acc)
        minus_drops.append(base.acc - bot_m.acc)
        plus_rmse.append(top_m.rmse - base.rmse)
        minus_rmse.append(bot_m.rmse - base.rmse)
        n_targets += len(g.grid_ids())
        n_graphs += 1
    if n_graphs == 0:
        raise ValueError("no graphs with observations to evaluate")
    return FidelityReport(
        fi_plus=float(np.mean(plus_drops)),
        fi_minus=float(np.mean(minus_drops)),
        fraction=fraction,
        n_targets=n_targets,
        n_graphs=n_graphs,
        fi_plus_rmse=float(np.mean(plus_rmse)),
        fi_minus_rmse=float(np.mean(minus_rmse)),
    )


GROUP_KEYS = ("observation_type", "region", "time_window", "grid_cell")


@dataclass(frozen=True)
class ImpactRow:
    key: str
    mean: float
    count: int
    std: float


@dataclass(frozen=True)
class ImpactTable:
    group_key: str
    rows: tuple[ImpactRow, ...]

    def weighted_mean(self) -> float:
        total = sum(r.count for r in self.rows)
        if total == 0:
            return 0.0
        return sum(r.mean * r.count for r in self.rows) / total

    def to_dict(self) -> dict:
        return {
            "group_key": self.group_key,
            "rows": [
                {"key": r.key, "mean": r.mean, "count": r.count, "std": r.std}
                for r in self.rows
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["group_key", "key", "mean_impact", "count", "std"])
        for r in self.rows:
            writer.writerow([self.group_key, r.key, repr(r.mean), r.count, repr(r.std)])
        return buf.getvalue()


def aggregate_impacts(
    samples: Sequence[ImpactSample],
    group_key: str,
    time_window: int = 1,
    grid_cell_deg: float = 1.0,
) -> ImpactTable:
    """Group (observation, context) importance samples and summarize.

    Every group key partitions the same sample set, so the count-weighted
    grand mean is identical whichever key is chosen.
    """
    if group_key not in GROUP_KEYS:
        raise ValueError(f"unknown group key: {group_key!r} (expected one of {GROUP_KEYS})")
    if time_window < 1:
        raise ValueError("time_window must be at least 1")
    if not grid_cell_deg > 0:
        raise ValueError("grid_cell_deg must be positive")

    def key_of(s: ImpactSample) -> str:
        if group_key == "observation_type":
            return s.kind.value
        if group_key == "region":
            return s.region if s.region is not None else "(none)"
        if group_key == "time_window":
            return str(s.time_index // time_window)
        lat_cell = math.floor(s.lat / grid_cell_deg)
        lon_cell = math.floor(s.lon / grid_cell_deg)
        return f"{lat_cell},{lon_cell}"

    groups: dict[str, list[float]] = {}
    for s in samples:
        groups.setdefault(key_of(s), []).append(s.importance)

    def sort_key(k: str):
        if group_key == "time_window":
            return (int(k),)
        if group_key == "grid_cell":
            a, b = k.split(",")
            return (int(a), int(b))
        return (k,)

    rows = []
    for k in sorted(groups, key=sort_key):
        vals = np.asarray(groups[k])
        rows.append(ImpactRow(key=k, mean=float(vals.mean()), count=len(vals), std=float(vals.std())))
    return ImpactTable(group_key=group_key, rows=tuple(rows))


def dataset_samples(
    ds: Dataset, indices: Sequence[int]
) -> list[tuple[MetGraph, Mapping[int, Sequence[float]]]]:
    return [(ds.graphs[i], ds.snapshots[i].targets) for i in indices]


def persistence_metrics(ds: Dataset, indices: Sequence[int]) -> Metrics:
    """Score the no-model baseline: predict the background unchanged."""
    if ds.climatology is None:
        raise ValueError("dataset has no climatology; split_and_normalize it first")
    preds, truths = [], []
    for i in indices:
        snap = ds.snapshots[i]
        for node in snap.grid_nodes:
            preds.append(node.values[:4])
            truths.append(snap.targets[node.id])
    return compute_metrics(np.asarray(preds), np.asarray(truths), ds.climatology)


def model_metrics(ds: Dataset, m: Model, indices: Sequence[int]) -> Metrics:
    """Pooled model skill over the given snapshots."""
    if ds.climatology is None:
        raise ValueError("dataset has no climatology; split_and_normalize it first")
    preds, truths = [], []
    for i in indices:
        g = ds.graphs[i]
        pred, _, _ = forward(m, g)
        rows = grid_row_mask(g)
        preds.append(pred[rows])
        truths.append(targets_matrix(g, ds.snapshots[i].targets))
    return compute_metrics(np.vstack(preds), np.vstack(truths), ds.climatology)
