"""Epsilon-rule relevance propagation through a cached forward pass.

A prediction at one grid node is redistributed backwards, stage by stage
(regression head, then each graph-convolution layer), onto the 24 input
features of every node. Each affine stage splits a unit's relevance over
its incoming contributions z = A_hat[j,i] * H[i,f] * W[f,g], stabilized by
epsilon * sign(z_total); relu units that were inactive pass nothing; bias
relevance is absorbed. Summed per node, the input relevances say how much
each observation drove the explained prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .geo import MetGraph, MetNode, NodeKind, VARIABLES, extract_context, graph_hash
from .model import ActivationCache, Model, N_TARGETS, forward

EXPLAINABLE_VARIABLES = ("U", "V", "T", "Q", "ALL")
DEFAULT_EPSILON = 1e-6
CONTEXT_HOPS = 2  # matches the two message-passing layers


@dataclass(frozen=True)
class ExplainTarget:
    """Which grid node's prediction to explain, and which output channel."""

    node_id: int
    variable: str = "ALL"

    def __post_init__(self) -> None:
        if self.variable not in EXPLAINABLE_VARIABLES:
            raise ValueError(f"variable must be one of {EXPLAINABLE_VARIABLES}")

    def channels(self) -> list[int]:
        if self.variable == "ALL":
            return list(range(N_TARGETS))
        return [VARIABLES.index(self.variable)]


@dataclass
class RelevanceMap:
    """Per-(node, feature) relevance for one explanation target."""

    target: ExplainTarget
    epsilon: float
    node_ids: tuple[int, ...]
    rel: np.ndarray  # (n_nodes, 24)
    output_value: float

    def conservation_residual(self) -> float:
        """|sum relevance - explained output| / |output| (0 when output is 0)."""
        total = float(self.rel.sum())
        if self.output_value == 0.0:
            return abs(total)
        return abs(total - self.output_value) / abs(self.output_value)


@dataclass
class NodeImportance:
    """Row-sums of a relevance map: signed and absolute, per node."""

    node_ids: tuple[int, ...]
    signed: np.ndarray
    abs: np.ndarray

    def signed_of(self, node_id: int) -> float:
        return float(self.signed[self.node_ids.index(node_id)])

    def abs_of(self, node_id: int) -> float:
        return float(self.abs[self.node_ids.index(node_id)])


def _stabilized(z: np.ndarray, epsilon: float) -> np.ndarray:
    return z + epsilon * np.where(z >= 0.0, 1.0, -1.0)


def _propagate(m: Model, cache: ActivationCache, r_out: np.ndarray, epsilon: float) -> np.ndarray:
    """Pull relevance from the head output back to the input features.

    r_out may be (n, 4) for one target or (k, n, 4) for a batch; relevance
    flows identically because the denominators depend only on the cached
    forward pass.
    """
    a = cache.adjacency
    batched = r_out.ndim == 3

    def apply_adj(arr: np.ndarray) -> np.ndarray:
        if not batched:
            return a.apply(arr)
        k, n, f = arr.shape
        flat = np.moveaxis(arr, 1, 0).reshape(n, k * f)
        out = a.apply(flat)
        return np.moveaxis(out.reshape(n, k, f), 0, 1)

    # Regression head: plain affine, operator = identity.
    s = r_out / _stabilized(cache.pred, epsilon)
    rel = cache.posts[-1] * (s @ m.reg_w.T)

    # Graph-convolution stages, last to first. The stage input is H_{l}
    # (post-relu, or the raw features for l = 0); inactive relu units hold
    # zero relevance already, so the gate is implicit.
    for l in reversed(range(m.n_layers)):
        h_in = cache.x if l == 0 else cache.posts[l - 1]
        s = rel / _stabilized(cache.preacts[l], epsilon)
        rel = h_in * apply_adj(s @ m.gcn_weights[l].T)
    return rel


def _check_cache(g: MetGraph, cache: ActivationCache) -> None:
    if cache.graph_hash != graph_hash(g):
        raise ValueError("stale activation cache: graph content changed since forward()")


def lrp_explain(
    m: Model,
    g: MetGraph,
    cache: ActivationCache,
    target: ExplainTarget,
    epsilon: float = DEFAULT_EPSILON,
) -> RelevanceMap:
    """Relevance of every input feature for one grid-node prediction."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_cache(g, cache)
    node = g.node_by_id(target.node_id)
    if node.kind is not NodeKind.GRID_POINT:
        raise ValueError("explanation targets must be grid points")
    row = g.index_of[target.node_id]
    channels = target.channels()

    r_out = np.zeros_like(cache.pred)
    r_out[row, channels] = cache.pred[row, channels]
    rel = _propagate(m, cache, r_out, epsilon)
    return RelevanceMap(
        target=target,
        epsilon=epsilon,
        node_ids=tuple(n.id for n in g.nodes),
        rel=rel,
        output_value=float(cache.pred[row, channels].sum()),
    )


def lrp_explain_many(
    m: Model,
    g: MetGraph,
    cache: ActivationCache,
    node_ids: Sequence[int],
    variable: str = "ALL",
    epsilon: float = DEFAULT_EPSILON,
) -> list[RelevanceMap]:
    """Batched explanations; exactly equal to calling lrp_explain per target."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_cache(g, cache)
    targets = [ExplainTarget(nid, variable) for nid in node_ids]
    rows = []
    for t in targets:
        if g.node_by_id(t.node_id).kind is not NodeKind.GRID_POINT:
            raise ValueError("explanation targets must be grid points")
        rows.append(g.index_of[t.node_id])
    channels = targets[0].channels() if targets else []

    r_out = np.zeros((len(targets),) + cache.pred.shape)
    for k, row in enumerate(rows):
        r_out[k, row, channels] = cache.pred[row, channels]
    rel = _propagate(m, cache, r_out, epsilon)
    ids = tuple(n.id for n in g.nodes)
    return [
        RelevanceMap(
            target=t,
            epsilon=epsilon,
            node_ids=ids,
            rel=rel[k],
            output_value=float(cache.pred[rows[k], channels].sum()),
        )
        for k, t in enumerate(targets)
    ]


def node_importance(r: RelevanceMap) -> NodeImportance:
    return NodeImportance(
        node_ids=r.node_ids,
        signed=r.rel.sum(axis=1),
        abs=np.abs(r.rel).sum(axis=1),
    )


@dataclass(frozen=True)
class ImpactSample:
    """One (observation, explanation context) pairing and its importance."""

    obs_id: int
    kind: NodeKind
    lat: float
    lon: float
    time_index: int
    region: Optional[str]
    target_id: int
    importance: float


def collect_impact_samples(
    m: Model,
    graphs: Iterable[MetGraph],
    epsilon: float = DEFAULT_EPSILON,
) -> list[ImpactSample]:
    """Explain every grid node (variable ALL) of every graph and record the
    absolute importance of each observation inside that target's 2-hop
    context."""
    samples: list[ImpactSample] = []
    for g in graphs:
        obs_ids = set(g.observation_ids())
        grid_ids = g.grid_ids()
        if not grid_ids:
            continue
        _, _, cache = forward(m, g)
        maps = lrp_explain_many(m, g, cache, grid_ids, "ALL", epsilon)
        region = g.region.name if g.region is not None else None
        for target_id, rmap in zip(grid_ids, maps):
            imp = node_importance(rmap)
            context_ids = {n.id for n in extract_context(g, target_id, CONTEXT_HOPS).nodes}
            for oid in sorted(obs_ids & context_ids):
                node = g.node_by_id(oid)
                samples.append(
                    ImpactSample(
                        obs_id=oid,
                        kind=node.kind,
                        lat=node.location.lat,
                        lon=node.location.lon,
                        time_index=g.time_index,
                        region=region,
                        target_id=target_id,
                        importance=imp.abs_of(oid),
                    )
                )
    return samples


def aggregate_contexts(
    m: Model,
    ds_slice: Sequence[MetGraph],
    obs_selector: Optional[Callable[[MetNode], bool]] = None,
    epsilon: float = DEFAULT_EPSILON,
) -> dict[int, float]:
    """Mean absolute importance per observation over every context holding it.

    Observations that appear in no explanation context (or none at all)
    report an impact of exactly 0.
    """
    if not ds_slice:
        raise ValueError("empty dataset slice")
    samples = collect_impact_samples(m, ds_slice, epsilon)
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for s in samples:
        sums[s.obs_id] = sums.get(s.obs_id, 0.0) + s.importance
        counts[s.obs_id] = counts.get(s.obs_id, 0) + 1
    impacts: dict[int, float] = {}
    for g in ds_slice:
        for node in g.nodes:
            if node.kind is NodeKind.GRID_POINT:
                continue
            if obs_selector is not None and not obs_selector(node):
                continue
            nid = node.id
            impacts[nid] = sums[nid] / counts[nid] if counts.get(nid) else 0.0
    return impacts
