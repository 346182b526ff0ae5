"""Temporal edge storage, causal neighbor queries, and subgraph sampling.

An :class:`EventStore` keeps timestamped interactions sorted by
``(t, edge_id)`` with a per-node CSR incidence index. Neighborhoods are
undirected: an event is incident to both endpoints, and direction survives
only in the event features. :func:`sample_subgraph` extracts the causal
k-hop neighborhood around a target edge with per-hop fan-out caps, either
including the event at the target's own timestamp (ego graph) or strictly
excluding it (context graph).

Local attention later adds one synthetic self-loop entry per node (time gap
0, zero features) so nodes without sampled events still attend to
themselves; those entries are materialized by the encoder, never stored in
``SampledSubgraph.events``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNLABELED = -1
NORMAL = 0
ANOMALY = 1


@dataclass(frozen=True)
class TemporalEdge:
    """One timestamped interaction."""
    edge_id: int
    src: int
    dst: int
    t: float
    features: np.ndarray
    label: int = UNLABELED


class EventStore:
    """Append-free, time-indexed collection of temporal edges.

    Immutable after construction; concurrent read-only sampling is safe.
    """

    def __init__(self, src, dst, t, features, labels=None, edge_ids=None,
                 n_nodes=None):
        src = np.ascontiguousarray(src, dtype=np.int64)
        dst = np.ascontiguousarray(dst, dtype=np.int64)
        t = np.ascontiguousarray(t, dtype=np.float64)
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(src):
            raise ValueError(
                f"features must be (n_edges, feat_dim), got {features.shape}"
            )
        if not (len(src) == len(dst) == len(t)):
            raise ValueError("src/dst/t length mismatch")
        if len(src) == 0:
            raise ValueError("empty event store")
        if not np.all(np.isfinite(t)):
            raise ValueError("timestamps must be finite")
        if labels is None:
            labels = np.full(len(src), UNLABELED, dtype=np.int64)
        else:
            labels = np.ascontiguousarray(labels, dtype=np.int64)
        if edge_ids is None:
            edge_ids = np.arange(len(src), dtype=np.int64)
        else:
            edge_ids = np.ascontiguousarray(edge_ids, dtype=np.int64)
        if len(np.unique(edge_ids)) != len(edge_ids):
            raise ValueError("edge ids must be unique")

        order = np.lexsort((edge_ids, t))
        self.src = src[order]
        self.dst = dst[order]
        self.t = t[order]
        self.features = features[order]
        self.labels = labels[order]
        self.edge_ids = edge_ids[order]
        self.n_edges = len(self.src)
        self.n_nodes = int(n_nodes) if n_nodes is not None else int(
            max(self.src.max(), self.dst.max()) + 1
        )
        self.feat_dim = features.shape[1]
        self._build_incidence()

    def _build_incidence(self):
        m = self.n_edges
        # interleave (src, dst) per position so entries are position-ordered,
        # then a stable sort by node keeps each slice (t, edge_id)-sorted
        nodes = np.empty(2 * m, dtype=np.int64)
        nodes[0::2] = self.src
        nodes[1::2] = self.dst
        pos = np.repeat(np.arange(m, dtype=np.int64), 2)
        keep = np.ones(2 * m, dtype=bool)
        keep[1::2] = self.src != self.dst  # self-interactions indexed once
        nodes, pos = nodes[keep], pos[keep]
        order = np.argsort(nodes, kind="stable")
        self.inc_edges = pos[order]
        counts = np.bincount(nodes, minlength=self.n_nodes)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.inc_times = self.t[self.inc_edges]

    def edge(self, pos: int) -> TemporalEdge:
        return TemporalEdge(
            edge_id=int(self.edge_ids[pos]),
            src=int(self.src[pos]),
            dst=int(self.dst[pos]),
            t=float(self.t[pos]),
            features=self.features[pos].copy(),
            label=int(self.labels[pos]),
        )

    def _check_node(self, node: int):
        if not (0 <= node < self.n_nodes):
            raise KeyError(f"unknown node {node}")

    def incident_before(self, node: int, t: float, strict: bool) -> np.ndarray:
        """Store positions of events at ``node`` with t_event < t (strict)
        or <= t, in (t, edge_id) order."""
        self._check_node(node)
        lo, hi = self.indptr[node], self.indptr[node + 1]
        side = "left" if strict else "right"
        cut = lo + np.searchsorted(self.inc_times[lo:hi], t, side=side)
        return self.inc_edges[lo:cut]

    def with_labels(self, labels: np.ndarray) -> "EventStore":
        return EventStore(self.src, self.dst, self.t, self.features,
                          labels=labels, edge_ids=self.edge_ids,
                          n_nodes=self.n_nodes)


def neighbors_before(store: EventStore, node: int, t: float,
                     strict: bool = False):
    """All events incident to ``node`` before the cutoff, with the opposite
    endpoint (the node itself for self-interactions)."""
    out = []
    for pos in store.incident_before(node, t, strict):
        s, d = int(store.src[pos]), int(store.dst[pos])
        other = d if s == node else s
        out.append((store.edge(pos), other))
    return out


def degree_at(store: EventStore, node: int, t: float) -> int:
    """Number of distinct incident events with t_event <= t (undirected)."""
    return int(len(store.incident_before(node, t, strict=False)))


@dataclass
class SampledSubgraph:
    """Causally sampled neighborhood around a target edge.

    ``nodes`` lists original node ids, center endpoints first; event
    endpoints are local indices into it. ``dt`` holds t_center - t_event.
    """
    center_pos: int
    center_edge: TemporalEdge
    nodes: np.ndarray
    hop_of_node: np.ndarray
    event_pos: np.ndarray
    e_src: np.ndarray
    e_dst: np.ndarray
    dt: np.ndarray
    e_feat: np.ndarray
    degrees: np.ndarray
    adjacency: list = field(repr=False, default_factory=list)
    # (node id, hop, events drawn) per sampling step, for cap audits
    draw_log: list = field(repr=False, default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_events(self) -> int:
        return len(self.e_src)

    def local_src(self) -> int:
        return 0

    def local_dst(self) -> int:
        return 0 if self.center_edge.src == self.center_edge.dst else 1


def sample_subgraph(store: EventStore, center_pos: int, fanouts,
                    include_center: bool, rng_seed,
                    shared_hop1_budget: bool = False) -> SampledSubgraph:
    """BFS neighbor sampling from both endpoints of the center edge.

    At hop h each frontier node contributes up to ``fanouts[h]`` incident
    events with t_event <= t_center (strictly earlier when
    ``include_center`` is false, which also drops the center edge and any
    simultaneous event). Uniform without replacement, deterministic for a
    fixed seed. With ``shared_hop1_budget`` the two endpoints draw hop-1
    events from a pooled candidate set under one cap.
    """
    if not len(fanouts):
        raise ValueError("fanouts must be non-empty")
    rng = np.random.default_rng(rng_seed)
    center = store.edge(center_pos)
    t_c = center.t
    strict = not include_center

    local_of = {center.src: 0}
    nodes = [center.src]
    hops = [0]
    if center.dst not in local_of:
        local_of[center.dst] = 1
        nodes.append(center.dst)
        hops.append(0)

    event_set = set()
    events = []
    if include_center:
        event_set.add(center_pos)
        events.append(center_pos)

    def draw(cands, cap):
        if len(cands) <= cap:
            return cands
        return np.sort(rng.choice(cands, size=cap, replace=False))

    draw_log = []
    frontier = list(nodes)
    for hop, cap in enumerate(fanouts, start=1):
        next_frontier = []

        def admit(pos):
            pos = int(pos)
            if pos not in event_set:
                event_set.add(pos)
                events.append(pos)
            for endpoint in (int(store.src[pos]), int(store.dst[pos])):
                if endpoint not in local_of:
                    local_of[endpoint] = len(nodes)
                    nodes.append(endpoint)
                    hops.append(hop)
                    next_frontier.append(endpoint)

        if hop == 1 and shared_hop1_budget:
            pools = [store.incident_before(n, t_c, strict) for n in frontier]
            cands = np.unique(np.concatenate(pools)) if pools else np.empty(0, np.int64)
            cands = cands[cands != center_pos]
            chosen = draw(cands, cap)
            draw_log.append((-1, hop, len(chosen)))
            for pos in chosen:
                admit(pos)
        else:
            for node in frontier:
                cands = store.incident_before(node, t_c, strict)
                cands = cands[cands != center_pos]
                chosen = draw(cands, cap)
                draw_log.append((node, hop, len(chosen)))
                for pos in chosen:
                    admit(pos)
        frontier = next_frontier
        if not frontier:
            break

    events = np.sort(np.asarray(events, dtype=np.int64))
    nodes_arr = np.asarray(nodes, dtype=np.int64)
    e_src = np.asarray([local_of[int(store.src[p])] for p in events], dtype=np.int64)
    e_dst = np.asarray([local_of[int(store.dst[p])] for p in events], dtype=np.int64)
    dt = t_c - store.t[events]
    e_feat = (store.features[events] if len(events)
              else np.zeros((0, store.feat_dim)))
    degrees = np.asarray([degree_at(store, int(n), t_c) for n in nodes_arr],
                         dtype=np.int64)
    adjacency = [[] for _ in nodes_arr]
    for k in range(len(events)):
        adjacency[e_src[k]].append(k)
        if e_dst[k] != e_src[k]:
            adjacency[e_dst[k]].append(k)

    return SampledSubgraph(
        center_pos=int(center_pos),
        center_edge=center,
        nodes=nodes_arr,
        hop_of_node=np.asarray(hops, dtype=np.int64),
        event_pos=events,
        e_src=e_src,
        e_dst=e_dst,
        dt=np.ascontiguousarray(dt),
        e_feat=np.ascontiguousarray(e_feat),
        degrees=degrees,
        adjacency=adjacency,
        draw_log=draw_log,
    )
