"""ROC-AUC, test-set scoring, metric records, and embedding export.

AUC uses exact mid-rank tie averaging: sort scores ascending, average the
ranks of tied groups, then AUC = (sum of positive ranks - P(P+1)/2)/(P*N),
which equals P(s_pos > s_neg) + P(s_pos = s_neg)/2 over all pairs.

Scoring walks a split in fixed-size chunks with a fixed evaluation seed,
so results are independent of how training batched its data and
reproducible across runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import pack
from .objective import anomaly_scores
from .tgraph import EventStore, sample_subgraph

EVAL_CHUNK = 64


@dataclass(frozen=True)
class ScoredEdge:
    edge_id: int
    score: float
    label: int


def roc_auc(scores, labels=None) -> float:
    """Rank-based AUC with mid-rank tie handling.

    Accepts either a list of :class:`ScoredEdge` or (scores, labels) arrays.
    Requires at least one positive and one negative label.
    """
    if labels is None:
        scored = list(scores)
        scores = np.asarray([s.score for s in scored], dtype=np.float64)
        labels = np.asarray([s.label for s in scored], dtype=np.int64)
    else:
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"AUC needs both classes, got {n_pos} positives / {n_neg} negatives"
        )
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)  # mid-rank of the tie group
    pos_rank_sum = ranks[pos].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pair_readouts(model, store: EventStore, positions, eval_seed,
                   cache: dict | None = None):
    """Ego/context readout rows for the given edges (no tape, fixed seed)."""
    ego_subs, ctx_subs = [], []
    for pos in positions:
        pos = int(pos)
        key = pos
        if cache is not None and key in cache:
            ego, ctx = cache[key]
        else:
            # shared seed: both views draw from one stream so they differ
            # by the event at the center timestamp, not by resampling
            ego = sample_subgraph(store, pos, model.fanouts, True,
                                  rng_seed=[eval_seed, pos],
                                  shared_hop1_budget=model.shared_hop1_budget)
            ctx = sample_subgraph(store, pos, model.fanouts, False,
                                  rng_seed=[eval_seed, pos],
                                  shared_hop1_budget=model.shared_hop1_budget)
            if cache is not None:
                cache[key] = (ego, ctx)
        ego_subs.append(ego)
        ctx_subs.append(ctx)
    with T.no_grad():
        packed_ego = pack(ego_subs)
        packed_ctx = pack(ctx_subs)
        z_ego = model.enc_ego.encode_packed(packed_ego)
        z_ctx = model.enc_ctx.encode_packed(packed_ctx)
        h_ego = model.heads.readout(z_ego, packed_ego.src_rows, packed_ego.dst_rows)
        h_ctx = model.heads.readout(z_ctx, packed_ctx.src_rows, packed_ctx.dst_rows)
    return h_ego.data, h_ctx.data


def score_edges(model, store: EventStore, positions, eval_seed,
                cache: dict | None = None) -> np.ndarray:
    """Anomaly score per edge, deterministic for a fixed evaluation seed."""
    positions = np.asarray(positions, dtype=np.int64)
    s = model.heads.settings
    out = np.empty(len(positions))
    for lo in range(0, len(positions), EVAL_CHUNK):
        chunk = positions[lo:lo + EVAL_CHUNK]
        h_ego, h_ctx = _pair_readouts(model, store, chunk, eval_seed, cache)
        out[lo:lo + len(chunk)] = anomaly_scores(
            h_ego, h_ctx, orientation=s.orientation,
            no_ego_context=s.no_ego_context)
    return out


def auc_of_split(model, store: EventStore, positions, eval_seed,
                 cache: dict | None = None) -> float:
    scores = score_edges(model, store, positions, eval_seed, cache)
    return roc_auc(scores, store.labels[np.asarray(positions, dtype=np.int64)])


@dataclass
class MetricsRecord:
    dataset: str
    split: str
    auc: float
    n_edges: int
    n_anomalies: int
    score_mean: float
    score_min: float
    score_max: float
    n_labeled_anomalies: int
    ablations: dict
    seeds: dict
    runtime_seconds: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def evaluate(model, store: EventStore, positions, *, eval_seed,
             dataset: str = "", split: str = "test",
             n_labeled_anomalies: int = 0, ablations: dict | None = None,
             seeds: dict | None = None) -> MetricsRecord:
    """Score every edge of the split and report AUC plus score statistics."""
    positions = np.asarray(positions, dtype=np.int64)
    if len(positions) == 0:
        raise ValueError("empty split")
    started = time.perf_counter()
    scores = score_edges(model, store, positions, eval_seed)
    labels = store.labels[positions]
    auc = roc_auc(scores, labels)
    return MetricsRecord(
        dataset=dataset,
        split=split,
        auc=auc,
        n_edges=int(len(positions)),
        n_anomalies=int((labels == 1).sum()),
        score_mean=float(scores.mean()),
        score_min=float(scores.min()),
        score_max=float(scores.max()),
        n_labeled_anomalies=int(n_labeled_anomalies),
        ablations=dict(ablations or {}),
        seeds=dict(seeds or {}),
        runtime_seconds=time.perf_counter() - started,
    )


def export_embeddings(model, store: EventStore, positions, path,
                      eval_seed) -> None:
    """One row per edge: edge_id, label, then the components of the
    ego-minus-context representation, tab-separated."""
    positions = np.asarray(positions, dtype=np.int64)
    with open(path, "w") as fh:
        for lo in range(0, len(positions), EVAL_CHUNK):
            chunk = positions[lo:lo + EVAL_CHUNK]
            h_ego, h_ctx = _pair_readouts(model, store, chunk, eval_seed)
            x = h_ego - h_ctx
            for row, pos in enumerate(chunk):
                values = "\t".join(repr(float(v)) for v in x[row])
                fh.write(f"{int(store.edge_ids[pos])}\t"
                         f"{int(store.labels[pos])}\t{values}\n")
