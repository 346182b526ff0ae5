"""Synthetic anomaly injection via spectral clustering of the static graph.

Nodes are clustered on the symmetric-normalized Laplacian of the undirected
static projection (a pair is connected iff it shares at least one event,
unweighted). Anomalous edges then connect uniformly drawn nodes from
different clusters whose pair never interacts in the original data, each
placed at a uniformly random position in the time-sorted sequence with a
timestamp interpolated between its neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tgraph import ANOMALY, NORMAL, EventStore


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # node -> cluster id in [0, k)
    k: int


def round_half_away(x: float) -> int:
    """round() with halves away from zero, so counts are reproducible."""
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


def static_adjacency(store: EventStore) -> np.ndarray:
    """Unweighted symmetric adjacency of the static projection."""
    n = store.n_nodes
    a = np.zeros((n, n))
    a[store.src, store.dst] = 1.0
    a[store.dst, store.src] = 1.0
    np.fill_diagonal(a, 0.0)
    return a


def smallest_eigenvectors(laplacian: np.ndarray, k: int, seed,
                          tol: float = 1e-8, max_iter: int = 5000) -> np.ndarray:
    """k eigenvectors of smallest eigenvalue by orthogonal iteration.

    Iterates on a spectral shift of the Laplacian (eigenvalues of the
    symmetric-normalized Laplacian lie in [0, 2], so 2I - L has the sought
    subspace as its dominant one), re-orthonormalizing each step, until the
    subspace residual drops below ``tol`` or the iteration cap is hit.
    """
    n = laplacian.shape[0]
    b = 2.0 * np.eye(n) - laplacian
    rng = np.random.default_rng(seed)
    v, _ = np.linalg.qr(rng.normal(size=(n, k)))
    for _ in range(max_iter):
        w = b @ v
        v_new, _ = np.linalg.qr(w)
        # fix QR sign ambiguity for a deterministic residual path
        signs = np.sign(np.sum(v_new * v, axis=0))
        signs[signs == 0] = 1.0
        v_new *= signs
        v = v_new
        bv = b @ v
        resid = bv - v @ (v.T @ bv)
        if np.linalg.norm(resid) <= tol * max(1.0, np.linalg.norm(bv)):
            break
    return v


def _kmeans(x: np.ndarray, k: int, rng, max_iter: int = 100,
            tol: float = 1e-6) -> np.ndarray:
    """Seeded k-means with k-means++ initialization."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dist.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = x[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        shift = np.linalg.norm(new_centers - centers)
        centers = new_centers
        if shift <= tol:
            break
    return assign


def spectral_cluster(store: EventStore, k: int, seed) -> ClusterAssignment:
    """Cluster nodes of the static projection into k groups.

    Isolated nodes carry a zero spectral embedding row and land on the
    nearest centroid; that is documented behavior, not an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > store.n_nodes:
        raise ValueError(f"k={k} exceeds node count {store.n_nodes}")
    if k == 1:
        return ClusterAssignment(np.zeros(store.n_nodes, dtype=np.int64), 1)
    a = static_adjacency(store)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = np.eye(store.n_nodes) - (inv_sqrt[:, None] * a) * inv_sqrt[None, :]
    emb = smallest_eigenvectors(lap, k, seed)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = np.where(norms > 0, emb / np.maximum(norms, 1e-300), 0.0)
    rng = np.random.default_rng([seed, 104729])
    labels = _kmeans(emb, k, rng)
    return ClusterAssignment(labels.astype(np.int64), k)


def interpolate_timestamp(prev_t: float, next_t: float, rng) -> float:
    """Uniform draw in [prev_t, next_t]; the value itself when degenerate."""
    if prev_t > next_t:
        raise ValueError(f"prev_t {prev_t} > next_t {next_t}")
    if prev_t == next_t:
        return float(prev_t)
    return float(rng.uniform(prev_t, next_t))


def count_eligible_pairs(store: EventStore, clusters: ClusterAssignment) -> int:
    sizes = np.bincount(clusters.labels, minlength=clusters.k)
    n = store.n_nodes
    cross_total = (n * n - int(np.sum(sizes.astype(np.int64) ** 2))) // 2
    existing = {
        (min(int(s), int(d)), max(int(s), int(d)))
        for s, d in zip(store.src, store.dst) if s != d
    }
    existing_cross = sum(
        1 for u, v in existing if clusters.labels[u] != clusters.labels[v]
    )
    return cross_total - existing_cross


def inject_anomalies(store: EventStore, rate: float, k: int, seed,
                     clusters: ClusterAssignment | None = None):
    """Return (store with injected anomalies, cluster assignment).

    Adds round(rate * |E|) edges between never-interacting cross-cluster
    node pairs, labels them anomalous and all originals normal, and leaves
    the output sorted by (t, edge_id). Injected edges carry zero features
    and edge ids above every original id.
    """
    if np.any(store.labels == ANOMALY):
        raise ValueError("store already contains labeled anomalies")
    if rate < 0:
        raise ValueError("rate must be >= 0")
    n_inject = round_half_away(rate * store.n_edges)
    labels = np.full(store.n_edges, NORMAL, dtype=np.int64)
    if clusters is None:
        clusters = spectral_cluster(store, k, seed)
    if n_inject == 0:
        return store.with_labels(labels), clusters

    eligible = count_eligible_pairs(store, clusters)
    if eligible < n_inject:
        raise ValueError(
            f"need {n_inject} cross-cluster non-edges, only {eligible} exist "
            f"(deficit {n_inject - eligible})"
        )

    existing = {
        (min(int(s), int(d)), max(int(s), int(d)))
        for s, d in zip(store.src, store.dst)
    }
    rng = np.random.default_rng([seed, 2])
    chosen = set()
    pairs = []
    while len(pairs) < n_inject:
        u = int(rng.integers(store.n_nodes))
        v = int(rng.integers(store.n_nodes))
        key = (min(u, v), max(u, v))
        if (u == v or clusters.labels[u] == clusters.labels[v]
                or key in existing or key in chosen):
            continue
        chosen.add(key)
        pairs.append((u, v))

    m = store.n_edges
    new_t = np.empty(n_inject)
    for i in range(n_inject):
        gap = int(rng.integers(0, m + 1))
        prev_t = store.t[gap - 1] if gap > 0 else store.t[0]
        next_t = store.t[gap] if gap < m else store.t[m - 1]
        new_t[i] = interpolate_timestamp(prev_t, next_t, rng)

    src = np.concatenate([store.src, [u for u, _ in pairs]])
    dst = np.concatenate([store.dst, [v for _, v in pairs]])
    t = np.concatenate([store.t, new_t])
    feats = np.concatenate(
        [store.features, np.zeros((n_inject, store.feat_dim))], axis=0
    )
    out_labels = np.concatenate([labels, np.full(n_inject, ANOMALY, np.int64)])
    max_id = int(store.edge_ids.max())
    edge_ids = np.concatenate(
        [store.edge_ids, max_id + 1 + np.arange(n_inject, dtype=np.int64)]
    )
    out = EventStore(src, dst, t, feats, labels=out_labels, edge_ids=edge_ids,
                     n_nodes=store.n_nodes)
    return out, clusters


def write_cluster_tsv(path, clusters: ClusterAssignment) -> None:
    with open(path, "w") as fh:
        for node, cid in enumerate(clusters.labels):
            fh.write(f"{node}\t{int(cid)}\n")
