"""Dataset ingestion: plain edge lists, JODIE interaction CSVs, and the
labeled TSV format written by the injection command.

Node ids are remapped to dense ids in first-appearance order; the mapping
is returned so callers can emit an inverse-lookup file. Timestamps and
features survive a write/read cycle exactly (shortest round-trip float
formatting).
"""

from __future__ import annotations

import numpy as np

from .tgraph import EventStore


class DatasetError(Exception):
    pass


def load_edge_list(path):
    """Whitespace-separated lines ``src dst [weight] timestamp``.

    Comment lines start with '%' or '#'. A weight column becomes a 1-dim
    edge feature; without one the feature is a 1-dim zero.
    Returns (EventStore, node_map original-token -> dense id).
    """
    node_map: dict[str, int] = {}
    src, dst, t, feat = [], [], [], []
    has_weight = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped[0] in "%#":
                continue
            parts = stripped.split()
            if len(parts) not in (3, 4):
                raise DatasetError(
                    f"{path}:{lineno}: expected 'src dst [weight] timestamp', "
                    f"got {len(parts)} fields")
            if has_weight is None:
                has_weight = len(parts) == 4
            elif has_weight != (len(parts) == 4):
                raise DatasetError(f"{path}:{lineno}: inconsistent column count")
            try:
                int(parts[0]), int(parts[1])  # node fields must be integers
                weight = float(parts[2]) if has_weight else 0.0
                stamp = float(parts[-1])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            for token in parts[:2]:
                if token not in node_map:
                    node_map[token] = len(node_map)
            src.append(node_map[parts[0]])
            dst.append(node_map[parts[1]])
            t.append(stamp)
            feat.append([weight])
    if not src:
        raise DatasetError(f"{path}: no edges found")
    store = EventStore(src, dst, t, np.asarray(feat), n_nodes=len(node_map))
    return store, node_map


def load_jodie_csv(path):
    """JODIE interaction format: header row, then
    ``user_id,item_id,timestamp,state_label,feature_1,...``.

    The graph is bipartite: item ids are offset into a node-id range
    disjoint from users. The state label becomes the edge's ground-truth
    anomaly label. Returns (EventStore, node_map).
    """
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    rows = []
    feat_arity = None
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DatasetError(f"{path}: empty file")
        for lineno, line in enumerate(fh, start=2):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split(",")
            if len(parts) < 4:
                raise DatasetError(
                    f"{path}:{lineno}: expected at least 4 columns, got {len(parts)}")
            feats = parts[4:]
            if feat_arity is None:
                feat_arity = len(feats)
            elif len(feats) != feat_arity:
                raise DatasetError(
                    f"{path}:{lineno}: feature arity {len(feats)} differs "
                    f"from earlier rows ({feat_arity})")
            try:
                stamp = float(parts[2])
                label = int(float(parts[3]))
                values = [float(v) for v in feats]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if parts[0] not in users:
                users[parts[0]] = len(users)
            if parts[1] not in items:
                items[parts[1]] = len(items)
            rows.append((users[parts[0]], items[parts[1]], stamp, label, values))
    if not rows:
        raise DatasetError(f"{path}: no interactions found")
    n_users = len(users)
    src = [r[0] for r in rows]
    dst = [n_users + r[1] for r in rows]
    t = [r[2] for r in rows]
    labels = [r[3] for r in rows]
    feat_dim = max(feat_arity, 1)
    feat = np.zeros((len(rows), feat_dim))
    if feat_arity:
        feat[:] = [r[4] for r in rows]
    node_map = {f"u:{k}": v for k, v in users.items()}
    node_map.update({f"i:{k}": n_users + v for k, v in items.items()})
    store = EventStore(src, dst, t, feat, labels=labels,
                       n_nodes=n_users + len(items))
    return store, node_map


LABELED_HEADER = "# dygad labeled edges v1: src dst t label features"


def save_labeled_tsv(store: EventStore, path) -> None:
    with open(path, "w") as fh:
        fh.write(LABELED_HEADER + "\n")
        for pos in range(store.n_edges):
            values = ",".join(repr(float(v)) for v in store.features[pos])
            fh.write(f"{int(store.src[pos])}\t{int(store.dst[pos])}\t"
                     f"{float(store.t[pos])!r}\t{int(store.labels[pos])}\t{values}\n")


def load_labeled_tsv(path) -> EventStore:
    src, dst, t, labels, feat = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 5:
                raise DatasetError(f"{path}:{lineno}: expected 5 tab-separated "
                                   f"fields, got {len(parts)}")
            try:
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
                t.append(float(parts[2]))
                labels.append(int(parts[3]))
                feat.append([float(v) for v in parts[4].split(",")])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not src:
        raise DatasetError(f"{path}: no edges found")
    return EventStore(src, dst, t, np.asarray(feat), labels=labels)


def write_node_map(path, node_map: dict) -> None:
    with open(path, "w") as fh:
        fh.write("# original_id\tdense_id\n")
        for token, dense in node_map.items():
            fh.write(f"{token}\t{dense}\n")


def load_node_map(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            token, dense = stripped.split("\t")
            out[token] = int(dense)
    return out
