"""Continuous-time graph transformer encoder.

Each layer runs masked local attention over a node's incident temporal
events (event entries are built from edge features, both endpoint states,
and a sinusoidal embedding of the time gap), feeds the result through
unmasked global attention over all nodes of the subgraph, and combines
both through a feed-forward block with layer normalization, residuals
outside the normalization.

Subgraphs are encoded in packed batches: nodes, incidence entries, and
within-subgraph attention pairs of all batch items are concatenated with
index offsets, so every op works on one block-diagonal problem. The math
per subgraph is identical to encoding it alone.

Local attention scores an incident event by the dot product of the query
and key projections of the same event entry (self-similarity logits).
``conventional_local_queries`` switches the query side to the attending
node's state instead.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tgraph import SampledSubgraph


@dataclass(frozen=True)
class EncoderSettings:
    layers: int = 2
    heads: int = 4
    hidden: int = 128
    time_dim: int = 128
    feat_dim: int = 1
    degree_buckets: int = 256
    time_base: float = 10000.0
    time_scale: float = 1.0
    no_local_mha: bool = False
    no_global_mha: bool = False
    no_time_embed: bool = False
    conventional_local_queries: bool = False

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.time_dim % 2 != 0:
            raise ValueError("time_dim must be even")


def time_embed(dt: np.ndarray, d_time: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of non-negative time gaps.

    out[:, 2k] = sin(dt * w_k), out[:, 2k+1] = cos(dt * w_k) with
    w_k = base^(-2k / d_time). No learnable parameters; no gradient flows
    into dt.
    """
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("negative time gap (causality violation upstream)")
    if d_time % 2 != 0:
        raise ValueError("d_time must be even")
    k = np.arange(d_time // 2)
    omega = base ** (-2.0 * k / d_time)
    ang = dt.reshape(-1, 1) * omega[None, :]
    out = np.empty((len(ang), d_time))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


class PackedBatch:
    """Block-diagonal concatenation of sampled subgraphs.

    Incidence entries (one per event per endpoint, plus one synthetic
    self-loop entry per node with zero time gap and zero features) are
    grouped by attending node; global attention pairs enumerate node pairs
    within each subgraph, grouped by query node.
    """

    def __init__(self, subgraphs: list[SampledSubgraph]):
        if not subgraphs:
            raise ValueError("empty batch")
        self.subgraphs = subgraphs
        counts = np.array([s.n_nodes for s in subgraphs], dtype=np.int64)
        self.node_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.n_nodes = int(self.node_offsets[-1])
        feat_dim = subgraphs[0].e_feat.shape[1]

        att_node, att_other, att_feat, att_dt = [], [], [], []
        pair_q, pair_k = [], []
        deg, src_rows, dst_rows = [], [], []
        for i, sub in enumerate(subgraphs):
            off = int(self.node_offsets[i])
            n = sub.n_nodes
            non_self = sub.e_src != sub.e_dst
            a_node = np.concatenate(
                [sub.e_src, sub.e_dst[non_self], np.arange(n)]) + off
            a_other = np.concatenate(
                [sub.e_dst, sub.e_src[non_self], np.arange(n)]) + off
            a_feat = np.concatenate(
                [sub.e_feat, sub.e_feat[non_self], np.zeros((n, feat_dim))])
            a_dt = np.concatenate([sub.dt, sub.dt[non_self], np.zeros(n)])
            order = np.argsort(a_node, kind="stable")
            att_node.append(a_node[order])
            att_other.append(a_other[order])
            att_feat.append(a_feat[order])
            att_dt.append(a_dt[order])
            pair_q.append(np.repeat(np.arange(n), n) + off)
            pair_k.append(np.tile(np.arange(n), n) + off)
            deg.append(sub.degrees)
            src_rows.append(off + sub.local_src())
            dst_rows.append(off + sub.local_dst())

        self.att_node = np.ascontiguousarray(np.concatenate(att_node))
        self.att_other = np.ascontiguousarray(np.concatenate(att_other))
        self.att_feat = np.ascontiguousarray(np.concatenate(att_feat))
        self.att_dt = np.ascontiguousarray(np.concatenate(att_dt))
        self.pair_q = np.ascontiguousarray(np.concatenate(pair_q))
        self.pair_k = np.ascontiguousarray(np.concatenate(pair_k))
        self.degrees = np.ascontiguousarray(np.concatenate(deg))
        self.src_rows = np.asarray(src_rows, dtype=np.int64)
        self.dst_rows = np.asarray(dst_rows, dtype=np.int64)

        loc_counts = np.bincount(self.att_node, minlength=self.n_nodes)
        self.indptr_local = np.concatenate([[0], np.cumsum(loc_counts)]).astype(np.int64)
        self.seg_local = self.att_node  # entries sorted by attending node
        glob_counts = np.bincount(self.pair_q, minlength=self.n_nodes)
        self.indptr_glob = np.concatenate([[0], np.cumsum(glob_counts)]).astype(np.int64)
        self.seg_glob = self.pair_q

        self._phi_cache: dict[tuple, T.Tensor] = {}
        self._feat_tensor: T.Tensor | None = None

    def feat_tensor(self) -> T.Tensor:
        if self._feat_tensor is None:
            self._feat_tensor = T.Tensor(self.att_feat)
        return self._feat_tensor

    def phi_tensor(self, d_time: int, base: float, scale: float) -> T.Tensor:
        key = (d_time, base, scale)
        if key not in self._phi_cache:
            self._phi_cache[key] = T.Tensor(
                time_embed(self.att_dt * scale, d_time, base))
        return self._phi_cache[key]


def pack(subgraphs) -> PackedBatch:
    return PackedBatch(list(subgraphs))


class GraphEncoder:
    """Transformer encoder over packed subgraph batches.

    Two independent instances (own weights, own degree table) serve the ego
    and context views of each edge. Init streams are keyed by parameter
    name without the instance prefix, so both instances start from the same
    draw and only diverge through training; starting aligned keeps the
    ego-context readout difference driven by the center event rather than
    by arbitrary weight disagreement.
    """

    def __init__(self, settings: EncoderSettings, seed: int, prefix: str = "enc"):
        self.settings = settings
        self.prefix = prefix
        self.params: dict[str, T.Tensor] = {}
        s = settings
        d = s.hidden
        self._add("deg_table", T.glorot((s.degree_buckets, d), "deg_table", seed))
        d_in = s.feat_dim + 2 * d + (0 if s.no_time_embed else s.time_dim)
        for l in range(s.layers):
            if s.no_local_mha:
                self._p(l, "loc.bypass", (d, d), seed)
            else:
                self._p(l, "in.w1", (d_in, d), seed)
                self._b(l, "in.b1", d)
                self._p(l, "in.w2", (d, d), seed)
                self._b(l, "in.b2", d)
                for w in ("wq", "wk", "wv", "wo"):
                    self._p(l, f"loc.{w}", (d, d), seed)
            if not s.no_global_mha:
                for w in ("wq", "wk", "wv", "wo"):
                    self._p(l, f"glo.{w}", (d, d), seed)
            self._p(l, "ffn.w1", (d, 4 * d), seed)
            self._b(l, "ffn.b1", 4 * d)
            self._p(l, "ffn.w2", (4 * d, d), seed)
            self._b(l, "ffn.b2", d)
            self._add(f"l{l}.ln.gain", T.ones_param((d,)))
            self._add(f"l{l}.ln.bias", T.zeros_param((d,)))

    def _add(self, name: str, tensor: T.Tensor):
        self.params[name] = tensor

    def _p(self, layer: int, name: str, shape, seed: int):
        full = f"l{layer}.{name}"
        self._add(full, T.glorot(shape, full, seed))

    def _b(self, layer: int, name: str, dim: int):
        self._add(f"l{layer}.{name}", T.zeros_param((dim,)))

    def __getitem__(self, name: str) -> T.Tensor:
        return self.params[name]

    # -- spec surface -------------------------------------------------------

    def init_node_embeddings(self, packed: PackedBatch) -> T.Tensor:
        """Degree-bucket lookup: z0 row = table[min(causal degree, buckets-1)]."""
        buckets = np.minimum(packed.degrees, self.settings.degree_buckets - 1)
        return T.gather_rows(self["deg_table"], buckets)

    def local_mha(self, layer: int, z: T.Tensor, packed: PackedBatch) -> T.Tensor:
        s = self.settings
        if s.no_local_mha:
            return T.matmul(z, self[f"l{layer}.loc.bypass"])
        d, h = s.hidden, s.heads
        dh = d // h
        parts = [packed.feat_tensor(),
                 T.gather_rows(z, packed.att_node),
                 T.gather_rows(z, packed.att_other)]
        if not s.no_time_embed:
            parts.append(packed.phi_tensor(s.time_dim, s.time_base, s.time_scale))
        e_in = T.concat_last(parts)
        hid = T.relu(T.add(T.matmul(e_in, self[f"l{layer}.in.w1"]),
                           self[f"l{layer}.in.b1"]))
        e = T.add(T.matmul(hid, self[f"l{layer}.in.w2"]), self[f"l{layer}.in.b2"])

        if s.conventional_local_queries:
            q_all = T.gather_rows(T.matmul(z, self[f"l{layer}.loc.wq"]),
                                  packed.att_node)
        else:
            q_all = T.matmul(e, self[f"l{layer}.loc.wq"])
        k_all = T.matmul(e, self[f"l{layer}.loc.wk"])
        v_all = T.matmul(e, self[f"l{layer}.loc.wv"])
        heads = []
        inv = 1.0 / np.sqrt(dh)
        for i in range(h):
            q = T.slice_cols(q_all, i * dh, (i + 1) * dh)
            k = T.slice_cols(k_all, i * dh, (i + 1) * dh)
            v = T.slice_cols(v_all, i * dh, (i + 1) * dh)
            logits = T.scale(T.rowwise_dot(q, k), inv)
            att = T.segment_softmax(logits, packed.indptr_local)
            heads.append(T.segment_sum_rows(T.scale_rows(v, att),
                                            packed.indptr_local, packed.seg_local))
        return T.matmul(T.concat_last(heads), self[f"l{layer}.loc.wo"])

    def global_mha(self, layer: int, x: T.Tensor, packed: PackedBatch) -> T.Tensor:
        s = self.settings
        d, h = s.hidden, s.heads
        dh = d // h
        q_all = T.matmul(x, self[f"l{layer}.glo.wq"])
        k_all = T.matmul(x, self[f"l{layer}.glo.wk"])
        v_all = T.matmul(x, self[f"l{layer}.glo.wv"])
        heads = []
        inv = 1.0 / np.sqrt(dh)
        for i in range(h):
            q = T.gather_rows(T.slice_cols(q_all, i * dh, (i + 1) * dh), packed.pair_q)
            k = T.gather_rows(T.slice_cols(k_all, i * dh, (i + 1) * dh), packed.pair_k)
            v = T.gather_rows(T.slice_cols(v_all, i * dh, (i + 1) * dh), packed.pair_k)
            logits = T.scale(T.rowwise_dot(q, k), inv)
            att = T.segment_softmax(logits, packed.indptr_glob)
            heads.append(T.segment_sum_rows(T.scale_rows(v, att),
                                            packed.indptr_glob, packed.seg_glob))
        return T.matmul(T.concat_last(heads), self[f"l{layer}.glo.wo"])

    def encoder_layer(self, layer: int, z_prev: T.Tensor,
                      packed: PackedBatch) -> T.Tensor:
        z_loc = self.local_mha(layer, z_prev, packed)
        if self.settings.no_global_mha:
            s = z_loc
        else:
            s = T.add(z_loc, self.global_mha(layer, z_loc, packed))
        ffn = T.add(
            T.matmul(T.relu(T.add(T.matmul(s, self[f"l{layer}.ffn.w1"]),
                                  self[f"l{layer}.ffn.b1"])),
                     self[f"l{layer}.ffn.w2"]),
            self[f"l{layer}.ffn.b2"])
        normed = T.layer_norm(ffn, self[f"l{layer}.ln.gain"], self[f"l{layer}.ln.bias"])
        return T.add(normed, s)

    def encode_packed(self, packed: PackedBatch) -> T.Tensor:
        z = self.init_node_embeddings(packed)
        for l in range(self.settings.layers):
            z = self.encoder_layer(l, z, packed)
        return z

    def encode(self, subgraph: SampledSubgraph) -> T.Tensor:
        return self.encode_packed(pack([subgraph]))


def without_time_embedding(settings: EncoderSettings) -> EncoderSettings:
    return replace(settings, no_time_embed=True)
