import numpy as np
import pytest

from dygad import tensor as T
from dygad.encoder import EncoderSettings, GraphEncoder, PackedBatch, pack, time_embed
from dygad.tgraph import EventStore, SampledSubgraph, TemporalEdge, sample_subgraph

from gradcheck import check_gradients, smooth_at_current_point


SMALL = EncoderSettings(layers=2, heads=2, hidden=8, time_dim=4, feat_dim=1)


def make_subgraph(n_nodes, e_src, e_dst, dt, feat=None, degrees=None,
                  center=(0, 1)):
    e_src = np.asarray(e_src, dtype=np.int64)
    e_dst = np.asarray(e_dst, dtype=np.int64)
    dt = np.asarray(dt, dtype=np.float64)
    if feat is None:
        feat = np.zeros((len(e_src), 1))
    if degrees is None:
        degrees = np.arange(n_nodes, dtype=np.int64) % 5
    edge = TemporalEdge(0, center[0], center[1], 10.0, np.zeros(feat.shape[1]))
    return SampledSubgraph(
        center_pos=0, center_edge=edge,
        nodes=np.arange(n_nodes, dtype=np.int64),
        hop_of_node=np.zeros(n_nodes, dtype=np.int64),
        event_pos=np.arange(len(e_src), dtype=np.int64),
        e_src=e_src, e_dst=e_dst, dt=dt,
        e_feat=np.asarray(feat, dtype=np.float64),
        degrees=np.asarray(degrees, dtype=np.int64),
    )


def random_subgraph(rng, n_nodes=5, n_events=7, feat_dim=1):
    e_src = rng.integers(0, n_nodes, n_events)
    e_dst = (e_src + 1 + rng.integers(0, n_nodes - 1, n_events)) % n_nodes
    dt = rng.uniform(0.0, 3.0, n_events)
    feat = rng.normal(size=(n_events, feat_dim))
    return make_subgraph(n_nodes, e_src, e_dst, dt, feat,
                         degrees=rng.integers(0, 10, n_nodes))


# ---------------------------------------------------------------------------
# time embedding

def test_time_embed_zero_gap():
    out = time_embed(np.array([0.0]), 8)
    np.testing.assert_array_equal(out[0], [0, 1, 0, 1, 0, 1, 0, 1])


def test_time_embed_half_pi():
    out = time_embed(np.array([np.pi / 2]), 2)
    np.testing.assert_allclose(out[0], [1.0, 6.123e-17], atol=1e-16)


def test_time_embed_unit_gap_d4():
    out = time_embed(np.array([1.0]), 4)
    expected = [np.sin(1), np.cos(1), np.sin(0.01), np.cos(0.01)]
    np.testing.assert_allclose(out[0], expected, rtol=1e-12)
    np.testing.assert_allclose(out[0], [0.84147, 0.54030, 0.0100, 0.99995],
                               atol=1e-5)


def test_time_embed_rejects_negative():
    with pytest.raises(ValueError, match="negative"):
        time_embed(np.array([-0.1]), 4)


# ---------------------------------------------------------------------------
# initial embeddings

def test_equal_degrees_share_rows_and_clamp():
    enc = GraphEncoder(SMALL, seed=0)
    sub = make_subgraph(4, [0, 2], [1, 3], [1.0, 2.0],
                        degrees=[3, 3, 0, 10 ** 6])
    z = enc.init_node_embeddings(pack([sub])).data
    np.testing.assert_array_equal(z[0], z[1])
    np.testing.assert_array_equal(z[2], enc["deg_table"].data[0])
    np.testing.assert_array_equal(z[3], enc["deg_table"].data[255])


# ---------------------------------------------------------------------------
# local MHA vs dense reference oracle

def dense_local_reference(enc, sub, z0):
    """Dense local attention: full node-by-entry logit matrix with -inf mask."""
    s = enc.settings
    packed = pack([sub])
    w1, b1 = enc["l0.in.w1"].data, enc["l0.in.b1"].data
    w2, b2 = enc["l0.in.w2"].data, enc["l0.in.b2"].data
    phi = time_embed(packed.att_dt * s.time_scale, s.time_dim, s.time_base)
    e_in = np.concatenate(
        [packed.att_feat, z0[packed.att_node], z0[packed.att_other], phi], axis=1)
    e = np.maximum(e_in @ w1 + b1, 0.0) @ w2 + b2
    dh = s.hidden // s.heads
    heads = []
    n, a = sub.n_nodes, len(packed.att_node)
    mask = np.where(packed.att_node[None, :] == np.arange(n)[:, None], 0.0, -np.inf)
    for i in range(s.heads):
        q = (e @ enc["l0.loc.wq"].data)[:, i * dh:(i + 1) * dh]
        k = (e @ enc["l0.loc.wk"].data)[:, i * dh:(i + 1) * dh]
        v = (e @ enc["l0.loc.wv"].data)[:, i * dh:(i + 1) * dh]
        logits = (q * k).sum(axis=1) / np.sqrt(dh)
        dense = np.tile(logits, (n, 1)) + mask
        dense -= dense.max(axis=1, keepdims=True)
        p = np.exp(dense)
        p /= p.sum(axis=1, keepdims=True)
        heads.append(p @ v)
    return np.concatenate(heads, axis=1) @ enc["l0.loc.wo"].data


@pytest.mark.parametrize("seed", range(5))
def test_local_mha_matches_dense_reference(seed):
    rng = np.random.default_rng(seed)
    enc = GraphEncoder(SMALL, seed=seed)
    sub = random_subgraph(rng)
    packed = pack([sub])
    z0 = enc.init_node_embeddings(packed)
    got = enc.local_mha(0, z0, packed).data
    want = dense_local_reference(enc, sub, z0.data)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_eventless_node_output_is_projected_self_value():
    # node 3 has no events: its only attention entry is the synthetic
    # self-loop, so softmax weight 1 lands on that entry's value projection
    enc = GraphEncoder(SMALL, seed=1)
    sub = make_subgraph(4, [0], [1], [1.5], degrees=[2, 2, 1, 0])
    packed = pack([sub])
    z0 = enc.init_node_embeddings(packed)
    out = enc.local_mha(0, z0, packed).data
    s = enc.settings
    phi = time_embed(np.array([0.0]) * s.time_scale, s.time_dim, s.time_base)
    e_in = np.concatenate(
        [np.zeros((1, 1)), z0.data[3:4], z0.data[3:4], phi], axis=1)
    e = np.maximum(e_in @ enc["l0.in.w1"].data + enc["l0.in.b1"].data, 0.0)
    e = e @ enc["l0.in.w2"].data + enc["l0.in.b2"].data
    v = e @ enc["l0.loc.wv"].data
    np.testing.assert_allclose(out[3], (v @ enc["l0.loc.wo"].data)[0], atol=1e-12)


# ---------------------------------------------------------------------------
# global MHA vs naive reference

def naive_global_reference(enc, layer, x):
    s = enc.settings
    dh = s.hidden // s.heads
    q_all = x @ enc[f"l{layer}.glo.wq"].data
    k_all = x @ enc[f"l{layer}.glo.wk"].data
    v_all = x @ enc[f"l{layer}.glo.wv"].data
    heads = []
    for i in range(s.heads):
        q = q_all[:, i * dh:(i + 1) * dh]
        k = k_all[:, i * dh:(i + 1) * dh]
        v = v_all[:, i * dh:(i + 1) * dh]
        logits = q @ k.T / np.sqrt(dh)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        heads.append(p @ v)
    return np.concatenate(heads, axis=1) @ enc[f"l{layer}.glo.wo"].data


@pytest.mark.parametrize("seed", range(5))
def test_global_mha_matches_naive_reference(seed):
    rng = np.random.default_rng(seed + 50)
    enc = GraphEncoder(SMALL, seed=seed)
    sub = random_subgraph(rng, n_nodes=6, n_events=9)
    packed = pack([sub])
    x = T.Tensor(rng.normal(size=(6, SMALL.hidden)))
    got = enc.global_mha(0, x, packed).data
    np.testing.assert_allclose(got, naive_global_reference(enc, 0, x.data),
                               atol=1e-12)


def test_global_mha_single_node_is_projected_value():
    enc = GraphEncoder(SMALL, seed=2)
    sub = make_subgraph(1, [], [], [], feat=np.zeros((0, 1)), degrees=[0],
                        center=(0, 0))
    packed = pack([sub])
    x = T.Tensor(np.random.default_rng(0).normal(size=(1, SMALL.hidden)))
    got = enc.global_mha(0, x, packed).data
    want = (x.data @ enc["l0.glo.wv"].data) @ enc["l0.glo.wo"].data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_global_mha_identical_rows_give_identical_outputs():
    enc = GraphEncoder(SMALL, seed=3)
    sub = make_subgraph(2, [0], [1], [1.0])
    packed = pack([sub])
    row = np.random.default_rng(1).normal(size=SMALL.hidden)
    x = T.Tensor(np.stack([row, row]))
    out = enc.global_mha(0, x, packed).data
    np.testing.assert_allclose(out[0], out[1], atol=1e-14)


# ---------------------------------------------------------------------------
# layer and full encode

def test_encoder_layer_output_shape():
    rng = np.random.default_rng(4)
    enc = GraphEncoder(SMALL, seed=4)
    sub = random_subgraph(rng)
    packed = pack([sub])
    z = enc.encode_packed(packed)
    assert z.data.shape == (sub.n_nodes, SMALL.hidden)


def test_encode_deterministic():
    rng = np.random.default_rng(6)
    enc = GraphEncoder(SMALL, seed=6)
    sub = random_subgraph(rng)
    a = enc.encode(sub).data
    b = enc.encode(sub).data
    assert a.tobytes() == b.tobytes()


def permute_subgraph(sub, perm):
    """Relabel local node ids by permutation (perm[i] = new id of old i)."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return SampledSubgraph(
        center_pos=sub.center_pos, center_edge=sub.center_edge,
        nodes=sub.nodes[inv], hop_of_node=sub.hop_of_node[inv],
        event_pos=sub.event_pos,
        e_src=perm[sub.e_src], e_dst=perm[sub.e_dst],
        dt=sub.dt, e_feat=sub.e_feat,
        degrees=sub.degrees[inv],
    )


def test_encode_permutation_equivariance():
    rng = np.random.default_rng(7)
    enc = GraphEncoder(SMALL, seed=7)
    sub = random_subgraph(rng, n_nodes=6, n_events=10)
    base = enc.encode(sub).data
    for _ in range(20):
        perm = rng.permutation(sub.n_nodes)
        out = enc.encode(permute_subgraph(sub, perm)).data
        np.testing.assert_allclose(out[perm], base, atol=1e-12)


def test_packing_isolates_subgraphs():
    # block-diagonal packing: other batch items never leak into a subgraph
    rng = np.random.default_rng(8)
    enc = GraphEncoder(SMALL, seed=8)
    a = random_subgraph(rng)
    b = random_subgraph(rng, n_nodes=4, n_events=5)
    alone = enc.encode(a).data
    packed = pack([a, b])
    together = enc.encode_packed(packed).data[:a.n_nodes]
    np.testing.assert_allclose(together, alone, atol=1e-12)


def test_causal_insensitivity_to_future_edges():
    src = [0, 1, 0, 2]
    dst = [1, 2, 2, 3]
    t = [1.0, 2.0, 3.0, 4.0]
    store_a = EventStore(src, dst, t, np.zeros((4, 1)))
    # perturb the future edge (t=4 > center t=3)
    store_b = EventStore(src, [1, 2, 2, 0], [1.0, 2.0, 3.0, 9.0], np.ones((4, 1)) * [[0], [0], [0], [5]])
    enc = GraphEncoder(SMALL, seed=9)
    sub_a = sample_subgraph(store_a, 2, [5, 5], True, rng_seed=1)
    sub_b = sample_subgraph(store_b, 2, [5, 5], True, rng_seed=1)
    np.testing.assert_array_equal(sub_a.event_pos, sub_b.event_pos)
    np.testing.assert_array_equal(enc.encode(sub_a).data, enc.encode(sub_b).data)


def test_no_time_embed_makes_time_gaps_invisible():
    sub_fast = make_subgraph(3, [0, 1], [1, 2], [0.5, 0.5])
    sub_slow = make_subgraph(3, [0, 1], [1, 2], [0.5, 7.5])
    on = GraphEncoder(SMALL, seed=10)
    off = GraphEncoder(EncoderSettings(layers=2, heads=2, hidden=8, time_dim=4,
                                       feat_dim=1, no_time_embed=True), seed=10)
    with_phi = (on.encode(sub_fast).data, on.encode(sub_slow).data)
    without_phi = (off.encode(sub_fast).data, off.encode(sub_slow).data)
    assert not np.allclose(with_phi[0], with_phi[1])
    np.testing.assert_array_equal(without_phi[0], without_phi[1])


def test_no_local_mha_bypasses_attention():
    settings = EncoderSettings(layers=1, heads=2, hidden=8, time_dim=4,
                               feat_dim=1, no_local_mha=True)
    enc = GraphEncoder(settings, seed=11)
    sub = make_subgraph(3, [0, 1], [1, 2], [1.0, 2.0])
    packed = pack([sub])
    z0 = enc.init_node_embeddings(packed)
    got = enc.local_mha(0, z0, packed).data
    np.testing.assert_allclose(got, z0.data @ enc["l0.loc.bypass"].data,
                               atol=1e-14)


def test_no_global_mha_layer_reduces_to_local_plus_ffn():
    settings = EncoderSettings(layers=1, heads=2, hidden=8, time_dim=4,
                               feat_dim=1, no_global_mha=True)
    enc = GraphEncoder(settings, seed=12)
    sub = make_subgraph(3, [0, 1], [1, 2], [1.0, 2.0])
    packed = pack([sub])
    z0 = enc.init_node_embeddings(packed)
    z_loc = enc.local_mha(0, z0, packed)
    ffn = (np.maximum(z_loc.data @ enc["l0.ffn.w1"].data + enc["l0.ffn.b1"].data, 0)
           @ enc["l0.ffn.w2"].data + enc["l0.ffn.b2"].data)
    mu = ffn.mean(axis=1, keepdims=True)
    var = ffn.var(axis=1, keepdims=True)
    normed = (ffn - mu) / np.sqrt(var + 1e-8)
    want = normed * enc["l0.ln.gain"].data + enc["l0.ln.bias"].data + z_loc.data
    got = enc.encoder_layer(0, z0, packed).data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_full_layer_gradient_check():
    rng = np.random.default_rng(13)
    settings = EncoderSettings(layers=1, heads=2, hidden=4, time_dim=4, feat_dim=1)
    for draw in range(8):
        enc = GraphEncoder(settings, seed=100 + draw)
        sub = random_subgraph(rng, n_nodes=4, n_events=5)
        packed = pack([sub])

        def loss():
            return T.sq_norm(enc.encode_packed(packed))

        if not smooth_at_current_point(loss):
            continue
        check_gradients(loss, enc.params, rng=rng, max_coords_per_leaf=4)
