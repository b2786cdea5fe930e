from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from tribegraph import autodiff as ad
from tribegraph.autodiff import Tensor
from tribegraph.exceptions import ShapeMismatch, WidthMismatch
from tribegraph.features import build_feature_table
from tribegraph.graph import Tribe, undirected_view
from tribegraph.model import ModelConfig, init_params
from tribegraph.tse import (
    degree_bucket,
    embed_nodes,
    encode_tribes,
    gin_forward,
    gin_layer,
    make_batch,
    make_batches,
    readout,
    spd_bucket,
)
from helpers import random_tribe

CFG = ModelConfig(emb_dim=4, tribe_dim=6, gin_hidden=5, hidden=4)


def params(seed=0, cfg=CFG):
    p = init_params(cfg, 3, np.random.default_rng(seed))
    # nonzero eps and biases so every term is exercised
    for k, t in p.items():
        if k.endswith((".eps", ".b1", ".b2", ".b")):
            t.data = np.random.default_rng(len(k)).normal(0, 0.3, t.shape)
    return p


def batch_of(tribes):
    return make_batch(tribes, [build_feature_table(t) for t in tribes])


def identity_params(d):
    return {
        "tse.gin0.eps": Tensor(np.zeros((1, 1))),
        "tse.gin0.W1": Tensor(np.eye(d)),
        "tse.gin0.b1": Tensor(np.zeros((1, d))),
        "tse.gin0.W2": Tensor(np.eye(d)),
        "tse.gin0.b2": Tensor(np.zeros((1, d))),
    }


def test_bucket_rules():
    assert degree_bucket([0, 1, 2, 3, 7, 10**6]).tolist() == [0, 1, 1, 2, 3, 11]
    assert spd_bucket([0, 7, 8, 100]).tolist() == [0, 7, 7, 7]


def test_embed_layout_and_eig_column(rng):
    t = random_tribe(rng, n=15)
    ft = build_feature_table(t)
    z = embed_nodes(batch_of([t]), params())
    assert z.shape == (15, 4 * CFG.emb_dim + 1)
    assert np.array_equal(z.data[:, 4 * CFG.emb_dim], ft.eig)
    np.testing.assert_array_equal(z.data[:, 8:12], params()["tse.emb.kind"].data[ft.kind])


def test_gin_hand_example():
    # node 0 has self value 3 and neighbours with 1 and 2
    t = Tribe(0, [0, 1, 1], [(1, 0), (2, 0)], 0)
    b = batch_of([t])
    h = Tensor(np.array([[3.0], [1.0], [2.0]]))
    out = gin_layer(b, h, identity_params(1), 0)
    assert out.data[0, 0] == 6.0


def test_gin_isolated_node_unchanged():
    b = batch_of([Tribe(0, [0], [], 0)])
    h = Tensor(np.array([[1.5, 2.5]]))
    assert np.array_equal(gin_layer(b, h, identity_params(2), 0).data, h.data)


def test_gin_loop_oracle(rng):
    t = random_tribe(rng, n=20)
    b = batch_of([t])
    p = params()
    z = embed_nodes(b, p)
    reps = gin_forward(b, z, p, 2)
    nbrs = undirected_view(t)
    h = z.data
    for layer in range(2):
        pre = [(1 + p[f"tse.gin{layer}.eps"].data[0, 0]) * h[v] + sum((h[u] for u in nbrs[v]), np.zeros(h.shape[1]))
               for v in range(t.n_nodes)]
        pre = np.array(pre)
        hid = np.maximum(pre @ p[f"tse.gin{layer}.W1"].data + p[f"tse.gin{layer}.b1"].data, 0)
        h = hid @ p[f"tse.gin{layer}.W2"].data + p[f"tse.gin{layer}.b2"].data
        np.testing.assert_allclose(reps[layer + 1].data, h, atol=1e-12)


def test_gin_shape_check():
    b = batch_of([Tribe(0, [0], [], 0)])
    with pytest.raises(ShapeMismatch):
        gin_forward(b, Tensor(np.zeros((2, 17))), params(), 2)


def test_readout_examples():
    d = 3
    proj = {"tse.proj0.W": Tensor(np.eye(d)), "tse.proj0.b": Tensor(np.zeros((1, d)))}
    v = np.array([[1.0, -2.0, 0.5]])
    one = batch_of([Tribe(0, [0], [], 0)])
    np.testing.assert_allclose(readout(one, [Tensor(v)] * 3, proj).data, v)
    two = batch_of([Tribe(0, [0, 1], [(1, 0)], 0)])
    ab = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    np.testing.assert_allclose(readout(two, [Tensor(ab)] * 3, proj).data, ab.sum(0, keepdims=True))
    with pytest.raises(WidthMismatch):
        readout(one, [Tensor(v), Tensor(np.zeros((1, 2)))], proj)


def test_readout_direct_formula(rng):
    tribes = [random_tribe(rng, n=int(rng.integers(1, 20)), tribe_id=i) for i in range(4)]
    b = batch_of(tribes)
    p = params()
    z = embed_nodes(b, p)
    reps = gin_forward(b, z, p, 2)
    out = readout(b, reps, p).data
    h0 = z.data @ p["tse.proj0.W"].data + p["tse.proj0.b"].data
    layers = [h0, reps[1].data, reps[2].data]
    start = 0
    for i, t in enumerate(tribes):
        sl = slice(start, start + t.n_nodes)
        expect = sum(l[sl].sum(0) for l in layers) / 3
        np.testing.assert_allclose(out[i], expect, atol=1e-12)
        start += t.n_nodes


def encode(tribes, p, **kw):
    batches = make_batches(tribes, [build_feature_table(t) for t in tribes], chunk_size=kw.pop("chunk", 64))
    with ad.no_grad():
        views, _ = encode_tribes(batches, p, 2, **kw)
    return views


def test_permutation_invariance(rng):
    p = params()
    for i in range(50):
        t = random_tribe(rng, max_n=40)
        base = encode([t], p)[0].data
        for _ in range(5):
            q = t.permuted(rng.permutation(t.n_nodes))
            np.testing.assert_allclose(encode([q], p)[0].data, base, atol=1e-9, rtol=0)


def test_chunking_does_not_change_results(rng):
    tribes = [random_tribe(rng, max_n=30, tribe_id=i) for i in range(10)]
    p = params()
    a = encode(tribes, p, chunk=64)[0].data
    b = encode(tribes, p, chunk=3)[0].data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_views_identical_without_dropout(rng):
    tribes = [random_tribe(rng, max_n=30, tribe_id=i) for i in range(5)]
    q, k = encode(tribes, params(), n_views=2, training=True, dropout=0.0)
    assert np.array_equal(q.data, k.data)
    q, k = encode(tribes, params(), n_views=2, training=True, dropout=0.3, seed=1, step=1)
    assert not np.array_equal(q.data, k.data)


def test_eval_mode_deterministic(rng):
    tribes = [random_tribe(rng, max_n=30, tribe_id=i) for i in range(5)]
    assert np.array_equal(encode(tribes, params())[0].data, encode(tribes, params())[0].data)


def test_threads_bit_identical_with_grads(rng):
    from tribegraph.tse import finish_backward
    tribes = [random_tribe(rng, max_n=30, tribe_id=i) for i in range(20)]
    batches = make_batches(tribes, [build_feature_table(t) for t in tribes], chunk_size=4)
    results = []
    for ex in (None, ThreadPoolExecutor(4)):
        p = params()
        for t in p.values():
            t.requires_grad = True
        with ad.Tape() as tape:
            (q, k), pending = encode_tribes(batches, p, 2, n_views=2, training=True, dropout=0.2,
                                            seed=3, step=2, executor=ex)
            loss = ad.sum_all(ad.mul(q, k))
        for leaf, g in tape.backward(loss).values():
            ad.accumulate_grad(leaf, g)
        finish_backward(pending, ex)
        results.append({n: t.grad.copy() for n, t in p.items()})
    for n in results[0]:
        assert np.array_equal(results[0][n], results[1][n]), n
