import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_bipartite, random_similarity
from dualrec.graph import build_operator
from dualrec.models import (EmbeddingState, ModelConfig, forward, forward_weighted, init_embeddings,
                            init_layer_params, load_checkpoint, predict_scores, save_checkpoint,
                            similarity_only_scores)


def dense_operators(R, B):
    du, di = R.sum(axis=1), R.sum(axis=0)
    Rn = R / np.sqrt(np.outer(du, di))
    out_b = (B > 0).sum(axis=1).astype(float)
    Bn = np.zeros_like(B)
    for i, b in zip(*np.nonzero(B > 0)):
        Bn[i, b] = 1.0 / np.sqrt(out_b[i] * max(out_b[b], 1.0))
    return Rn, Bn


def test_init_deterministic_and_shape():
    a = init_embeddings(5, 7, 64, seed=3)
    b = init_embeddings(5, 7, 64, seed=3)
    assert a.user.shape == (5, 64) and a.item.shape == (7, 64)
    assert np.array_equal(a.user, b.user) and np.array_equal(a.item, b.item)
    assert not np.array_equal(a.user, init_embeddings(5, 7, 64, seed=4).user)


def test_init_zero_scale_and_spread():
    z = init_embeddings(3, 3, 4, init_scale=0.0)
    assert not z.user.any() and not z.item.any()
    big = init_embeddings(400, 400, 64, seed=0)
    assert big.user.std() == pytest.approx(0.1, rel=0.02)


def test_init_rejects_empty():
    with pytest.raises(ValueError):
        init_embeddings(0, 3, 4)


def test_config_validation():
    with pytest.raises(ValueError, match="unknown model kind"):
        ModelConfig(kind="ngcf")
    with pytest.raises(ValueError):
        ModelConfig(kind="lightgcn", n_layers=0)
    ModelConfig(kind="mfbpr", n_layers=0)


def test_k1_readout_is_first_layer(toy_graph):
    R, B = toy_graph
    op = build_operator(R, B)
    state = init_embeddings(3, 3, 4, seed=1)
    cfg = ModelConfig(kind="belightrec", dim=4, n_layers=1)
    e_u, e_i = forward(state, op, cfg)
    np.testing.assert_array_equal(e_u, op.R_norm @ state.item)
    np.testing.assert_array_equal(e_i, op.R_norm_T @ state.user + op.B_norm @ state.item)


def test_toy_k2_against_dense_oracle(toy_graph):
    R, B = toy_graph
    Rn, Bn = dense_operators(R.toarray(), B.toarray())
    state = init_embeddings(3, 3, 5, seed=7)
    for include0 in (False, True):
        cfg = ModelConfig(kind="belightrec", dim=5, n_layers=2, include_layer0=include0)
        e_u, e_i = forward(state, build_operator(R, B), cfg)
        U1, I1 = Rn @ state.item, Rn.T @ state.user + Bn @ state.item
        U2, I2 = Rn @ I1, Rn.T @ U1 + Bn @ I1
        if include0:
            want_u, want_i = (state.user + U1 + U2) / 3, (state.item + I1 + I2) / 3
        else:
            want_u, want_i = (U1 + U2) / 2, (I1 + I2) / 2
        assert np.max(np.abs(e_u - want_u)) <= 1e-12
        assert np.max(np.abs(e_i - want_i)) <= 1e-12


def test_lightgcn_equals_belightrec_with_empty_b(rng):
    R = random_bipartite(rng, 9, 7)
    state = init_embeddings(9, 7, 6, seed=2)
    a = forward(state, build_operator(R, sp.csr_matrix((7, 7))), ModelConfig("belightrec", 6, 3))
    b = forward(state, build_operator(R), ModelConfig("lightgcn", 6, 3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_mfbpr_identity_and_simonly_rejected(toy_graph):
    state = init_embeddings(3, 3, 4)
    e_u, e_i = forward(state, None, ModelConfig("mfbpr", 4))
    assert e_u is state.user and e_i is state.item
    with pytest.raises(ValueError, match="similarity"):
        forward(state, None, ModelConfig("simonly", 4))


def test_forward_shape_mismatch(toy_graph):
    R, B = toy_graph
    with pytest.raises(ValueError, match="does not match"):
        forward(init_embeddings(4, 3, 2), build_operator(R, B), ModelConfig("lightgcn", 2, 2))


def test_fixed_point_readout():
    # a 1x1 graph maps (x, x) to (x, x); with K=2 both layers coincide
    op = build_operator(np.array([[1.0]]))
    state = EmbeddingState(np.array([[0.25, -1.5]]), np.array([[0.25, -1.5]]))
    e_u, e_i = forward(state, op, ModelConfig("lightgcn", 2, 2))
    np.testing.assert_array_equal(e_u, state.user)


def test_weighted_identity_matches_unweighted(toy_graph):
    R, B = toy_graph
    op = build_operator(R, B)
    d = 4
    state = init_embeddings(3, 3, d, seed=5)
    state.user, state.item = np.abs(state.user), np.abs(state.item)
    state.weights = [np.eye(d) for _ in range(3)]
    state.biases = [np.zeros(d) for _ in range(3)]
    a = forward(state, op, ModelConfig("belightrec_w", d, 3))
    b = forward(state, op, ModelConfig("belightrec", d, 3))
    np.testing.assert_allclose(a[0], b[0], atol=1e-15)
    np.testing.assert_allclose(a[1], b[1], atol=1e-15)


def test_weighted_bias_on_single_edge():
    # 1x1 graph, W=I, bias 0.5: layer 1 = lrelu(x + 0.5); user and item both start at x
    op = build_operator(np.array([[1.0]]))
    state = EmbeddingState(np.array([[-1.0]]), np.array([[-1.0]]), [np.eye(1)], [np.array([0.5])])
    e_u, e_i = forward_weighted(state, op, ModelConfig("belightrec_w", 1, 1))
    assert e_u[0, 0] == pytest.approx(0.2 * -0.5)
    state2 = EmbeddingState(np.array([[1.0]]), np.array([[1.0]]), [np.eye(1)] * 2, [np.array([0.5])] * 2)
    e_u, _ = forward_weighted(state2, op, ModelConfig("belightrec_w", 1, 2))
    # layer 1 = 1.5, layer 2 = 2.0, mean 1.75
    assert e_u[0, 0] == pytest.approx(1.75)


def test_weighted_deterministic(toy_graph):
    R, B = toy_graph
    op = build_operator(R, B)
    outs = []
    for _ in range(2):
        state = init_embeddings(3, 3, 4, seed=9)
        state.weights, state.biases = init_layer_params(2, 4, seed=9)
        outs.append(forward(state, op, ModelConfig("belightrec_w", 4, 2)))
    assert np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])


def test_weighted_needs_layer_params(toy_graph):
    R, B = toy_graph
    with pytest.raises(ValueError, match="layer params"):
        forward(init_embeddings(3, 3, 2), build_operator(R, B), ModelConfig("belightrec_w", 2, 2))


@pytest.mark.parametrize("u,items,expected", [([1, 0], [[1, 0]], [1.0]), ([1, 0], [[0, 3]], [0.0]),
                                              ([0.5, 2], [[2, 0.25]], [1.5])])
def test_predict_scores(u, items, expected):
    assert predict_scores(np.array(u, float), np.array(items, float)).tolist() == expected


def test_similarity_only_scores():
    B = sp.csr_matrix(np.array([[0, 0.9, 0.1], [0, 0, 1.0], [0.5, 0.5, 0]]))
    s = similarity_only_scores({0}, B)
    assert s[1] == 0.9 and s[2] == 0.1
    assert not similarity_only_scores({0, 1}, sp.csr_matrix((3, 3))).any()
    both = similarity_only_scores([0, 2], B)
    assert both[1] == 0.9 + 0.5
    block = similarity_only_scores(sp.csr_matrix(np.array([[1, 0, 1], [0, 1, 0]], float)), B)
    np.testing.assert_array_equal(block[0], both)
    assert not similarity_only_scores([], B).any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 20))
def test_scale_equivariance_and_ranking(seed, c):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 10, size=2)
    op = build_operator(random_bipartite(rng, n, m), sp.csr_matrix(random_similarity(rng, m)))
    state = init_embeddings(n, m, 3, seed=seed % 1000)
    cfg = ModelConfig("belightrec", 3, 3)
    e_u, e_i = forward(state, op, cfg)
    f_u, f_i = forward(EmbeddingState(c * state.user, c * state.item), op, cfg)
    np.testing.assert_allclose(f_u, c * e_u, atol=1e-9)
    np.testing.assert_allclose(f_i, c * e_i, atol=1e-9)
    s, t = predict_scores(e_u, e_i), predict_scores(f_u, f_i)
    for row_s, row_t in zip(s, t):
        # orders agree wherever the original scores are separated
        order = np.argsort(-row_s, kind="stable")
        gaps = np.diff(row_s[order])
        sep = gaps < -1e-9 * max(1.0, np.abs(row_s).max())
        assert np.all(np.diff(row_t[order])[sep] < 0)


@pytest.mark.parametrize("kind", ["belightrec", "lightgcn", "mfbpr", "belightrec_w"])
def test_checkpoint_roundtrip_bit_exact(tmp_path, kind):
    state = init_embeddings(4, 6, 3, seed=1)
    if kind == "belightrec_w":
        state.weights, state.biases = init_layer_params(2, 3, seed=1)
        state.biases = [b + 0.1 for b in state.biases]
    state = EmbeddingState(*[[t.astype(np.float32).astype(np.float64) for t in part] if isinstance(part, list)
                             else part.astype(np.float32).astype(np.float64)
                             for part in (state.user, state.item, state.weights, state.biases)])
    cfg = ModelConfig(kind, 3, 2, include_layer0=True)
    raw = save_checkpoint(tmp_path / "m.blck", state, cfg)
    assert raw[:4] == b"BLCK"
    loaded, lcfg = load_checkpoint(tmp_path / "m.blck")
    assert (lcfg.kind, lcfg.dim, lcfg.n_layers, lcfg.include_layer0) == (kind, 3, 2, True)
    for a, b in zip(state.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    assert save_checkpoint(None, loaded, lcfg) == raw


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(b"XXXX" + bytes(28))
    raw = save_checkpoint(None, init_embeddings(2, 2, 2), ModelConfig("mfbpr", 2))
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(raw[:-1])
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(raw + b"\0")
