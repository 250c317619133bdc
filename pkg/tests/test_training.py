import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference_check, random_bipartite, random_similarity
from dualrec.graph import build_operator
from dualrec.models import ModelConfig, init_embeddings, init_layer_params
from dualrec.training import (Adam, BprTriplets, TrainConfig, backward_and_step, bpr_loss, bpr_objective,
                              jsonl_writer, sample_triplets, train)


def test_forced_triplet():
    R = sp.csr_matrix(np.array([[1.0, 0.0]]))
    batch = sample_triplets(R, 50, np.random.default_rng(0))
    assert set(batch) == {(0, 0, 1)}


def test_sampling_deterministic_and_valid(rng):
    R = sp.csr_matrix(random_bipartite(rng, 20, 15, 0.3))
    a = sample_triplets(R, 500, np.random.default_rng(4))
    b = sample_triplets(R, 500, np.random.default_rng(4))
    assert list(a) == list(b)
    dense = R.toarray()
    assert np.all(dense[a.users, a.pos] == 1) and np.all(dense[a.users, a.neg] == 0)


def test_sampling_edges_uniform():
    # user 0 has one edge, user 1 one edge; 3 items so both have negatives
    R = sp.csr_matrix(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    n = 10_000
    batch = sample_triplets(R, n, np.random.default_rng(11))
    share = np.mean(batch.users == 0)
    assert abs(share - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_sampling_by_edge_weights_heavy_users():
    R = sp.csr_matrix(np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0]]))
    users = sample_triplets(R, 20_000, np.random.default_rng(2)).users
    assert np.mean(users == 0) == pytest.approx(0.75, abs=0.02)


def test_sampling_no_negative():
    R = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError, match="every item"):
        sample_triplets(R, 4, np.random.default_rng(0))


def test_bpr_loss_values():
    assert bpr_loss([0.3], [0.3]) == pytest.approx(math.log(2), abs=1e-15)
    assert bpr_loss([1.0], [0.0]) == pytest.approx(0.31326, abs=5e-6)
    assert bpr_loss([1.0], [0.0]) == pytest.approx(math.log1p(math.exp(-1)), abs=1e-15)
    assert bpr_loss([0.0], [0.0], 2.0, 1.0) == pytest.approx(math.log(2) + 2, abs=1e-15)


def test_bpr_loss_errors():
    with pytest.raises(ValueError, match="finite"):
        bpr_loss([np.nan], [0.0])
    with pytest.raises(ValueError, match="length"):
        bpr_loss([1.0, 2.0], [0.0])


margins = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(margins, min_size=1, max_size=8), st.floats(0, 10), st.floats(0, 1e-2))
def test_bpr_loss_bounded_below_by_reg(m, reg, lam):
    assert bpr_loss(m, [0.0] * len(m), reg, lam) >= lam * reg


@settings(max_examples=100, deadline=None)
@given(margins, st.floats(1e-3, 5))
def test_bpr_loss_strictly_decreasing(x, dx):
    assert bpr_loss([x + dx], [0.0], 1.0, 0.1) < bpr_loss([x], [0.0], 1.0, 0.1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(l2_lambda=-1)


@pytest.fixture
def small_problem(rng):
    R = random_bipartite(rng, 12, 10, 0.3)
    B = sp.csr_matrix(random_similarity(rng, 10))
    return sp.csr_matrix(R), build_operator(R, B)


def _state(kind, n, m, d=4, K=2, seed=0):
    s = init_embeddings(n, m, d, seed=seed, init_scale=0.5)
    if kind == "belightrec_w":
        s.weights, s.biases = init_layer_params(K, d, seed=seed)
        s.biases = [b + 0.05 * np.arange(d) for b in s.biases]
    return s


def test_zero_learning_rate_leaves_state_unchanged(small_problem):
    R, op = small_problem
    cfg = ModelConfig("belightrec_w", 4, 2)
    state = _state("belightrec_w", 12, 10)
    before = [p.copy() for p in state.parameters()]
    tconf = TrainConfig(learning_rate=0.0)
    batch = sample_triplets(R, 32, np.random.default_rng(0))
    backward_and_step(state, op, cfg, batch, tconf, Adam(state.parameters(), 0.0))
    for a, b in zip(before, state.parameters()):
        assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("kind", ["belightrec", "lightgcn", "mfbpr", "belightrec_w"])
def test_duplicate_triplets_double_gradient(small_problem, kind):
    R, op = small_problem
    cfg = ModelConfig(kind, 4, 2)
    state = _state(kind, 12, 10)
    one = BprTriplets(np.array([3]), np.array([R[3].indices[0]]), np.array([np.setdiff1d(np.arange(10), R[3].indices)[0]]))
    two = BprTriplets(np.repeat(one.users, 2), np.repeat(one.pos, 2), np.repeat(one.neg, 2))
    # W and bias are regularized once per batch, so only the lambda=0 case doubles for them
    for lam in ((0.0,) if kind == "belightrec_w" else (0.0, 1e-2)):
        l1, g1 = bpr_objective(state, op, cfg, one, lam)
        l2, g2 = bpr_objective(state, op, cfg, two, lam)
        assert l2 == 2 * l1
        for a, b in zip(g1, g2):
            assert np.array_equal(2 * a, b)


@pytest.mark.parametrize("kind", ["belightrec", "lightgcn", "mfbpr", "belightrec_w"])
@pytest.mark.parametrize("include0", [False, True])
def test_gradients_match_finite_differences(small_problem, kind, include0):
    R, op = small_problem
    cfg = ModelConfig(kind, 4, 3, include_layer0=include0)
    state = _state(kind, 12, 10, K=3)
    batch = sample_triplets(R, 16, np.random.default_rng(1))
    worst = finite_difference_check(state, op, cfg, batch, 1e-2, np.random.default_rng(2))
    assert max(worst.values()) <= 1e-4, worst


def test_simonly_not_trainable(small_problem):
    R, op = small_problem
    with pytest.raises(ValueError, match="no trainable"):
        bpr_objective(_state("mfbpr", 12, 10), op, ModelConfig("simonly", 4),
                      sample_triplets(R, 4, np.random.default_rng(0)), 0.0)


def test_max_epochs_zero_returns_initial_state(small_problem):
    R, op = small_problem
    state = _state("belightrec", 12, 10)
    hist, best = train(state, op, R, ModelConfig("belightrec", 4, 2), TrainConfig(max_epochs=0))
    assert hist.epochs == [] and hist.evaluations == []
    assert np.array_equal(best.user, state.user)


def test_patience_one_constant_metric(small_problem):
    R, op = small_problem
    calls = []

    def evaluate(_):
        calls.append(1)
        return 0.25

    tconf = TrainConfig(max_epochs=100, eval_every=2, patience=1, batch_size=16)
    hist, _ = train(_state("lightgcn", 12, 10), op, R, ModelConfig("lightgcn", 4, 2), tconf, evaluate)
    assert len(calls) == 2 and hist.stopped_early
    assert [e["epoch"] for e in hist.epochs] == [1, 2, 3, 4]
    assert hist.best_epoch == 2 and hist.best_metric == 0.25
    assert [e["best_flag"] for e in hist.evaluations] == [True, False]


def test_best_state_is_returned(small_problem):
    R, op = small_problem
    snapshots = []
    values = iter([0.1, 0.5, 0.2, 0.1])

    def evaluate(state):
        snapshots.append(state.copy())
        return {"recall@20": next(values), "ndcg@20": 0.0}

    tconf = TrainConfig(max_epochs=4, eval_every=1, patience=5, batch_size=16, learning_rate=0.05)
    hist, best = train(_state("mfbpr", 12, 10), None, R, ModelConfig("mfbpr", 4), tconf, evaluate)
    assert hist.best_epoch == 2 and not hist.stopped_early
    assert np.array_equal(best.user, snapshots[1].user)
    assert hist.evaluations[0]["ndcg@20"] == 0.0


def test_training_deterministic_and_logged(small_problem):
    import io
    import json
    R, op = small_problem
    runs = []
    for _ in range(2):
        buf = io.StringIO()
        tconf = TrainConfig(max_epochs=3, batch_size=8, learning_rate=0.01, seed=7)
        hist, best = train(_state("belightrec", 12, 10), op, R, ModelConfig("belightrec", 4, 2), tconf,
                           log=jsonl_writer(buf))
        runs.append((hist.losses, best.user.tobytes(), buf.getvalue()))
    assert runs[0][:2] == runs[1][:2]
    records = [json.loads(line) for line in runs[0][2].splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert set(records[0]) == {"epoch", "mean_loss", "wall_ms"}


def test_loss_decreases_on_synthetic():
    from dualrec.synthetic import make_two_cluster_dataset
    ds = make_two_cluster_dataset(n_users=50, n_items=40, seed=1, items_per_user=8)
    R = ds.train.to_csr()
    op = build_operator(R)
    cfg = ModelConfig("lightgcn", 16, 2)
    tconf = TrainConfig(max_epochs=50, batch_size=64, learning_rate=0.01)
    state = init_embeddings(R.shape[0], R.shape[1], 16, seed=0)
    hist, _ = train(state, op, R, cfg, tconf)
    assert len(hist.epochs) == 50
    assert hist.losses[-1] < hist.losses[0]
