import numpy as np
import pytest
import scipy.sparse as sp

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""
    def _report(number: int, name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE_LINES.append(f"[{number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return _report


def random_bipartite(rng, n, m, density=0.3):
    """Random binary n x m matrix with no empty rows or columns."""
    R = (rng.random((n, m)) < density).astype(float)
    for u in range(n):
        if not R[u].any():
            R[u, rng.integers(m)] = 1.0
    for i in range(m):
        if not R[:, i].any():
            R[rng.integers(n), i] = 1.0
    return R


def random_similarity(rng, m, top_n=3, density=0.4):
    """Random row-stochastic matrix with zero diagonal and at most top_n entries per row."""
    B = np.zeros((m, m))
    for i in range(m):
        if rng.random() < 0.15:
            continue  # some empty rows
        others = np.array([j for j in range(m) if j != i])
        if others.size == 0:
            continue
        k = rng.integers(1, min(top_n, others.size) + 1)
        cols = rng.choice(others, size=k, replace=False)
        vals = rng.random(k) + 0.05
        B[i, cols] = vals / vals.sum()
    return B


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_graph():
    """3 users x 3 items with a 3-item similarity matrix."""
    R = np.array([[1, 1, 0],
                  [0, 1, 1],
                  [1, 0, 1]], dtype=float)
    B = np.array([[0.0, 0.7, 0.3],
                  [1.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0]])
    return sp.csr_matrix(R), sp.csr_matrix(B)


@pytest.fixture(scope="session")
def synthetic():
    from dualrec.semantic import build_similarity_matrix, fit_tfidf_vectors
    from dualrec.synthetic import make_two_cluster_dataset

    ds = make_two_cluster_dataset(seed=0)
    _, vec = fit_tfidf_vectors(ds.texts)
    return ds, build_similarity_matrix(vec, top_n=10)


def finite_difference_check(state, op, config, batch, l2, rng, n_coords=25, eps=1e-4, floor=1e-6):
    """Worst relative error of analytic vs central-difference gradients per parameter class.

    Classes are user table, item table and, when present, all W and all biases.
    The denominator is ``max(|analytic|, |numeric|, floor)``.
    """
    from dualrec.training import bpr_objective

    _, grads = bpr_objective(state, op, config, batch, l2)
    params = state.parameters()
    n_w = len(state.weights)
    classes = {"user": [0], "item": [1]}
    if n_w:
        classes["W"] = list(range(2, 2 + n_w))
        classes["bias"] = list(range(2 + n_w, 2 + 2 * n_w))
    worst = {}
    for name, members in classes.items():
        errs = []
        for _ in range(n_coords):
            p = members[rng.integers(len(members))]
            idx = tuple(rng.integers(s) for s in params[p].shape)
            old = params[p][idx]
            params[p][idx] = old + eps
            up, _ = bpr_objective(state, op, config, batch, l2, compute_grad=False)
            params[p][idx] = old - eps
            down, _ = bpr_objective(state, op, config, batch, l2, compute_grad=False)
            params[p][idx] = old
            numeric = (up - down) / (2 * eps)
            analytic = grads[p][idx]
            errs.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))
        worst[name] = max(errs)
    return worst
