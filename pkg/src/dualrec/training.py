"""BPR objective, analytic gradients, Adam and the early-stopping training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .graph import PropagationOperator, propagate_transpose
from .models import (EmbeddingState, ModelConfig, _readout, leaky_relu_grad, propagate_layers)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    l2_lambda: float = 1e-5
    batch_size: int = 2048
    max_epochs: int = 1000
    eval_every: int = 10
    patience: int = 5
    seed: int = 0
    monitor_k: int = 20

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class BprTriplets:
    """A batch of ``(user, positive item, negative item)`` index triplets."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self) -> int:
        return int(self.users.size)

    def __iter__(self):
        return zip(self.users.tolist(), self.pos.tolist(), self.neg.tolist())


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    best_metric: float = -math.inf
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def losses(self) -> list[float]:
        return [e["mean_loss"] for e in self.epochs]


def sample_triplets(R: sp.csr_matrix, batch_size: int, rng: np.random.Generator) -> BprTriplets:
    """Draw positive edges uniformly, then reject-sample one unobserved item per edge."""
    R = sp.csr_matrix(R)
    R.sort_indices()
    n, m = R.shape
    if R.nnz == 0:
        raise ValueError("cannot sample from an empty interaction matrix")
    deg = np.diff(R.indptr)
    if (deg >= m).any():
        full = int(np.flatnonzero(deg >= m)[0])
        raise ValueError(f"user {full} interacted with every item; no negative exists")
    edge_rows = np.repeat(np.arange(n, dtype=np.int64), deg)
    keys = edge_rows * m + R.indices  # sorted, since indices are sorted per row

    edges = rng.integers(0, R.nnz, size=batch_size)
    users = edge_rows[edges]
    pos = R.indices[edges].astype(np.int64)
    neg = rng.integers(0, m, size=batch_size)
    todo = np.arange(batch_size)
    while todo.size:
        probe = users[todo] * m + neg[todo]
        at = np.searchsorted(keys, probe)
        hit = (at < keys.size) & (keys[np.minimum(at, keys.size - 1)] == probe)
        todo = todo[hit]
        if todo.size:
            neg[todo] = rng.integers(0, m, size=todo.size)
    return BprTriplets(users, pos, neg.astype(np.int64))


def bpr_loss(pos_scores, neg_scores, reg_norm_sq: float = 0.0, l2_lambda: float = 0.0) -> float:
    """``sum(-ln sigmoid(pos - neg)) + l2_lambda * reg_norm_sq``."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ValueError("positive and negative score lists differ in length")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))
            and math.isfinite(reg_norm_sq) and math.isfinite(l2_lambda)):
        raise ValueError("bpr_loss inputs must be finite")
    return float(np.sum(np.logaddexp(0.0, -(pos - neg)))) + l2_lambda * reg_norm_sq


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bpr_objective(state: EmbeddingState, op: PropagationOperator | None, config: ModelConfig,
                  batch: BprTriplets, l2_lambda: float, compute_grad: bool = True):
    """Full batch objective and its gradient with respect to every parameter of ``state``.

    Regularization covers the batch's layer-0 rows (with multiplicity) and, for the
    weighted variant, all layer weights and biases.
    Returns ``(loss, grads)`` with ``grads`` aligned to ``state.parameters()``.
    """
    u, i, j = batch.users, batch.pos, batch.neg
    weighted = config.kind == "belightrec_w"
    if config.kind == "mfbpr":
        layers, pre = [(state.user, state.item)], []
        e_u, e_i = state.user, state.item
    elif config.kind in ("belightrec", "lightgcn", "belightrec_w"):
        layers, pre = propagate_layers(state, op, config)
        e_u, e_i = _readout(layers, config.include_layer0)
    else:
        raise ValueError(f"kind {config.kind!r} has no trainable parameters")

    zu, zi, zj = e_u[u], e_i[i], e_i[j]
    margin = np.einsum("bd,bd->b", zu, zi - zj)
    reg = (np.einsum("bd,bd->", state.user[u], state.user[u])
           + np.einsum("bd,bd->", state.item[i], state.item[i])
           + np.einsum("bd,bd->", state.item[j], state.item[j]))
    if weighted:
        reg += sum(float(np.sum(w * w)) for w in state.weights)
        reg += sum(float(np.sum(b * b)) for b in state.biases)
    loss = bpr_loss(margin, np.zeros_like(margin), reg, l2_lambda)
    if not compute_grad:
        return loss, None

    # d loss / d margin = -sigmoid(-margin)
    g = -_sigmoid(-margin)[:, None]
    G_u = np.zeros_like(e_u)
    G_i = np.zeros_like(e_i)
    np.add.at(G_u, u, g * (zi - zj))
    np.add.at(G_i, i, g * zu)
    np.add.at(G_i, j, -g * zu)

    grad_w = [np.zeros_like(w) for w in state.weights]
    grad_b = [np.zeros_like(b) for b in state.biases]
    if config.kind == "mfbpr":
        grad_user, grad_item = G_u, G_i
    else:
        K = config.n_layers
        n_used = K + 1 if config.include_layer0 else K
        scale = 1.0 / n_used
        # gradient flowing into layer K's output; accumulate downwards
        D_u, D_i = G_u * scale, G_i * scale
        for k in range(K, 0, -1):
            if weighted:
                (A_u, A_i), (P_u, P_i) = pre[k - 1]
                dP_u = D_u * leaky_relu_grad(P_u)
                dP_i = D_i * leaky_relu_grad(P_i)
                grad_w[k - 1] = A_u.T @ dP_u + A_i.T @ dP_i
                grad_b[k - 1] = dP_u.sum(axis=0) + dP_i.sum(axis=0)
                W_T = state.weights[k - 1].T
                D_u, D_i = propagate_transpose(op, dP_u @ W_T, dP_i @ W_T, config.use_semantic)
            else:
                D_u, D_i = propagate_transpose(op, D_u, D_i, config.use_semantic)
            if k > 1 or config.include_layer0:
                D_u = D_u + G_u * scale
                D_i = D_i + G_i * scale
        grad_user, grad_item = D_u, D_i

    two_lam = 2.0 * l2_lambda
    reg_user = np.zeros_like(state.user)
    reg_item = np.zeros_like(state.item)
    np.add.at(reg_user, u, two_lam * state.user[u])
    np.add.at(reg_item, i, two_lam * state.item[i])
    np.add.at(reg_item, j, two_lam * state.item[j])
    grad_user = grad_user + reg_user
    grad_item = grad_item + reg_item
    if weighted:
        grad_w = [gw + two_lam * w for gw, w in zip(grad_w, state.weights)]
        grad_b = [gb + two_lam * b for gb, b in zip(grad_b, state.biases)]
    return loss, [grad_user, grad_item, *grad_w, *grad_b]


class Adam:
    """Adam over a fixed list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def backward_and_step(state: EmbeddingState, op: PropagationOperator | None, config: ModelConfig,
                      batch: BprTriplets, train_config: TrainConfig, optimizer: Adam) -> float:
    """One optimization step on ``batch``; returns the batch loss before the update."""
    loss, grads = bpr_objective(state, op, config, batch, train_config.l2_lambda)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; aborting epoch")
    optimizer.step(state.parameters(), grads)
    return loss


def train(state: EmbeddingState, op: PropagationOperator | None, R_train: sp.csr_matrix,
          config: ModelConfig, train_config: TrainConfig,
          evaluate: Callable[[EmbeddingState], float] | None = None,
          log: Callable[[dict], None] | None = None,
          rng: np.random.Generator | None = None) -> tuple[TrainHistory, EmbeddingState]:
    """Optimize ``state`` with BPR + Adam and early stopping.

    ``evaluate`` maps a state to the monitored validation metric (recall@20); it
    runs every ``eval_every`` epochs. Training stops after ``patience`` evaluations
    without improvement. Returns the history and the best state (or the final one
    when no evaluation ran).
    """
    history = TrainHistory()
    best = state.copy()
    if train_config.max_epochs == 0:
        return history, best
    rng = rng if rng is not None else np.random.default_rng(train_config.seed)
    optimizer = Adam(state.parameters(), train_config.learning_rate)
    n_batches = math.ceil(R_train.nnz / train_config.batch_size)
    stale = 0
    evaluated = False
    for epoch in range(1, train_config.max_epochs + 1):
        start = time.perf_counter()
        total, count = 0.0, 0
        for _ in range(n_batches):
            batch = sample_triplets(R_train, train_config.batch_size, rng)
            total += backward_and_step(state, op, config, batch, train_config, optimizer)
            count += len(batch)
        record = {"epoch": epoch, "mean_loss": total / count,
                  "wall_ms": round((time.perf_counter() - start) * 1000.0, 3)}
        history.epochs.append(record)
        if log is not None:
            log(record)

        if evaluate is not None and epoch % train_config.eval_every == 0:
            evaluated = True
            metrics = evaluate(state)
            value = metrics if isinstance(metrics, (int, float)) else metrics[f"recall@{train_config.monitor_k}"]
            improved = value > history.best_metric
            if improved:
                history.best_metric = float(value)
                history.best_epoch = epoch
                best = state.copy()
                stale = 0
            else:
                stale += 1
            snap = {"epoch": epoch, **(metrics if isinstance(metrics, dict)
                                       else {f"recall@{train_config.monitor_k}": float(value)}),
                    "best_flag": improved}
            history.evaluations.append(snap)
            if log is not None:
                log(snap)
            if stale >= train_config.patience:
                history.stopped_early = True
                logger.info("early stop at epoch %d (best %.5f at %d)", epoch,
                            history.best_metric, history.best_epoch)
                break
    if not evaluated:
        best = state.copy()
    return history, best


def jsonl_writer(fh) -> Callable[[dict], None]:
    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
    return write
