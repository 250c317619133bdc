"""Model family: forward passes, readout, scoring and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import PropagationOperator, propagate_once

KINDS = ("belightrec", "lightgcn", "mfbpr", "simonly", "belightrec_w")
GCN_KINDS = ("belightrec", "lightgcn", "belightrec_w")
SEMANTIC_KINDS = ("belightrec", "belightrec_w")
TRAINABLE_KINDS = ("belightrec", "lightgcn", "mfbpr", "belightrec_w")

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "belightrec"
    dim: int = 64
    n_layers: int = 3
    seed: int = 0
    init_scale: float = 0.1
    include_layer0: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind in GCN_KINDS and self.n_layers < 1:
            raise ValueError("GCN kinds need n_layers >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")

    @property
    def use_semantic(self) -> bool:
        return self.kind in SEMANTIC_KINDS

    @property
    def propagates(self) -> bool:
        return self.kind in GCN_KINDS


@dataclass
class EmbeddingState:
    """Trainable layer-0 tables plus, for the weighted variant, per-layer ``(W, bias)``."""

    user: np.ndarray
    item: np.ndarray
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.user.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [self.user, self.item, *self.weights, *self.biases]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.user.copy(), self.item.copy(),
                              [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_embeddings(n: int, m: int, d: int, seed: int = 0, init_scale: float = 0.1) -> EmbeddingState:
    """I.i.d. ``N(0, init_scale**2)`` user and item tables from a seeded generator."""
    if min(n, m, d) < 1:
        raise ValueError("n, m and d must be >= 1")
    rng = np.random.default_rng(seed)
    user = rng.normal(0.0, 1.0, size=(n, d)) * init_scale
    item = rng.normal(0.0, 1.0, size=(m, d)) * init_scale
    return EmbeddingState(user, item)


def init_layer_params(n_layers: int, d: int, seed: int = 0) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Xavier-normal ``d x d`` weights and zero biases, one pair per layer."""
    rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / (d + d))
    weights = [rng.normal(0.0, std, size=(d, d)) for _ in range(n_layers)]
    biases = [np.zeros(d) for _ in range(n_layers)]
    return weights, biases


def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def leaky_relu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def _readout(layers: list[tuple[np.ndarray, np.ndarray]], include_layer0: bool):
    used = layers if include_layer0 else layers[1:]
    if len(used) == 1:
        return used[0][0].copy(), used[0][1].copy()
    e_u = sum(l[0] for l in used[1:]) + used[0][0]
    e_i = sum(l[1] for l in used[1:]) + used[0][1]
    return e_u / len(used), e_i / len(used)


def propagate_layers(state: EmbeddingState, op: PropagationOperator, config: ModelConfig):
    """Layer outputs ``[(E_u^0, E_i^0), ..., (E_u^K, E_i^K)]`` and, for the
    weighted variant, the pre-activations of layers 1..K."""
    if state.user.shape[0] != op.n_users or state.item.shape[0] != op.n_items:
        raise ValueError(f"state shape ({state.user.shape[0]}, {state.item.shape[0]}) does not match "
                         f"operator ({op.n_users}, {op.n_items})")
    layers = [(state.user, state.item)]
    pre = []
    weighted = config.kind == "belightrec_w"
    if weighted and len(state.weights) != config.n_layers:
        raise ValueError(f"weighted variant needs {config.n_layers} layer params, got {len(state.weights)}")
    for k in range(config.n_layers):
        E_u, E_i = propagate_once(op, *layers[-1], use_semantic=config.use_semantic)
        if weighted:
            P_u = E_u @ state.weights[k] + state.biases[k]
            P_i = E_i @ state.weights[k] + state.biases[k]
            pre.append(((E_u, E_i), (P_u, P_i)))
            E_u, E_i = leaky_relu(P_u), leaky_relu(P_i)
        layers.append((E_u, E_i))
    return layers, pre


def forward(state: EmbeddingState, op: PropagationOperator | None, config: ModelConfig
            ) -> tuple[np.ndarray, np.ndarray]:
    """Readout ``(e_u, e_i)``: the mean of layers 1..K (0..K with ``include_layer0``).

    ``mfbpr`` returns the layer-0 tables unchanged.
    """
    if config.kind == "simonly":
        raise ValueError("the similarity-only ranker has no embeddings; use similarity_only_scores")
    if config.kind == "mfbpr":
        return state.user, state.item
    if config.kind == "belightrec_w":
        return forward_weighted(state, op, config)
    layers, _ = propagate_layers(state, op, config)
    return _readout(layers, config.include_layer0)


def forward_weighted(state: EmbeddingState, op: PropagationOperator, config: ModelConfig
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Each layer applies ``LeakyReLU(propagate(E) @ W + bias)``; readout as in :func:`forward`."""
    if config.kind != "belightrec_w":
        config = ModelConfig(**{**config.__dict__, "kind": "belightrec_w"})
    layers, _ = propagate_layers(state, op, config)
    return _readout(layers, config.include_layer0)


def predict_scores(user_vec: np.ndarray, item_table: np.ndarray) -> np.ndarray:
    """Dot-product score of one user (or a block of users) against every item."""
    return np.asarray(user_vec) @ np.asarray(item_table).T


def similarity_only_scores(train_items, B) -> np.ndarray:
    """Sum of similarity rows over a user's training items.

    ``train_items`` is an index collection for one user, or a sparse user x item
    matrix for a block of users.
    """
    B = sp.csr_matrix(B)
    if sp.issparse(train_items):
        return np.asarray((sp.csr_matrix(train_items) @ B).todense())
    idx = np.asarray(sorted(set(int(i) for i in train_items)), dtype=np.int64)
    if idx.size == 0:
        return np.zeros(B.shape[1])
    return np.asarray(B[idx].sum(axis=0)).ravel()


# -- checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"BLCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIII")


def save_checkpoint(path, state: EmbeddingState, config: ModelConfig) -> bytes:
    """Write magic, version, kind code, n, m, d, K, flags, then float32 tables."""
    n, d = state.user.shape
    m = state.item.shape[0]
    flags = int(config.include_layer0)
    chunks = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, KINDS.index(config.kind),
                           n, m, d, config.n_layers, flags)]
    for table in state.parameters():
        chunks.append(np.ascontiguousarray(table, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    if path is not None:
        Path(path).write_bytes(payload)
    return payload


def load_checkpoint(source, seed: int = 0, init_scale: float = 0.1) -> tuple[EmbeddingState, ModelConfig]:
    raw = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated checkpoint header")
    magic, version, kind_code, n, m, d, K, flags = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if kind_code >= len(KINDS):
        raise ValueError(f"unknown kind code {kind_code}")
    kind = KINDS[kind_code]
    config = ModelConfig(kind=kind, dim=d, n_layers=K, seed=seed, init_scale=init_scale,
                         include_layer0=bool(flags & 1))
    shapes = [(n, d), (m, d)]
    if kind == "belightrec_w":
        shapes += [(d, d)] * K + [(d,)] * K
    pos = _HEADER.size
    tables = []
    for shape in shapes:
        count = int(np.prod(shape))
        if pos + 4 * count > len(raw):
            raise ValueError("truncated checkpoint payload")
        tables.append(np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
                      .reshape(shape).astype(np.float64))
        pos += 4 * count
    if pos != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    state = EmbeddingState(tables[0], tables[1])
    if kind == "belightrec_w":
        state.weights = tables[2:2 + K]
        state.biases = tables[2 + K:]
    return state, config
