"""Degree-normalized propagation operators and one synchronous propagation step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class PropagationOperator:
    """Normalized interaction operator, its transpose, and the semantic operator.

    One step maps ``(E_u, E_i)`` to ``(R_norm @ E_i, R_norm_T @ E_u + B_norm @ E_i)``.
    ``B_norm_T`` is kept for the backward pass.
    """

    R_norm: sp.csr_matrix
    R_norm_T: sp.csr_matrix
    B_norm: sp.csr_matrix
    B_norm_T: sp.csr_matrix

    @property
    def n_users(self) -> int:
        return self.R_norm.shape[0]

    @property
    def n_items(self) -> int:
        return self.R_norm.shape[1]


def _canonical(M) -> sp.csr_matrix:
    M = sp.csr_matrix(M, dtype=np.float64, copy=True)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def normalize_interaction(R) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Weight every stored ``(u, i)`` by ``1 / sqrt(deg(u) * deg(i))`` and materialize the transpose."""
    R = _canonical(R)
    R.data[:] = 1.0
    user_deg = np.diff(R.indptr)
    item_deg = np.bincount(R.indices, minlength=R.shape[1])
    if (user_deg == 0).any():
        raise ValueError(f"{int((user_deg == 0).sum())} users have no interactions")
    if (item_deg == 0).any():
        raise ValueError(f"{int((item_deg == 0).sum())} items have no interactions")
    rows = np.repeat(np.arange(R.shape[0]), user_deg)
    R.data = 1.0 / np.sqrt(user_deg[rows].astype(np.float64) * item_deg[R.indices])
    R_T = R.T.tocsr()
    R_T.sort_indices()
    return R, R_T


def normalize_similarity(B, weighting: str = "degree", summand: str = "neighbor") -> sp.csr_matrix:
    """Semantic propagation operator over the support of ``B``.

    ``weighting="degree"`` assigns ``1 / sqrt(outdeg(i) * outdeg(b))`` to each
    edge ``i -> b``; ``"weighted"`` further multiplies by ``B[i, b]``. An edge
    target with no out-edges of its own counts as degree 1.

    ``summand="self"`` aggregates the item's own embedding instead of its
    neighbours', which collapses the operator to a diagonal of row sums.
    """
    if weighting not in {"degree", "weighted"}:
        raise ValueError(f"unknown weighting {weighting!r}")
    if summand not in {"neighbor", "self"}:
        raise ValueError(f"unknown summand {summand!r}")
    B = _canonical(B)
    if (B.data < 0).any():
        raise ValueError("similarity weights must be nonnegative")
    if B.diagonal().any():
        raise ValueError("similarity matrix must have a zero diagonal")
    out_deg = np.diff(B.indptr).astype(np.float64)
    rows = np.repeat(np.arange(B.shape[0]), np.diff(B.indptr))
    coef = 1.0 / np.sqrt(out_deg[rows] * np.maximum(out_deg[B.indices], 1.0))
    if weighting == "weighted":
        coef = coef * B.data
    B.data = coef
    if summand == "self":
        B = sp.diags(np.asarray(B.sum(axis=1)).ravel(), format="csr")
        B.eliminate_zeros()
    return B


def build_operator(R, B=None, weighting: str = "degree", summand: str = "neighbor") -> PropagationOperator:
    R_norm, R_norm_T = normalize_interaction(R)
    m = R_norm.shape[1]
    if B is None:
        B_norm = sp.csr_matrix((m, m), dtype=np.float64)
    else:
        if B.shape != (m, m):
            raise ValueError(f"similarity matrix shape {B.shape} does not match {m} items")
        B_norm = normalize_similarity(B, weighting, summand)
    B_norm_T = B_norm.T.tocsr()
    B_norm_T.sort_indices()
    return PropagationOperator(R_norm, R_norm_T, B_norm, B_norm_T)


def _check(op: PropagationOperator, E_u: np.ndarray, E_i: np.ndarray) -> None:
    if E_u.ndim != 2 or E_i.ndim != 2:
        raise ValueError("embedding tables must be 2-d")
    if E_u.shape[0] != op.n_users or E_i.shape[0] != op.n_items:
        raise ValueError(f"embedding rows ({E_u.shape[0]}, {E_i.shape[0]}) do not match "
                         f"operator ({op.n_users}, {op.n_items})")
    if E_u.shape[1] != E_i.shape[1]:
        raise ValueError("user and item embedding widths differ")


def propagate_once(op: PropagationOperator, E_u, E_i, use_semantic: bool = True
                   ) -> tuple[np.ndarray, np.ndarray]:
    """One Jacobi-style step: both outputs read only the step-k inputs."""
    E_u = np.asarray(E_u, dtype=np.float64)
    E_i = np.asarray(E_i, dtype=np.float64)
    _check(op, E_u, E_i)
    next_u = op.R_norm @ E_i
    next_i = op.R_norm_T @ E_u
    if use_semantic and op.B_norm.nnz:
        next_i = next_i + op.B_norm @ E_i
    return next_u, next_i


def propagate_transpose(op: PropagationOperator, G_u, G_i, use_semantic: bool = True
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`propagate_once`, used to pull gradients back one layer."""
    _check(op, G_u, G_i)
    prev_u = op.R_norm @ G_i
    prev_i = op.R_norm_T @ G_u
    if use_semantic and op.B_norm_T.nnz:
        prev_i = prev_i + op.B_norm_T @ G_i
    return prev_u, prev_i
