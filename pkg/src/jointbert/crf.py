"""Linear-chain CRF over slot labels.

A labeling ``y`` of ``N`` words scores

    start[y_1] + sum_n emissions[n, y_n] + sum_n transitions[y_n, y_{n+1}] + end[y_N]

and the model is normalised over all ``L**N`` labelings. The training loss
is the negative log-likelihood ``log Z - score(gold)``, computed with the
forward algorithm; its gradient is the difference between expected and gold
feature counts, obtained from forward-backward marginals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.special import logsumexp

from . import tensor as tc
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class CrfParams:
    """Transition, start and end scores; fields are arrays or Tensors."""

    transitions: Any
    start_scores: Any
    end_scores: Any

    @classmethod
    def zeros(cls, num_labels: int, dtype=np.float64) -> "CrfParams":
        return cls(
            np.zeros((num_labels, num_labels), dtype),
            np.zeros(num_labels, dtype),
            np.zeros(num_labels, dtype),
        )

    @classmethod
    def from_params(cls, params: dict) -> "CrfParams":
        return cls(params["crf.transitions"], params["crf.start"], params["crf.end"])

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(x.data if isinstance(x, Tensor) else np.asarray(x)
                     for x in (self.transitions, self.start_scores, self.end_scores))

    @property
    def num_labels(self) -> int:
        return self.arrays()[1].shape[0]


def _check(emissions: np.ndarray, crf: CrfParams, labels=None):
    trans, start, end = crf.arrays()
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ShapeError(f"emissions must be (N >= 1, L), got {emissions.shape}")
    L = emissions.shape[1]
    if trans.shape != (L, L) or start.shape != (L,) or end.shape != (L,):
        raise ShapeError(
            f"CRF parameters {trans.shape}/{start.shape}/{end.shape} do not match {L} labels"
        )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (emissions.shape[0],):
            raise ShapeError(f"{labels.shape[0]} labels for {emissions.shape[0]} positions")
        if labels.min() < 0 or labels.max() >= L:
            raise IndexError(f"label id out of range for {L} labels")
    return trans, start, end


def sequence_score(emissions, labels: Sequence[int], crf: CrfParams) -> float:
    emissions = np.asarray(emissions, dtype=np.float64)
    trans, start, end = _check(emissions, crf, labels)
    y = np.asarray(labels)
    score = start[y[0]] + emissions[np.arange(len(y)), y].sum() + end[y[-1]]
    score += trans[y[:-1], y[1:]].sum()
    return float(score)


def log_partition(emissions, crf: CrfParams) -> float:
    """log of the summed exp-scores over every labeling (forward algorithm)."""
    emissions = np.asarray(emissions, dtype=np.float64)
    trans, start, end = _check(emissions, crf)
    alpha = start + emissions[0]
    for n in range(1, emissions.shape[0]):
        alpha = logsumexp(alpha[:, None] + trans, axis=0) + emissions[n]
    return float(logsumexp(alpha + end))


def viterbi_decode(emissions, crf: CrfParams) -> tuple[list[int], float]:
    """Highest-scoring labeling; ties resolve to the lowest label id."""
    emissions = np.asarray(emissions, dtype=np.float64)
    trans, start, end = _check(emissions, crf)
    n_pos = emissions.shape[0]
    score = start + emissions[0]
    backptr = np.zeros((n_pos, emissions.shape[1]), dtype=np.int64)
    for n in range(1, n_pos):
        cand = score[:, None] + trans
        backptr[n] = cand.argmax(axis=0)
        score = cand.max(axis=0) + emissions[n]
    final = score + end
    best = int(final.argmax())
    path = [best]
    for n in range(n_pos - 1, 0, -1):
        best = int(backptr[n, best])
        path.append(best)
    path.reverse()
    return path, float(final.max())


def _forward_backward(emissions: np.ndarray, lengths: np.ndarray, trans, start, end):
    """Batched log-space forward-backward over padded (B, N, L) emissions.

    Returns ``log Z`` per sequence, unary marginals (B, N, L) zeroed past each
    length, and pairwise marginals summed over positions and batch (L, L).
    """
    b, n_max, L = emissions.shape
    pos = np.arange(n_max)
    valid = pos[None, :] < lengths[:, None]

    alpha = np.empty((b, n_max, L))
    alpha[:, 0] = start + emissions[:, 0]
    for n in range(1, n_max):
        step = logsumexp(alpha[:, n - 1, :, None] + trans[None], axis=1) + emissions[:, n]
        alpha[:, n] = np.where(valid[:, n, None], step, alpha[:, n - 1])
    last = alpha[np.arange(b), lengths - 1]
    log_z = logsumexp(last + end, axis=1)

    beta = np.empty((b, n_max, L))
    beta[:, n_max - 1] = end
    for n in range(n_max - 2, -1, -1):
        step = logsumexp(trans[None] + (emissions[:, n + 1] + beta[:, n + 1])[:, None, :], axis=2)
        # a sequence whose last position is n starts its backward pass here
        beta[:, n] = np.where((n + 1 < lengths)[:, None], step, end)

    unary = np.exp(alpha + beta - log_z[:, None, None]) * valid[..., None]
    pair = np.zeros((L, L))
    for n in range(n_max - 1):
        mask = n + 1 < lengths
        if not mask.any():
            break
        lp = (alpha[mask, n, :, None] + trans[None]
              + (emissions[mask, n + 1] + beta[mask, n + 1])[:, None, :]
              - log_z[mask, None, None])
        pair += np.exp(lp).sum(axis=0)
    return log_z, unary, pair


def crf_nll_batch(emissions: Tensor, labels, lengths, crf: CrfParams) -> Tensor:
    """Summed negative log-likelihood over a padded batch.

    ``emissions`` is (B, N, L); ``labels`` (B, N) ints with arbitrary values
    past each sequence's length; ``lengths`` (B,) all >= 1.
    """
    trans_t, start_t, end_t = (tc.as_tensor(x) for x in
                               (crf.transitions, crf.start_scores, crf.end_scores))
    e = emissions.data.astype(np.float64)
    if e.ndim != 3:
        raise ShapeError(f"batched emissions must be (B, N, L), got {emissions.shape}")
    b, n_max, L = e.shape
    labels = np.asarray(labels, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if labels.shape != (b, n_max) or lengths.shape != (b,):
        raise ShapeError(f"labels {labels.shape} / lengths {lengths.shape} do not match emissions {e.shape}")
    if (lengths < 1).any() or (lengths > n_max).any():
        raise ValueError("every sequence length must be in [1, N]")
    trans = trans_t.data.astype(np.float64)
    start = start_t.data.astype(np.float64)
    end = end_t.data.astype(np.float64)
    if trans.shape != (L, L) or start.shape != (L,) or end.shape != (L,):
        raise ShapeError(f"CRF parameters {trans.shape}/{start.shape}/{end.shape} do not match {L} labels")
    valid = np.arange(n_max)[None, :] < lengths[:, None]
    y = np.where(valid, labels, 0)
    if (labels[valid] < 0).any() or (labels[valid] >= L).any():
        raise IndexError(f"label id out of range for {L} labels")

    log_z, unary, pair = _forward_backward(e, lengths, trans, start, end)
    rows = np.arange(b)
    gold = start[y[:, 0]] + end[y[rows, lengths - 1]]
    gold = gold + (np.take_along_axis(e, y[..., None], -1)[..., 0] * valid).sum(axis=1)
    edge_valid = valid[:, 1:]
    gold = gold + (trans[y[:, :-1], y[:, 1:]] * edge_valid).sum(axis=1)
    loss = np.asarray((log_z - gold).sum(), dtype=emissions.dtype)

    def backward(g):
        g = float(g)
        g_e = unary.copy()
        onehot = np.zeros_like(unary)
        np.put_along_axis(onehot, y[..., None], 1.0, -1)
        g_e -= onehot * valid[..., None]
        g_start = unary[:, 0].sum(axis=0)
        np.subtract.at(g_start, y[:, 0], 1.0)
        g_end = unary[rows, lengths - 1].sum(axis=0)
        np.subtract.at(g_end, y[rows, lengths - 1], 1.0)
        g_trans = pair.copy()
        src, dst = y[:, :-1][edge_valid], y[:, 1:][edge_valid]
        np.subtract.at(g_trans, (src, dst), 1.0)
        return (
            (g * g_e).astype(emissions.dtype),
            (g * g_trans).astype(trans_t.dtype),
            (g * g_start).astype(start_t.dtype),
            (g * g_end).astype(end_t.dtype),
        )

    return tc._node(loss, (emissions, trans_t, start_t, end_t), backward)


def crf_nll(emissions, labels: Sequence[int], crf: CrfParams) -> Tensor:
    """Negative log-likelihood of one (N, L) emission matrix under ``labels``."""
    emissions = tc.as_tensor(emissions)
    if emissions.ndim != 2:
        raise ShapeError(f"emissions must be (N, L), got {emissions.shape}")
    n = emissions.shape[0]
    return crf_nll_batch(
        tc.reshape(emissions, (1,) + emissions.shape),
        np.asarray(labels, dtype=np.int64)[None, :],
        np.array([n]),
        crf,
    )
