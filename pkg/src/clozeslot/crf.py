"""Linear-chain CRF whose transition matrix changes at every step.

For a sequence of length T the network emits ``transitions`` of shape
(T, 4, 4) and ``unaries`` of shape (T, 4). ``transitions[t][j, i]`` scores
moving from tag ``i`` at position ``t`` to tag ``j`` at position ``t + 1``;
the last matrix is never used. The unnormalized log-score of a tag sequence
``y`` is::

    sum_{t < T-1} transitions[t][y[t+1], y[t]] + sum_t unaries[t][y[t]]

All normalizers are computed in log space with max-shifted log-sum-exp.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autograd.tensor import Tensor, _result
from .tags import NUM_TAGS, InvalidTagSequence, tags_to_token_span, token_span_to_tags


@dataclass
class CrfPotentials:
    """Potentials for one sequence; ``length`` masks trailing pad positions."""

    transitions: np.ndarray
    unaries: np.ndarray
    length: int | None = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.unaries = np.asarray(self.unaries, dtype=np.float64)
        total = self.unaries.shape[0]
        if self.length is None:
            self.length = total
        if not 1 <= self.length <= total:
            raise ValueError(f"length {self.length} outside [1, {total}]")
        if self.transitions.shape[0] < self.length - 1 or self.transitions.shape[1:] != (NUM_TAGS, NUM_TAGS):
            raise ValueError(f"transitions shape {self.transitions.shape} does not cover length {self.length}")
        if not (np.all(np.isfinite(self.trans)) and np.all(np.isfinite(self.unary))):
            raise ValueError("potentials must be finite")

    @property
    def trans(self) -> np.ndarray:
        return self.transitions[: self.length - 1]

    @property
    def unary(self) -> np.ndarray:
        return self.unaries[: self.length]


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m).squeeze(axis)


def sequence_score(pot: CrfPotentials, tags: Sequence[int]) -> float:
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (pot.length,):
        raise ValueError(f"tag sequence length {tags.shape[0]} != sequence length {pot.length}")
    steps = np.arange(pot.length)
    score = pot.unary[steps, tags].sum()
    if pot.length > 1:
        score += pot.trans[steps[:-1], tags[1:], tags[:-1]].sum()
    return float(score)


def _forward(trans: np.ndarray, unary: np.ndarray) -> np.ndarray:
    alpha = np.empty_like(unary)
    alpha[0] = unary[0]
    for t in range(1, len(unary)):
        alpha[t] = unary[t] + _lse(alpha[t - 1][None, :] + trans[t - 1], axis=1)
    return alpha


def log_partition(pot: CrfPotentials) -> float:
    return float(_lse(_forward(pot.trans, pot.unary)[-1], axis=0))


def log_likelihood(pot: CrfPotentials, tags: Sequence[int]) -> float:
    """log p(tags | potentials); the training loss is its negative."""
    return sequence_score(pot, tags) - log_partition(pot)


def viterbi(pot: CrfPotentials, k: int = 1) -> list[tuple[tuple[int, ...], float]]:
    """The ``k`` best tag sequences with exact log-probabilities, best first.

    Equal scores are ordered by lexicographic tag order.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    trans, unary = pot.trans, pot.unary
    beams: list[list[tuple[float, tuple[int, ...]]]] = [[(unary[0, s], (s,))] for s in range(NUM_TAGS)]
    for t in range(1, len(unary)):
        new_beams = []
        for nxt in range(NUM_TAGS):
            cands = [
                (score + trans[t - 1, nxt, prev] + unary[t, nxt], path + (nxt,))
                for prev in range(NUM_TAGS)
                for score, path in beams[prev]
            ]
            cands.sort(key=lambda c: (-c[0], c[1]))
            new_beams.append(cands[:k])
        beams = new_beams
    final = sorted((c for beam in beams for c in beam), key=lambda c: (-c[0], c[1]))[:k]
    log_z = log_partition(pot)
    return [(path, float(score - log_z)) for score, path in final]


def span_posteriors(
    pot: CrfPotentials, candidate_spans: Iterable[tuple[int, int] | None]
) -> dict[tuple[int, int] | None, float]:
    """Exact probability of the tag sequence induced by each token span (``None`` = no span)."""
    log_z = log_partition(pot)
    out = {}
    for span in candidate_spans:
        tags = token_span_to_tags(pot.length, span)
        out[span] = float(np.exp(sequence_score(pot, tags) - log_z))
    return out


def predict_span(pot: CrfPotentials) -> tuple[tuple[int, int] | None, float, bool]:
    """Top-1 decode mapped to a token span; off-grammar decodes become ``None``.

    Returns ``(span, probability, was_invalid)``.
    """
    (path, logp), = viterbi(pot, 1)
    try:
        return tags_to_token_span(path), float(np.exp(logp)), False
    except InvalidTagSequence:
        return None, float(np.exp(logp)), True


# ---------------------------------------------------------------- batched


@dataclass
class BatchPosteriors:
    log_z: np.ndarray
    node: np.ndarray = field(repr=False)
    edge: np.ndarray = field(repr=False)


def _length_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < lengths[:, None]


def batch_posteriors(transitions: np.ndarray, unaries: np.ndarray, lengths: np.ndarray) -> BatchPosteriors:
    """Forward-backward over a padded batch.

    ``node[b, t, i]`` is p(y_t = i); ``edge[b, t, j, i]`` is p(y_t = i, y_{t+1} = j).
    Both are zero at padded positions.
    """
    batch, steps, _ = unaries.shape
    lengths = np.asarray(lengths)
    valid = _length_mask(lengths, steps)
    alpha = np.empty_like(unaries)
    alpha[:, 0] = unaries[:, 0]
    for t in range(1, steps):
        step = unaries[:, t] + _lse(alpha[:, t - 1][:, None, :] + transitions[:, t - 1], axis=2)
        alpha[:, t] = np.where(valid[:, t, None], step, alpha[:, t - 1])
    rows = np.arange(batch)
    log_z = _lse(alpha[rows, lengths - 1], axis=1)

    beta = np.zeros_like(unaries)
    for t in range(steps - 2, -1, -1):
        inner = transitions[:, t] + (unaries[:, t + 1] + beta[:, t + 1])[:, :, None]
        step = _lse(inner, axis=1)
        beta[:, t] = np.where(valid[:, t + 1, None], step, 0.0)

    node = np.exp(alpha + beta - log_z[:, None, None]) * valid[:, :, None]
    if steps > 1:
        edge_logit = (
            alpha[:, :-1, None, :]
            + transitions[:, : steps - 1]
            + (unaries[:, 1:] + beta[:, 1:])[:, :, :, None]
            - log_z[:, None, None, None]
        )
        edge = np.exp(edge_logit) * valid[:, 1:, None, None]
        edge = np.concatenate([edge, np.zeros((batch, 1, NUM_TAGS, NUM_TAGS), edge.dtype)], axis=1)
    else:
        edge = np.zeros((batch, 1, NUM_TAGS, NUM_TAGS), unaries.dtype)
    return BatchPosteriors(log_z, node, edge)


def _gold_counts(tags: np.ndarray, lengths: np.ndarray, shape_t, shape_u, dtype):
    batch, steps = tags.shape
    valid = _length_mask(lengths, steps)
    safe = np.where(valid, tags, 0)
    gold_u = np.zeros(shape_u, dtype)
    b_idx, t_idx = np.nonzero(valid)
    gold_u[b_idx, t_idx, safe[b_idx, t_idx]] = 1.0
    gold_t = np.zeros(shape_t, dtype)
    if steps > 1:
        pair_valid = valid[:, 1:]
        b_idx, t_idx = np.nonzero(pair_valid)
        gold_t[b_idx, t_idx, safe[b_idx, t_idx + 1], safe[b_idx, t_idx]] = 1.0
    return gold_t, gold_u


def batch_nll(transitions: np.ndarray, unaries: np.ndarray, tags: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Per-sequence negative log-likelihood (no gradient)."""
    post = batch_posteriors(transitions, unaries, lengths)
    gold_t, gold_u = _gold_counts(tags, np.asarray(lengths), transitions.shape, unaries.shape, unaries.dtype)
    gold = (gold_u * unaries).sum(axis=(1, 2)) + (gold_t * transitions).sum(axis=(1, 2, 3))
    return post.log_z - gold


def crf_nll(transitions: Tensor, unaries: Tensor, tags: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Differentiable per-sequence NLL for padded batches.

    The gradient is expected feature counts minus gold counts, taken from
    forward-backward marginals.
    """
    tags = np.asarray(tags, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    tr, un = transitions.data, unaries.data
    if tr.shape[:2] != un.shape[:2] or tags.shape != un.shape[:2] or un.shape[2] != NUM_TAGS:
        raise ValueError(f"crf_nll: shapes {tr.shape}, {un.shape}, tags {tags.shape} disagree")
    post = batch_posteriors(tr, un, lengths)
    gold_t, gold_u = _gold_counts(tags, lengths, tr.shape, un.shape, un.dtype)
    gold = (gold_u * un).sum(axis=(1, 2)) + (gold_t * tr).sum(axis=(1, 2, 3))
    out = (post.log_z - gold).astype(un.dtype)

    def grad_fn(g):
        gb = g[:, None, None]
        return ((post.edge - gold_t) * gb[..., None], (post.node - gold_u) * gb)

    return _result(out, (transitions, unaries), grad_fn)


def batch_viterbi(transitions: np.ndarray, unaries: np.ndarray, lengths: np.ndarray) -> list[tuple[list[int], float]]:
    """Vectorized top-1 decode for a padded batch: ``(tags, log_probability)`` per row."""
    batch, steps, _ = unaries.shape
    lengths = np.asarray(lengths)
    valid = _length_mask(lengths, steps)
    score = unaries[:, 0].astype(np.float64)
    back = np.zeros((batch, steps, NUM_TAGS), dtype=np.int64)
    for t in range(1, steps):
        cand = score[:, None, :] + transitions[:, t - 1]
        best_prev = cand.argmax(axis=2)
        step = np.take_along_axis(cand, best_prev[:, :, None], axis=2)[:, :, 0] + unaries[:, t]
        back[:, t] = best_prev
        score = np.where(valid[:, t, None], step, score)
    log_z = batch_posteriors(transitions.astype(np.float64), unaries.astype(np.float64), lengths).log_z
    out = []
    for b in range(batch):
        n = int(lengths[b])
        last = int(score[b].argmax())
        path = [last]
        for t in range(n - 1, 0, -1):
            last = int(back[b, t, last])
            path.append(last)
        path.reverse()
        out.append((path, float(score[b].max() - log_z[b])))
    return out
