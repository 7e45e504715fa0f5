"""Beam search per decoder direction and the two-beam vote.

Scores are raw sums of token log-probabilities (no length normalization by
default; both directions score the same target length for the same final
string, so the sums stay comparable). Each step expands every live
hypothesis over the full vocabulary, keeps the top ``beam_size`` candidates
by cumulative score, and retires the ones ending in the end sentinel into
the result pool. Search stops once the pool holds ``beam_size`` finished
hypotheses or ``max_len`` is reached; leftover live hypotheses are then
returned force-finished with ``finished=False``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BOS_ID, BOSR_ID, EOS_ID, L2R, PAD_ID, R2L, ModelParams, decoder_forward, encode
from .numerics import Tensor, cross_entropy, neg, no_grad


@dataclass(frozen=True)
class Hypothesis:
    """Emitted tokens in the decoder's own reading order (end sentinel
    included when finished naturally) with the cumulative log-probability."""

    tokens: tuple[int, ...]
    score: float
    direction: str
    finished: bool


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def _begin_id(direction: str) -> int:
    return BOS_ID if direction == L2R else BOSR_ID


def beam_search(
    params: ModelParams,
    direction: str,
    src_ids,
    beam_size: int,
    max_len: int,
    memory: Tensor | None = None,
    src_pad: np.ndarray | None = None,
    length_normalize: bool = False,
) -> list[Hypothesis]:
    """Decode one instance; returns up to beam_size hypotheses sorted by
    score descending (finished ones first by construction of the pool)."""
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    src = np.asarray(src_ids, dtype=np.int64)
    if src.ndim == 1:
        src = src[None, :]
    with no_grad():
        if memory is None:
            memory = encode(params, src)
        if src_pad is None:
            src_pad = src == PAD_ID

        bos = _begin_id(direction)
        live: list[tuple[int, ...]] = [()]
        live_scores = np.zeros(1)
        finished: list[Hypothesis] = []
        for step in range(max_len):
            n = len(live)
            dec_in = np.empty((n, step + 1), dtype=np.int64)
            dec_in[:, 0] = bos
            for i, seq in enumerate(live):
                dec_in[i, 1:] = seq
            mem_n = Tensor(np.broadcast_to(memory.data, (n,) + memory.shape[1:]))
            pad_n = np.broadcast_to(src_pad, (n,) + src_pad.shape[1:])
            logits = decoder_forward(params, direction, dec_in, mem_n, pad_n)
            logp = _log_softmax(logits.data[:, -1, :])
            cand = (live_scores[:, None] + logp).reshape(-1)
            k = min(beam_size, cand.size)
            top = np.argsort(-cand, kind="stable")[:k]
            new_live: list[tuple[int, ...]] = []
            new_scores: list[float] = []
            vocab = logp.shape[-1]
            for flat in top:
                h, tok = divmod(int(flat), vocab)
                seq = live[h] + (tok,)
                score = float(cand[flat])
                if tok == EOS_ID:
                    finished.append(Hypothesis(seq, score, direction, True))
                else:
                    new_live.append(seq)
                    new_scores.append(score)
            live = new_live
            live_scores = np.asarray(new_scores)
            if len(finished) >= beam_size or not live:
                break
        else:
            finished.extend(
                Hypothesis(seq, float(s), direction, False)
                for seq, s in zip(live, live_scores)
            )

    def sort_key(h: Hypothesis) -> float:
        return h.score / max(1, len(h.tokens)) if length_normalize else h.score

    finished.sort(key=sort_key, reverse=True)
    return finished[:beam_size]


def canonical_tokens(hyp: Hypothesis) -> list[int]:
    """Content tokens in left-to-right order, end sentinel stripped."""
    toks = list(hyp.tokens)
    if hyp.finished and toks and toks[-1] == EOS_ID:
        toks = toks[:-1]
    if hyp.direction == R2L:
        toks.reverse()
    return toks


def vote(l2r: Hypothesis, r2l: Hypothesis) -> list[int]:
    """Pick the hypothesis with the higher cumulative log-probability;
    exact ties go to the left-to-right decoder."""
    winner = l2r if l2r.score >= r2l.score else r2l
    return canonical_tokens(winner)


def decode_both(
    params: ModelParams, src_ids, beam_size: int, max_len: int
) -> tuple[list[Hypothesis], list[Hypothesis]]:
    """Run beam search in both directions over one shared encoder pass."""
    src = np.asarray(src_ids, dtype=np.int64)
    if src.ndim == 1:
        src = src[None, :]
    with no_grad():
        memory = encode(params, src)
    pad = src == PAD_ID
    l2r = beam_search(params, L2R, src, beam_size, max_len, memory=memory, src_pad=pad)
    r2l = beam_search(params, R2L, src, beam_size, max_len, memory=memory, src_pad=pad)
    return l2r, r2l


def hypothesis_log_prob(
    params: ModelParams,
    src_ids,
    hyp: Hypothesis,
    memory: Tensor | None = None,
    src_pad: np.ndarray | None = None,
) -> Tensor:
    """Teacher-forced log-probability of a hypothesis under its own
    direction's factorization; differentiable, used for policy gradients.
    Pass a precomputed ``memory`` to share one encoder pass (and its
    gradient subgraph) across several hypotheses."""
    src = np.asarray(src_ids, dtype=np.int64)
    if src.ndim == 1:
        src = src[None, :]
    if memory is None:
        memory = encode(params, src)
    if src_pad is None:
        src_pad = src == PAD_ID
    emitted = list(hyp.tokens)
    dec_in = np.array([[_begin_id(hyp.direction)] + emitted[:-1]], dtype=np.int64)
    targets = np.array([emitted], dtype=np.int64)
    logits = decoder_forward(params, hyp.direction, dec_in, memory, src_pad)
    return neg(cross_entropy(logits, targets, ignore_index=-1))


def score_sequence(
    params: ModelParams, direction: str, src_ids, canonical: list[int], finished: bool = True
) -> float:
    """Re-score a canonical-order sequence under the given direction."""
    toks = list(canonical)
    if direction == R2L:
        toks.reverse()
    if finished:
        toks.append(EOS_ID)
    hyp = Hypothesis(tuple(toks), 0.0, direction, finished)
    with no_grad():
        return hypothesis_log_prob(params, src_ids, hyp).item()
