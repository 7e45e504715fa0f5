"""Maximum-likelihood training and REINFORCE fine-tuning.

Phase one minimizes the summed cross entropy of both decoders with Adam.
Phase two continues from the trained policy: candidate sequences come from
beam search in both directions (beam 6 by default), the pooled finished
hypotheses are the N samples, each gets a 0/1 answer reward, and the
mean reward over the pool is the baseline. The policy-gradient loss is

    (1/N) * sum_n (r_n - r_b) * CE(sample_n)

where CE is the teacher-forced negative log-likelihood of the sample under
its own direction's factorization. Rewards never enter the differentiation
graph; they only weight it. When all N rewards agree the advantage is
identically zero and so is the gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import corpus, decoding, equations
from .corpus import PreparedInstance, Vocabulary
from .model import (
    Batch,
    LossParts,
    ModelConfig,
    ModelParams,
    PAD_ID,
    encode,
    init_params,
    joint_loss,
    make_batch,
)
from .numbering import NumberMapping
from .numerics import NonFiniteError, backward


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the run is aborted with a diagnostic."""


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; per-parameter first/second moments."""

    def __init__(
        self,
        params: ModelParams,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.named()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.named()}

    def step(self) -> None:
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        for name, tensor in self.params.named():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_norm(params: ModelParams) -> float:
    total = 0.0
    for _, t in params.named():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return math.sqrt(total)


def clip_grads(params: ModelParams, max_norm: float) -> float:
    """Scale gradients to a global norm of max_norm; returns the pre-clip norm."""
    norm = grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, t in params.named():
            if t.grad is not None:
                t.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# mle
# ---------------------------------------------------------------------------


def mle_step(params: ModelParams, opt: Adam, batch: Batch, rng=None) -> LossParts:
    """One optimizer update on the joint loss; returns the pre-update loss."""
    params.zero_grad()
    try:
        parts = joint_loss(params, batch, train=True, rng=rng)
    except NonFiniteError as e:
        raise TrainingDiverged(f"non-finite loss at optimizer step {opt.steps + 1}: {e}") from e
    backward(parts.total)
    opt.step()
    return parts


# ---------------------------------------------------------------------------
# reinforce
# ---------------------------------------------------------------------------


def baseline(rewards: Sequence[float]) -> float:
    """Mean reward over the N samples of one instance."""
    if len(rewards) == 0:
        raise ValueError("baseline needs at least one sample")
    return sum(rewards) / len(rewards)


@dataclass
class RewardSample:
    hypothesis: decoding.Hypothesis
    tokens: list[str]  # canonical order, vocabulary strings
    reward: int


@dataclass
class RlStepResult:
    mean_reward: float
    n_samples: int
    grad_norm: float
    updated: bool
    skipped: bool = False


def sample_pool(
    params: ModelParams,
    vocab: Vocabulary,
    src: np.ndarray,
    mapping: NumberMapping,
    gold: list,
    beam_size: int,
    max_len: int,
) -> list[RewardSample]:
    """Beam search both directions and score every returned hypothesis."""
    hyps_l, hyps_r = decoding.decode_both(params, src, beam_size, max_len)
    pool = []
    for hyp in hyps_l + hyps_r:
        tokens = vocab.decode_target(decoding.canonical_tokens(hyp))
        pool.append(RewardSample(hyp, tokens, equations.reward(tokens, mapping, gold)))
    return pool


def reinforce_step(
    params: ModelParams,
    opt: Adam,
    vocab: Vocabulary,
    inst: PreparedInstance,
    beam_size: int = 6,
    max_len: int = 64,
    max_grad_norm: float = 1.0,
) -> RlStepResult:
    """One policy-gradient update on one instance.

    The advantage multiplies the teacher-forced loss of each sample, so
    gradients flow through log-probabilities only, never through rewards.
    """
    gold = inst.problem.answers
    src = np.asarray(vocab.encode_source(inst.source), dtype=np.int64)
    pool = sample_pool(params, vocab, src, inst.mapping, gold, beam_size, max_len)
    if not pool:
        return RlStepResult(0.0, 0, 0.0, updated=False, skipped=True)
    rewards = [s.reward for s in pool]
    r_b = baseline(rewards)
    n = len(pool)
    params.zero_grad()
    src_2d = src[None, :] if src.ndim == 1 else src
    memory = encode(params, src_2d)  # one encoder pass shared by all samples
    src_pad = src_2d == PAD_ID
    loss = None
    for sample in pool:
        coeff = (sample.reward - r_b) / n
        lp = decoding.hypothesis_log_prob(params, src_2d, sample.hypothesis, memory, src_pad)
        term = lp * (-coeff)
        loss = term if loss is None else loss + term
    backward(loss)
    norm = grad_norm(params)
    updated = any(r != r_b for r in rewards)
    if updated:
        clip_grads(params, max_grad_norm)
        opt.step()
    return RlStepResult(r_b, n, norm, updated=updated)


# ---------------------------------------------------------------------------
# the training driver
# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    epochs: int = 300
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    eval_every: int = 0  # 0 = decode metrics only after the final epoch
    eval_beam: int = 10
    max_len: int = 64
    rl_epochs: int = 0
    rl_lr: float = 1e-5
    rl_beam: int = 6
    grad_clip: float = 1.0
    log_path: Optional[str] = None
    stop_accuracy: Optional[float] = None  # early-stop once periodic vote accuracy reaches this


def _log(settings: TrainSettings, metrics: list[dict], record: dict) -> None:
    metrics.append(record)
    if settings.log_path:
        with open(settings.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def _metric_record(epoch: int, split: str) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "loss_l2r": None,
        "loss_r2l": None,
        "answer_accuracy_l2r": None,
        "answer_accuracy_r2l": None,
        "answer_accuracy_vote": None,
        "mean_reward": None,
    }


def _decode_metrics(record, params, vocab, insts, settings):
    report = corpus.evaluate(params, vocab, insts, settings.eval_beam, settings.max_len)
    record["answer_accuracy_l2r"] = report.accuracy_l2r
    record["answer_accuracy_r2l"] = report.accuracy_r2l
    record["answer_accuracy_vote"] = report.accuracy_vote
    return report


def _batches(instances, vocab, order, batch_size):
    for start in range(0, len(order), batch_size):
        chunk = [instances[i] for i in order[start : start + batch_size]]
        src = [vocab.encode_source(inst.source) for inst in chunk]
        tgt = [vocab.encode_target(list(inst.template.tokens)) for inst in chunk]
        yield make_batch(src, tgt)


def run_mle(
    params: ModelParams,
    vocab: Vocabulary,
    train_insts: Sequence[PreparedInstance],
    settings: TrainSettings,
    dev_insts: Optional[Sequence[PreparedInstance]] = None,
    metrics: Optional[list[dict]] = None,
) -> list[dict]:
    """Cross-entropy phase over the alignable training instances."""
    usable = [i for i in train_insts if corpus.encodable(vocab, i)]
    if not usable:
        raise ValueError("no alignable training instances")
    metrics = metrics if metrics is not None else []
    opt = Adam(params, settings.lr)
    rng = np.random.default_rng(settings.seed)
    order_rng = np.random.default_rng(settings.seed + 1)
    for epoch in range(settings.epochs):
        order = order_rng.permutation(len(usable))
        tot_l = tot_r = 0.0
        n_l = n_r = 0
        for batch in _batches(usable, vocab, order, settings.batch_size):
            parts = mle_step(params, opt, batch, rng=rng)
            tot_l += parts.l2r.item()
            tot_r += parts.r2l.item()
            n_l += parts.tokens_l2r
            n_r += parts.tokens_r2l
        record = _metric_record(epoch, "train")
        record["loss_l2r"] = tot_l / max(n_l, 1)
        record["loss_r2l"] = tot_r / max(n_r, 1)
        last = epoch == settings.epochs - 1
        reached = None
        if last or (settings.eval_every and (epoch + 1) % settings.eval_every == 0):
            target = dev_insts if dev_insts is not None else train_insts
            split = "dev" if dev_insts is not None else "train"
            dev_record = record if split == "train" else _metric_record(epoch, split)
            report = _decode_metrics(dev_record, params, vocab, target, settings)
            reached = report.accuracy_vote
            if dev_record is not record:
                _log(settings, metrics, record)
                _log(settings, metrics, dev_record)
                if settings.stop_accuracy is not None and reached >= settings.stop_accuracy:
                    break
                continue
        _log(settings, metrics, record)
        if (
            settings.stop_accuracy is not None
            and reached is not None
            and reached >= settings.stop_accuracy
        ):
            break
    return metrics


def run_rl(
    params: ModelParams,
    vocab: Vocabulary,
    train_insts: Sequence[PreparedInstance],
    settings: TrainSettings,
    dev_insts: Optional[Sequence[PreparedInstance]] = None,
    metrics: Optional[list[dict]] = None,
) -> list[dict]:
    """REINFORCE phase; instances with no answers are skipped and counted."""
    metrics = metrics if metrics is not None else []
    usable = [i for i in train_insts if i.problem.answers and i.source]
    opt = Adam(params, settings.rl_lr)
    order_rng = np.random.default_rng(settings.seed + 2)
    for epoch in range(settings.rl_epochs):
        order = order_rng.permutation(len(usable))
        rewards = []
        skipped = 0
        for i in order:
            result = reinforce_step(
                params,
                opt,
                vocab,
                usable[i],
                beam_size=settings.rl_beam,
                max_len=settings.max_len,
                max_grad_norm=settings.grad_clip,
            )
            if result.skipped:
                skipped += 1
            else:
                rewards.append(result.mean_reward)
        record = _metric_record(epoch, "rl-train")
        record["mean_reward"] = sum(rewards) / len(rewards) if rewards else 0.0
        record["skipped"] = skipped
        last = epoch == settings.rl_epochs - 1
        if dev_insts is not None and (
            last or (settings.eval_every and (epoch + 1) % settings.eval_every == 0)
        ):
            dev_record = _metric_record(epoch, "rl-dev")
            _decode_metrics(dev_record, params, vocab, dev_insts, settings)
            _log(settings, metrics, record)
            _log(settings, metrics, dev_record)
            continue
        _log(settings, metrics, record)
    return metrics


def train(
    config: ModelConfig,
    train_insts: Sequence[PreparedInstance],
    vocab: Vocabulary,
    settings: TrainSettings,
    dev_insts: Optional[Sequence[PreparedInstance]] = None,
) -> tuple[ModelParams, list[dict]]:
    """Full pipeline: seeded init, MLE phase, optional REINFORCE phase."""
    params = init_params(config, np.random.default_rng(settings.seed))
    metrics: list[dict] = []
    run_mle(params, vocab, train_insts, settings, dev_insts, metrics)
    if settings.rl_epochs > 0:
        run_rl(params, vocab, train_insts, settings, dev_insts, metrics)
    return params, metrics
