"""Teacher-student transfer with per-sentence data-similarity weights.

A teacher trained on a high-resource corpus initializes the student.  The
student then trains on a mixed stream of low- and high-resource mini-batches
in which each high-resource sentence carries a weight: sentences the current
student tags well (more per-character hits) gain weight, poorly tagged ones
lose it.  Weights rescale each sentence's effective learning rate.

Per epoch: (1) train on the mixed stream using the current weights, (2)
score the student on the full high-resource set for word-level precision p
and recall r, (3) set e = 1 - 2pr/(p+r), a = log((1-e)/e)/2 with e clamped
away from {0, 1}, and reweight sentence i of length m_i as
    w_i <- w_i / (Z m_i) * sum_j exp(a * [tag hit at j]),
Z chosen so the weights keep summing to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .corpus import build_vocab, from_bmes
from .model import ModelConfig, SegModel
from .nn import AdamHyper, clip_global_norm, make_rng
from .train import TrainConfig, TrainingDiverged, _aggregate_losses, train


def error_rate(p, r):
    """Word-level error rate 1 - F1(p, r); defined as 1 when p = r = 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    if p + r == 0.0:
        return 1.0
    return 1.0 - 2.0 * p * r / (p + r)


def update_rate(e, clamp=1e-6):
    """Weight update rate a = log((1-e)/e) / 2 with e clamped to
    [clamp, 1-clamp] so a stays finite at the extremes."""
    if not (0.0 < clamp < 0.5):
        raise ValueError("clamp must lie in (0, 0.5)")
    e = min(max(e, clamp), 1.0 - clamp)
    return 0.5 * math.log((1.0 - e) / e)


def per_sample_lr(alpha, weights):
    """Effective learning rate per high-resource sentence: alpha * w_i."""
    return alpha * np.asarray(weights, dtype=np.float64)


@dataclass(frozen=True)
class SimilarityState:
    """Per-sentence similarity weights over the high-resource corpus."""

    weights: np.ndarray
    error_rate: float = 0.5
    update_rate: float = 0.0
    normalizer: float = 1.0
    iteration: int = 0

    @classmethod
    def uniform(cls, n):
        if n < 1:
            raise ValueError("need at least one high-resource sentence")
        return cls(weights=np.full(n, 1.0 / n))


def update_similarity(state, per_char_correct):
    """One multiplicative reweighting pass.

    `per_char_correct[i]` holds one boolean per character of high-resource
    sentence i: whether the student's tag matched gold.  Uses
    state.update_rate as the current a.  Weights renormalize to sum 1 by
    construction of the normalizer.
    """
    n = len(state.weights)
    if len(per_char_correct) != n:
        raise ValueError(
            "expected %d indicator sequences, got %d" % (n, len(per_char_correct))
        )
    counts = np.empty(n)
    lengths = np.empty(n)
    for i, ind in enumerate(per_char_correct):
        arr = np.asarray(ind, dtype=bool)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("sentence %d has no indicator positions" % i)
        counts[i] = np.count_nonzero(arr)
        lengths[i] = arr.size
    ea = math.exp(state.update_rate)
    inner = counts * ea + (lengths - counts)
    z = float(np.sum(state.weights / lengths * inner))
    if z <= 0.0:
        # degenerate all-zero mass: nothing to redistribute
        new_weights = state.weights.copy()
        z = 0.0
    else:
        new_weights = state.weights * inner / (z * lengths)
    return replace(
        state, weights=new_weights, normalizer=z, iteration=state.iteration + 1
    )


@dataclass
class TransferConfig:
    batch_size: int = 16
    epochs: int = 10
    teacher_epochs: int = 10
    lr: float = 0.01
    high_fraction: float = 0.5
    seed: int = 1
    clip_norm: float = 5.0
    clamp: float = 1e-6
    bigram_min_count: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.high_fraction < 1.0):
            raise ValueError("high_fraction must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.clamp < 0.5):
            raise ValueError("clamp must lie in (0, 0.5)")


def init_student(teacher, student_vocab, seed):
    """Student model from a teacher: every non-embedding parameter is copied
    verbatim; embedding rows are copied for entries present in both vocabs
    and freshly initialized otherwise."""
    cfg = teacher.config
    student = SegModel.new(
        ModelConfig(
            dim=cfg.dim,
            window=cfg.window,
            filter_size=cfg.filter_size,
            use_bigrams=cfg.use_bigrams,
        ),
        student_vocab,
        seed,
    )
    for name, arr in teacher.store.params.items():
        if name in ("char_emb", "bigram_emb"):
            continue
        np.copyto(student.store.params[name], arr)
    t_chars = teacher.vocab.char_to_id
    s_emb = student.store.params["char_emb"]
    t_emb = teacher.store.params["char_emb"]
    for token, sid in student.vocab.char_to_id.items():
        tid = t_chars.get(token)
        if tid is not None:
            s_emb[sid] = t_emb[tid]
    if cfg.use_bigrams:
        t_bi = teacher.vocab.bigram_to_id
        s_bemb = student.store.params["bigram_emb"]
        t_bemb = teacher.store.params["bigram_emb"]
        for i in range(2):  # padding and unknown bigram rows
            s_bemb[i] = t_bemb[i]
        for pair, sid in student.vocab.bigram_to_id.items():
            tid = t_bi.get(pair)
            if tid is not None:
                s_bemb[sid] = t_bemb[tid]
    return student


@dataclass
class HistoryRow:
    epoch: int
    error_rate: float
    update_rate: float
    normalizer: float
    w_sum: float
    w_min: float
    w_max: float
    w_mean: float
    train_loss: float


def format_history(rows):
    lines = [
        "epoch\terror_rate\tupdate_rate\tnormalizer\tw_sum\tw_min\tw_max\tw_mean\ttrain_loss"
    ]
    for r in rows:
        lines.append(
            "%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.8f\t%.8f\t%.8f\t%.6f"
            % (
                r.epoch,
                r.error_rate,
                r.update_rate,
                r.normalizer,
                r.w_sum,
                r.w_min,
                r.w_max,
                r.w_mean,
                r.train_loss,
            )
        )
    return "\n".join(lines)


class _HighStream:
    """Endless shuffled stream of high-resource sentence indices."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = []
        self.pos = 0

    def take(self, count):
        out = []
        while len(out) < count:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


def train_transfer(
    high,
    low,
    model_cfg,
    cfg,
    teacher=None,
    dev=None,
    initial_weights=None,
    on_epoch=None,
):
    """Run the full transfer procedure.

    `high` and `low` are lists of TaggedSentences.  When `teacher` is None
    one is trained from scratch on `high` for cfg.teacher_epochs.  Returns
    (student, history, state, dev_f); dev_f is None unless `dev` is given.
    `initial_weights` overrides the uniform starting weights (an inspection
    hook, e.g. to disable the high-resource contribution entirely with
    zeros).
    """
    if not high:
        raise ValueError("empty high-resource corpus")
    if not low:
        raise ValueError("empty low-resource corpus")
    if teacher is None:
        teacher_vocab = build_vocab(high, cfg.bigram_min_count)
        teacher = SegModel.new(model_cfg, teacher_vocab, cfg.seed)
        train(
            teacher,
            high,
            TrainConfig(
                batch_size=cfg.batch_size,
                epochs=cfg.teacher_epochs,
                lr=cfg.lr,
                mode="serial",
                seed=cfg.seed,
                clip_norm=cfg.clip_norm,
            ),
        )
    student_vocab = build_vocab(low, cfg.bigram_min_count)
    student = init_student(teacher, student_vocab, cfg.seed)

    enc_low = [student.encode(ts) for ts in low]
    enc_high = [student.encode(ts) for ts in high]
    gold_high = [from_bmes(ts) for ts in high]

    n_high = len(high)
    if initial_weights is not None:
        weights = np.asarray(initial_weights, dtype=np.float64).copy()
        if weights.shape != (n_high,):
            raise ValueError("initial_weights must have one entry per high sentence")
        state = SimilarityState(weights=weights)
    else:
        state = SimilarityState.uniform(n_high)

    hyper = AdamHyper(lr=cfg.lr)
    low_rng = make_rng(cfg.seed, "shuffle")
    high_stream = _HighStream(n_high, make_rng(cfg.seed, "high-shuffle"))
    high_per_batch = min(int(round(cfg.batch_size * cfg.high_fraction)), cfg.batch_size - 1)
    low_per_batch = cfg.batch_size - high_per_batch

    history = []
    for epoch in range(cfg.epochs):
        order = low_rng.permutation(len(enc_low))
        stats = []
        for bi, start in enumerate(range(0, len(order), low_per_batch)):
            ids_low = order[start : start + low_per_batch]
            batch = [enc_low[i] for i in ids_low]
            scales = [1.0] * len(batch)
            if high_per_batch:
                for i in high_stream.take(high_per_batch):
                    batch.append(enc_high[i])
                    scales.append(float(state.weights[i]))
            loss, grads = student.loss_and_grads(batch, scales)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi)
            clip_global_norm(grads, cfg.clip_norm)
            student.store.adam_step(grads, hyper)
            stats.append((loss, float(np.sum(scales))))
        train_loss = _aggregate_losses(stats)

        pred_high = [student.predict(ts.chars) for ts in high]
        rep = metrics.score(gold_high, [from_bmes(p) for p in pred_high])
        e = error_rate(rep.precision, rep.recall)
        a = update_rate(e, cfg.clamp)
        indicators = [
            [pt == gt for pt, gt in zip(pred.tags, ts.tags)]
            for pred, ts in zip(pred_high, high)
        ]
        state = replace(state, error_rate=e, update_rate=a)
        state = update_similarity(state, indicators)
        row = HistoryRow(
            epoch=epoch,
            error_rate=e,
            update_rate=a,
            normalizer=state.normalizer,
            w_sum=float(np.sum(state.weights)),
            w_min=float(np.min(state.weights)),
            w_max=float(np.max(state.weights)),
            w_mean=float(np.mean(state.weights)),
            train_loss=train_loss,
        )
        history.append(row)
        if on_epoch:
            on_epoch(row)

    dev_f = None
    if dev is not None:
        gold_dev = [from_bmes(ts) for ts in dev]
        pred_dev = [from_bmes(student.predict(ts.chars)) for ts in dev]
        dev_f = metrics.score(gold_dev, pred_dev).f1
    return student, history, state, dev_f
