"""Mini-batch Adam training: serial, synchronous parallel, and lock-free
asynchronous parallel.

All three modes draw the same shuffled batch sequence from the run seed, so
async with one worker reproduces serial bit for bit.  Synchronous mode
averages shard gradients in a fixed order and is therefore reproducible for
a fixed worker count.  Asynchronous workers pull whole shards from a queue,
compute gradients against the shared parameters while other workers may be
writing them, and apply their own Adam updates in place without locks; each
worker keeps private moment estimates.
"""

from __future__ import annotations

import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .corpus import from_bmes
from .nn import AdamHyper, AdamState, adam_step, clip_global_norm, make_rng

MODES = ("serial", "sync", "async")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending epoch and batch index."""

    def __init__(self, epoch, batch_index):
        super().__init__(
            "non-finite loss at epoch %d, batch %d" % (epoch, batch_index)
        )
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    lr: float = 0.01
    mode: str = "serial"
    workers: int = 1
    seed: int = 1
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s" % (MODES,))
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.mode == "serial" and self.workers != 1:
            raise ValueError("serial mode uses exactly one worker")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables)")


@dataclass
class TrainReport:
    mode: str
    workers: int
    epoch_losses: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    dev_f: float = None


def shard_minibatch(batch, workers):
    """Split a batch into `workers` contiguous shards whose sizes differ by
    at most one, larger shards first.  Shards may be empty when the batch is
    smaller than the worker count."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n = len(batch)
    base, rem = divmod(n, workers)
    shards = []
    start = 0
    for w in range(workers):
        size = base + (1 if w < rem else 0)
        shards.append(batch[start : start + size])
        start += size
    return shards


def _epoch_batches(order, batch_size):
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _aggregate_losses(stats):
    """Sentence-weighted mean of per-batch losses, accumulated in batch order."""
    total = 0.0
    count = 0
    for loss, size in stats:
        total += loss * size
        count += size
    return total / count if count else 0.0


def _dev_f(model, dev):
    gold = [from_bmes(ts) for ts in dev]
    pred = [from_bmes(model.predict(ts.chars)) for ts in dev]
    return metrics.score(gold, pred).f1


def train(model, sentences, cfg, dev=None, on_epoch=None):
    """Train `model` in place on TaggedSentences; returns a TrainReport.

    `on_epoch(epoch, loss, seconds)` is called after each epoch when given.
    """
    if not sentences:
        raise ValueError("empty training corpus")
    encoded = [model.encode(ts) for ts in sentences]
    for i, enc in enumerate(encoded):
        if len(enc[0]) == 0:
            raise ValueError("empty sentence at index %d" % i)
    report = TrainReport(mode=cfg.mode, workers=cfg.workers)
    if cfg.mode == "serial":
        _train_serial(model, encoded, cfg, report, on_epoch)
    elif cfg.mode == "sync":
        _train_sync(model, encoded, cfg, report, on_epoch)
    else:
        _train_async(model, encoded, cfg, report, on_epoch)
    if dev is not None:
        report.dev_f = _dev_f(model, dev)
    return report


def _shard_grads(model, shard):
    loss, grads = model.loss_and_grads(shard)
    return loss, grads, len(shard)


def _train_serial(model, encoded, cfg, report, on_epoch):
    rng = make_rng(cfg.seed, "shuffle")
    hyper = AdamHyper(lr=cfg.lr)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(encoded))
        stats = []
        for bi, ids in enumerate(_epoch_batches(order, cfg.batch_size)):
            batch = [encoded[i] for i in ids]
            loss, grads = model.loss_and_grads(batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi)
            clip_global_norm(grads, cfg.clip_norm)
            model.store.adam_step(grads, hyper)
            stats.append((loss, len(batch)))
        seconds = time.perf_counter() - t0
        loss = _aggregate_losses(stats)
        report.epoch_losses.append(loss)
        report.epoch_seconds.append(seconds)
        if on_epoch:
            on_epoch(epoch, loss, seconds)


def _train_sync(model, encoded, cfg, report, on_epoch):
    rng = make_rng(cfg.seed, "shuffle")
    hyper = AdamHyper(lr=cfg.lr)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(encoded))
            stats = []
            for bi, ids in enumerate(_epoch_batches(order, cfg.batch_size)):
                batch = [encoded[i] for i in ids]
                shards = [s for s in shard_minibatch(batch, cfg.workers) if s]
                futures = [pool.submit(_shard_grads, model, s) for s in shards]
                results = [fu.result() for fu in futures]
                # combine per-shard mean gradients in fixed shard order
                combined = results[0][1]
                for _, grads, _ in results[1:]:
                    for name, g in grads.items():
                        combined[name] += g
                for g in combined.values():
                    g /= len(results)
                loss = _aggregate_losses([(lo, sz) for lo, _, sz in results])
                if not np.isfinite(loss):
                    raise TrainingDiverged(epoch, bi)
                clip_global_norm(combined, cfg.clip_norm)
                model.store.adam_step(combined, hyper)
                stats.append((loss, len(batch)))
            seconds = time.perf_counter() - t0
            loss = _aggregate_losses(stats)
            report.epoch_losses.append(loss)
            report.epoch_seconds.append(seconds)
            if on_epoch:
                on_epoch(epoch, loss, seconds)


def _train_async(model, encoded, cfg, report, on_epoch):
    """Lock-free asynchronous training.

    The driver shards every batch of an epoch onto a task queue; workers
    race on the shared parameter arrays.  Reads may interleave with other
    workers' writes, which is accepted: each scalar store is indivisible,
    and the occasional stale or mixed read is absorbed by later updates.
    """
    rng = make_rng(cfg.seed, "shuffle")
    hyper = AdamHyper(lr=cfg.lr)
    params = model.store.params
    tasks = queue.Queue()
    results = []
    failure = []
    failed = threading.Event()

    def worker():
        state = AdamState()
        while True:
            item = tasks.get()
            if item is None:
                tasks.task_done()
                return
            epoch, bi, shard = item
            if not failed.is_set():
                try:
                    loss, grads = model.loss_and_grads(shard)
                    if not np.isfinite(loss):
                        raise TrainingDiverged(epoch, bi)
                    clip_global_norm(grads, cfg.clip_norm)
                    adam_step(params, grads, hyper, state)
                    results.append((epoch, bi, loss, len(shard)))
                except BaseException as exc:
                    failure.append(exc)
                    failed.set()
            tasks.task_done()

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(cfg.workers)]
    for t in threads:
        t.start()
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(encoded))
            for bi, ids in enumerate(_epoch_batches(order, cfg.batch_size)):
                batch = [encoded[i] for i in ids]
                for shard in shard_minibatch(batch, cfg.workers):
                    if shard:
                        tasks.put((epoch, bi, shard))
            tasks.join()
            if failed.is_set():
                raise failure[0]
            seconds = time.perf_counter() - t0
            epoch_stats = sorted(results)
            results.clear()
            loss = _aggregate_losses([(lo, sz) for _, _, lo, sz in epoch_stats])
            report.epoch_losses.append(loss)
            report.epoch_seconds.append(seconds)
            if on_epoch:
                on_epoch(epoch, loss, seconds)
    finally:
        for _ in threads:
            tasks.put(None)
        for t in threads:
            t.join()


@dataclass
class BenchRow:
    mode: str
    workers: int
    epoch_seconds: float
    final_f: float


def benchmark(make_model, sentences, cfg, modes, thread_counts, eval_sentences=None):
    """Time each mode/worker combination from identical fresh models.

    `make_model()` must return a freshly initialized model (same seed every
    call).  Serial runs once; sync and async run once per thread count.
    Final F is measured on `eval_sentences` (default: the training set).
    """
    eval_set = eval_sentences if eval_sentences is not None else sentences
    rows = []
    for mode in modes:
        counts = [1] if mode == "serial" else list(thread_counts)
        for workers in counts:
            model = make_model()
            run_cfg = TrainConfig(
                batch_size=cfg.batch_size,
                epochs=cfg.epochs,
                lr=cfg.lr,
                mode=mode,
                workers=workers,
                seed=cfg.seed,
                clip_norm=cfg.clip_norm,
            )
            report = train(model, sentences, run_cfg, dev=eval_set)
            rows.append(
                BenchRow(
                    mode=mode,
                    workers=workers,
                    epoch_seconds=float(np.mean(report.epoch_seconds)),
                    final_f=report.dev_f,
                )
            )
    return rows


def format_bench_table(rows):
    lines = ["mode\tthreads\tepoch_seconds\tfinal_f"]
    for r in rows:
        lines.append("%s\t%d\t%.4f\t%.2f" % (r.mode, r.workers, r.epoch_seconds, 100.0 * r.final_f))
    return "\n".join(lines)
