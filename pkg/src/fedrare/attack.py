"""Adversary-side local training: rare-embedding poisoning, Gradient
Ensembling over past global models, and the comparison baselines."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from fedrare.data import TriggerSpec, insert_triggers
from fedrare.errors import ConfigError, OutOfVocabularyError
from fedrare.model import Batch, Example, ModelParams, _loss_and_grad, encode, predict
from fedrare.training import Residual, sample_batch, sgd

STRATEGIES = (
    "rare_embedding",
    "rare_embedding_ge",
    "entire_embedding",
    "data_poisoning",
    "model_replacement",
    "dba",
)
POISON_STRATEGIES = ("rare_embedding", "rare_embedding_ge", "entire_embedding")


@dataclass(frozen=True)
class AttackConfig:
    trigger: TriggerSpec
    strategy: str = "rare_embedding"
    backdoor_steps: int = 400
    backdoor_lr: float = 1.0
    ensemble_size: int = 3
    decay: float = 0.5
    early_stop_acc: float = 0.99
    mix_ratio: float = 0.5
    scale: float | None = None
    dba_adversaries: int = 3

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}", "attack.strategy")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1", "attack.ensemble_size")
        if not 0 < self.decay < 1:
            raise ConfigError("decay must lie in (0, 1)", "attack.decay")
        if not 0 < self.mix_ratio <= 1:
            raise ConfigError("mix_ratio must lie in (0, 1]", "attack.mix_ratio")
        if self.scale is not None and self.scale <= 0:
            raise ConfigError("scale must be positive", "attack.scale")
        if self.backdoor_steps < 0:
            raise ConfigError("backdoor_steps must be >= 0", "attack.backdoor_steps")
        if self.backdoor_lr <= 0:
            raise ConfigError("backdoor_lr must be positive", "attack.backdoor_lr")
        if not 0 <= self.early_stop_acc <= 1:
            raise ConfigError("early_stop_acc must lie in [0, 1]", "attack.early_stop_acc")
        if self.dba_adversaries < 1:
            raise ConfigError("dba_adversaries must be >= 1", "attack.dba_adversaries")


class ModelQueue:
    """Bounded oldest-to-newest queue of parameter snapshots."""

    def __init__(self, capacity, items=()):
        self.capacity = capacity
        self._items = deque(maxlen=capacity) if capacity > 0 else deque(maxlen=0)
        for it in items:
            self.push(it)

    def push(self, params: ModelParams):
        if self.capacity > 0:
            self._items.append(params.copy())

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def newest(self, k):
        """Up to ``k`` snapshots, newest first."""
        items = list(self._items)
        return items[::-1][:k]


def ensemble_weights(count, decay):
    """EMA weights newest to oldest: decay, decay*(1-decay), ..., (1-decay)**(count-1)."""
    if count < 1:
        raise ValueError("need at least one gradient")
    w = [decay * (1.0 - decay) ** j for j in range(count - 1)]
    w.append((1.0 - decay) ** (count - 1))
    return w


def _rows_grad(params, batch, rows):
    _, grad = _loss_and_grad(params, batch)
    return grad.embedding[rows]


def gradient_ensemble(queue, current_trg, batch: Batch, decay, h, rows):
    """EMA of trigger-row gradients taken at the ``h`` newest snapshots.

    Each snapshot has its trigger rows replaced by ``current_trg`` before the
    gradient is taken, so only the remaining parameters vary.
    """
    snaps = list(queue)[::-1][:h]
    if not snaps:
        raise ValueError("gradient ensemble needs at least one snapshot")
    rows = np.asarray(rows, dtype=np.int64)
    weights = ensemble_weights(len(snaps), decay)
    total = np.zeros_like(current_trg)
    for w, model in zip(weights, _substituted(snaps, current_trg, rows)):
        total += w * _rows_grad(model, batch, rows)
    return total


def _substituted(snaps, current_trg, rows):
    for snap in snaps:
        emb = snap.embedding.copy()
        emb[rows] = current_trg
        yield ModelParams(emb, snap.head_weights, snap.head_bias, snap.pooling)


def ensemble_accuracy(queue, current_trg, batch: Batch, decay, h, rows):
    """EMA-weighted accuracy of the ``h`` newest snapshots carrying ``current_trg``."""
    snaps = list(queue)[::-1][:h]
    rows = np.asarray(rows, dtype=np.int64)
    weights = ensemble_weights(len(snaps), decay)
    return float(sum(
        w * np.mean(predict(m, batch) == batch.labels)
        for w, m in zip(weights, _substituted(snaps, current_trg, rows))
    ))


def _triggered(batch_examples, spec, rng):
    return encode([insert_triggers(e, spec, rng) for e in batch_examples])


def _project_rows(emb, rows, bound):
    norms = np.linalg.norm(emb[rows], axis=1)
    factor = np.minimum(1.0, bound / np.maximum(norms, 1e-300))
    emb[rows] *= factor[:, None]


def _check_triggers(params, spec):
    bad = [t for t in spec.trigger_ids if not 0 <= t < params.vocab_size]
    if bad:
        raise OutOfVocabularyError(f"trigger id {bad[0]} outside vocabulary of size {params.vocab_size}")


def adversary_local_train(global_params, data, attack: AttackConfig, queue, rng, train, spec=None) -> Residual:
    """Main-task SGD followed by backdoor training on triggered batches.

    ``train`` supplies ``client_lr``, ``client_steps`` and ``batch_size``.
    ``queue`` holds the globals received at adversary rounds, newest being
    ``global_params`` itself (Gradient Ensembling only); it is not modified
    here.
    """
    if attack.strategy not in POISON_STRATEGIES + ("dba",):
        raise ConfigError(f"{attack.strategy} is not an embedding-poisoning strategy", "attack.strategy")
    spec = spec or attack.trigger
    _check_triggers(global_params, spec)
    local = sgd(global_params, data.batch, train.client_steps, train.client_lr, train.batch_size, rng)
    phase1 = local.copy()
    rows = np.asarray(sorted(spec.trigger_ids), dtype=np.int64)
    use_ge = attack.strategy == "rare_embedding_ge"
    if use_ge:
        past = queue.newest(max(attack.ensemble_size - 2, 0)) if queue is not None else []
        base = past[::-1] + [phase1]
    steps_taken, last_acc = 0, None
    for _ in range(attack.backdoor_steps):
        idx = np.sort(rng.choice(len(data), size=min(train.batch_size, len(data)), replace=False))
        poisoned = _triggered([data.examples[i] for i in idx], spec, rng)
        if use_ge:
            last_acc = ensemble_accuracy(base + [local], local.embedding[rows], poisoned, attack.decay, attack.ensemble_size, rows)
        else:
            last_acc = float(np.mean(predict(local, poisoned) == poisoned.labels))
        if last_acc >= attack.early_stop_acc:
            break
        if attack.strategy == "entire_embedding":
            _, grad = _loss_and_grad(local, poisoned)
            local.embedding -= attack.backdoor_lr * grad.embedding
        else:
            if use_ge:
                g = gradient_ensemble(base + [local], local.embedding[rows], poisoned, attack.decay, attack.ensemble_size, rows)
            else:
                g = _rows_grad(local, poisoned, rows)
            local.embedding[rows] -= attack.backdoor_lr * g
        if spec.norm_bound is not None:
            _project_rows(local.embedding, rows, spec.norm_bound)
        steps_taken += 1
    info = {"backdoor_steps": steps_taken, "trigger_acc": last_acc, "phase1": phase1}
    return Residual(local - global_params, data.client_id, info=info)


def data_poison_train(global_params, data, attack: AttackConfig, rng, train, spec=None) -> Residual:
    """Single-phase SGD where ceil(mix_ratio * b) examples of every batch are triggered."""
    spec = spec or attack.trigger
    _check_triggers(global_params, spec)
    local = global_params.copy()
    for _ in range(train.client_steps):
        batch = sample_batch(data.batch, train.batch_size, rng)
        n_poison = math.ceil(attack.mix_ratio * len(batch))
        if n_poison:
            head = encode_rows(batch, range(n_poison))
            trig = _triggered(head, spec, rng)
            batch = _concat(trig, batch.take(np.arange(n_poison, len(batch))))
        _, grad = _loss_and_grad(local, batch)
        for p, g in zip(local.arrays(), grad.arrays()):
            p -= train.client_lr * g
    return Residual(local - global_params, data.client_id)


def encode_rows(batch: Batch, idx):
    return [Example(tuple(batch.tokens[i, : batch.lengths[i]]), batch.labels[i]) for i in idx]


def _concat(a: Batch, b: Batch) -> Batch:
    if len(b) == 0:
        return a
    width = max(a.tokens.shape[1], b.tokens.shape[1])
    pad = lambda t: np.pad(t, ((0, 0), (0, width - t.shape[1])))
    return Batch(
        np.concatenate([pad(a.tokens), pad(b.tokens)]),
        np.concatenate([a.lengths, b.lengths]),
        np.concatenate([a.labels, b.labels]),
    )


def model_replacement(residual: Residual, gamma) -> Residual:
    if gamma <= 0:
        raise ConfigError("scale must be positive", "attack.scale")
    return replace(residual, delta=residual.delta.scale(gamma))


def dba_assign(adversary_ids, pool, per_client):
    """Disjoint trigger subsets, one per adversary, taken in order from ``pool``."""
    adversary_ids = list(adversary_ids)
    need = len(adversary_ids) * per_client
    if len(pool) < need:
        raise ConfigError(f"trigger pool of {len(pool)} cannot give {per_client} triggers to {len(adversary_ids)} adversaries", "attack.num_triggers")
    return {a: tuple(pool[i * per_client : (i + 1) * per_client]) for i, a in enumerate(adversary_ids)}
