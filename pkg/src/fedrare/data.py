"""Corpora, non-IID client partitioning, rare-token selection and trigger insertion."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fedrare.errors import (
    ConfigError,
    EmptyCorpusError,
    EmptyEvaluationError,
    InfeasiblePartitionError,
)
from fedrare.model import Batch, Example, encode


@dataclass
class Vocabulary:
    size: int
    counts: np.ndarray

    @classmethod
    def from_examples(cls, examples, size):
        counts = np.zeros(size, dtype=np.int64)
        for e in examples:
            np.add.at(counts, np.asarray(e.tokens, dtype=np.int64), 1)
        return cls(size, counts)


@dataclass(frozen=True)
class TriggerSpec:
    """Trigger tokens plus the insertion policy applied to clean inputs.

    ``position`` is ``"uniform"`` (distinct indices drawn uniformly inside
    ``[lo, hi)``) or ``"fixed"`` (consecutive indices from ``start``).
    """

    trigger_ids: tuple
    target_label: int = 0
    count: int = 3
    lo: int = 0
    hi: int = 30
    position: str = "uniform"
    start: int = 0
    norm_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "trigger_ids", tuple(int(t) for t in self.trigger_ids))
        if not self.trigger_ids:
            raise ConfigError("trigger_ids must be non-empty", "attack.trigger_ids")
        if len(set(self.trigger_ids)) != len(self.trigger_ids):
            raise ConfigError("trigger_ids must be pairwise distinct", "attack.trigger_ids")
        if self.lo >= self.hi:
            raise ConfigError("insertion range needs lo < hi", "attack.range_lo")
        if self.count < 0 or self.count > self.hi - self.lo:
            raise ConfigError("count must satisfy 0 <= count <= hi - lo", "attack.insert_count")
        if self.position not in ("uniform", "fixed"):
            raise ConfigError(f"unknown position mode {self.position!r}", "attack.position")
        if self.norm_bound is not None and self.norm_bound <= 0:
            raise ConfigError("norm_bound must be positive", "attack.norm_bound")

    def with_triggers(self, trigger_ids):
        return TriggerSpec(
            tuple(trigger_ids), self.target_label, self.count, self.lo, self.hi,
            self.position, self.start, self.norm_bound,
        )


@dataclass
class ClientDataset:
    client_id: int
    examples: list
    _batch: Batch | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.examples)

    @property
    def batch(self) -> Batch:
        if self._batch is None:
            self._batch = encode(self.examples)
        return self._batch


def class_bands(vocab_size, num_classes):
    """Token-id band preferred by each class; background tokens start after the last band."""
    width = max(2, vocab_size // (5 * num_classes))
    return [range(c * width, (c + 1) * width) for c in range(num_classes)]


def synth_corpus(vocab_size, num_classes, n, seq_len, skew, seed, zipf_exponent=1.5):
    """Class-conditional synthetic corpus.

    Each token comes from the example's class band with probability ``skew``
    and otherwise from a Zipf profile over the non-band ids, so high ids are
    rare or absent.
    """
    if n <= 0:
        raise EmptyCorpusError("synthetic corpus needs n > 0")
    if vocab_size < 10 * num_classes:
        raise ConfigError("vocab_size must be at least 10 * num_classes", "data.vocab_size")
    if not 0 < skew <= 1:
        raise ConfigError("skew must lie in (0, 1]", "data.skew")
    if seq_len < 1:
        raise ConfigError("seq_len must be >= 1", "data.seq_len")
    rng = np.random.default_rng([seed, 0xC0])
    bands = class_bands(vocab_size, num_classes)
    width = len(bands[0])
    start = num_classes * width
    ranks = np.arange(1, vocab_size - start + 1, dtype=np.float64)
    zipf = ranks ** -zipf_exponent
    zipf /= zipf.sum()

    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    from_band = rng.random((n, seq_len)) < skew
    band_tok = labels[:, None] * width + rng.integers(0, width, size=(n, seq_len))
    bg_tok = start + rng.choice(zipf.size, size=(n, seq_len), p=zipf)
    tokens = np.where(from_band, band_tok, bg_tok)
    examples = [Example(tuple(row), int(y)) for row, y in zip(tokens.tolist(), labels.tolist())]
    return Vocabulary.from_examples(examples, vocab_size), examples


def load_corpus(path, vocab_size, num_classes=None):
    """Read ``label<TAB>id id ...`` lines; errors carry the 1-based line number."""
    examples = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label_str, sep, rest = line.partition("\t")
            if not sep:
                raise ConfigError("expected 'label<TAB>token ids'", line=lineno)
            try:
                label = int(label_str)
                tokens = [int(t) for t in rest.split()]
            except ValueError:
                raise ConfigError("non-integer label or token id", line=lineno) from None
            if not tokens:
                raise ConfigError("empty token sequence", line=lineno)
            bad = [t for t in tokens if not 0 <= t < vocab_size]
            if bad:
                raise ConfigError(f"token id {bad[0]} outside vocabulary of size {vocab_size}", line=lineno)
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ConfigError(f"label {label} outside [0, {num_classes})", line=lineno)
            examples.append(Example(tuple(tokens), label))
    if not examples:
        raise EmptyCorpusError(f"{path}: no examples")
    return Vocabulary.from_examples(examples, vocab_size), examples


def select_rare_tokens(vocab: Vocabulary, k: int) -> list:
    """The ``k`` least frequent ids, ties broken by ascending id."""
    order = np.lexsort((np.arange(vocab.size), vocab.counts))
    return [int(i) for i in order[:k]]


def dirichlet_partition(examples, num_clients, alpha, seed) -> list:
    if num_clients < 1:
        raise ConfigError("need at least one client", "federation.N")
    if alpha <= 0:
        raise ConfigError("alpha must be positive", "data.alpha")
    if len(examples) < num_clients:
        raise InfeasiblePartitionError(f"{len(examples)} examples cannot fill {num_clients} clients")
    rng = np.random.default_rng([seed, 0xD1])
    labels = np.array([e.label for e in examples])
    owners = np.empty(len(examples), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        share = rng.dirichlet(np.full(num_clients, float(alpha)))
        cuts = (np.cumsum(share)[:-1] * idx.size).astype(np.int64)
        for client, part in enumerate(np.split(idx, cuts)):
            owners[part] = client
    members = [list(np.flatnonzero(owners == i)) for i in range(num_clients)]
    for i in range(num_clients):
        if not members[i]:
            donor = max(range(num_clients), key=lambda j: (len(members[j]), -j))
            pick = int(rng.integers(len(members[donor])))
            members[i].append(members[donor].pop(pick))
    return [ClientDataset(i, [examples[j] for j in sorted(m)]) for i, m in enumerate(members)]


def insert_triggers(example: Example, spec: TriggerSpec, rng) -> Example:
    """Insert ``spec.count`` trigger tokens and relabel to the target class."""
    k = spec.count
    if k == 0:
        return Example(example.tokens, spec.target_label)
    ids = np.asarray(spec.trigger_ids)
    perm = ids[rng.permutation(ids.size)]
    chosen = [int(perm[i % ids.size]) for i in range(k)]
    total = len(example.tokens) + k
    if spec.position == "fixed":
        first = min(spec.start, total - k)
        slots = list(range(first, first + k))
    else:
        lo = min(spec.lo, total - k)
        hi = max(min(spec.hi, total), lo + k)
        slots = sorted(int(s) for s in rng.choice(np.arange(lo, hi), size=k, replace=False))
    out = []
    src = iter(example.tokens)
    slot_iter = iter(zip(slots, chosen))
    nxt = next(slot_iter, None)
    for pos in range(total):
        if nxt is not None and pos == nxt[0]:
            out.append(nxt[1])
            nxt = next(slot_iter, None)
        else:
            out.append(next(src))
    return Example(tuple(out), spec.target_label)


def make_backdoor_testset(test: Sequence[Example], spec: TriggerSpec, rng) -> list:
    if not test:
        raise EmptyEvaluationError("empty test set")
    keep = [e for e in test if e.label != spec.target_label]
    if not keep:
        raise EmptyEvaluationError("every test example already carries the target label")
    return [insert_triggers(e, spec, rng) for e in keep]
