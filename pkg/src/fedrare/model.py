"""Embedding-bag text classifier with closed-form gradients.

The model is ``softmax(W^T pool(E[tokens]) + b)``. ``ModelParams`` doubles as
the container for gradients and residuals, which share its shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from fedrare import kernels
from fedrare.errors import EmptyInputError, InvalidLabelError, OutOfVocabularyError

POOLING_MODES = {"mean": kernels.MEAN, "decay": kernels.DECAY}


@dataclass(frozen=True)
class Example:
    tokens: tuple
    label: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "label", int(self.label))


class Batch(NamedTuple):
    """Padded int64 encoding of a list of examples."""

    tokens: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.lengths)

    def take(self, idx):
        idx = np.asarray(idx)
        return Batch(self.tokens[idx], self.lengths[idx], self.labels[idx])


def encode(examples: Sequence[Example], width=None) -> Batch:
    if len(examples) == 0:
        raise EmptyInputError("empty batch")
    lengths = np.fromiter((len(e.tokens) for e in examples), dtype=np.int64, count=len(examples))
    if lengths.min() == 0:
        raise EmptyInputError("empty token sequence")
    width = int(lengths.max()) if width is None else max(width, int(lengths.max()))
    tokens = np.zeros((len(examples), width), dtype=np.int64)
    for i, e in enumerate(examples):
        tokens[i, : len(e.tokens)] = e.tokens
    labels = np.fromiter((e.label for e in examples), dtype=np.int64, count=len(examples))
    return Batch(tokens, lengths, labels)


@dataclass
class ModelParams:
    embedding: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray
    pooling: str = "mean"

    @property
    def vocab_size(self):
        return self.embedding.shape[0]

    @property
    def embed_dim(self):
        return self.embedding.shape[1]

    @property
    def num_classes(self):
        return self.head_bias.shape[0]

    @property
    def mode(self):
        return POOLING_MODES[self.pooling]

    @classmethod
    def zeros(cls, vocab_size, embed_dim, num_classes, pooling="mean"):
        if pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling mode {pooling!r}")
        return cls(
            np.zeros((vocab_size, embed_dim)),
            np.zeros((embed_dim, num_classes)),
            np.zeros(num_classes),
            pooling,
        )

    def zeros_like(self):
        return ModelParams.zeros(self.vocab_size, self.embed_dim, self.num_classes, self.pooling)

    def copy(self):
        return ModelParams(self.embedding.copy(), self.head_weights.copy(), self.head_bias.copy(), self.pooling)

    def arrays(self):
        return (self.embedding, self.head_weights, self.head_bias)

    def _combine(self, other, op):
        return ModelParams(*(op(a, b) for a, b in zip(self.arrays(), other.arrays())), pooling=self.pooling)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def scale(self, factor):
        return ModelParams(*(a * factor for a in self.arrays()), pooling=self.pooling)

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec):
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i : i + a.size], dtype=np.float64).reshape(a.shape))
            i += a.size
        return ModelParams(*out, pooling=self.pooling)

    def norm(self):
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def same_shape(self, other):
        return all(a.shape == b.shape for a, b in zip(self.arrays(), other.arrays()))


def init_params(vocab_size, embed_dim, num_classes, rng, pooling="mean", scale=0.1) -> ModelParams:
    """Uniform(-scale, scale) initialisation of every entry."""
    return ModelParams(
        rng.uniform(-scale, scale, size=(vocab_size, embed_dim)),
        rng.uniform(-scale, scale, size=(embed_dim, num_classes)),
        rng.uniform(-scale, scale, size=num_classes),
        pooling,
    )


def _check(params, batch, with_labels=True):
    if len(batch) == 0:
        raise EmptyInputError("empty batch")
    if batch.lengths.min() < 1:
        raise EmptyInputError("empty token sequence")
    mask = np.arange(batch.tokens.shape[1])[None, :] < batch.lengths[:, None]
    live = batch.tokens[mask]
    if live.min() < 0 or live.max() >= params.vocab_size:
        bad = int(live[(live < 0) | (live >= params.vocab_size)][0])
        raise OutOfVocabularyError(f"token id {bad} outside vocabulary of size {params.vocab_size}")
    if with_labels and (batch.labels.min() < 0 or batch.labels.max() >= params.num_classes):
        raise InvalidLabelError(f"labels must lie in [0, {params.num_classes})")


def _as_batch(data):
    return data if isinstance(data, Batch) else encode(list(data))


def forward(params: ModelParams, tokens: Iterable[int]) -> np.ndarray:
    """Class probabilities for a single token sequence."""
    toks = np.asarray(list(tokens), dtype=np.int64)
    if toks.size == 0:
        raise EmptyInputError("empty token sequence")
    batch = Batch(toks[None, :], np.array([toks.size], dtype=np.int64), np.zeros(1, dtype=np.int64))
    _check(params, batch, with_labels=False)
    return kernels.predict_proba(*params.arrays(), batch.tokens, batch.lengths, params.mode)[0]


def predict_proba(params: ModelParams, data) -> np.ndarray:
    batch = _as_batch(data)
    _check(params, batch, with_labels=False)
    return kernels.predict_proba(*params.arrays(), batch.tokens, batch.lengths, params.mode)


def predict(params: ModelParams, batch: Batch) -> np.ndarray:
    # argmax keeps the lowest class id on ties
    return np.argmax(kernels.predict_proba(*params.arrays(), batch.tokens, batch.lengths, params.mode), axis=1)


def _loss_and_grad(params, batch):
    grad = params.zeros_like()
    loss = kernels.loss_grad(
        *params.arrays(), batch.tokens, batch.lengths, batch.labels, params.mode, *grad.arrays()
    )
    return loss, grad


def loss_and_grad(params: ModelParams, data) -> tuple[float, ModelParams]:
    """Mean cross-entropy over the batch and its gradient."""
    batch = _as_batch(data)
    _check(params, batch)
    return _loss_and_grad(params, batch)


def restrict_to_rows(grad: ModelParams, rows) -> ModelParams:
    out = grad.zeros_like()
    rows = np.asarray(sorted(set(int(r) for r in rows)), dtype=np.int64)
    if rows.size:
        out.embedding[rows] = grad.embedding[rows]
    return out


def restricted_grad(params: ModelParams, data, rows) -> ModelParams:
    """Gradient with everything outside the listed embedding rows zeroed."""
    rows = list(rows)
    for r in rows:
        if not 0 <= int(r) < params.vocab_size:
            raise OutOfVocabularyError(f"row {r} outside vocabulary of size {params.vocab_size}")
    _, grad = loss_and_grad(params, data)
    return restrict_to_rows(grad, rows)
