"""Local SGD shared by benign clients and the adversary's main-task phase."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedrare.model import Batch, ModelParams, _loss_and_grad


@dataclass
class Residual:
    """Client update ``L_t - G_{t-1}``."""

    delta: ModelParams
    client_id: int
    empty: bool = False
    info: dict = field(default_factory=dict)


def sample_batch(batch: Batch, size, rng) -> Batch:
    n = len(batch)
    if size >= n:
        return batch
    return batch.take(np.sort(rng.choice(n, size=size, replace=False)))


def sgd(params: ModelParams, batch: Batch, steps, lr, batch_size, rng) -> ModelParams:
    """Plain mini-batch SGD on a private copy; no weight decay anywhere."""
    local = params.copy()
    for _ in range(steps):
        _, grad = _loss_and_grad(local, sample_batch(batch, batch_size, rng))
        for p, g in zip(local.arrays(), grad.arrays()):
            p -= lr * g
    return local
