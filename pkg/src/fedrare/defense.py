"""Robust aggregation and upload filtering applied by the server."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedrare.errors import ConfigError
from fedrare.metrics import accuracy
from fedrare.model import ModelParams

KINDS = ("none", "norm_clip", "weak_dp", "coord_median", "multi_krum", "accuracy_check")


@dataclass(frozen=True)
class DefenseConfig:
    kind: str = "none"
    clip_bound: float = 0.5
    literal_clip: bool = False
    noise_std: float = 5e-4
    embedding_only: bool = False
    krum_f: int = 1
    krum_k: int | None = None
    acc_slack: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown defense {self.kind!r}", "defense.kind")
        if self.clip_bound <= 0:
            raise ConfigError("clip bound must be positive", "defense.clip_bound")
        if self.noise_std < 0:
            raise ConfigError("noise std must be >= 0", "defense.noise_std")
        if self.krum_f < 0:
            raise ConfigError("krum_f must be >= 0", "defense.krum_f")
        if self.krum_k is not None and self.krum_k < 1:
            raise ConfigError("krum_k must be >= 1", "defense.krum_k")
        if not 0 <= self.acc_slack <= 1:
            raise ConfigError("accuracy slack must lie in [0, 1]", "defense.acc_slack")

    def check_round_size(self, m):
        if self.kind == "multi_krum":
            if self.krum_f > m - 3:
                raise ConfigError(f"krum_f={self.krum_f} needs at least {self.krum_f + 3} clients per round", "defense.krum_f")
            if self.krum_k is not None and self.krum_k > m - self.krum_f - 2:
                raise ConfigError("krum_k must be <= m - krum_f - 2", "defense.krum_k")


def norm_clip(residual: ModelParams, bound: float, literal=False) -> ModelParams:
    """Project onto the L2 ball of radius ``bound``.

    ``literal=True`` rescales every non-zero update to norm ``bound``,
    including updates that were already inside the ball.
    """
    if bound <= 0:
        raise ConfigError("clip bound must be positive", "defense.clip_bound")
    n = residual.norm()
    if n == 0.0:
        return residual
    factor = bound / n if literal else min(1.0, bound / n)
    if factor == 1.0:
        return residual
    return residual.scale(factor)


def weak_dp(residual: ModelParams, bound: float, sigma: float, rng, literal=False) -> ModelParams:
    clipped = norm_clip(residual, bound, literal)
    if sigma == 0:
        return clipped
    return ModelParams(
        *(a + rng.normal(0.0, sigma, size=a.shape) for a in clipped.arrays()),
        pooling=clipped.pooling,
    )


def mean_aggregate(residuals) -> ModelParams:
    stacked = np.stack([r.flatten() for r in residuals])
    return residuals[0].unflatten(stacked.mean(axis=0))


def _median_cols(stacked):
    return np.median(stacked, axis=0)


def coord_median(residuals, embedding_only=False) -> ModelParams:
    """Per-coordinate median; even counts average the two middle values."""
    stacked = np.stack([r.flatten() for r in residuals])
    if not embedding_only:
        return residuals[0].unflatten(_median_cols(stacked))
    n_emb = residuals[0].embedding.size
    out = stacked.mean(axis=0)
    out[:n_emb] = _median_cols(stacked[:, :n_emb])
    return residuals[0].unflatten(out)


def krum_scores(residuals, f) -> np.ndarray:
    n = len(residuals)
    if n < f + 3:
        raise ConfigError(f"multi-krum needs at least f + 3 = {f + 3} residuals, got {n}", "defense.krum_f")
    X = np.stack([r.flatten() for r in residuals])
    d2 = np.empty((n, n))
    for i in range(n):
        diff = X - X[i]
        d2[i] = np.einsum("ij,ij->i", diff, diff)
    np.fill_diagonal(d2, np.inf)
    neighbours = n - f - 2
    return np.sort(d2, axis=1)[:, :neighbours].sum(axis=1)


def multi_krum(residuals, f, k=None, return_selected=False):
    """Average the ``k`` residuals with the lowest Krum scores."""
    n = len(residuals)
    scores = krum_scores(residuals, f)
    k = n - f - 2 if k is None else k
    if not 1 <= k <= n - f - 2:
        raise ConfigError(f"k_select must lie in [1, {n - f - 2}]", "defense.krum_k")
    chosen = np.sort(np.argsort(scores, kind="stable")[:k])
    out = mean_aggregate([residuals[i] for i in chosen])
    return (out, chosen.tolist()) if return_selected else out


def accuracy_check(local: ModelParams, global_: ModelParams, val, slack: float, global_acc=None) -> bool:
    """Accept unless the local model's validation accuracy trails the global one by more than ``slack``."""
    if global_acc is None:
        global_acc = accuracy(global_, val)
    return accuracy(local, val) >= global_acc - slack
