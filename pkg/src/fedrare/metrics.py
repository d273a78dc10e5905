"""Per-round records and summary statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedrare.errors import EmptyEvaluationError
from fedrare.model import Batch, encode, predict

DEFAULT_THRESHOLDS = (0.5, 0.8, 0.9)


@dataclass
class RoundRecord:
    round: int
    clean_acc: float
    backdoor_acc: float
    adversary_round: bool = False
    defense_rejections: int = 0
    # not exported to CSV; None when no adversary took part
    adversary_accepted: bool | None = None


def accuracy(params, examples) -> float:
    """Fraction of argmax predictions equal to the label (ties go to the lowest class)."""
    batch = examples if isinstance(examples, Batch) else encode(list(examples))
    if len(batch) == 0:
        raise EmptyEvaluationError("empty evaluation set")
    return float(np.mean(predict(params, batch) == batch.labels))


def success_ratio(records, threshold) -> float:
    """Share of rounds whose backdoor accuracy is strictly above ``threshold``."""
    if not records:
        raise EmptyEvaluationError("no round records")
    hits = sum(1 for r in records if r.backdoor_acc > threshold)
    return hits / len(records)


def summarize(records, thresholds=DEFAULT_THRESHOLDS) -> dict:
    if not records:
        return {"rounds": 0, "final_clean_acc": None, "final_backdoor_acc": None,
                "success_ratio": {}}
    last = records[-1]
    return {
        "rounds": len(records),
        "final_clean_acc": last.clean_acc,
        "final_backdoor_acc": last.backdoor_acc,
        "success_ratio": {f"{t:g}": success_ratio(records, t) for t in thresholds},
    }


def aggregate_summaries(summaries) -> dict:
    """Mean, std and standard error of the final accuracies across runs."""
    out = {"runs": len(summaries)}
    for key in ("final_clean_acc", "final_backdoor_acc"):
        vals = np.array([s[key] for s in summaries], dtype=np.float64)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[key] = {
            "mean": float(vals.mean()),
            "std": std,
            "stderr": std / np.sqrt(vals.size) if vals.size else 0.0,
        }
    return out
