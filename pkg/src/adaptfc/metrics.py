"""Classification and ranking metrics."""

import logging
import math
from dataclasses import dataclass

from .errors import LabelError

log = logging.getLogger(__name__)


def macro_f1(predictions, gold, label_set):
    """Unweighted mean of per-class F1 over ``label_set``.

    A class contributes only if it occurs in the gold labels or in the
    predictions; its F1 is 0 when precision or recall is undefined
    (zero-division -> 0).
    """
    predictions, gold = list(predictions), list(gold)
    if len(predictions) != len(gold):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold")
    if not gold:
        raise ValueError("macro_f1 of empty lists is undefined")
    unknown = (set(predictions) | set(gold)) - set(label_set)
    if unknown:
        raise LabelError(f"labels outside the label set: {sorted(map(str, unknown))}")
    scores = []
    for label in label_set:
        tp = sum(1 for p, g in zip(predictions, gold) if p == label and g == label)
        n_pred = sum(1 for p in predictions if p == label)
        n_gold = sum(1 for g in gold if g == label)
        if n_pred == 0 and n_gold == 0:
            continue
        scores.append(2.0 * tp / (n_pred + n_gold))
    return sum(scores) / len(scores) if scores else 0.0


@dataclass(frozen=True)
class RankingJudgment:
    claim_id: str
    relevant: frozenset
    ranking: tuple


def ndcg_at_k(judgment, k=10):
    """Binary-gain NDCG@k with log2 discount; ``None`` when nothing is relevant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(set(judgment.ranking)) != len(judgment.ranking):
        raise ValueError(f"ranking for claim {judgment.claim_id} repeats a document")
    if not judgment.relevant:
        log.warning("claim %s has no relevant documents; skipped", judgment.claim_id)
        return None
    dcg = sum(1.0 / math.log2(r + 1)
              for r, doc in enumerate(judgment.ranking[:k], start=1) if doc in judgment.relevant)
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(judgment.relevant)) + 1))
    return dcg / ideal


def mean_ndcg(judgments, k=10):
    values = [v for v in (ndcg_at_k(j, k) for j in judgments) if v is not None]
    return sum(values) / len(values) if values else 0.0
