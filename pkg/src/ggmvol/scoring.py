"""Energy score for multivariate predictive samples.

    ES(F, x) = E||X - x||^beta - 1/2 E||X - X'||^beta,   0 < beta < 2

estimated from ``m`` draws with the unbiased all-pairs form

    (1/m) sum_i ||x_i - x||^beta - 1/(2 m (m-1)) sum_{i != j} ||x_i - x_j||^beta.

Lower is better.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist


@dataclass
class PredictiveSample:
    draws: np.ndarray  # (m, p)
    label: str | int = ""

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))


def energy_score(sample, x, beta: float = 1.0) -> float:
    """Energy score of the predictive draws ``sample`` (``(m, p)`` or a :class:`PredictiveSample`) at ``x``.

    A single draw is treated as a point-mass forecast, whose spread term is
    zero.
    """
    draws = sample.draws if isinstance(sample, PredictiveSample) else np.atleast_2d(np.asarray(sample, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not 0 < beta < 2:
        raise ValueError(f"beta must lie in (0, 2), got {beta}")
    m, p = draws.shape
    if x.shape != (p,):
        raise ValueError(f"realisation has shape {x.shape}, draws have dimension {p}")
    if m == 0:
        raise ValueError("empty predictive sample")
    fit = np.mean(np.linalg.norm(draws - x, axis=1) ** beta)
    if m == 1:
        return float(fit)
    # pdist lists each unordered pair once: sum over i != j is twice that.
    spread = 2.0 * np.sum(pdist(draws) ** beta) / (2.0 * m * (m - 1))
    return float(fit - spread)


def score_series(
    pred: Sequence[PredictiveSample],
    realized: Sequence,
    labels: Sequence | None = None,
    beta: float = 1.0,
) -> np.ndarray:
    """Per-day energy scores.

    When ``labels`` is given it must match the predictive samples' labels in
    order; a mismatch raises ``ValueError``.
    """
    if len(pred) != len(realized):
        raise ValueError(f"{len(pred)} predictive samples but {len(realized)} realisations")
    if labels is not None:
        got = [s.label for s in pred]
        if list(labels) != got:
            raise ValueError(f"label mismatch: {got} vs {list(labels)}")
    return np.array([energy_score(s, x, beta) for s, x in zip(pred, realized)])


def score_difference(
    pred_a: Sequence[PredictiveSample],
    pred_b: Sequence[PredictiveSample],
    realized: Sequence,
    beta: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scores of two models and ``score_a - score_b`` (negative favours model a)."""
    la = [s.label for s in pred_a]
    lb = [s.label for s in pred_b]
    if la != lb:
        raise ValueError("the two models' predictive samples are not aligned by label")
    a = score_series(pred_a, realized, beta=beta)
    b = score_series(pred_b, realized, beta=beta)
    return a, b, a - b


def mean_and_se(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))
