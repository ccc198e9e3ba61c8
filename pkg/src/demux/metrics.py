"""Multi-label ranking metrics: top-K selection, P@K, MAP@K, macro AUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def top_k(scores, k: int) -> list[int]:
    """Indices of the k largest scores; ties broken toward the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= s.size:
        raise MetricError(f"k={k} out of range [1, {s.size}]")
    # stable sort on (-score, index): equal scores keep ascending index order
    order = np.argsort(-s, kind="stable")
    return order[:k].tolist()


def p_at_k(labels, scores, k: int) -> float:
    """Fraction of the top-k predictions that are true labels."""
    y = np.asarray(labels)
    return float(sum(y[i] for i in top_k(scores, k))) / k


def map_at_k(labels, scores, k: int) -> float:
    """Mean of P@j over prefixes j = 1..k of one shared ranked list."""
    y = np.asarray(labels)
    ranked = top_k(scores, k)
    hits = 0
    total = 0.0
    for j, idx in enumerate(ranked, start=1):
        hits += int(y[idx])
        total += hits / j
    return total / k


def binary_auc(scores, labels) -> float:
    """Rank-based AUC of one site: P(random positive outscores random negative),
    ties counting one half. Requires at least one positive and one negative."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative")
    ranks = _average_ranks(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their group."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def macro_auc(scores, labels) -> tuple[float, list[int]]:
    """One-vs-all AUC per site, macro-averaged over eligible sites.

    `scores` and `labels` are (instances, sites) arrays. Sites lacking both a
    positive and a negative instance are skipped; their indices are returned
    alongside the average. No eligible site at all is an error.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 2:
        raise MetricError("scores/labels must be matching 2-D arrays")
    aucs = []
    skipped = []
    for site in range(s.shape[1]):
        col = y[:, site]
        if col.min() == col.max():
            skipped.append(site)
            continue
        aucs.append(binary_auc(s[:, site], col))
    if not aucs:
        raise MetricError("no site has both positive and negative instances")
    return float(np.mean(aucs)), skipped


@dataclass
class EvalResult:
    auc: float
    p_at_k: float
    map_at_k: float
    k_used: int
    skipped_sites: list[int] = field(default_factory=list)
    per_instance: list[dict] = field(default_factory=list)


def evaluate(scores, labels, k: int | None = None, per_instance: bool = False) -> EvalResult:
    """Aggregate evaluation over a test set.

    P@K / MAP@K use each instance's true tab count when k is None (closed-world
    policy); a fixed integer k applies uniformly otherwise.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    auc, skipped = macro_auc(s, y)
    p_vals = []
    m_vals = []
    rows = []
    k_used = 0
    for i in range(s.shape[0]):
        ki = int(y[i].sum()) if k is None else k
        if ki < 1:
            continue
        ki = min(ki, s.shape[1])
        k_used = max(k_used, ki)
        p = p_at_k(y[i], s[i], ki)
        m = map_at_k(y[i], s[i], ki)
        p_vals.append(p)
        m_vals.append(m)
        if per_instance:
            rows.append({"instance": i, "k": ki, "p_at_k": p, "map_at_k": m})
    if not p_vals:
        raise MetricError("no instance has a positive label")
    return EvalResult(
        auc=auc,
        p_at_k=float(np.mean(p_vals)),
        map_at_k=float(np.mean(m_vals)),
        k_used=k_used,
        skipped_sites=skipped,
        per_instance=rows,
    )
