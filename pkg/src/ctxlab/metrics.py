"""Exact Match and Edit Similarity, plus grouped aggregation."""

import math
from dataclasses import dataclass


def levenshtein(a, b):
    """Unit-cost edit distance over Unicode code points (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_similarity(a, b):
    """``100 * (1 - distance / max(len))``; two empty strings score 100."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(a, b) / longest)


def normalize(text):
    return text.strip()


def exact_match(prediction, ground_truth):
    # Only leading/trailing whitespace is forgiven.
    return normalize(prediction) == normalize(ground_truth)


@dataclass(frozen=True)
class ScoredPair:
    prediction: str
    ground_truth: str
    em: bool
    edit_sim: float


def score_pair(prediction, ground_truth):
    p, g = normalize(prediction), normalize(ground_truth)
    return ScoredPair(prediction, ground_truth, p == g, edit_similarity(p, g))


@dataclass(frozen=True)
class GroupScore:
    em_percent: float
    mean_edit_sim: float
    task_count: int


class EvalReport(dict):
    """Mapping ``group key -> GroupScore``; iteration follows sorted keys."""

    def sorted_items(self):
        return sorted(self.items(), key=lambda kv: tuple(str(part) for part in kv[0]))


def aggregate(pairs, keys, groups=()):
    """Group ``pairs`` by the parallel sequence ``keys``.

    Groups listed in ``groups`` but absent from ``keys`` are reported with a
    task count of 0 and ``None`` scores. ``math.fsum`` keeps the mean exact and
    therefore independent of input order.
    """
    pairs, keys = list(pairs), list(keys)
    if len(pairs) != len(keys):
        raise ValueError(f"{len(pairs)} pairs but {len(keys)} keys")
    buckets = {key: [] for key in groups}
    for pair, key in zip(pairs, keys):
        buckets.setdefault(key, []).append(pair)
    report = EvalReport()
    for key, members in buckets.items():
        n = len(members)
        if n == 0:
            report[key] = GroupScore(None, None, 0)
            continue
        report[key] = GroupScore(
            em_percent=100.0 * sum(p.em for p in members) / n,
            mean_edit_sim=math.fsum(p.edit_sim for p in members) / n,
            task_count=n,
        )
    return report
