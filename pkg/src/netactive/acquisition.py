"""Query strategies and the budgeted annotate-and-collect acquisition decision."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

STRATEGIES = ("random", "uncertainty", "qbc", "coreset", "hybrid")

_DIST_BLOCK = 64  # labeled points per vectorized distance block


class BudgetError(RuntimeError):
    """A charge would push spending past the budget total."""


class BudgetExhausted(RuntimeError):
    """Not enough budget for a single annotation; loops stop on this."""


@dataclass
class Budget:
    """Abstract acquisition funds: annotation and collection draw from one pot."""

    total: float
    annotation_cost: float = 1.0
    collection_cost: float = 0.25
    spent: float = 0.0

    def __post_init__(self):
        if self.total < 0.0:
            raise ValueError("budget total must be non-negative")
        if self.annotation_cost <= 0.0 or self.collection_cost <= 0.0:
            raise ValueError("per-item costs must be positive")
        if not (0.0 <= self.spent <= self.total):
            raise ValueError("spent must lie in [0, total]")

    @property
    def remaining(self) -> float:
        return self.total - self.spent

    def can_afford(self, cost: float) -> bool:
        return cost <= self.remaining + 1e-9

    def charge(self, cost: float) -> None:
        if cost < 0.0:
            raise ValueError("cannot charge a negative cost")
        if not self.can_afford(cost):
            raise BudgetError(f"charge {cost} exceeds remaining budget {self.remaining}")
        self.spent = min(self.spent + cost, self.total)


@dataclass
class CollectRegion:
    """Ball in normalized feature space describing where to gather new samples."""

    centroid: np.ndarray
    radius: float


@dataclass
class AcquisitionDecision:
    annotate_ids: list[int]
    collect_count: int = 0
    collect_region: CollectRegion | None = None
    cost: float = 0.0

    def __post_init__(self):
        if len(set(self.annotate_ids)) != len(self.annotate_ids):
            raise ValueError("annotate_ids must be distinct")
        if self.collect_count < 0:
            raise ValueError("collect_count must be non-negative")


@dataclass
class CollectPolicy:
    enabled: bool = False
    collect_fraction: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.collect_fraction <= 1.0):
            raise ValueError("collect_fraction must lie in [0, 1]")


@dataclass
class AcquisitionInputs:
    """Snapshot of model and pool state a strategy needs to score candidates.

    Feature vectors are in normalized space.  Score maps cover exactly the
    current unlabeled candidates; which ones must be present depends on the
    strategy (epistemic_std for uncertainty/hybrid, committee_var for qbc).
    """

    candidate_features: dict[int, np.ndarray]
    labeled_features: np.ndarray
    epistemic_std: Mapping[int, float] | None = None
    committee_var: Mapping[int, float] | None = None
    select_seed: int = 0
    hybrid_beta: float = 0.5


def rank_uncertainty(scores: Mapping[int, float]) -> list[int]:
    """Candidate ids sorted by score descending, ties broken by ascending id."""
    if not scores:
        raise ValueError("scores must be non-empty")
    for i, s in scores.items():
        if not math.isfinite(s):
            raise ValueError(f"non-finite score {s!r} for id {i}")
    return sorted(scores, key=lambda i: (-scores[i], i))


def _min_distances(points: np.ndarray, references: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to its nearest reference (inf if none)."""
    n = points.shape[0]
    best = np.full(n, np.inf)
    for start in range(0, references.shape[0], _DIST_BLOCK):
        block = references[start : start + _DIST_BLOCK]
        d = np.sqrt(((points[:, None, :] - block[None, :, :]) ** 2).sum(axis=-1))
        best = np.minimum(best, d.min(axis=1))
    return best


def select_core_set(
    labeled_features: np.ndarray,
    candidate_features: Mapping[int, np.ndarray],
    k: int,
) -> list[int]:
    """Greedy k-center selection for diversity.

    Repeats k times: pick the candidate whose distance to the nearest point
    in (labeled set plus already-selected candidates) is largest, ties by
    ascending id.  Returns ids in selection order.
    """
    if not candidate_features:
        raise ValueError("no candidates to select from")
    if not (1 <= k <= len(candidate_features)):
        raise ValueError(f"k={k} must lie in [1, {len(candidate_features)}]")
    ids = sorted(candidate_features)
    points = np.stack([np.asarray(candidate_features[i], dtype=float) for i in ids])
    labeled = np.asarray(labeled_features, dtype=float)
    if labeled.size:
        min_d = _min_distances(points, labeled.reshape(len(labeled), -1))
    else:
        min_d = np.full(len(ids), np.inf)
    chosen: list[int] = []
    for _ in range(k):
        pick = int(np.argmax(min_d))  # argmax takes the first (lowest-id) maximum
        chosen.append(ids[pick])
        d_new = np.sqrt(((points - points[pick]) ** 2).sum(axis=1))
        min_d = np.minimum(min_d, d_new)
        min_d[pick] = -np.inf
    return chosen


def hybrid_score(uncertainty: float, diversity: float, beta: float) -> float:
    """Geometric blend uncertainty^beta * diversity^(1-beta).

    beta=1 recovers pure uncertainty ranking and beta=0 pure diversity
    ranking (up to ties)."""
    if uncertainty < 0.0 or diversity < 0.0:
        raise ValueError("inputs must be non-negative")
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must lie in [0, 1]")
    return float(uncertainty**beta * diversity ** (1.0 - beta))


def random_select(candidate_ids: Sequence[int], k: int, rng_seed: int) -> list[int]:
    """Uniform sample of k ids without replacement, deterministic per seed."""
    ids = sorted(candidate_ids)
    if k > len(ids):
        raise ValueError(f"k={k} exceeds candidate count {len(ids)}")
    order = np.random.default_rng(rng_seed).permutation(len(ids))
    return [ids[i] for i in order[:k]]


def _require_scores(
    scores: Mapping[int, float] | None, candidates: Mapping[int, np.ndarray], what: str
) -> dict[int, float]:
    if scores is None:
        raise ValueError(f"strategy requires {what} scores")
    missing = [i for i in candidates if i not in scores]
    if missing:
        raise ValueError(f"{what} scores missing for ids {missing[:5]}")
    return {i: float(scores[i]) for i in candidates}


def decide_acquisition(
    strategy: str,
    inputs: AcquisitionInputs,
    batch_size: int,
    budget: Budget,
    collect_policy: CollectPolicy | None = None,
) -> AcquisitionDecision:
    """Choose which unlabeled ids to annotate and how many new samples to collect.

    The annotation batch is the strategy's top picks truncated to what the
    remaining budget affords.  When collection is enabled, additionally
    request floor(batch_size * collect_fraction) new samples (again budget
    permitting) from a ball around the chosen batch: centroid of its
    normalized features, radius their maximum distance to that centroid.

    Raises BudgetExhausted when not even one annotation is affordable.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not inputs.candidate_features:
        raise ValueError("no unlabeled candidates")
    collect_policy = collect_policy or CollectPolicy()

    if math.isinf(budget.remaining):
        by_budget = batch_size
    else:
        by_budget = int(math.floor(budget.remaining / budget.annotation_cost + 1e-9))
    affordable = min(batch_size, by_budget, len(inputs.candidate_features))
    if affordable < 1:
        raise BudgetExhausted(
            f"remaining budget {budget.remaining} cannot cover one annotation"
        )

    if strategy == "random":
        chosen = random_select(list(inputs.candidate_features), affordable, inputs.select_seed)
    elif strategy == "uncertainty":
        scores = _require_scores(inputs.epistemic_std, inputs.candidate_features, "epistemic")
        chosen = rank_uncertainty(scores)[:affordable]
    elif strategy == "qbc":
        scores = _require_scores(inputs.committee_var, inputs.candidate_features, "committee")
        chosen = rank_uncertainty(scores)[:affordable]
    elif strategy == "coreset":
        chosen = select_core_set(inputs.labeled_features, inputs.candidate_features, affordable)
    else:  # hybrid
        unc = _require_scores(inputs.epistemic_std, inputs.candidate_features, "epistemic")
        ids = sorted(inputs.candidate_features)
        points = np.stack([inputs.candidate_features[i] for i in ids])
        labeled = np.asarray(inputs.labeled_features, dtype=float)
        if labeled.size:
            dists = _min_distances(points, labeled.reshape(len(labeled), -1))
        else:
            dists = np.ones(len(ids))
        scores = {
            i: hybrid_score(unc[i], float(d), inputs.hybrid_beta) for i, d in zip(ids, dists)
        }
        chosen = rank_uncertainty(scores)[:affordable]

    annotate_cost = len(chosen) * budget.annotation_cost
    collect_count = 0
    region = None
    if collect_policy.enabled:
        wanted = int(math.floor(batch_size * collect_policy.collect_fraction + 1e-9))
        slack = budget.remaining - annotate_cost
        if math.isinf(slack):
            collect_count = wanted
        else:
            collect_count = min(wanted, int(math.floor(slack / budget.collection_cost + 1e-9)))
        collect_count = max(collect_count, 0)
        if collect_count > 0:
            batch_points = np.stack([inputs.candidate_features[i] for i in chosen])
            centroid = batch_points.mean(axis=0)
            radius = float(np.sqrt(((batch_points - centroid) ** 2).sum(axis=1)).max())
            region = CollectRegion(centroid=centroid, radius=radius)

    cost = annotate_cost + collect_count * budget.collection_cost
    return AcquisitionDecision(
        annotate_ids=list(chosen), collect_count=collect_count, collect_region=region, cost=cost
    )
