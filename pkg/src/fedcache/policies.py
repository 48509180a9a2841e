"""Cache-content selection policies.

The federated scheme votes by counting item occurrences across the
pooled client recommendation lists; the baselines are the future-aware
oracle, uniform random choice, and two bandits that re-select the cache
at a fixed request interval. All deterministic selectors break ties by
ascending item id.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CacheState:
    """Current cache contents plus hit accounting."""

    capacity: int
    contents: set = field(default_factory=set)
    hits: int = 0
    requests: int = 0

    def set_contents(self, items) -> None:
        items = list(items)
        if len(items) > self.capacity:
            raise ValueError(f"{len(items)} items exceed capacity {self.capacity}")
        if len(set(items)) != len(items):
            raise ValueError("cache contents must be distinct")
        self.contents = set(items)

    def serve(self, item) -> bool:
        self.requests += 1
        hit = item in self.contents
        self.hits += hit
        return hit

    @property
    def efficiency(self) -> float:
        return self.hits / self.requests if self.requests else 0.0


def pool_count_select(pool, n) -> list:
    """Top-n items by occurrence count across the pooled client lists.

    Ties break by ascending item id; returns fewer than n items when the
    pool holds fewer distinct ids.
    """
    if not pool:
        raise ValueError("empty recommendation pool")
    counts = Counter()
    for lst in pool:
        counts.update(lst)
    ranked = sorted(counts, key=lambda it: (-counts[it], it))
    return [int(i) for i in ranked[:n]]


def oracle_select(items, n) -> list:
    """Top-n items by request frequency over the (future) stream."""
    items = np.asarray(items)
    if len(items) == 0:
        raise ValueError("empty request stream")
    ids, counts = np.unique(items, return_counts=True)
    order = np.lexsort((ids, -counts))
    return [int(ids[t]) for t in order[:n]]


def random_select(num_items, n, rng) -> list:
    """Uniform sample of n distinct items from the catalog."""
    if n > num_items:
        raise ValueError(f"cache size {n} exceeds catalog {num_items}")
    return [int(i) for i in rng.choice(num_items, size=n, replace=False)]


@dataclass
class BanditState:
    """Per-item counters shared by the bandit policies."""

    rewards: np.ndarray  # accumulated hit rewards (epsilon-greedy)
    wins: np.ndarray
    losses: np.ndarray

    @staticmethod
    def fresh(num_items) -> "BanditState":
        return BanditState(
            rewards=np.zeros(num_items, dtype=np.int64),
            wins=np.zeros(num_items, dtype=np.int64),
            losses=np.zeros(num_items, dtype=np.int64),
        )

    @property
    def num_items(self):
        return len(self.rewards)


def greedy_exploit_select(state: BanditState, n) -> list:
    """Top-n items by accumulated reward, ties by ascending id."""
    ids = np.arange(state.num_items)
    order = np.lexsort((ids, -state.rewards))
    return [int(i) for i in order[:n]]


def egreedy_step(state: BanditState, n, epsilon, rng) -> list:
    """Exploit with probability 1-epsilon, otherwise pick n random items."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if rng.random() < epsilon:
        return random_select(state.num_items, n, rng)
    return greedy_exploit_select(state, n)


def thompson_step(state: BanditState, n, rng) -> list:
    """Sample Beta(wins+1, losses+1) per item and keep the n largest."""
    values = rng.beta(state.wins + 1.0, state.losses + 1.0)
    ids = np.arange(state.num_items)
    order = np.lexsort((ids, -values))
    return [int(i) for i in order[:n]]


class StaticCachePolicy:
    """Fixed cache selected once before the replay starts."""

    def __init__(self, items, capacity):
        self.cache = CacheState(capacity)
        self.cache.set_contents(items[:capacity])

    def serve(self, item) -> bool:
        return self.cache.serve(item)


class EpsilonGreedyPolicy:
    """m-epsilon-greedy cache, re-selected every ``interval`` requests.

    A request to a cached item pays that item +1 reward.
    """

    def __init__(self, num_items, capacity, epsilon, interval, rng):
        self.state = BanditState.fresh(num_items)
        self.cache = CacheState(capacity)
        self.epsilon = epsilon
        self.interval = interval
        self.rng = rng

    def serve(self, item) -> bool:
        if self.cache.requests % self.interval == 0:
            self.cache.set_contents(
                egreedy_step(self.state, self.cache.capacity, self.epsilon, self.rng))
        hit = self.cache.serve(item)
        if hit:
            self.state.rewards[item] += 1
        return hit


class ThompsonSamplingPolicy:
    """Thompson-sampling cache, re-selected every ``interval`` requests.

    A hit adds a win to the requested item; a miss adds a loss to every
    currently cached item.
    """

    def __init__(self, num_items, capacity, interval, rng):
        self.state = BanditState.fresh(num_items)
        self.cache = CacheState(capacity)
        self.interval = interval
        self.rng = rng
        self._cached_ids = np.zeros(0, dtype=np.int64)

    def serve(self, item) -> bool:
        if self.cache.requests % self.interval == 0:
            chosen = thompson_step(self.state, self.cache.capacity, self.rng)
            self.cache.set_contents(chosen)
            self._cached_ids = np.asarray(chosen, dtype=np.int64)
        hit = self.cache.serve(item)
        if hit:
            self.state.wins[item] += 1
        else:
            self.state.losses[self._cached_ids] += 1
        return hit
