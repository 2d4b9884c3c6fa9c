"""Query policies: how many samples to draw for each input.

The adaptive policy keeps querying while the estimated one-step drop in
missing mass is at least as large as a threshold ``beta``. With
``d(t) = -2 N2 / t**2`` after ``t`` samples, querying stops at the first
``t >= t_min`` with ``d(t) > beta``, at ``t_max``, or when the source runs
dry. Because ``d(t) <= 0``, ``beta = 0`` never stops early and a very negative
``beta`` stops at ``t_min``; more negative thresholds never query more.

``greedy_allocate`` solves the same trade-off exactly when the distributions
are known, and is used to check the threshold structure of the optimum.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .distributions import DiscreteDistribution, exact_derivative
from .errors import BudgetExhausted, InvalidInput, InvalidParameter
from .tally import Tally


@dataclass(frozen=True)
class PolicyConfig:
    """Stopping configuration.

    ``fixed_t`` switches to the non-adaptive policy that draws exactly
    ``min(fixed_t, available)`` samples.
    """

    beta_star: float = 0.0
    t_min: int = 3
    t_max: int = 200
    fixed_t: int | None = None

    def __post_init__(self) -> None:
        if self.beta_star > 0 or math.isnan(self.beta_star):
            raise InvalidParameter(f"beta_star must be <= 0, got {self.beta_star!r}")
        if self.t_min < 1 or self.t_max < 1:
            raise InvalidParameter("t_min and t_max must be positive")
        if self.t_min > self.t_max:
            raise InvalidParameter(f"t_min={self.t_min} exceeds t_max={self.t_max}")
        if self.fixed_t is not None and self.fixed_t < 0:
            raise InvalidParameter("fixed_t must be non-negative")

    @property
    def adaptive(self) -> bool:
        return self.fixed_t is None

    def with_beta(self, beta: float) -> "PolicyConfig":
        return PolicyConfig(beta, self.t_min, self.t_max, self.fixed_t)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        known = {k: data[k] for k in ("beta_star", "t_min", "t_max", "fixed_t") if k in data}
        return cls(**known)


def _doubleton_derivative(tally: Tally) -> float:
    return -2.0 * tally.doubletons() / (tally.t * tally.t)


def run_query_loop(oracle, input_id: str, config: PolicyConfig) -> Tally:
    """Query ``oracle`` for one input under ``config`` and return the tally.

    Every call starts a fresh oracle session for the input.
    """
    oracle.reset(input_id)
    tally = Tally()
    cap = config.fixed_t if config.fixed_t is not None else config.t_max
    while tally.t < cap:
        try:
            y = oracle.next_sample(input_id)
        except BudgetExhausted:
            break
        tally.push(y)
        if config.adaptive and tally.t >= config.t_min and _doubleton_derivative(tally) > config.beta_star:
            break
    return tally


def derivative_path(samples: Iterable[int]) -> np.ndarray:
    """``path[t]`` is the doubleton estimate after the first ``t`` samples; ``path[0]`` is NaN."""
    tally = Tally()
    out = [math.nan]
    for y in samples:
        tally.push(int(y))
        out.append(_doubleton_derivative(tally))
    return np.asarray(out, dtype=np.float64)


def stopping_time(path: np.ndarray, beta: float, config: PolicyConfig) -> int:
    """Number of samples :func:`run_query_loop` draws on a stream whose estimates are ``path``."""
    available = len(path) - 1
    if config.fixed_t is not None:
        return min(config.fixed_t, available)
    limit = min(config.t_max, available)
    for t in range(config.t_min, limit + 1):
        if path[t] > beta:
            return t
    return limit


def stopping_times(path: np.ndarray, betas: np.ndarray, config: PolicyConfig) -> np.ndarray:
    """Vectorized :func:`stopping_time` over many thresholds on one stream."""
    betas = np.asarray(betas, dtype=np.float64)
    available = len(path) - 1
    if config.fixed_t is not None:
        return np.full(betas.shape, min(config.fixed_t, available), dtype=np.int64)
    limit = min(config.t_max, available)
    if limit < config.t_min:
        return np.full(betas.shape, limit, dtype=np.int64)
    running = np.maximum.accumulate(path[config.t_min : limit + 1])
    first = np.searchsorted(running, betas, side="right")
    return np.minimum(config.t_min + first, limit).astype(np.int64)


def warmup_t_min(budget: float, t_max: int = 200) -> int:
    """Budget-relative query floor: half the budget, at least 3, at most ``t_max``.

    With fewer samples a doubleton-free tally is common even for spread-out
    distributions, so the doubleton estimate reads 0 and every threshold
    stops there; the most permissive adaptive policy then cannot spend the
    budget at all.
    """
    b = int(math.floor(budget))
    return max(1, min(t_max, max(min(3, b), b // 2)))


def default_beta_grid(points: int = 40, low: float = 1e-6, high: float = 1.0) -> np.ndarray:
    """Log-spaced negative thresholds from ``-high`` to ``-low``, plus 0, ascending."""
    return np.concatenate([-np.logspace(math.log10(high), math.log10(low), points), [0.0]])


@dataclass(frozen=True)
class BetaChoice:
    beta_star: float
    avg_queries: float
    grid: tuple[float, ...]
    averages: tuple[float, ...]


def select_beta(paths: Sequence[np.ndarray], budget: float, grid=None, config: PolicyConfig = PolicyConfig()) -> BetaChoice:
    """Pick the threshold whose average query count on ``paths`` is the largest not above ``budget``.

    If no candidate fits, the one with the fewest queries is returned. Equal
    averages resolve to the more negative threshold.
    """
    if len(paths) == 0:
        raise InvalidInput("calibration split for threshold tuning is empty")
    grid = default_beta_grid() if grid is None else np.asarray(sorted(grid), dtype=np.float64)
    if grid.size == 0:
        raise InvalidParameter("beta grid is empty")
    if np.any(grid > 0):
        raise InvalidParameter("beta candidates must be <= 0")
    if budget < config.t_min:
        raise InvalidParameter(f"budget {budget} is below t_min={config.t_min}")
    totals = np.zeros(grid.size, dtype=np.int64)
    for path in paths:
        totals += stopping_times(path, grid, config)
    averages = totals / len(paths)
    feasible = np.flatnonzero(averages <= budget + 1e-12)
    if feasible.size:
        best = feasible[np.argmax(averages[feasible])]
    else:
        best = int(np.argmin(averages))
    return BetaChoice(float(grid[best]), float(averages[best]), tuple(grid.tolist()), tuple(averages.tolist()))


def tune_beta(oracle, input_ids: Sequence[str], budget: float, grid=None, config: PolicyConfig = PolicyConfig()) -> float:
    """Tune the stopping threshold on ``input_ids`` so the mean query count fits ``budget``.

    Each input is queried once up to ``t_max``; every candidate threshold is
    then evaluated on that same stream, which is exactly what
    :func:`run_query_loop` would see after a session reset.
    """
    if len(input_ids) == 0:
        raise InvalidInput("calibration split for threshold tuning is empty")
    probe = PolicyConfig(0.0, config.t_min, config.t_max)
    paths = []
    for input_id in input_ids:
        oracle.reset(input_id)
        samples = []
        while len(samples) < probe.t_max:
            try:
                samples.append(oracle.next_sample(input_id))
            except BudgetExhausted:
                break
        paths.append(derivative_path(samples))
    return select_beta(paths, budget, grid, config).beta_star


def _greedy(dists: Sequence[DiscreteDistribution], budget: int) -> tuple[list[int], float | None]:
    if budget < 0:
        raise InvalidParameter("budget must be non-negative")
    counts = [0] * len(dists)
    if not dists:
        return counts, None
    heap = [(exact_derivative(d, 0), i) for i, d in enumerate(dists)]
    heapq.heapify(heap)
    last_gain = None
    for _ in range(int(budget)):
        gain, i = heapq.heappop(heap)
        counts[i] += 1
        last_gain = gain
        heapq.heappush(heap, (exact_derivative(dists[i], counts[i]), i))
    return counts, last_gain


def greedy_allocate(dists: Sequence[DiscreteDistribution], budget: int) -> list[int]:
    """Spend ``budget`` queries one at a time on the input with the steepest exact drop.

    Missing mass is convex in the query count, so this greedy minimizes the
    summed missing mass over all allocations of the same total.
    """
    return _greedy(dists, budget)[0]


def greedy_threshold(dists: Sequence[DiscreteDistribution], budget: int) -> tuple[list[int], float | None]:
    """Greedy allocation plus the last marginal gain taken (``None`` for budget 0)."""
    return _greedy(dists, budget)
