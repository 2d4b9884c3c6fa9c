"""Known categorical distributions with closed-form missing mass.

These serve as ground truth for the estimators and query policies: for a
distribution with atoms ``theta_j`` the probability that the true label is
missed by ``t`` i.i.d. draws is ``sum_j theta_j (1 - theta_j)**t`` and its
one-step change is ``-sum_j theta_j**2 (1 - theta_j)**t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter

_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Categorical distribution over label ids ``0 .. m-1``."""

    probabilities: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)
    _last_atom: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        p = np.array(self.probabilities, dtype=np.float64).ravel()
        if p.size < 1:
            raise InvalidParameter("distribution needs at least one label")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidParameter("probabilities must be finite and non-negative")
        total = math.fsum(p)
        if abs(total - 1.0) > _SUM_TOL:
            raise InvalidParameter(f"probabilities sum to {total!r}, not 1")
        p.setflags(write=False)
        cdf = np.cumsum(p)
        cdf.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "_cdf", cdf)
        object.__setattr__(self, "_last_atom", int(np.flatnonzero(p > 0)[-1]))

    @classmethod
    def from_weights(cls, weights) -> "DiscreteDistribution":
        """Normalize non-negative weights into a distribution."""
        w = np.asarray(weights, dtype=np.float64)
        if w.size < 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameter("weights must be finite, non-negative and non-empty")
        total = math.fsum(w)
        if total <= 0:
            raise InvalidParameter("weights must have positive total")
        return cls(w / total)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return bool(np.array_equal(self.probabilities, other.probabilities))

    def __hash__(self) -> int:
        return hash(self.probabilities.tobytes())

    @property
    def size(self) -> int:
        return int(self.probabilities.size)

    def __len__(self) -> int:
        return self.size


def make_uniform(m: int) -> DiscreteDistribution:
    if int(m) != m or m < 1:
        raise InvalidParameter(f"support size must be a positive integer, got {m!r}")
    return DiscreteDistribution(np.full(int(m), 1.0 / m))


def make_geometric(p: float, m: int) -> DiscreteDistribution:
    """Geometric distribution ``p (1-p)**i``, truncated to ``m`` atoms and renormalized."""
    if not 0.0 < p < 1.0:
        raise InvalidParameter(f"geometric parameter must lie in (0, 1), got {p!r}")
    if int(m) != m or m < 1:
        raise InvalidParameter(f"support size must be a positive integer, got {m!r}")
    return DiscreteDistribution.from_weights(p * (1.0 - p) ** np.arange(int(m)))


def make_dirichlet(rng: np.random.Generator, m: int, concentration: float = 1.0) -> DiscreteDistribution:
    """Random distribution on ``m`` atoms drawn from a symmetric Dirichlet."""
    if int(m) != m or m < 1:
        raise InvalidParameter(f"support size must be a positive integer, got {m!r}")
    if concentration <= 0:
        raise InvalidParameter("concentration must be positive")
    w = rng.dirichlet(np.full(int(m), float(concentration)))
    # tiny concentrations can underflow every component
    if not np.any(w > 0):
        w = np.zeros(int(m))
        w[rng.integers(m)] = 1.0
    return DiscreteDistribution.from_weights(w)


def exact_missing_mass(d: DiscreteDistribution, t: int) -> float:
    """Probability that a label drawn from ``d`` is absent from ``t`` draws."""
    if t < 0:
        raise InvalidParameter("t must be non-negative")
    p = d.probabilities
    return math.fsum(p * (1.0 - p) ** t)


def exact_derivative(d: DiscreteDistribution, t: int) -> float:
    """Change in missing mass from one more draw, ``theta(t+1) - theta(t)``."""
    if t < 0:
        raise InvalidParameter("t must be non-negative")
    p = d.probabilities
    return -math.fsum(p * p * (1.0 - p) ** t)


def sample(d: DiscreteDistribution, rng: np.random.Generator) -> int:
    """Draw one label id from ``d`` using ``rng``."""
    u = rng.random()
    i = int(np.searchsorted(d._cdf, u, side="right"))
    # guards against the cumulative sum ending a hair below 1
    return min(i, d._last_atom)


def sample_many(d: DiscreteDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized :func:`sample`; consumes the stream exactly like ``size`` single calls."""
    u = rng.random(size)
    return np.minimum(np.searchsorted(d._cdf, u, side="right"), d._last_atom)


def parse_dist_spec(spec: str) -> DiscreteDistribution:
    """Parse ``uniform:M`` or ``geometric:P:M``."""
    parts = spec.strip().split(":")
    try:
        if parts[0] == "uniform" and len(parts) == 2:
            return make_uniform(int(parts[1]))
        if parts[0] == "geometric" and len(parts) == 3:
            return make_geometric(float(parts[1]), int(parts[2]))
    except ValueError as exc:
        if isinstance(exc, InvalidParameter):
            raise
        raise InvalidParameter(f"bad distribution spec {spec!r}: {exc}") from None
    raise InvalidParameter(f"bad distribution spec {spec!r}; expected uniform:M or geometric:P:M")
