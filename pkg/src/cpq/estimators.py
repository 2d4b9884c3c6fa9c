"""Good-Turing style estimators computed from a :class:`~cpq.tally.Tally`.

``gt_missing_mass``
    singleton estimate ``N1 / t`` of the probability of an unseen label.
``gt_derivative``
    doubleton estimate ``-2 N2 / t**2`` of the one-step change in missing mass.
``naive_derivative``
    finite difference of two successive missing-mass estimates; kept as a
    baseline, it is noisy and may be positive.
``label_probabilities``
    seen-label probabilities plus the mass reserved for unseen labels,
    rescaled to sum to one.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

from .errors import InvalidParameter, UndefinedEstimate, UnknownLabel
from .tally import Tally


class GTFallback(str, enum.Enum):
    EMPIRICAL = "empirical-frequency"
    SKIP = "skip"


class Normalization(str, enum.Enum):
    SCALE_SEEN_TO_COMPLEMENT = "scale-seen-to-complement"
    NONE = "none"


class SeenEstimator(str, enum.Enum):
    GOOD_TURING = "good-turing"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class EstimatorConfig:
    gt_fallback: GTFallback = GTFallback.EMPIRICAL
    clip_to_unit: bool = True
    normalization: Normalization = Normalization.SCALE_SEEN_TO_COMPLEMENT
    seen_estimator: SeenEstimator = SeenEstimator.GOOD_TURING

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "gt_fallback", GTFallback(self.gt_fallback))
            object.__setattr__(self, "normalization", Normalization(self.normalization))
            object.__setattr__(self, "seen_estimator", SeenEstimator(self.seen_estimator))
        except ValueError as exc:
            raise InvalidParameter(str(exc)) from None
        object.__setattr__(self, "clip_to_unit", bool(self.clip_to_unit))

    def to_dict(self) -> dict:
        return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        known = {k: data[k] for k in ("gt_fallback", "clip_to_unit", "normalization", "seen_estimator") if k in data}
        return cls(**known)


DEFAULT_CONFIG = EstimatorConfig()


@dataclass(frozen=True)
class LabelProbabilities:
    """Estimated probabilities of seen labels and of the unseen remainder."""

    seen: dict[int, float] = field(default_factory=dict)
    ee_mass: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ee_mass <= 1.0:
            raise InvalidParameter(f"ee_mass must lie in [0, 1], got {self.ee_mass!r}")
        if any(v < 0 for v in self.seen.values()):
            raise InvalidParameter("seen probabilities must be non-negative")


def _require_samples(tally: Tally) -> None:
    if tally.t < 1:
        raise UndefinedEstimate("estimate undefined for an empty tally; treat missing mass as 1")


def gt_missing_mass(tally: Tally, config: EstimatorConfig = DEFAULT_CONFIG) -> float:
    _require_samples(tally)
    mm = tally.singletons() / tally.t
    if config.clip_to_unit:
        mm = min(max(mm, 0.0), 1.0)
    return mm


def gt_derivative(tally: Tally) -> float:
    _require_samples(tally)
    return -2.0 * tally.doubletons() / (tally.t * tally.t)


def naive_derivative(prev_mm: float, next_mm: float) -> float:
    return next_mm - prev_mm


def gt_seen_probability(tally: Tally, y: int, config: EstimatorConfig = DEFAULT_CONFIG) -> float:
    """Good-Turing probability ``(r+1)/t * N_{r+1}/N_r`` of a seen label.

    Where ``N_{r+1}`` (or ``N_r``) is zero the ratio is undefined; the
    configured fallback then applies: empirical frequency ``r/t`` or ``0``.
    """
    r = tally.counts.get(y, 0)
    if r == 0:
        raise UnknownLabel(y)
    n_r = tally.n(r)
    n_next = tally.n(r + 1)
    if n_r > 0 and n_next > 0:
        return (r + 1) / tally.t * n_next / n_r
    if config.gt_fallback is GTFallback.EMPIRICAL:
        return r / tally.t
    return 0.0


def label_probabilities(tally: Tally, config: EstimatorConfig = DEFAULT_CONFIG) -> LabelProbabilities:
    _require_samples(tally)
    ee = min(max(tally.singletons() / tally.t, 0.0), 1.0)
    labels = sorted(tally.counts)
    if config.seen_estimator is SeenEstimator.GOOD_TURING:
        raw = [gt_seen_probability(tally, y, config) for y in labels]
    else:
        raw = [tally.counts[y] / tally.t for y in labels]
    if config.normalization is Normalization.NONE:
        return LabelProbabilities(dict(zip(labels, raw)), ee)

    total = sum(raw)
    if total <= 0.0:
        raw = [tally.counts[y] / tally.t for y in labels]
        total = 1.0
    scale = (1.0 - ee) / total
    return LabelProbabilities({y: w * scale for y, w in zip(labels, raw)}, ee)
