"""Split-conformal calibration with an "everything else" (EE) label.

Seen labels score ``1 - p(y)``; the EE label, standing for every label not
sampled, scores ``2 - p(EE)`` and therefore always ranks after positively
weighted seen labels. A calibration point whose truth was never sampled is
scored as EE. Thresholding these scores at the split-conformal quantile gives
sets that contain the truth or EE with probability at least ``1 - alpha``.

The vanilla baseline instead includes EE when ``p(EE) >= tau`` and adds seen
labels by decreasing probability until their mass exceeds ``1 - tau``, with
``tau`` chosen on a grid by empirical coverage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InfeasibleCalibration, InvalidInput, InvalidParameter, ModelFormatError
from .estimators import EstimatorConfig, LabelProbabilities
from .policy import PolicyConfig


class _EE:
    __slots__ = ()

    def __repr__(self) -> str:
        return "EE"

    def __reduce__(self):
        return "EE"


EE = _EE()


@dataclass(frozen=True)
class ScoredCandidate:
    label: object
    score: float


@dataclass(frozen=True)
class PredictionSet:
    labels: frozenset = field(default_factory=frozenset)
    includes_ee: bool = False
    threshold: float = math.inf

    def covers(self, truth: int | None) -> bool:
        """Covered means the truth was included or EE stands in for it."""
        return self.includes_ee or (truth is not None and truth in self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def __le__(self, other: "PredictionSet") -> bool:
        return self.labels <= other.labels and (not self.includes_ee or other.includes_ee)


def conformity_score(probs: LabelProbabilities, y) -> float:
    if y is not EE and y in probs.seen:
        return 1.0 - probs.seen[y]
    return 2.0 - probs.ee_mass


def scored_candidates(probs: LabelProbabilities) -> list[ScoredCandidate]:
    out = [ScoredCandidate(y, 1.0 - p) for y, p in sorted(probs.seen.items())]
    out.append(ScoredCandidate(EE, 2.0 - probs.ee_mass))
    return out


def _as_fraction(alpha: float) -> Fraction:
    # 0.3 is stored as 0.29999...; recover the intended decimal.
    return Fraction(alpha).limit_denominator(1_000_000)


def quantile_rank(n: int, alpha: float) -> int:
    """1-based rank ``ceil((n + 1)(1 - alpha))`` of the conformal quantile among ``n + 1`` values."""
    return math.ceil((n + 1) * (1 - _as_fraction(alpha)))


def calibrate_quantile(scores: Sequence[float], alpha: float) -> float:
    """Split-conformal threshold: the rank-``ceil((n+1)(1-alpha))`` value of ``scores`` plus ``+inf``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha!r}")
    s = np.asarray(scores, dtype=np.float64).ravel()
    n = s.size
    if n == 0:
        raise InvalidInput("cannot calibrate on an empty score list")
    k = quantile_rank(n, alpha)
    if k > n:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


def build_prediction_set(probs: LabelProbabilities, q_star: float) -> PredictionSet:
    labels = frozenset(y for y, p in probs.seen.items() if 1.0 - p <= q_star)
    return PredictionSet(labels, 2.0 - probs.ee_mass <= q_star, q_star)


def vanilla_build_set(probs: LabelProbabilities, tau: float) -> PredictionSet:
    if not 0.0 <= tau <= 1.0:
        raise InvalidParameter(f"tau must lie in [0, 1], got {tau!r}")
    target = 1.0 - tau
    picked = []
    cumulative = 0.0
    for y, p in sorted(probs.seen.items(), key=lambda kv: (-kv[1], kv[0])):
        if cumulative > target:
            break
        picked.append(y)
        cumulative += p
    return PredictionSet(frozenset(picked), probs.ee_mass >= tau, tau)


def default_tau_grid(points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def vanilla_coverage(probs: Sequence[LabelProbabilities], truths: Sequence[int | None], tau: float) -> float:
    hits = sum(vanilla_build_set(p, tau).covers(y) for p, y in zip(probs, truths))
    return hits / len(probs)


def vanilla_calibrate(
    probs: Sequence[LabelProbabilities],
    truths: Sequence[int | None],
    alpha: float,
    tau_grid=None,
    select: str = "largest",
) -> float:
    """Choose ``tau`` on a grid so empirical calibration coverage reaches ``1 - alpha``.

    Coverage can only fall as ``tau`` grows, so ``select="largest"`` returns
    the least conservative feasible threshold. ``select="smallest"`` returns
    the smallest feasible grid value instead, which is always the smallest
    grid point when that point is feasible.
    """
    if len(probs) == 0 or len(probs) != len(truths):
        raise InvalidInput("calibration points and truths must be non-empty and aligned")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha!r}")
    if select not in ("largest", "smallest"):
        raise InvalidParameter(f"unknown tau selection rule {select!r}")
    grid = sorted(float(t) for t in (default_tau_grid() if tau_grid is None else tau_grid))
    if not grid:
        raise InvalidParameter("tau grid is empty")
    target = 1.0 - alpha
    feasible = [tau for tau in grid if vanilla_coverage(probs, truths, tau) >= target - 1e-12]
    if not feasible:
        raise InfeasibleCalibration(f"no tau in the grid reaches coverage {target:g}")
    return feasible[-1] if select == "largest" else feasible[0]


MODEL_FORMAT = "cpq-calibration"
MODEL_VERSION = 1


def _encode_float(x: float | None):
    if x is None:
        return None
    return "inf" if math.isinf(x) else x


def _decode_float(x):
    if x is None:
        return None
    if x == "inf":
        return math.inf
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    raise ModelFormatError(f"bad numeric field {x!r}")


@dataclass(frozen=True)
class CalibrationModel:
    """Everything needed to turn a new input's samples into a prediction set.

    ``variant`` is ``"p1p2"`` (conformal threshold ``q_star``) or one of the
    vanilla-calibrated variants, which carry ``tau_star`` instead.
    """

    alpha: float
    beta_star: float
    q_star: float | None
    estimator: EstimatorConfig = EstimatorConfig()
    policy: PolicyConfig = PolicyConfig()
    seed: int | None = None
    variant: str = "p1p2"
    tau_star: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameter("alpha must lie in (0, 1)")
        if self.q_star is not None and not (0.0 <= self.q_star <= 2.0 or self.q_star == math.inf):
            raise InvalidParameter(f"q_star must lie in [0, 2] or be +inf, got {self.q_star!r}")

    def predict(self, probs: LabelProbabilities) -> PredictionSet:
        if self.variant == "p1p2":
            return build_prediction_set(probs, self.q_star)
        return vanilla_build_set(probs, self.tau_star)

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "variant": self.variant,
            "alpha": self.alpha,
            "beta_star": self.beta_star,
            "q_star": _encode_float(self.q_star),
            "tau_star": self.tau_star,
            "estimator": self.estimator.to_dict(),
            "policy": self.policy.to_dict(),
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model is not valid JSON: {exc.msg}") from None
        if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError("not a calibration model document")
        if doc.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {doc.get('version')!r}; expected {MODEL_VERSION}")
        try:
            variant = doc.get("variant", "p1p2")
            model = cls(
                alpha=float(doc["alpha"]),
                beta_star=float(doc["beta_star"]),
                q_star=_decode_float(doc.get("q_star")),
                estimator=EstimatorConfig.from_dict(doc.get("estimator", {})),
                policy=PolicyConfig.from_dict(doc.get("policy", {})),
                seed=doc.get("seed"),
                variant=variant,
                tau_star=_decode_float(doc.get("tau_star")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model: {exc}") from None
        if (model.variant == "p1p2" and model.q_star is None) or (model.variant != "p1p2" and model.tau_star is None):
            raise ModelFormatError(f"model for variant {model.variant!r} lacks its threshold")
        return model
