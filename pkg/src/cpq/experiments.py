"""Desk-scale experiment harness.

Two kinds of runs:

* :func:`run_estimator_eval` tracks the missing-mass estimators against the
  exact curves of a known distribution over many independent sample paths.
* :func:`run_split_experiment` repeatedly splits a labelled dataset 50:50 into
  calibration and test halves and measures coverage, EE fraction, set size and
  query usage for one of three variants:

  ``vanilla``  fixed ``floor(B)`` queries per input, grid-calibrated ``tau``
  ``p1``       adaptive queries tuned to budget ``B``, grid-calibrated ``tau``
  ``p1p2``     adaptive queries plus the conformal EE-score threshold

Each input's sample stream is fixed by ``(seed, input id)`` for synthetic data
or by the log for replay data, so all splits and thresholds see the same
draws for a given input.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from ._rng import derive_rng
from .conformal import (
    CalibrationModel,
    PredictionSet,
    build_prediction_set,
    calibrate_quantile,
    conformity_score,
    vanilla_build_set,
    vanilla_calibrate,
)
from .distributions import (
    DiscreteDistribution,
    exact_derivative,
    exact_missing_mass,
    make_dirichlet,
    make_geometric,
    sample,
    sample_many,
)
from .errors import BudgetExhausted, InvalidInput, InvalidParameter
from .estimators import EstimatorConfig, LabelProbabilities, label_probabilities
from .oracle import QueryRecord, ReplayOracle, SyntheticOracle
from .policy import PolicyConfig, derivative_path, select_beta, stopping_times, warmup_t_min
from .tally import Tally

VARIANTS = ("vanilla", "p1", "p1p2")

METRICS_HEADER = [
    "variant", "alpha", "budget",
    "coverage_mean", "coverage_std",
    "ee_frac_mean", "ee_frac_std",
    "setsize_mean", "setsize_std",
    "queries_mean", "queries_std",
]
CURVE_HEADER = [
    "t", "exact_mm", "gt_mm_mean", "gt_mm_std",
    "exact_deriv", "doubleton_mean", "doubleton_std",
    "naive_mean", "naive_std",
]


def _std(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(v.std(ddof=1)) if v.size > 1 else 0.0


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


@dataclass
class Dataset:
    """Labelled inputs plus the oracle that answers queries about them."""

    ids: list[str]
    truths: list[int | None]
    oracle: object
    dists: dict[str, DiscreteDistribution] | None = None

    def __len__(self) -> int:
        return len(self.ids)


def make_synthetic_task(n: int, seed: int) -> Dataset:
    """Synthetic benchmark where the oracle samples the true label distribution.

    Inputs mix three regimes resembling short-answer generation tasks:

    * confident (45%): geometric over 10 answers with ``p`` in [0.5, 0.95]
    * ambiguous (35%): flat Dirichlet over 4 to 16 plausible answers
    * open-ended (20%): sparse Dirichlet(0.5) over 50 to 200 answers
    """
    if n < 1:
        raise InvalidParameter("synthetic task needs at least one input")
    rng = derive_rng(seed, "synthetic-task")
    ids = [f"s{i:05d}" for i in range(n)]
    dists: dict[str, DiscreteDistribution] = {}
    truths: list[int | None] = []
    for input_id in ids:
        kind = rng.random()
        if kind < 0.45:
            d = make_geometric(float(rng.uniform(0.5, 0.95)), 10)
        elif kind < 0.8:
            d = make_dirichlet(rng, int(rng.integers(4, 17)), concentration=1.0)
        else:
            d = make_dirichlet(rng, int(rng.integers(50, 201)), concentration=0.5)
        dists[input_id] = d
        truths.append(sample(d, rng))
    return Dataset(ids, truths, SyntheticOracle(dists, seed), dists)


def dataset_from_records(records: Sequence[QueryRecord]) -> Dataset:
    return Dataset([r.id for r in records], [r.truth for r in records], ReplayOracle(records))


def synthetic_records(n: int, seed: int, length: int) -> list[QueryRecord]:
    """Materialize a synthetic task as replay records of ``length`` samples each."""
    data = make_synthetic_task(n, seed)
    return [
        QueryRecord(i, y, tuple(int(s) for s in data.oracle.prefix(i, length)))
        for i, y in zip(data.ids, data.truths)
    ]


def _stream(oracle, input_id: str, length: int) -> np.ndarray:
    if hasattr(oracle, "prefix"):
        return np.asarray(oracle.prefix(input_id, length), dtype=np.int64)
    oracle.reset(input_id)
    out = []
    while len(out) < length:
        try:
            out.append(oracle.next_sample(input_id))
        except BudgetExhausted:
            break
    return np.asarray(out, dtype=np.int64)


class PreparedData:
    """Per-input sample streams and doubleton-estimate paths, with cached tallies."""

    def __init__(self, dataset: Dataset, length: int, estimator: EstimatorConfig):
        self.ids = list(dataset.ids)
        self.truths = list(dataset.truths)
        self.estimator = estimator
        self.streams = [_stream(dataset.oracle, i, length) for i in self.ids]
        self.paths = [derivative_path(s) for s in self.streams]
        self._probs: dict[tuple[int, int], LabelProbabilities] = {}

    def __len__(self) -> int:
        return len(self.ids)

    def probs(self, i: int, t: int) -> LabelProbabilities:
        key = (i, t)
        hit = self._probs.get(key)
        if hit is None:
            if t == 0:
                hit = LabelProbabilities({}, 1.0)
            else:
                hit = label_probabilities(Tally(self.streams[i][:t].tolist()), self.estimator)
            self._probs[key] = hit
        return hit

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_probs"] = {}
        return state


# --------------------------------------------------------------------------
# split experiments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "p1p2"
    alphas: tuple[float, ...] = (0.1,)
    budget: float = 20.0
    splits: int = 50
    seed: int = 0
    estimator: EstimatorConfig = EstimatorConfig()
    t_min: int | None = None
    t_max: int = 200
    beta_grid: tuple[float, ...] | None = None
    tau_grid: tuple[float, ...] | None = None
    split_calibration: bool = True
    tau_select: str = "largest"
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidParameter(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.splits < 1:
            raise InvalidParameter("splits must be >= 1")
        if not self.alphas or any(not 0.0 < a < 1.0 for a in self.alphas):
            raise InvalidParameter("alphas must be a non-empty list of values in (0, 1)")
        if self.budget < 0:
            raise InvalidParameter("budget must be non-negative")
        if self.jobs < 1:
            raise InvalidParameter("jobs must be >= 1")
        self.policy  # validates t_min / t_max

    @property
    def policy(self) -> PolicyConfig:
        """Adaptive policy; ``t_min=None`` means :func:`~cpq.policy.warmup_t_min` of the budget."""
        t_min = self.t_min if self.t_min is not None else warmup_t_min(self.budget, self.t_max)
        return PolicyConfig(0.0, t_min, self.t_max)


@dataclass(frozen=True)
class MetricsRow:
    variant: str
    alpha: float
    budget: float
    coverage_mean: float
    coverage_std: float
    ee_frac_mean: float
    ee_frac_std: float
    setsize_mean: float
    setsize_std: float
    queries_mean: float
    queries_std: float
    splits: int = field(default=1, compare=False)

    def csv_values(self) -> list:
        return [getattr(self, name) for name in METRICS_HEADER]


@dataclass(frozen=True)
class SplitMetrics:
    coverage: float
    ee_fraction: float
    avg_set_size: float
    avg_queries: float


def evaluate_sets(sets: Sequence[PredictionSet], truths: Sequence[int | None], queries: Sequence[int]) -> SplitMetrics:
    n = len(sets)
    return SplitMetrics(
        coverage=sum(s.covers(y) for s, y in zip(sets, truths)) / n,
        ee_fraction=sum(s.includes_ee for s in sets) / n,
        avg_set_size=sum(s.size for s in sets) / n,
        avg_queries=float(np.mean(queries)),
    )


def split_indices(n: int, seed: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Calibration and test index arrays for split ``k``; the test half gets any odd element."""
    perm = derive_rng(seed, f"split:{k}").permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def _fixed_policy(config: ExperimentConfig) -> PolicyConfig:
    return replace(config.policy, fixed_t=int(math.floor(config.budget)))


def _query_counts(data: PreparedData, idx: np.ndarray, beta: float, policy: PolicyConfig) -> np.ndarray:
    return np.array([int(stopping_times(data.paths[i], [beta], policy)[0]) for i in idx], dtype=np.int64)


def _run_one_split(data: PreparedData, config: ExperimentConfig, k: int) -> list[SplitMetrics]:
    cal, test = split_indices(len(data), config.seed, k)
    if config.variant == "vanilla":
        policy = _fixed_policy(config)
        beta = 0.0
        cal_fit = cal
    else:
        if config.split_calibration:
            half = len(cal) // 2
            cal_tune, cal_fit = cal[:half], cal[half:]
        else:
            cal_tune = cal_fit = cal
        policy = config.policy
        beta = select_beta([data.paths[i] for i in cal_tune], config.budget, config.beta_grid, policy).beta_star
    t_fit = _query_counts(data, cal_fit, beta, policy)
    t_test = _query_counts(data, test, beta, policy)
    fit_probs = [data.probs(i, t) for i, t in zip(cal_fit, t_fit)]
    fit_truths = [data.truths[i] for i in cal_fit]
    test_probs = [data.probs(i, t) for i, t in zip(test, t_test)]
    test_truths = [data.truths[i] for i in test]

    out = []
    for alpha in config.alphas:
        if config.variant == "p1p2":
            scores = [conformity_score(p, y) for p, y in zip(fit_probs, fit_truths)]
            q = calibrate_quantile(scores, alpha)
            sets = [build_prediction_set(p, q) for p in test_probs]
        else:
            tau = vanilla_calibrate(fit_probs, fit_truths, alpha, config.tau_grid, config.tau_select)
            sets = [vanilla_build_set(p, tau) for p in test_probs]
        out.append(evaluate_sets(sets, test_truths, t_test))
    return out


_WORKER: tuple | None = None


def _init_worker(data: PreparedData, config: ExperimentConfig) -> None:
    global _WORKER
    _WORKER = (data, config)


def _worker_split(k: int) -> list[SplitMetrics]:
    data, config = _WORKER
    return _run_one_split(data, config, k)


def _stream_length(config: ExperimentConfig) -> int:
    if config.variant == "vanilla":
        return int(math.floor(config.budget))
    return config.policy.t_max


def prepare(dataset: Dataset, config: ExperimentConfig) -> PreparedData:
    return PreparedData(dataset, _stream_length(config), config.estimator)


def run_split_experiment(config: ExperimentConfig, dataset: Dataset, data: PreparedData | None = None) -> list[MetricsRow]:
    """Average each variant's metrics over ``config.splits`` random calibration/test splits.

    Returns one row per alpha, sorted by alpha. ``data`` may carry streams
    prepared earlier for the same dataset, provided they are long enough.
    """
    if len(dataset) < 2:
        raise InvalidInput("split experiments need at least two labelled inputs")
    if any(y is None for y in dataset.truths):
        raise InvalidInput("every input needs a truth label for split experiments")
    if data is None:
        data = prepare(dataset, config)
    splits = range(config.splits)
    if config.jobs > 1 and config.splits > 1:
        with ProcessPoolExecutor(max_workers=config.jobs, initializer=_init_worker, initargs=(data, config)) as pool:
            per_split = list(pool.map(_worker_split, splits))
    else:
        per_split = [_run_one_split(data, config, k) for k in splits]

    rows = []
    for j, alpha in enumerate(config.alphas):
        ms = [split[j] for split in per_split]
        cov = [m.coverage for m in ms]
        ee = [m.ee_fraction for m in ms]
        size = [m.avg_set_size for m in ms]
        q = [m.avg_queries for m in ms]
        rows.append(MetricsRow(
            config.variant, float(alpha), float(config.budget),
            float(np.mean(cov)), _std(cov),
            float(np.mean(ee)), _std(ee),
            float(np.mean(size)), _std(size),
            float(np.mean(q)), _std(q),
            splits=config.splits,
        ))
    rows.sort(key=lambda r: r.alpha)
    return rows


def run_budget_sweep(config: ExperimentConfig, dataset: Dataset, budgets: Sequence[float]) -> list[MetricsRow]:
    if len(budgets) == 0:
        raise InvalidParameter("budget list is empty")
    rows: list[MetricsRow] = []
    shared = None
    for b in budgets:
        cfg = replace(config, budget=float(b))
        data = shared if (cfg.variant != "vanilla" and shared is not None) else None
        if data is None:
            data = prepare(dataset, cfg)
            if cfg.variant != "vanilla":
                shared = data
        rows.extend(run_split_experiment(cfg, dataset, data))
    rows.sort(key=lambda r: (r.budget, r.alpha))
    return rows


# --------------------------------------------------------------------------
# estimator curves
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorTrials:
    """Per-trial estimates, arrays of shape ``(trials, t_max)`` indexed by ``t - 1``."""

    gt_mm: np.ndarray
    doubleton: np.ndarray
    naive: np.ndarray


def estimator_trials(dist: DiscreteDistribution, t_max: int, trials: int, seed: int) -> EstimatorTrials:
    if trials < 1:
        raise InvalidParameter("trials must be >= 1")
    if t_max < 1:
        raise InvalidParameter("t_max must be >= 1")
    n1 = np.zeros((trials, t_max + 1))
    n2 = np.zeros((trials, t_max + 1))
    for k in range(trials):
        draws = sample_many(dist, derive_rng(seed, f"trial:{k}"), t_max + 1)
        tally = Tally()
        for t, y in enumerate(draws.tolist()):
            tally.push(y)
            n1[k, t] = tally.singletons()
            n2[k, t] = tally.doubletons()
    ts = np.arange(1, t_max + 2, dtype=np.float64)
    mm = n1 / ts
    return EstimatorTrials(
        gt_mm=mm[:, :t_max],
        doubleton=(-2.0 * n2 / ts**2)[:, :t_max],
        naive=mm[:, 1:] - mm[:, :t_max],
    )


@dataclass(frozen=True)
class CurveRow:
    t: int
    exact_mm: float
    gt_mm_mean: float
    gt_mm_std: float
    exact_deriv: float
    doubleton_mean: float
    doubleton_std: float
    naive_mean: float
    naive_std: float

    def csv_values(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


def run_estimator_eval(dist: DiscreteDistribution, t_max: int, trials: int, seed: int = 0) -> list[CurveRow]:
    """Exact missing mass and derivative next to the estimators' mean and spread, for ``t = 1..t_max``.

    The naive baseline at ``t`` is the difference of the singleton estimates
    at ``t + 1`` and ``t`` on the same path.
    """
    tr = estimator_trials(dist, t_max, trials, seed)
    ddof = 1 if trials > 1 else 0
    rows = []
    for j in range(t_max):
        t = j + 1
        rows.append(CurveRow(
            t,
            exact_missing_mass(dist, t), float(tr.gt_mm[:, j].mean()), float(tr.gt_mm[:, j].std(ddof=ddof)),
            exact_derivative(dist, t), float(tr.doubleton[:, j].mean()), float(tr.doubleton[:, j].std(ddof=ddof)),
            float(tr.naive[:, j].mean()), float(tr.naive[:, j].std(ddof=ddof)),
        ))
    return rows


# --------------------------------------------------------------------------
# calibration pipeline
# --------------------------------------------------------------------------


def fit_model(
    dataset: Dataset,
    alpha: float,
    budget: float,
    variant: str = "p1p2",
    seed: int = 0,
    estimator: EstimatorConfig = EstimatorConfig(),
    t_min: int | None = None,
    t_max: int = 200,
    split_calibration: bool = True,
    beta_grid=None,
    tau_grid=None,
    tau_select: str = "largest",
) -> CalibrationModel:
    """Calibrate on every input of ``dataset``.

    Adaptive variants tune the stopping threshold on one half (chosen by
    ``seed``) and calibrate the set threshold on the other, unless
    ``split_calibration`` is off.
    """
    config = ExperimentConfig(variant, (alpha,), budget, 1, seed, estimator, t_min, t_max,
                              None if beta_grid is None else tuple(beta_grid),
                              None if tau_grid is None else tuple(tau_grid),
                              split_calibration, tau_select)
    policy = config.policy
    if len(dataset) < 1 or any(y is None for y in dataset.truths):
        raise InvalidInput("calibration needs at least one input, each with a truth label")
    data = prepare(dataset, config)
    n = len(data)
    order = derive_rng(seed, "calibrate").permutation(n)
    if variant == "vanilla":
        policy = _fixed_policy(config)
        beta = 0.0
        fit = order
    else:
        if split_calibration:
            if n < 2:
                raise InvalidInput("split calibration needs at least two inputs")
            tune, fit = order[: n // 2], order[n // 2 :]
        else:
            tune = fit = order
        beta = select_beta([data.paths[i] for i in tune], budget, config.beta_grid, policy).beta_star
        policy = policy.with_beta(beta)
    counts = _query_counts(data, fit, beta, policy)
    probs = [data.probs(i, t) for i, t in zip(fit, counts)]
    truths = [data.truths[i] for i in fit]
    if variant == "p1p2":
        q = calibrate_quantile([conformity_score(p, y) for p, y in zip(probs, truths)], alpha)
        return CalibrationModel(alpha, beta, q, estimator, policy, seed, variant)
    tau = vanilla_calibrate(probs, truths, alpha, config.tau_grid, tau_select)
    return CalibrationModel(alpha, beta, None, estimator, policy, seed, variant, tau)


def predict(model: CalibrationModel, dataset: Dataset) -> list[dict]:
    """Query each input under the model's policy and build its prediction set."""
    policy = model.policy
    length = policy.fixed_t if policy.fixed_t is not None else policy.t_max
    data = PreparedData(dataset, length, model.estimator)
    out = []
    for i, input_id in enumerate(data.ids):
        t = int(stopping_times(data.paths[i], [model.beta_star], policy)[0])
        pset = model.predict(data.probs(i, t))
        row = {"id": input_id, "set": sorted(pset.labels), "ee": pset.includes_ee}
        if data.truths[i] is not None:
            row["covered"] = pset.covers(data.truths[i])
        out.append(row)
    return out


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row.csv_values()])
    return buf.getvalue()


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    return _csv_text(METRICS_HEADER, rows)


def curve_csv(rows: Sequence[CurveRow]) -> str:
    return _csv_text(CURVE_HEADER, rows)


def read_metrics_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
