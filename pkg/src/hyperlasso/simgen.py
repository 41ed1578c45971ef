"""Synthetic benchmark generators and the experiment drivers built on them.

Two generators produce the standard test problems:

* ``gen_two_class``: two balanced classes where only x1 carries the class
  signal, x2 is correlated with x1 through a shared latent factor but
  carries no extra information, and every remaining column is pure noise.
* ``gen_three_class``: three classes, ten structured columns (x1 signal,
  x2 correlated with x1, x3..x10 a mutually correlated group sharing one
  latent factor) plus noise columns up to p.

Both accept a trailing test block so train and test come from one stream.
The drivers (leave-one-out CV, prior-scale sweep) re-standardize with
train-only statistics per fit, which is the same protocol the CLI fit
command applies.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .gibbs import ChainRecord, SamplerSettings, run_chain
from .inference import (
    NOISE_LABEL,
    PredictionResult,
    amlp,
    coefficient_means,
    evaluate_predictions,
    feature_ranking,
    predict,
)
from .model import Dataset, PriorSpec

__all__ = [
    "GeneratorSpec",
    "TruthLabeling",
    "StandardizeTransform",
    "FitConfig",
    "ScalePoint",
    "LoocvResult",
    "gen_two_class",
    "gen_three_class",
    "generate",
    "standardize",
    "loocv_driver",
    "scale_sweep",
]

VARIANTS = ("two_class", "three_class")

# group labels attached to generated features; "noise" is special to the
# selection metrics, the other labels just name the structural role
GROUP_SIGNAL = "signal_x1"
GROUP_CORRELATED = "signal_x2"
GROUP_CLUSTER = "corr_group"

# two-class truth contrasts for (intercept, x1, x2) after population
# standardization of the features; carried as metadata for benchmarks
TWO_CLASS_TRUE_DELTA = (0.0, 2.60, -1.22)


@dataclass(frozen=True)
class GeneratorSpec:
    variant: str
    n_train: int = 100
    n_test: int = 1000
    p: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need a nonempty train block and nonnegative test block")
        minimum = 2 if self.variant == "two_class" else 10
        if self.p < minimum:
            raise ValueError(f"{self.variant} needs p >= {minimum}")


@dataclass(frozen=True)
class TruthLabeling:
    """Group label per feature, plus the true contrasts when known."""

    groups: np.ndarray
    true_delta: np.ndarray | None = None


def gen_two_class(spec: GeneratorSpec) -> tuple[Dataset, Dataset, TruthLabeling]:
    """Two balanced classes, one real signal column.

    With z1, z2 and all eps independent standard normal per case and class
    means mu = (0, 2):

        x1 = mu[y] + z1 + eps1       (the only informative column)
        x2 = 2 z1 + z2 + eps2        (correlated with x1, no extra signal)
        xj = epsj  for j >= 3
    """
    if spec.variant != "two_class":
        raise ValueError("spec.variant must be 'two_class'")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_test
    y = rng.integers(1, 3, size=n)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    x = rng.standard_normal((n, spec.p))
    mu = np.where(y == 2, 2.0, 0.0)
    x[:, 0] += mu + z1
    x[:, 1] += 2.0 * z1 + z2
    groups = np.array([GROUP_SIGNAL, GROUP_CORRELATED] + [NOISE_LABEL] * (spec.p - 2),
                      dtype=object)
    true_delta = np.zeros((spec.p + 1, 1))
    true_delta[:3, 0] = TWO_CLASS_TRUE_DELTA
    train = Dataset(x[: spec.n_train], y[: spec.n_train], c=2)
    test = Dataset(x[spec.n_train:], y[spec.n_train:], c=2) if spec.n_test else None
    return train, test, TruthLabeling(groups, true_delta)


def gen_three_class(spec: GeneratorSpec) -> tuple[Dataset, Dataset, TruthLabeling]:
    """Three balanced classes with ten structured columns.

    Class means over the first ten columns (rows are classes):

        class 1:  0 0 0 0 0 0 0 0 0 0
        class 2:  2 0 0 0 0 0 0 0 0 0
        class 3:  0 0 2 2 2 2 2 2 2 2

    and, with z1, z2, z3 and eps independent standard normal:

        x1 = mu[y,1] + z1 + 0.5 eps1
        x2 = mu[y,2] + 2 z1 + z2 + 0.5 eps2
        xj = mu[y,j] + z3 + 0.5 epsj   for j in 3..10  (one shared factor)
        xj = epsj                      for j >= 11

    Only x1 separates class 2; the x3..x10 block separates class 3 but its
    members are interchangeable, so a sparse fit keeps only a few of them.
    """
    if spec.variant != "three_class":
        raise ValueError("spec.variant must be 'three_class'")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_test
    y = rng.integers(1, 4, size=n)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    z3 = rng.standard_normal(n)
    x = rng.standard_normal((n, spec.p))
    mu = np.zeros((3, 10))
    mu[1, 0] = 2.0
    mu[2, 2:10] = 2.0
    means = mu[y - 1]
    x[:, :10] *= 0.5
    x[:, 0] += means[:, 0] + z1
    x[:, 1] += means[:, 1] + 2.0 * z1 + z2
    x[:, 2:10] += means[:, 2:10] + z3[:, None]
    groups = np.array(
        [GROUP_SIGNAL, GROUP_CORRELATED] + [GROUP_CLUSTER] * 8
        + [NOISE_LABEL] * (spec.p - 10),
        dtype=object,
    )
    train = Dataset(x[: spec.n_train], y[: spec.n_train], c=3)
    test = Dataset(x[spec.n_train:], y[spec.n_train:], c=3) if spec.n_test else None
    return train, test, TruthLabeling(groups, None)


def generate(spec: GeneratorSpec):
    """Dispatch on the variant."""
    return gen_two_class(spec) if spec.variant == "two_class" else gen_three_class(spec)


@dataclass(frozen=True)
class StandardizeTransform:
    """Train-set column locations and scales; scale 1 for constant columns."""

    mean: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def apply_dataset(self, data: Dataset) -> Dataset:
        return Dataset(self.apply(data.x), data.y, data.c)


def standardize(train: Dataset, apply_to=()) -> tuple[list[Dataset], StandardizeTransform]:
    """Center and scale every column using train statistics only.

    Returns the transformed train set followed by the transformed members
    of ``apply_to``, plus the transform itself.  Constant columns keep
    scale 1 (values just shift to zero) and raise a warning.
    """
    mean = train.x.mean(axis=0)
    sd = train.x.std(axis=0, ddof=1) if train.n > 1 else np.zeros(train.p)
    degenerate = ~(sd > 0)
    if degenerate.any():
        cols = ", ".join(str(j + 1) for j in np.flatnonzero(degenerate))
        warnings.warn(f"constant training column(s) left unscaled: {cols}")
    scale = np.where(degenerate, 1.0, sd)
    tr = StandardizeTransform(mean=mean, scale=scale, degenerate=degenerate)
    out = [tr.apply_dataset(train)]
    for ds in apply_to:
        if ds.p != train.p:
            raise ValueError("apply_to datasets must share the train column count")
        out.append(tr.apply_dataset(ds))
    return out, tr


@dataclass(frozen=True)
class FitConfig:
    """Everything one fit needs besides the data."""

    prior: PriorSpec
    settings: SamplerSettings
    mode: str = "bayes_average"
    burnin_frac: float = 0.2


def _fit_predict(train: Dataset, x_new: np.ndarray, cfg: FitConfig) -> tuple[ChainRecord, np.ndarray]:
    """Standardize on train, run the chain, predict the given rows."""
    (std_train,), tr = standardize(train)
    record = run_chain(std_train, cfg.prior, cfg.settings)
    probs = predict(record, tr.apply(x_new), mode=cfg.mode, burnin_frac=cfg.burnin_frac)
    return record, probs


@dataclass
class LoocvResult:
    """Held-out probabilities per case; failed folds carry NaN rows."""

    probs: np.ndarray
    failed: list
    result: PredictionResult


def _loocv_fold(args):
    x, y, c, i, cfg = args
    keep = np.arange(len(y)) != i
    train = Dataset(x[keep], y[keep], c)
    if np.unique(train.y).size < c:
        return i, None
    fold_cfg = replace(cfg, settings=replace(cfg.settings, seed=cfg.settings.seed + i))
    _, probs = _fit_predict(train, x[i:i + 1], fold_cfg)
    return i, probs[0]


def _run_jobs(fn, args_list, jobs: int):
    if jobs <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args_list))


def loocv_driver(data: Dataset, cfg: FitConfig, jobs: int = 1) -> LoocvResult:
    """Leave-one-out CV of the full pipeline.

    Each fold standardizes on its n-1 training cases and runs its own
    chain with seed ``settings.seed + fold``, so fold results do not
    depend on execution order or on ``jobs``.  A fold whose training block
    lost an entire class is skipped with a warning and excluded from the
    aggregate metrics.
    """
    args = [(data.x, data.y, data.c, i, cfg) for i in range(data.n)]
    probs = np.full((data.n, data.c), np.nan)
    failed = []
    for i, row in _run_jobs(_loocv_fold, args, jobs):
        if row is None:
            failed.append(i)
        else:
            probs[i] = row
    if failed:
        warnings.warn(f"{len(failed)} fold(s) lost a class and were skipped")
    ok = np.setdiff1d(np.arange(data.n), failed)
    result = evaluate_predictions(probs[ok], data.y[ok])
    return LoocvResult(probs=probs, failed=failed, result=result)


@dataclass
class ScalePoint:
    """Summaries of one fit along the prior-scale grid."""

    log_w: float
    delta_hat: np.ndarray
    sdb: np.ndarray
    amlp: float


def _sweep_point(args):
    i, train, test, prior, cfg = args
    point_cfg = replace(cfg, prior=prior)
    x_eval = test.x if test is not None else train.x
    y_eval = test.y if test is not None else train.y
    record, probs = _fit_predict(train, x_eval, point_cfg)
    delta_hat = coefficient_means(record, cfg.burnin_frac)
    ranking = feature_ranking(delta_hat, train.c)
    return i, ScalePoint(prior.log_w, delta_hat, ranking.sdb, amlp(probs, y_eval)), record


def scale_sweep(train: Dataset, prior_base: PriorSpec, log_w_grid, settings: SamplerSettings,
                test: Dataset | None = None, mode: str = "bayes_average",
                burnin_frac: float = 0.2, jobs: int = 1, on_chain=None) -> list[ScalePoint]:
    """Refit along a grid of fixed prior scales and summarize each fit.

    AMLP is computed on ``test`` when given, else on the training data.
    Every grid point reuses the same settings (seed included), so points
    differ only through log(w).  ``on_chain(i, prior, record)`` is invoked
    per finished chain for callers that persist them.
    """
    grid = [float(v) for v in log_w_grid]
    if not grid:
        raise ValueError("log_w_grid must be nonempty")
    cfg = FitConfig(prior=prior_base, settings=settings, mode=mode, burnin_frac=burnin_frac)
    args = [
        (i, train, test, replace(prior_base, log_w=lw, w_sampled=False), cfg)
        for i, lw in enumerate(grid)
    ]
    points: list[ScalePoint | None] = [None] * len(grid)
    for i, point, record in _run_jobs(_sweep_point, args, jobs):
        points[i] = point
        if on_chain is not None:
            on_chain(i, args[i][3], record)
    return points
