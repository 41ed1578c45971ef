"""Posterior summaries: coefficient means, SDB ranking, prediction, metrics.

Feature importance is ranked by the posterior mean coefficients' SDB, the
standard deviation of the per-class coefficients of a feature.  Burn-in is
applied at summary time as a leading fraction of the recorded draws, so
one saved chain can be summarized under different burn-in choices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gibbs import ChainRecord
from .model import _probs_from_eta, _v_rows

__all__ = [
    "FeatureRanking",
    "PredictionResult",
    "coefficient_means",
    "feature_ranking",
    "predict",
    "amlp",
    "error_rate",
    "evaluate_predictions",
    "selection_metrics",
    "retained_by_group",
]

PREDICTION_MODES = ("bayes_average", "plugin_mean")

NOISE_LABEL = "noise"


@dataclass
class FeatureRanking:
    """Features ordered by posterior SDB, intercept excluded.

    ``order`` is a permutation of 1..p (most important first); ``sdb`` and
    ``relative_sdb`` are indexed by feature, not by rank.
    """

    sdb: np.ndarray
    relative_sdb: np.ndarray
    order: np.ndarray


@dataclass
class PredictionResult:
    probs: np.ndarray       # (n, C)
    amlp: float
    error_rate: float


def _retained_draws(record: ChainRecord, burnin_frac: float) -> int:
    if not (0.0 <= burnin_frac < 1.0):
        raise ValueError("burnin_frac must lie in [0, 1)")
    if record.n_draws == 0:
        raise ValueError("chain record holds no draws")
    start = int(burnin_frac * record.n_draws)
    return min(start, record.n_draws - 1)


def coefficient_means(record: ChainRecord, burnin_frac: float = 0.2) -> np.ndarray:
    """Posterior mean contrast matrix after discarding the burn-in draws."""
    start = _retained_draws(record, burnin_frac)
    return record.delta_draws[start:].mean(axis=0)


def feature_ranking(delta_hat: np.ndarray, c: int) -> FeatureRanking:
    """Rank features by the SDB of their posterior mean contrasts.

    ``relative_sdb`` is scaled by the largest feature SDB; if every SDB
    is zero the relative values are all zero.
    """
    delta_hat = np.asarray(delta_hat, dtype=float)
    if delta_hat.ndim != 2 or delta_hat.shape[1] != c - 1:
        raise ValueError(f"delta_hat must be (p+1, {c - 1})")
    v = _v_rows(delta_hat[1:], c)
    sdb = np.sqrt(v / c)
    top = sdb.max() if sdb.size else 0.0
    rel = sdb / top if top > 0 else np.zeros_like(sdb)
    order = np.argsort(-sdb, kind="stable") + 1
    return FeatureRanking(sdb=sdb, relative_sdb=rel, order=order)


def predict(record: ChainRecord, x_test: np.ndarray, mode: str = "bayes_average",
            burnin_frac: float = 0.2) -> np.ndarray:
    """Predictive class probabilities for the rows of ``x_test``.

    ``bayes_average`` averages the per-draw probabilities over the
    retained posterior draws; ``plugin_mean`` plugs the posterior mean
    contrasts into the model once.  Averaging probabilities is the proper
    posterior predictive and never sharper than the plug-in rule.
    """
    if mode not in PREDICTION_MODES:
        raise ValueError(f"unknown prediction mode {mode!r}, expected one of {PREDICTION_MODES}")
    x = np.atleast_2d(np.asarray(x_test, dtype=float))
    start = _retained_draws(record, burnin_frac)
    draws = record.delta_draws[start:]
    if x.shape[1] != draws.shape[1] - 1:
        raise ValueError(f"x_test has {x.shape[1]} features, chain expects {draws.shape[1] - 1}")
    if mode == "plugin_mean":
        return _probs_from_eta(_eta_of(x, draws.mean(axis=0)))
    acc = np.zeros((x.shape[0], draws.shape[2] + 1))
    for d in draws:
        acc += _probs_from_eta(_eta_of(x, d))
    return acc / draws.shape[0]


def _eta_of(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return delta[0] + x @ delta[1:]


def amlp(probs: np.ndarray, y_true: np.ndarray) -> float:
    """Average minus log probability of the true labels.

    Returns inf when any true label gets probability exactly zero.
    """
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y_true, dtype=int)
    if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
        raise ValueError("probs must be (n, C) with one row per label")
    if y.min() < 1 or y.max() > probs.shape[1]:
        raise ValueError("labels out of range for the probability matrix")
    p_true = probs[np.arange(y.shape[0]), y - 1]
    if (p_true <= 0).any():
        return math.inf
    # One compensation step on the mean so that reference points hold
    # exactly: uniform rows give log C to the last bit, not off by an ulp.
    logs = np.log(p_true)
    m = logs.mean()
    return float(-(m + (logs - m).mean()))


def error_rate(probs: np.ndarray, y_true: np.ndarray) -> float:
    """Misclassification rate of the argmax rule (ties go to the
    smallest class index)."""
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y_true, dtype=int)
    pred = probs.argmax(axis=1) + 1
    return float((pred != y).mean())


def evaluate_predictions(probs: np.ndarray, y_true: np.ndarray) -> PredictionResult:
    return PredictionResult(probs=probs, amlp=amlp(probs, y_true),
                            error_rate=error_rate(probs, y_true))


def _group_labels(ranking: FeatureRanking, truth) -> np.ndarray:
    """Accepts a TruthLabeling or a bare label sequence, one per feature."""
    groups = np.asarray(getattr(truth, "groups", truth), dtype=object)
    if groups.shape[0] != ranking.sdb.shape[0]:
        raise ValueError("group labels must cover every ranked feature")
    return groups


def retained_by_group(ranking: FeatureRanking, truth, threshold: float) -> dict:
    """Count of features at or above the relative-SDB threshold, per group."""
    groups = _group_labels(ranking, truth)
    kept = ranking.relative_sdb >= threshold
    return {g: int(kept[groups == g].sum()) for g in dict.fromkeys(groups)}


def selection_metrics(ranking: FeatureRanking, truth, thresholds) -> dict:
    """Sensitivity/FPR/FDR of relative-SDB thresholding against known truth.

    ``truth`` carries one group label per feature; the label "noise" marks
    noise features and every other label is a useful unit.  Features
    sharing a non-noise label count as one unit, detected when any member
    is retained.  FDR uses max(1, retained) as its denominator so an empty
    selection scores zero.

    Returns a dict mapping each threshold to a dict with keys
    ``sensitivity``, ``fpr``, ``fdr``, ``retained``.
    """
    groups = _group_labels(ranking, truth)
    noise = groups == NOISE_LABEL
    units = [g for g in dict.fromkeys(groups) if g != NOISE_LABEL]
    out = {}
    for t in np.asarray(thresholds, dtype=float):
        kept = ranking.relative_sdb >= t
        n_kept = int(kept.sum())
        kept_noise = int(kept[noise].sum())
        detected = sum(1 for g in units if kept[groups == g].any())
        out[float(t)] = {
            "sensitivity": detected / len(units) if units else math.nan,
            "fpr": kept_noise / noise.sum() if noise.any() else math.nan,
            "fdr": kept_noise / max(1, n_kept),
            "retained": n_kept,
        }
    return out
