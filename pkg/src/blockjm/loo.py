"""Pareto-smoothed importance-sampling leave-one-out cross-validation.

The LOO unit is one subject's block data: definition ``longitudinal``
uses the vector of observed within-block measurements, ``event`` the
block's time-to-event factor, and ``joint`` their sum (all conditional
on the posterior draws of parameters and random effects, the standard
draw-based form).  Event-only LOO is exposed but is an unreliable guide
for choosing the longitudinal linkage; prefer ``longitudinal`` or
``joint`` for that task.

Smoothing follows the generalized-Pareto recipe: the largest raw weights
are replaced by expected order statistics of a GPD fitted to their
exceedances, truncated at the raw maximum, then self-normalised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTailError, SubjectMismatchError

__all__ = [
    "POINTWISE_DEFINITIONS",
    "PointwiseLogLik",
    "LooResult",
    "gpd_fit_tail",
    "pareto_smooth",
    "psis_loo",
    "compare_loo",
]

POINTWISE_DEFINITIONS = ("longitudinal", "event", "joint")
PARETO_K_WARN = 0.7


@dataclass(frozen=True)
class PointwiseLogLik:
    """Matrix of log f(D_i | theta^(s)), draws by subjects."""

    matrix: np.ndarray
    subjects: tuple[str, ...]
    definition: str

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.subjects):
            raise ValueError("pointwise matrix must be draws x subjects")
        if self.definition not in POINTWISE_DEFINITIONS:
            raise ValueError(f"unknown pointwise definition {self.definition!r}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("pointwise log-likelihood contains non-finite entries")


@dataclass(frozen=True)
class LooResult:
    """Estimated expected log pointwise predictive density, leave-one-out."""

    elpd_loo: float
    pointwise: np.ndarray         # per-subject elpd_i
    pareto_k: np.ndarray          # per-subject tail index (0 where degenerate)
    se: float
    subjects: tuple[str, ...]
    definition: str
    degenerate: np.ndarray        # per-subject: smoothing skipped, weights equal

    @property
    def n_high_k(self) -> int:
        return int((self.pareto_k > PARETO_K_WARN).sum())


def gpd_fit_tail(tail: np.ndarray) -> tuple[float, float]:
    """Fit a zero-location generalized Pareto law to tail exceedances.

    Uses the Zhang-Stephens profile posterior mean of the transformed
    rate, with the usual weak prior nudging the shape toward 1/2.

    Raises
    ------
    DegenerateTailError
        If all tail values are (numerically) equal.
    """
    x = np.sort(np.asarray(tail, dtype=float))
    n = len(x)
    if n < 5:
        raise ValueError("need at least 5 tail values")
    if x[-1] <= x[0] or not np.all(np.isfinite(x)):
        raise DegenerateTailError("tail values are all equal")
    prior_bs = 3.0
    prior_k_count = 10.0
    m_est = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m_est / (np.arange(1.0, m_est + 1.0) - 0.5))
    b /= prior_bs * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    log_lik = n * (np.log(-(b / k)) - k - 1.0)
    with np.errstate(over="ignore"):
        weights = 1.0 / np.exp(log_lik - log_lik[:, None]).sum(axis=1)
    weights /= weights.sum()
    b_post = float(np.sum(b * weights))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k_count * 0.5) / (n + prior_k_count)
    return k_post, sigma


def _gpd_quantile(p, k, sigma):
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def pareto_smooth(log_weights: np.ndarray):
    """Smooth one vector of log importance weights.

    Returns ``(log_weights, k_hat, degenerate)`` with the output
    self-normalised (logsumexp zero).  The tail size is
    ``M = min(0.2 S, 3 sqrt(S))``; smoothed weights never exceed the raw
    maximum.  A degenerate (all-equal) tail is left unsmoothed and
    flagged, with ``k_hat = 0``.
    """
    lw = np.asarray(log_weights, dtype=float).copy()
    S = len(lw)
    lw -= lw.max()
    m_tail = int(min(0.2 * S, 3.0 * math.sqrt(S)))
    degenerate = False
    k_hat = 0.0
    if m_tail >= 5:
        order = np.argsort(lw)
        cutoff = max(lw[order[-m_tail - 1]], math.log(np.finfo(float).tiny))
        tail_idx = np.flatnonzero(lw > cutoff)
        if len(tail_idx) >= 5:
            tail_sorted = tail_idx[np.argsort(lw[tail_idx])]
            exceed = np.exp(lw[tail_sorted]) - math.exp(cutoff)
            try:
                k_hat, sigma = gpd_fit_tail(exceed)
                if np.isfinite(k_hat):
                    probs = (np.arange(1.0, len(tail_sorted) + 1.0) - 0.5) / len(tail_sorted)
                    smoothed = np.log(_gpd_quantile(probs, k_hat, sigma) + math.exp(cutoff))
                    lw[tail_sorted] = np.minimum(smoothed, 0.0)  # cap at raw max
                else:
                    degenerate = True
                    k_hat = 0.0
            except DegenerateTailError:
                degenerate = True
        else:
            degenerate = True
    else:
        degenerate = True
    norm = _logsumexp(lw)
    lw -= norm
    return lw, float(k_hat), degenerate


def _logsumexp(x):
    m = np.max(x)
    if not np.isfinite(m):
        return m
    return m + math.log(np.exp(x - m).sum())


def psis_loo(pointwise: PointwiseLogLik) -> LooResult:
    """PSIS-LOO over a pointwise log-likelihood matrix.

    Per subject, raw ratios 1/f(D_i|theta^(s)) are tail-smoothed and
    self-normalised; ``elpd_i = log sum_s w_s f(D_i|theta^(s))``.
    Requires at least 100 draws.
    """
    mat = pointwise.matrix
    S, n = mat.shape
    if S < 100:
        raise ValueError("PSIS-LOO needs at least 100 draws")
    elpd = np.empty(n)
    k_hat = np.empty(n)
    degen = np.zeros(n, dtype=bool)
    for i in range(n):
        col = mat[:, i]
        if np.allclose(col, col[0]):
            # constant column: importance weights are uniform
            elpd[i] = col[0]
            k_hat[i] = 0.0
            degen[i] = True
            continue
        lw, k_hat[i], degen[i] = pareto_smooth(-col)
        elpd[i] = _logsumexp(lw + col)
    se = float(math.sqrt(n) * np.std(elpd, ddof=1)) if n > 1 else 0.0
    return LooResult(
        elpd_loo=float(elpd.sum()),
        pointwise=elpd,
        pareto_k=k_hat,
        se=se,
        subjects=pointwise.subjects,
        definition=pointwise.definition,
        degenerate=degen,
    )


def compare_loo(a: LooResult, b: LooResult) -> tuple[float, float]:
    """Difference in elpd (a minus b) with its pointwise standard error.

    Raises
    ------
    SubjectMismatchError
        If the two results cover different subjects or definitions.
    """
    if a.subjects != b.subjects:
        raise SubjectMismatchError("LOO results cover different subjects")
    if a.definition != b.definition:
        raise SubjectMismatchError("LOO results use different pointwise definitions")
    diff = a.pointwise - b.pointwise
    n = len(diff)
    se = float(math.sqrt(n) * np.std(diff, ddof=1)) if n > 1 else 0.0
    return float(diff.sum()), se
