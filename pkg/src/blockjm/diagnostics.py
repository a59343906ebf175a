"""Convergence diagnostics: split R-hat, rank-normalised bulk ESS, MCSE.

Inputs are draw arrays shaped (chains, draws); single chains are split
in half so both statistics remain defined.  The R-hat variant is the
rank-normalised split statistic, flagged above 1.01.
"""

from __future__ import annotations

import numpy as np
from scipy import stats as sps

__all__ = ["split_rhat", "ess_bulk", "mcse_mean", "diagnostics", "RHAT_THRESHOLD"]

RHAT_THRESHOLD = 1.01


def _as_chain_matrix(draws) -> np.ndarray:
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected draws shaped (chains, draws)")
    return arr


def _split_chains(arr: np.ndarray) -> np.ndarray:
    half = arr.shape[1] // 2
    return np.vstack([arr[:, :half], arr[:, arr.shape[1] - half :]])


def _z_scale(arr: np.ndarray) -> np.ndarray:
    rank = sps.rankdata(arr, method="average").reshape(arr.shape)
    return sps.norm.ppf((rank - 0.5) / arr.size)


def _rhat_of(arr: np.ndarray) -> float:
    n_chain, n_draw = arr.shape
    chain_mean = arr.mean(axis=1)
    chain_var = arr.var(axis=1, ddof=1)
    between = n_draw * np.var(chain_mean, ddof=1)
    within = chain_var.mean()
    if within == 0:
        return np.nan
    var_plus = (n_draw - 1) / n_draw * within + between / n_draw
    return float(np.sqrt(var_plus / within))


def split_rhat(draws) -> float:
    """Rank-normalised split R-hat (bulk variant)."""
    arr = _split_chains(_as_chain_matrix(draws))
    if arr.shape[1] < 2 or np.allclose(arr, arr.ravel()[0]):
        return np.nan
    return _rhat_of(_z_scale(arr))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    # FFT-based autocovariance, biased normalisation (divides by n)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def _ess_of(arr: np.ndarray) -> float:
    n_chain, n_draw = arr.shape
    if n_draw < 4:
        return np.nan
    acov = np.array([_autocovariance(arr[c]) for c in range(n_chain)])
    chain_mean = arr.mean(axis=1)
    mean_var = acov[:, 0].mean() * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(chain_mean, ddof=1)
    if var_plus == 0:
        return np.nan

    rho = np.zeros(n_draw)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    # Geyer's initial positive sequence
    t = 1
    while t < n_draw - 2 and (rho_even + rho_odd) >= 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        rho[t + 1] = rho_even
        if (rho_even + rho_odd) >= 0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    # Geyer's initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if (rho[t + 1] + rho[t + 2]) > (rho[t - 1] + rho[t]):
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1 : max_t + 2].sum()
    return float(n_chain * n_draw / tau)


def ess_bulk(draws) -> float:
    """Rank-normalised bulk effective sample size."""
    arr = _split_chains(_as_chain_matrix(draws))
    if np.allclose(arr, arr.ravel()[0]):
        return np.nan
    return _ess_of(_z_scale(arr))


def mcse_mean(draws) -> float:
    """Monte Carlo standard error of the posterior mean."""
    arr = _as_chain_matrix(draws)
    ess = _ess_of(_split_chains(arr))
    if not np.isfinite(ess) or ess <= 0:
        return np.nan
    return float(arr.std(ddof=1) / np.sqrt(ess))


def diagnostics(chain_draws, param_names=None) -> dict:
    """Per-parameter split R-hat, bulk ESS and MCSE for a set of chains.

    Parameters
    ----------
    chain_draws : sequence of (draws, dim) arrays, or one (chains, draws, dim) array
    param_names : optional sequence of column names

    Returns a dict with arrays ``rhat``, ``ess_bulk``, ``mcse_mean`` and
    the list ``flagged`` of parameter names (or indices) whose R-hat
    exceeds 1.01.
    """
    arr = np.asarray(chain_draws, dtype=float)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    n_chain, n_draw, dim = arr.shape
    rhat = np.empty(dim)
    ess = np.empty(dim)
    mcse = np.empty(dim)
    for p in range(dim):
        col = arr[:, :, p]
        rhat[p] = split_rhat(col)
        ess[p] = ess_bulk(col)
        mcse[p] = mcse_mean(col)
    names = list(param_names) if param_names is not None else list(range(dim))
    flagged = [names[p] for p in range(dim) if np.isfinite(rhat[p]) and rhat[p] > RHAT_THRESHOLD]
    return {"rhat": rhat, "ess_bulk": ess, "mcse_mean": mcse, "flagged": flagged, "names": names}
