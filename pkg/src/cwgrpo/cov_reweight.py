"""Covariance-weighted token reweighting.

For every token of a group, the centered product

    c = (logp - mean(logp)) * (A - mean(A))

is mapped through a Gaussian kernel whose bandwidth is the population std of
all ``c`` in the group, then rescaled so the weights sum to the token count.
Tokens whose covariance is extreme relative to the group end up with weights
near zero; the bandwidth is data-driven, so the only constant is a numerical
floor that guards against a zero std.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SIGMA_FLOOR = 1e-12


@dataclass
class TokenStats:
    cov: np.ndarray
    weight: np.ndarray
    norm_weight: np.ndarray
    sigma: float
    logp_mean: float
    adv_mean: float


def centered_products(logp, adv) -> tuple[np.ndarray, float, float]:
    """Covariance terms from flat per-token log-probs and advantages."""
    logp = np.asarray(logp, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if logp.shape != adv.shape or logp.ndim != 1 or len(logp) == 0:
        raise ContractError("logp and adv must be equal-length nonempty 1-D arrays")
    logp_mean = float(logp.mean())
    adv_mean = float(adv.mean())
    return (logp - logp_mean) * (adv - adv_mean), logp_mean, adv_mean


def token_covariances(group) -> tuple[np.ndarray, float, float]:
    """Per-token ``c`` for a group, plus the token-weighted means used.

    ``adv_mean`` averages each response's advantage once per token, so it is
    generally nonzero when responses have different lengths.
    """
    return centered_products(group.flat("logp_cur"), group.token_advantages())


def gaussian_weights(c, sigma_floor: float = SIGMA_FLOOR) -> tuple[np.ndarray, float]:
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ContractError("gaussian_weights needs at least one covariance")
    sigma = float(c.std())
    if sigma < sigma_floor:
        return np.ones_like(c), sigma
    w = np.exp(-(c * c) / (2.0 * sigma * sigma))
    # |c|/sigma can exceed ~38 only for groups of >1400 tokens; keep w > 0 there.
    return np.maximum(w, np.finfo(np.float64).tiny), sigma


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or not np.all(w > 0):
        raise ContractError("normalize_weights needs nonempty, strictly positive weights")
    return w * (w.size / w.sum())


def _stats(c, logp_mean, adv_mean, sigma_floor) -> TokenStats:
    w, sigma = gaussian_weights(c, sigma_floor)
    return TokenStats(c, w, normalize_weights(w), sigma, logp_mean, adv_mean)


def cw_grpo_weights(group, sigma_floor: float = SIGMA_FLOOR) -> TokenStats:
    c, logp_mean, adv_mean = token_covariances(group)
    return _stats(c, logp_mean, adv_mean, sigma_floor)


def pooled_cw_weights(groups, sigma_floor: float = SIGMA_FLOOR) -> list[TokenStats]:
    """Batch-scope variant: means, bandwidth and normalization pooled over all groups.

    Each group's advantages are still its own group-relative ones; only the
    centering and kernel statistics span the batch.
    """
    logp = np.concatenate([g.flat("logp_cur") for g in groups])
    adv = np.concatenate([g.token_advantages() for g in groups])
    c, logp_mean, adv_mean = centered_products(logp, adv)
    stats = _stats(c, logp_mean, adv_mean, sigma_floor)
    out, start = [], 0
    for g in groups:
        sl = slice(start, start + g.N)
        out.append(TokenStats(stats.cov[sl], stats.weight[sl], stats.norm_weight[sl],
                              stats.sigma, logp_mean, adv_mean))
        start += g.N
    return out


def clip_cov_weights(group, tau: float, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Hard 0/1 mask dropping tokens with ``|c| > tau * sigma`` (not renormalized).

    A simplified covariance-clipping baseline, not a reproduction of any
    published Clip-Cov variant.
    """
    if not tau > 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    c, _, _ = token_covariances(group)
    sigma = float(c.std())
    if sigma < sigma_floor or np.isinf(tau):
        return np.ones_like(c)
    return np.where(np.abs(c) > tau * sigma, 0.0, 1.0)
