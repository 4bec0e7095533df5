"""Entropy estimates and covariance-distribution reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError

DEFAULT_PERCENTILES = (0.01, 1.0, 20.0, 40.0, 100.0)


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    method: str
    token_count: int


@dataclass(frozen=True)
class PercentileRow:
    percentile: float               # in percent, e.g. 0.01 means 0.01%
    positive: float | None          # magnitude of the positive covariance at that rank
    negative: float | None          # signed (<= 0) negative covariance at that rank


@dataclass
class CovReport:
    percentile_table: list[PercentileRow]
    cumulative_curve: np.ndarray = field(default=None)   # (n, 2) incl. origin; None if all c == 0


def entropy_mc(trajectories) -> EntropyEstimate:
    """Monte-Carlo policy entropy: per-response mean of ``-logp``, averaged over responses."""
    trajectories = [tr for tr in trajectories if len(tr) > 0]
    if not trajectories:
        raise ContractError("entropy_mc needs at least one token")
    per_response = [float(-np.mean(tr.logp_cur)) for tr in trajectories]
    return EntropyEstimate(float(np.mean(per_response)), "MonteCarlo",
                           sum(len(tr) for tr in trajectories))


def entropy_exact_step(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ContractError("probs must be nonnegative and sum to 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _rank(percentile: float, count: int) -> int:
    # Exact rational arithmetic so 1% of 500 is rank 5, not 6.
    r = math.ceil(Fraction(str(percentile)) * count / 100)
    return min(max(r, 1), count)


def covariance_percentiles(c, percentiles=DEFAULT_PERCENTILES) -> list[PercentileRow]:
    """Magnitude at rank ``ceil(p * count)`` among positives and negatives separately."""
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ContractError("covariance_percentiles needs at least one value")
    pos = np.sort(c[c > 0])[::-1]
    neg = np.sort(c[c < 0])          # most negative first
    rows = []
    for p in percentiles:
        rows.append(PercentileRow(
            float(p),
            float(pos[_rank(p, len(pos)) - 1]) if len(pos) else None,
            float(neg[_rank(p, len(neg)) - 1]) if len(neg) else None,
        ))
    return rows


def cumulative_contribution(c) -> np.ndarray:
    """Rows ``(k/N, share of sum|c| held by the k largest |c|)`` for k = 1..N."""
    mag = np.sort(np.abs(np.asarray(c, dtype=np.float64)))[::-1]
    total = mag.sum()
    if mag.size == 0 or not total > 0:
        raise ContractError("cumulative_contribution needs sum(|c|) > 0")
    n = mag.size
    frac = np.arange(1, n + 1) / n
    share = np.cumsum(mag) / total
    share[-1] = 1.0
    return np.column_stack([frac, share])


def cov_report(c, percentiles=DEFAULT_PERCENTILES) -> CovReport:
    c = np.asarray(c, dtype=np.float64)
    table = covariance_percentiles(c, percentiles)
    if not np.abs(c).sum() > 0:
        return CovReport(table, None)
    curve = np.vstack([[0.0, 0.0], cumulative_contribution(c)])
    return CovReport(table, curve)


def top_share(c, fraction: float = 0.01) -> float:
    """Share of ``sum|c|`` held by the top ``fraction`` of tokens by ``|c|``."""
    mag = np.sort(np.abs(np.asarray(c, dtype=np.float64)))[::-1]
    total = mag.sum()
    if not total > 0:
        return 0.0
    k = max(1, math.ceil(fraction * mag.size))
    return float(mag[:k].sum() / total)


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def format_percentile_table(rows) -> str:
    header = ("Percentile", "Positive Covariance", "Negative Covariance")
    body = [(f"{r.percentile:.2f}%", _fmt(r.positive), _fmt(r.negative)) for r in rows]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(3)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
             for line in [header, *body]]
    if all(r.positive is None and r.negative is None for r in rows):
        lines.append("(no nonzero covariances: all advantages were zero)")
    return "\n".join(lines) + "\n"


def predict_entropy_delta(eta: float, c, weights=None) -> float:
    """First-order entropy change ``-eta * Cov``, with Cov the (weighted) mean of ``c``."""
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ContractError("predict_entropy_delta needs at least one covariance")
    return float(-eta * np.average(c, weights=weights))


# -- exact softmax bandit --------------------------------------------------------

def _log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def bandit_entropy(z) -> float:
    lp = _log_softmax(z)
    return float(-(np.exp(lp) * lp).sum())


def bandit_covariance(z, adv) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm centered products and the arm probabilities weighting them."""
    lp = _log_softmax(z)
    p = np.exp(lp)
    adv = np.asarray(adv, dtype=np.float64)
    c = (lp - p @ lp) * (adv - p @ adv)
    return c, p


def bandit_natural_step(z, adv, eta: float) -> np.ndarray:
    """Natural-gradient ascent step on expected advantage for tabular softmax logits."""
    p = np.exp(_log_softmax(z))
    adv = np.asarray(adv, dtype=np.float64)
    return np.asarray(z, dtype=np.float64) + eta * (adv - p @ adv)


def bandit_vanilla_step(z, adv, eta: float) -> np.ndarray:
    """Plain gradient ascent step; its first-order entropy change is pi-reweighted."""
    p = np.exp(_log_softmax(z))
    adv = np.asarray(adv, dtype=np.float64)
    return np.asarray(z, dtype=np.float64) + eta * p * (adv - p @ adv)


def entropy_law(z, adv, eta: float) -> tuple[float, float]:
    """``(measured dH, predicted dH)`` for one natural-gradient bandit step."""
    measured = bandit_entropy(bandit_natural_step(z, adv, eta)) - bandit_entropy(z)
    c, p = bandit_covariance(z, adv)
    return measured, predict_entropy_delta(eta, c, weights=p)
