"""Group rollouts, group-relative advantages and the token-level GRPO loss.

The loss minimised here is the negated objective

    loss = -(1/G) sum_i (1/|o_i|) sum_t [ ratio_it * (w_it * A_i) - beta * KL_it ]

with ``ratio_it = exp(logp_cur - logp_old)`` and the per-token k3 estimator
``KL_it = r - log r - 1``, ``r = pi_ref / pi_theta``. Advantages, old and
reference log-probs, and token weights are constants under differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Prompt, TaskSpec, env_verify
from .errors import ContractError
from .policy import Trajectory, accumulate_grad, forward, logprob_trajectory, sample_response


@dataclass
class GroupRollout:
    prompt: Prompt
    trajectories: list[Trajectory]
    rewards: np.ndarray
    advantages: np.ndarray
    accuracy: np.ndarray | None = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.advantages = np.asarray(self.advantages, dtype=np.float64)
        if len(self.trajectories) < 2:
            raise ContractError(f"a group needs G >= 2 responses, got {len(self.trajectories)}")
        if len(self.rewards) != self.G or len(self.advantages) != self.G:
            raise ContractError("rewards and advantages must have one entry per response")
        if any(len(tr) == 0 for tr in self.trajectories):
            raise ContractError("every response needs at least one token")

    @property
    def G(self) -> int:
        return len(self.trajectories)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(tr) for tr in self.trajectories], dtype=np.int64)

    @property
    def N(self) -> int:
        return int(self.lengths.sum())

    def flat(self, name: str) -> np.ndarray:
        """Concatenate a per-token field (e.g. ``"logp_cur"``) over responses."""
        return np.concatenate([getattr(tr, name) for tr in self.trajectories])

    def token_advantages(self) -> np.ndarray:
        return np.repeat(self.advantages, self.lengths)


@dataclass
class LossReport:
    loss: float
    grad: np.ndarray
    mean_kl: float
    mean_ratio: float


def compute_advantages(rewards, eps: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise ContractError(f"need a 1-D group of >= 2 rewards, got shape {r.shape}")
    std = r.std()
    if std < eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def token_kl(logp_cur, logp_ref):
    """k3 estimate of KL(pi_theta || pi_ref) from one sampled token."""
    d = np.asarray(logp_ref, dtype=np.float64) - np.asarray(logp_cur, dtype=np.float64)
    out = np.expm1(d) - d
    return float(out) if out.ndim == 0 else out


def rollout_group(params, task: TaskSpec, prompt: Prompt, G: int, cfg, rng,
                  old=None, ref=None) -> GroupRollout:
    """Sample ``G`` responses and score them.

    ``old`` and ``ref`` are snapshots used to fill ``logp_old``/``logp_ref``;
    either defaults to ``params`` itself.
    """
    if G < 2:
        raise ContractError(f"G must be >= 2, got {G}")
    trajs = []
    for _ in range(G):
        tr = sample_response(params, prompt, cfg.max_completion_len, cfg.temperature, rng)
        if old is not None:
            tr.logp_old = logprob_trajectory(old, tr.prompt_tokens, tr.response_tokens)
        if ref is not None:
            tr.logp_ref = logprob_trajectory(ref, tr.prompt_tokens, tr.response_tokens)
        trajs.append(tr)
    scores = [env_verify(task, prompt, tr.response_tokens) for tr in trajs]
    rewards = np.array([s.total for s in scores])
    return GroupRollout(prompt, trajs, rewards, compute_advantages(rewards, cfg.adv_eps),
                        accuracy=np.array([s.accuracy for s in scores]))


def _check_weights(group: GroupRollout, token_weights) -> np.ndarray:
    if token_weights is None:
        return np.ones(group.N)
    w = np.asarray(token_weights, dtype=np.float64)
    if w.shape != (group.N,):
        raise ContractError(f"token_weights shape {w.shape} != ({group.N},)")
    return w


def grpo_loss_and_grad(params, group: GroupRollout, beta: float,
                       token_weights=None, clip_eps: float | None = None) -> LossReport:
    """Loss and exact gradient for one group.

    ``token_weights`` is a flat per-token array in response order; ``None``
    means all ones. ``clip_eps`` enables optional PPO-style ratio clipping.
    """
    w = _check_weights(group, token_weights)
    grad = np.zeros_like(params.weights)
    G = group.G
    loss = 0.0
    kl_sum = ratio_sum = 0.0
    offset = 0
    for i, tr in enumerate(group.trajectories):
        n = len(tr)
        fwd = forward(params, tr.prompt_tokens, tr.response_tokens)
        ratio = np.exp(fwd.logp - tr.logp_old)
        adv = w[offset:offset + n] * group.advantages[i]
        d = tr.logp_ref - fwd.logp
        kl = np.expm1(d) - d
        surrogate = ratio * adv
        # d surrogate / d logp = ratio * adv, unless the clipped branch is active
        dsur = ratio * adv
        if clip_eps is not None:
            clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
            use_clip = clipped < surrogate
            surrogate = np.where(use_clip, clipped, surrogate)
            dsur = np.where(use_clip, 0.0, dsur)
        term = surrogate - beta * kl
        loss -= term.sum() / n / G
        # d KL / d logp = 1 - r with r = exp(d)
        dterm = dsur - beta * (-np.expm1(d))
        accumulate_grad(grad, fwd, -dterm / n / G)
        kl_sum += kl.sum()
        ratio_sum += ratio.sum()
        offset += n
    N = group.N
    return LossReport(float(loss), grad, float(kl_sum / N), float(ratio_sum / N))


def batch_loss_and_grad(params, groups, beta: float, weights=None,
                        clip_eps: float | None = None) -> LossReport:
    """Mean of per-group reports, reduced in list order."""
    if not groups:
        raise ContractError("need at least one group")
    weights = weights if weights is not None else [None] * len(groups)
    reports = [grpo_loss_and_grad(params, g, beta, w, clip_eps)
               for g, w in zip(groups, weights)]
    grad = np.zeros_like(params.weights)
    for r in reports:
        grad += r.grad
    n = len(reports)
    return LossReport(sum(r.loss for r in reports) / n, grad / n,
                      sum(r.mean_kl for r in reports) / n,
                      sum(r.mean_ratio for r in reports) / n)
