"""Autoregressive softmax policy with closed-form gradients.

The next-token logits are ``phi(context) @ W`` where ``phi`` is a sparse 0/1
feature vector computed from the last ``context_len`` tokens (left-padded).
Because the policy is linear in ``W`` before the softmax,

    d log pi(v | ctx) / d W[f, u] = phi_f(ctx) * (1{u == v} - pi(u | ctx))

so no autodiff engine is needed. Two feature maps are available:

``OneHotLastK``
    Concatenated one-hot of each of the last K tokens, ``K * V`` features.
    PAD slots contribute nothing.
``OneHotLastKJoint``
    ``OneHotLastK`` plus a one-hot of the whole K-token window
    (``(V + 1) ** K`` extra features, PAD counted as its own symbol). This
    makes the policy tabular in its context, which tasks like parity need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError

MAX_FEATURES = 5_000_000


class FeatureMap(str, Enum):
    ONE_HOT_LAST_K = "OneHotLastK"
    ONE_HOT_LAST_K_JOINT = "OneHotLastKJoint"


def num_features(vocab_size: int, context_len: int, feature_map) -> int:
    n = context_len * vocab_size
    if FeatureMap(feature_map) is FeatureMap.ONE_HOT_LAST_K_JOINT:
        n += (vocab_size + 1) ** context_len
    return n


@dataclass(eq=False)
class PolicyParams:
    weights: np.ndarray
    vocab_size: int
    context_len: int
    feature_map: FeatureMap = FeatureMap.ONE_HOT_LAST_K

    def __post_init__(self):
        self.feature_map = FeatureMap(self.feature_map)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = (num_features(self.vocab_size, self.context_len, self.feature_map),
                    self.vocab_size)
        if self.weights.shape != expected:
            raise ConfigError(f"weights shape {self.weights.shape} != {expected}")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigError("weights must be finite")

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> PolicyParams:
        return PolicyParams(self.weights.copy(), self.vocab_size, self.context_len,
                            self.feature_map)

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (self.vocab_size == other.vocab_size
                and self.context_len == other.context_len
                and self.feature_map is other.feature_map
                and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Read-only copy of a policy, used as the old or reference policy."""

    params: PolicyParams
    step: int = 0

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return self.step == other.step and self.params == other.params

    # Snapshot exposes the same read surface as PolicyParams.
    @property
    def weights(self) -> np.ndarray:
        return self.params.weights

    @property
    def vocab_size(self) -> int:
        return self.params.vocab_size

    @property
    def context_len(self) -> int:
        return self.params.context_len

    @property
    def feature_map(self) -> FeatureMap:
        return self.params.feature_map


def snapshot(params, step: int = 0) -> Snapshot:
    frozen = _as_params(params).copy()
    frozen.weights.flags.writeable = False
    return Snapshot(frozen, step)


def _as_params(p) -> PolicyParams:
    return p.params if isinstance(p, Snapshot) else p


def policy_init(vocab_size: int, context_len: int, seed: int, *,
                feature_map=FeatureMap.ONE_HOT_LAST_K,
                init_scale: float = 0.01) -> PolicyParams:
    if vocab_size < 4:
        raise ConfigError(f"vocab_size must be >= 4, got {vocab_size}")
    if context_len < 1:
        raise ConfigError(f"context_len must be >= 1, got {context_len}")
    if init_scale < 0:
        raise ConfigError(f"init_scale must be >= 0, got {init_scale}")
    n = num_features(vocab_size, context_len, feature_map)
    if n > MAX_FEATURES:
        raise ConfigError(f"feature map {FeatureMap(feature_map).value} with context_len="
                          f"{context_len} needs {n} features (limit {MAX_FEATURES})")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-init_scale, init_scale, size=(n, vocab_size))
    return PolicyParams(weights, vocab_size, context_len, feature_map)


@dataclass
class Trajectory:
    prompt_tokens: tuple[int, ...]
    response_tokens: tuple[int, ...]
    logp_cur: np.ndarray
    logp_old: np.ndarray = field(default=None)
    logp_ref: np.ndarray = field(default=None)
    terminated: bool = False

    def __post_init__(self):
        self.logp_cur = np.asarray(self.logp_cur, dtype=np.float64)
        if self.logp_old is None:
            self.logp_old = self.logp_cur.copy()
        if self.logp_ref is None:
            self.logp_ref = self.logp_cur.copy()
        self.logp_old = np.asarray(self.logp_old, dtype=np.float64)
        self.logp_ref = np.asarray(self.logp_ref, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.response_tokens)


# -- features -----------------------------------------------------------------

def context_features(params, context) -> tuple[np.ndarray, np.ndarray]:
    """Active feature indices for one context window.

    Returns ``(idx, mask)`` of equal length; masked-out slots are PAD.
    """
    p = _as_params(params)
    idx, mask = _window_features(p, [_window(p, context)])
    return idx[0], mask[0]


def _window(p: PolicyParams, tokens) -> list[int]:
    """Last K tokens, left-padded with PAD (= vocab_size)."""
    k, pad = p.context_len, p.vocab_size
    tail = [int(t) for t in tokens[-k:]] if len(tokens) else []
    return [pad] * (k - len(tail)) + tail


def _window_features(p: PolicyParams, windows) -> tuple[np.ndarray, np.ndarray]:
    win = np.asarray(windows, dtype=np.int64).reshape(len(windows), p.context_len)
    v = p.vocab_size
    mask = win != v
    idx = np.arange(p.context_len, dtype=np.int64) * v + np.where(mask, win, 0)
    if p.feature_map is FeatureMap.ONE_HOT_LAST_K_JOINT:
        code = np.zeros(len(win), dtype=np.int64)
        for k in range(p.context_len):
            code = code * (v + 1) + win[:, k]
        idx = np.concatenate([idx, (p.context_len * v + code)[:, None]], axis=1)
        mask = np.concatenate([mask, np.ones((len(win), 1), dtype=bool)], axis=1)
    return idx, mask


def _logits(w: np.ndarray, idx: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # Fixed slot-by-slot summation order: a batch of one and a batch of many
    # give bit-identical rows.
    out = np.zeros((idx.shape[0], w.shape[1]))
    for k in range(idx.shape[1]):
        out += w[idx[:, k]] * mask[:, k, None]
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logits(params, context) -> np.ndarray:
    p = _as_params(params)
    idx, mask = _window_features(p, [_window(p, context)])
    return _logits(p.weights, idx, mask)[0]


def step_probs(params, context, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    return _softmax(logits(params, context) / temperature)


# -- trajectories -------------------------------------------------------------

@dataclass
class Forward:
    """Per-token quantities for one response, reused by loss and gradient."""

    logp: np.ndarray        # (T,)
    probs: np.ndarray       # (T, V) at temperature 1
    idx: np.ndarray         # (T, A)
    mask: np.ndarray        # (T, A)
    tokens: np.ndarray      # (T,)


def forward(params, prompt_tokens, response_tokens) -> Forward:
    p = _as_params(params)
    seq = [int(t) for t in prompt_tokens] + [int(t) for t in response_tokens]
    n_prompt = len(prompt_tokens)
    tokens = np.asarray(response_tokens, dtype=np.int64)
    windows = [_window(p, seq[: n_prompt + t]) for t in range(len(tokens))]
    idx, mask = _window_features(p, windows)
    logp_all = _log_softmax(_logits(p.weights, idx, mask))
    logp = logp_all[np.arange(len(tokens)), tokens]
    return Forward(logp, np.exp(logp_all), idx, mask, tokens)


def logprob_trajectory(params, prompt_tokens, response_tokens) -> np.ndarray:
    return forward(params, prompt_tokens, response_tokens).logp


def accumulate_grad(out: np.ndarray, fwd: Forward, coef: np.ndarray) -> None:
    """Add ``sum_t coef[t] * grad log pi(token_t)`` into ``out`` in place."""
    onehot = np.zeros_like(fwd.probs)
    onehot[np.arange(len(fwd.tokens)), fwd.tokens] = 1.0
    rows = np.asarray(coef)[:, None] * (onehot - fwd.probs)          # (T, V)
    for k in range(fwd.idx.shape[1]):
        np.add.at(out, fwd.idx[:, k], rows * fwd.mask[:, k, None])


def grad_logprob(params, prompt_tokens, response_tokens) -> np.ndarray:
    """Dense per-token gradients, shape ``(T, num_features, V)``."""
    p = _as_params(params)
    fwd = forward(p, prompt_tokens, response_tokens)
    grads = np.zeros((len(fwd.tokens),) + p.weights.shape)
    for t in range(len(fwd.tokens)):
        coef = np.zeros(len(fwd.tokens))
        coef[t] = 1.0
        accumulate_grad(grads[t], fwd, coef)
    return grads


def sample_response(params, prompt, max_len: int, temperature: float,
                    rng: np.random.Generator) -> Trajectory:
    """Ancestral sampling at ``temperature``; log-probs recorded at temperature 1."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    p = _as_params(params)
    prompt_tokens = tuple(int(t) for t in getattr(prompt, "tokens", prompt))
    seq = list(prompt_tokens)
    eos = p.vocab_size - 1
    response, logps = [], []
    for _ in range(max_len):
        idx, mask = _window_features(p, [_window(p, seq)])
        z = _logits(p.weights, idx, mask)
        probs = _softmax(z / temperature)[0]
        tok = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        tok = min(tok, p.vocab_size - 1)
        logps.append(_log_softmax(z)[0, tok])
        response.append(tok)
        seq.append(tok)
        if tok == eos:
            break
    return Trajectory(prompt_tokens, tuple(response), np.array(logps),
                      terminated=response[-1] == eos)


def greedy_response(params, prompt, max_len: int) -> tuple[int, ...]:
    p = _as_params(params)
    seq = [int(t) for t in getattr(prompt, "tokens", prompt)]
    eos = p.vocab_size - 1
    response = []
    for _ in range(max_len):
        tok = int(np.argmax(logits(p, seq)))
        response.append(tok)
        seq.append(tok)
        if tok == eos:
            break
    return tuple(response)
