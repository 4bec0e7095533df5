"""Independent reference computations used by the tests."""

import itertools

import numpy as np

from cwgrpo.grpo import GroupRollout
from cwgrpo.envs import Prompt
from cwgrpo.policy import PolicyParams, Trajectory, num_features


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def random_params(rng, vocab=4, k=2, feature_map="OneHotLastK", scale=1.0) -> PolicyParams:
    n = num_features(vocab, k, feature_map)
    return PolicyParams(rng.normal(0, scale, (n, vocab)), vocab, k, feature_map)


def naive_logprobs(params: PolicyParams, prompt, response) -> np.ndarray:
    """Dense feature vector, explicit softmax, one token at a time."""
    v, k = params.vocab_size, params.context_len
    seq = list(prompt) + list(response)
    out = []
    for t in range(len(response)):
        window = seq[: len(prompt) + t][-k:]
        window = [v] * (k - len(window)) + window
        phi = np.zeros(params.num_features)
        for slot, tok in enumerate(window):
            if tok != v:
                phi[slot * v + tok] = 1.0
        if params.feature_map.value == "OneHotLastKJoint":
            code = 0
            for tok in window:
                code = code * (v + 1) + tok
            phi[k * v + code] = 1.0
        z = phi @ params.weights
        z = z - z.max()
        out.append(z[response[t]] - np.log(np.exp(z).sum()))
    return np.array(out)


def random_group(rng, params=None, G=None, vocab=4, max_len=4, prompt_len=2,
                 off_policy=True) -> GroupRollout:
    """A group with random responses; log-probs come from ``params`` if given."""
    G = G or int(rng.integers(2, 6))
    prompt_tokens = tuple(int(t) for t in rng.integers(0, vocab - 2, prompt_len))
    trajs = []
    for _ in range(G):
        n = int(rng.integers(1, max_len + 1))
        resp = tuple(int(t) for t in rng.integers(0, vocab, n))
        if params is not None:
            lp = naive_logprobs(params, prompt_tokens, resp)
        else:
            lp = -rng.exponential(1.0, n)
        old = lp + (rng.normal(0, 0.3, n) if off_policy else 0.0)
        ref = lp + rng.normal(0, 0.3, n)
        trajs.append(Trajectory(prompt_tokens, resp, lp, old, ref))
    rewards = rng.integers(0, 3, G).astype(float)
    adv = rng.normal(0, 1, G)
    return GroupRollout(Prompt(prompt_tokens, (0,)), trajs, rewards, adv)


def enumerate_responses(vocab, max_len, eos):
    """Every response a sampler can emit: stops at EOS or max_len."""
    for n in range(1, max_len + 1):
        for resp in itertools.product(range(vocab), repeat=n):
            if eos in resp[:-1]:
                continue
            if n < max_len and resp[-1] != eos:
                continue
            yield resp
