"""Training loop: rollouts, token weighting, GRPO loss and optimizer updates.

Run directory layout::

    <out>/config.txt                  resolved config (key = value)
    <out>/metrics.jsonl               one MetricsRecord per step
    <out>/checkpoints/step_NNNNNN.json
    <out>/nonfinite_group.json        only written when training aborts

Every random draw is seeded from ``(cfg.seed, step, ...)``, so a run resumed
from a checkpoint continues exactly as an uninterrupted run would.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diagnostics
from .checkpoint import OptimizerState, load_checkpoint, save_checkpoint
from .config import Method, Optimizer, TrainConfig, dump_config
from .cov_reweight import clip_cov_weights, cw_grpo_weights, pooled_cw_weights
from .envs import TaskSpec, env_generate, env_verify
from .errors import ContractError, TrainingError
from .grpo import batch_loss_and_grad, rollout_group
from .policy import PolicyParams, greedy_response, policy_init, snapshot

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "step", "mean_reward", "pass_rate", "entropy_mc", "loss", "grad_norm",
    "sigma_cov", "max_abs_cov", "top1pct_cov_share", "w_min", "w_max",
    "pred_dH", "meas_dH", "mean_kl", "cov_curve",
)

# Fractions of tokens at which the per-step cumulative covariance curve is logged.
CURVE_POINTS = np.linspace(0.0, 1.0, 21)


@dataclass
class MetricsRecord:
    step: int
    mean_reward: float
    pass_rate: float
    entropy_mc: float
    loss: float
    grad_norm: float
    sigma_cov: float
    max_abs_cov: float
    top1pct_cov_share: float
    w_min: float
    w_max: float
    pred_dH: float
    meas_dH: float
    mean_kl: float
    cov_curve: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def seed_for(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# Stream tags keep prompt, rollout and measurement draws independent.
_PROMPT, _ROLLOUT, _REMEASURE, _EVAL = 1, 2, 3, 4


def init_optimizer(cfg: TrainConfig, params: PolicyParams) -> OptimizerState:
    if cfg.optimizer is Optimizer.ADAM:
        return OptimizerState("Adam", 0, np.zeros_like(params.weights),
                              np.zeros_like(params.weights))
    return OptimizerState("SGD", 0)


def optimizer_step(params: PolicyParams, grad: np.ndarray, state: OptimizerState,
                   cfg: TrainConfig) -> tuple[PolicyParams, OptimizerState]:
    if grad.shape != params.weights.shape:
        raise ContractError(f"grad shape {grad.shape} != weights shape {params.weights.shape}")
    lr = cfg.learning_rate
    t = state.t + 1
    if state.kind == "SGD":
        new = params.weights - lr * grad
        out_state = OptimizerState("SGD", t)
    else:
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        m = b1 * state.m + (1 - b1) * grad
        v = b2 * state.v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new = params.weights - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        out_state = OptimizerState("Adam", t, m, v)
    return PolicyParams(new, params.vocab_size, params.context_len, params.feature_map), out_state


def evaluate(params, task: TaskSpec, n_prompts: int, seed: int,
             max_len: int | None = None) -> tuple[float, float]:
    """Greedy-decoding pass@1 and mean reward over ``n_prompts`` fresh prompts."""
    if n_prompts < 1:
        raise ContractError(f"n_prompts must be >= 1, got {n_prompts}")
    max_len = max_len or task.answer_len + 2
    acc = tot = 0.0
    for j in range(n_prompts):
        prompt = env_generate(task, seed_for(seed, _EVAL, j))
        score = env_verify(task, prompt, greedy_response(params, prompt, max_len))
        acc += score.accuracy
        tot += score.total
    return acc / n_prompts, tot / n_prompts


def _token_weights(cfg: TrainConfig, groups):
    """Per-group flat weights (None = vanilla) and the stats used for logging."""
    if cfg.cov_scope == "batch":
        stats = pooled_cw_weights(groups, cfg.sigma_floor)
    else:
        stats = [cw_grpo_weights(g, cfg.sigma_floor) for g in groups]
    if cfg.force_unit_weights:
        weights = [np.ones(g.N) for g in groups]
    elif cfg.method is Method.CW_GRPO:
        weights = [s.norm_weight for s in stats]
    elif cfg.method is Method.CLIP_COV:
        weights = [clip_cov_weights(g, cfg.clip_tau, cfg.sigma_floor) for g in groups]
    else:
        weights = [None] * len(groups)
    return weights, stats


def _dump_group(path: Path, group, weights) -> None:
    payload = {
        "prompt": list(group.prompt.tokens),
        "rewards": group.rewards.tolist(),
        "advantages": group.advantages.tolist(),
        "responses": [list(tr.response_tokens) for tr in group.trajectories],
        "logp_cur": [tr.logp_cur.tolist() for tr in group.trajectories],
        "logp_old": [tr.logp_old.tolist() for tr in group.trajectories],
        "logp_ref": [tr.logp_ref.tolist() for tr in group.trajectories],
        "token_weights": None if weights is None else np.asarray(weights).tolist(),
    }
    path.write_text(json.dumps(payload, indent=1))


def _find_bad_group(params, groups, weights, cfg):
    from .grpo import grpo_loss_and_grad
    for g, w in zip(groups, weights):
        rep = grpo_loss_and_grad(params, g, cfg.beta, w, cfg.ratio_clip)
        if not (np.isfinite(rep.loss) and np.all(np.isfinite(rep.grad))):
            return g, w
    return groups[0], weights[0]


def _curve_samples(c: np.ndarray) -> list:
    if not np.abs(c).sum() > 0:
        return [0.0] * len(CURVE_POINTS)
    curve = diagnostics.cumulative_contribution(c)
    n = len(curve)
    out = []
    for f in CURVE_POINTS:
        k = int(np.ceil(f * n - 1e-9))
        out.append(0.0 if k == 0 else float(curve[k - 1, 1]))
    return out


def train_step(params: PolicyParams, opt_state: OptimizerState, ref, cfg: TrainConfig,
               step: int, out_dir: Path | None = None):
    """One optimisation step; returns ``(params, opt_state, MetricsRecord)``."""
    task = cfg.task
    prompts = [env_generate(task, seed_for(cfg.seed, step, _PROMPT, j))
               for j in range(cfg.prompts_per_step)]
    old = snapshot(params, step)
    groups = [rollout_group(params, task, p, cfg.group_size, cfg,
                            np.random.default_rng(seed_for(cfg.seed, step, _ROLLOUT, j)),
                            old=old, ref=ref)
              for j, p in enumerate(prompts)]
    # Weights come from the policy at update start and stay frozen across inner epochs.
    weights, stats = _token_weights(cfg, groups)
    c_all = np.concatenate([s.cov for s in stats])
    entropy_before = diagnostics.entropy_mc([tr for g in groups for tr in g.trajectories])

    first = None
    for _ in range(cfg.inner_epochs):
        report = batch_loss_and_grad(params, groups, cfg.beta, weights, cfg.ratio_clip)
        if not (np.isfinite(report.loss) and np.all(np.isfinite(report.grad))):
            msg = f"non-finite loss/gradient at step {step}"
            if out_dir is not None:
                bad, w = _find_bad_group(params, groups, weights, cfg)
                dump = Path(out_dir) / "nonfinite_group.json"
                _dump_group(dump, bad, w)
                msg += f"; offending group written to {dump}"
            raise TrainingError(msg)
        first = first or report
        params, opt_state = optimizer_step(params, report.grad, opt_state, cfg)

    after = [rollout_group(params, task, p, cfg.group_size, cfg,
                           np.random.default_rng(seed_for(cfg.seed, step, _REMEASURE, j)))
             for j, p in enumerate(prompts)]
    entropy_after = diagnostics.entropy_mc([tr for g in after for tr in g.trajectories])

    applied = np.concatenate([np.ones(g.N) if w is None else np.asarray(w)
                              for g, w in zip(groups, weights)])
    record = MetricsRecord(
        step=step,
        mean_reward=float(np.mean([g.rewards.mean() for g in groups])),
        pass_rate=float(np.mean([g.accuracy.mean() for g in groups])),
        entropy_mc=entropy_before.value,
        loss=first.loss,
        grad_norm=float(np.linalg.norm(first.grad)),
        sigma_cov=float(np.mean([s.sigma for s in stats])),
        max_abs_cov=float(np.abs(c_all).max()),
        top1pct_cov_share=diagnostics.top_share(c_all, 0.01),
        w_min=float(applied.min()),
        w_max=float(applied.max()),
        pred_dH=diagnostics.predict_entropy_delta(cfg.learning_rate, c_all),
        meas_dH=entropy_after.value - entropy_before.value,
        mean_kl=first.mean_kl,
        cov_curve=_curve_samples(c_all),
    )
    return params, opt_state, record


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{step:06d}.json"


def reference_policy(cfg: TrainConfig):
    return snapshot(policy_init(cfg.task.vocab_size, cfg.resolved_context_len, cfg.seed,
                                feature_map=cfg.feature_map, init_scale=cfg.init_scale), 0)


def train(cfg: TrainConfig, out_dir, resume_from=None, until_step: int | None = None) -> Path:
    """Train per ``cfg`` into ``out_dir``.

    ``resume_from`` is a checkpoint path; training continues after its step
    and appends to the existing metrics log. ``until_step`` stops early
    (defaults to ``cfg.steps``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    ref = reference_policy(cfg)
    if resume_from is not None:
        params, start, opt_state = load_checkpoint(resume_from)
        if opt_state is None:
            opt_state = init_optimizer(cfg, params)
        _truncate_metrics(out / "metrics.jsonl", start)
    else:
        params, start, opt_state = ref.params.copy(), 0, None
        opt_state = init_optimizer(cfg, params)
        (out / "metrics.jsonl").write_text("")
    last = until_step if until_step is not None else cfg.steps
    with open(out / "metrics.jsonl", "a") as fh:
        for step in range(start, last):
            params, opt_state, record = train_step(params, opt_state, ref, cfg, step, out)
            fh.write(record.to_json() + "\n")
            fh.flush()
            log.info("step %d reward=%.3f pass=%.3f H=%.3f", step, record.mean_reward,
                     record.pass_rate, record.entropy_mc)
            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == last:
                save_checkpoint(checkpoint_path(out, done), params, done, opt_state)
    return out


def _truncate_metrics(path: Path, n_steps: int) -> None:
    if not path.exists():
        path.write_text("")
        return
    keep = [line for line in path.read_text().splitlines() if line.strip()][:n_steps]
    path.write_text("".join(line + "\n" for line in keep))


def read_metrics(path) -> list[dict]:
    """Parse a metrics log, raising ``ValueError`` naming the first bad line."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: corrupt metrics record ({exc.msg})") from None
        missing = [f for f in METRIC_FIELDS if f not in rec]
        if missing:
            raise ValueError(f"{path}:{lineno}: metrics record missing {missing}")
        records.append(rec)
    if not records:
        raise ValueError(f"{path}: metrics log is empty")
    return records
