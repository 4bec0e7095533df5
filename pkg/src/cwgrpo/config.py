"""Training configuration and its flat ``key = value`` text format.

Example::

    # parity, CW-GRPO
    task.kind = Parity
    task.vocab_size = 6
    method = CW_GRPO
    learning_rate = 0.05

Lines starting with ``#`` and blank lines are ignored. Unknown keys are
rejected. ``--set key=value`` overrides are applied after the file.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .envs import TaskKind, TaskSpec
from .errors import ConfigError
from .policy import FeatureMap


class Method(str, Enum):
    GRPO = "GRPO"
    CW_GRPO = "CW_GRPO"
    CLIP_COV = "ClipCov"


class Optimizer(str, Enum):
    SGD = "SGD"
    ADAM = "Adam"


@dataclass(frozen=True)
class TrainConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    group_size: int = 12
    temperature: float = 0.7
    beta: float = 0.04
    # 1e-6 in the LLM setting; a toy policy needs a far larger step.
    learning_rate: float = 1e-2
    steps: int = 100
    prompts_per_step: int = 12
    max_completion_len: int = 6
    inner_epochs: int = 1
    method: Method = Method.GRPO
    clip_tau: float = 3.0
    ratio_clip: float | None = None
    force_unit_weights: bool = False
    cov_scope: str = "group"
    optimizer: Optimizer = Optimizer.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sigma_floor: float = 1e-12
    adv_eps: float = 1e-8
    context_len: int = 0            # 0 = prompt_len + 1
    feature_map: FeatureMap = FeatureMap.ONE_HOT_LAST_K_JOINT
    init_scale: float = 0.01
    checkpoint_every: int = 50
    eval_prompts: int = 64

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "feature_map", FeatureMap(self.feature_map))
        checks = [
            (self.group_size >= 2, "group_size", "must be >= 2"),
            (self.steps >= 1, "steps", "must be >= 1"),
            (self.learning_rate > 0, "learning_rate", "must be > 0"),
            (self.temperature > 0, "temperature", "must be > 0"),
            (self.beta >= 0, "beta", "must be >= 0"),
            (self.prompts_per_step >= 1, "prompts_per_step", "must be >= 1"),
            (self.max_completion_len >= 1, "max_completion_len", "must be >= 1"),
            (self.inner_epochs >= 1, "inner_epochs", "must be >= 1"),
            (self.clip_tau > 0, "clip_tau", "must be > 0"),
            (self.ratio_clip is None or self.ratio_clip > 0, "ratio_clip", "must be > 0"),
            (self.cov_scope in ("group", "batch"), "cov_scope", "must be 'group' or 'batch'"),
            (self.context_len >= 0, "context_len", "must be >= 0"),
            (self.sigma_floor >= 0, "sigma_floor", "must be >= 0"),
            (self.adv_eps >= 0, "adv_eps", "must be >= 0"),
            (self.checkpoint_every >= 1, "checkpoint_every", "must be >= 1"),
            (self.eval_prompts >= 1, "eval_prompts", "must be >= 1"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key} {msg}, got {getattr(self, key)!r}")

    @property
    def resolved_context_len(self) -> int:
        return self.context_len or self.task.prompt_len + 1


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optional_float(s: str) -> float | None:
    return None if s.lower() in ("none", "off", "") else float(s)


def _optional_int(s: str) -> int | None:
    return None if s.lower() in ("none", "auto", "") else int(s)


_TASK_KEYS = {
    "task.kind": ("kind", TaskKind),
    "task.vocab_size": ("vocab_size", int),
    "task.prompt_len": ("prompt_len", int),
    "task.answer_len": ("answer_len", _optional_int),
    "task.modulus": ("modulus", _optional_int),
}

_TOP_KEYS = {
    f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "task"
}

_CONVERTERS = {
    "int": int, "float": float, "bool": _parse_bool, "str": str,
    "float | None": _optional_float, "Method": Method, "Optimizer": Optimizer,
    "FeatureMap": FeatureMap,
}

_CLIPCOV = re.compile(r"^ClipCov\(\s*([^)]+)\s*\)$")


def _convert(key: str, raw: str, where: str):
    if key in _TASK_KEYS:
        conv = _TASK_KEYS[key][1]
    elif key in _TOP_KEYS:
        conv = _CONVERTERS[_TOP_KEYS[key]]
    else:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {raw!r} ({exc})") from None


def _split(line: str, where: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
    key, raw = line.split("=", 1)
    return key.strip(), raw.strip()


def _assign(values: dict, key: str, raw: str, where: str) -> None:
    if key == "method":
        m = _CLIPCOV.match(raw)
        if m:
            values["clip_tau"] = _convert("clip_tau", m.group(1), where)
            raw = "ClipCov"
    values[key] = _convert(key, raw, where)


def config_from_pairs(pairs) -> TrainConfig:
    """Build a config from ``(key, raw_value, where)`` triples, later pairs winning."""
    values: dict = {}
    for key, raw, where in pairs:
        _assign(values, key, raw, where)
    task_kw = {_TASK_KEYS[k][0]: values.pop(k) for k in list(values) if k in _TASK_KEYS}
    try:
        task = TaskSpec(**task_kw)
        return TrainConfig(task=task, **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path=None, overrides=()) -> TrainConfig:
    pairs = []
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            where = f"{path}:{lineno}"
            key, raw = _split(line, where)
            pairs.append((key, raw, where))
    for item in overrides:
        where = f"override {item!r}"
        key, raw = _split(item, where)
        pairs.append((key, raw, where))
    return config_from_pairs(pairs)


def _render(value) -> str:
    if isinstance(value, Enum):
        return value.value
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def dump_config(cfg: TrainConfig) -> str:
    """Render every key, so the text alone reproduces ``cfg``."""
    lines = []
    for key, (attr, _) in _TASK_KEYS.items():
        lines.append(f"{key} = {_render(getattr(cfg.task, attr))}")
    for key in _TOP_KEYS:
        lines.append(f"{key} = {_render(getattr(cfg, key))}")
    return "\n".join(lines) + "\n"
