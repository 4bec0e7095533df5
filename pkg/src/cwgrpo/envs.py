"""Synthetic sequence tasks with exact-match verifiable rewards.

Token layout for a vocabulary of size V:

    0 .. V-3   data alphabet
    V-2        ANSWER marker
    V-1        EOS

A well-formed response is ``[free tokens..., ANS, answer..., EOS]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError


class TaskKind(str, Enum):
    PARITY = "Parity"
    MODSUM = "ModSum"
    COPY = "Copy"
    REVERSE = "Reverse"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind = TaskKind.PARITY
    vocab_size: int = 6
    prompt_len: int = 4
    answer_len: int | None = None
    modulus: int | None = None

    def __post_init__(self):
        kind = TaskKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.prompt_len < 1:
            raise ConfigError(f"prompt_len must be >= 1, got {self.prompt_len}")
        expected = 1 if kind in (TaskKind.PARITY, TaskKind.MODSUM) else self.prompt_len
        if self.answer_len is None:
            object.__setattr__(self, "answer_len", expected)
        if self.answer_len < 1:
            raise ConfigError(f"answer_len must be >= 1, got {self.answer_len}")
        if self.answer_len != expected:
            raise ConfigError(
                f"answer_len for {kind.value} must be {expected}, got {self.answer_len}"
            )
        if kind is TaskKind.MODSUM:
            if self.modulus is None or self.modulus < 1:
                raise ConfigError("ModSum requires a positive modulus")
            if self.modulus > self.vocab_size - 2:
                raise ConfigError(
                    f"modulus must be <= vocab_size - 2 = {self.vocab_size - 2}, "
                    f"got {self.modulus}"
                )

    @property
    def answer_token(self) -> int:
        return self.vocab_size - 2

    @property
    def eos_token(self) -> int:
        return self.vocab_size - 1

    @property
    def alphabet_size(self) -> int:
        """Number of symbols prompts are drawn from."""
        if self.kind is TaskKind.PARITY:
            return 2
        return self.vocab_size - 2


@dataclass(frozen=True)
class Prompt:
    tokens: tuple[int, ...]
    target: tuple[int, ...]


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy: float
    format: float

    @property
    def total(self) -> float:
        return self.accuracy + self.format


def task_target(spec: TaskSpec, tokens) -> tuple[int, ...]:
    tokens = [int(t) for t in tokens]
    if spec.kind is TaskKind.PARITY:
        return (sum(tokens) % 2,)
    if spec.kind is TaskKind.MODSUM:
        return (sum(tokens) % spec.modulus,)
    if spec.kind is TaskKind.COPY:
        return tuple(tokens)
    return tuple(reversed(tokens))


def env_generate(spec: TaskSpec, seed: int) -> Prompt:
    rng = np.random.default_rng(seed)
    tokens = tuple(int(t) for t in rng.integers(0, spec.alphabet_size, size=spec.prompt_len))
    return Prompt(tokens=tokens, target=task_target(spec, tokens))


def encode_answer(spec: TaskSpec, answer) -> list[int]:
    """The canonical well-formed response carrying ``answer``."""
    return [spec.answer_token, *[int(t) for t in answer], spec.eos_token]


def env_verify(spec: TaskSpec, prompt: Prompt, response) -> RewardBreakdown:
    response = [int(t) for t in response]
    ans, eos = spec.answer_token, spec.eos_token
    well_formed = (
        len(response) >= 2
        and response.count(ans) == 1
        and response.count(eos) == 1
        and response[-1] == eos
    )
    if not well_formed:
        return RewardBreakdown(0.0, 0.0)
    start = response.index(ans) + 1
    correct = tuple(response[start:-1]) == tuple(prompt.target)
    return RewardBreakdown(1.0 if correct else 0.0, 1.0)
