"""Checkpoint files.

A checkpoint is a single JSON object (format version 1)::

    {"format": "cwgrpo-checkpoint", "version": 1, "step": 40,
     "vocab_size": 6, "context_len": 5, "feature_map": "OneHotLastKJoint",
     "weights": [[...], ...],                       # num_features rows x vocab_size
     "optimizer": {"kind": "Adam", "t": 40, "m": [[...]], "v": [[...]]}}

Floats are written with Python's shortest round-trip repr, so
``load(save(p))`` reproduces every weight bit for bit. ``optimizer`` is
``null`` for bare policy checkpoints; SGD stores ``{"kind": "SGD", "t": n}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .policy import PolicyParams

FORMAT = "cwgrpo-checkpoint"
VERSION = 1


@dataclass
class OptimizerState:
    kind: str
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def _rows(a: np.ndarray) -> list:
    return [[float(x) for x in row] for row in a]


def save_checkpoint(path, params: PolicyParams, step: int,
                    opt_state: OptimizerState | None = None) -> Path:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "step": int(step),
        "vocab_size": params.vocab_size,
        "context_len": params.context_len,
        "feature_map": params.feature_map.value,
        "weights": _rows(params.weights),
        "optimizer": None,
    }
    if opt_state is not None:
        payload["optimizer"] = {
            "kind": opt_state.kind,
            "t": opt_state.t,
            "m": None if opt_state.m is None else _rows(opt_state.m),
            "v": None if opt_state.v is None else _rows(opt_state.v),
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, separators=(",", ":")))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[PolicyParams, int, OptimizerState | None]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a checkpoint ({exc})") from None
    if payload.get("format") != FORMAT or payload.get("version") != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format "
                          f"{payload.get('format')!r} v{payload.get('version')!r}")
    params = PolicyParams(np.array(payload["weights"], dtype=np.float64),
                          payload["vocab_size"], payload["context_len"],
                          payload["feature_map"])
    opt = payload.get("optimizer")
    state = None
    if opt is not None:
        state = OptimizerState(
            opt["kind"], opt["t"],
            None if opt["m"] is None else np.array(opt["m"], dtype=np.float64),
            None if opt["v"] is None else np.array(opt["v"], dtype=np.float64),
        )
    return params, int(payload["step"]), state
