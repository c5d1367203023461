"""Flat ``key = value`` run configuration with typed parsing and canonical echo.

Run-level keys (algo, seed, budget, side, max_steps, order, ia) sit at the
top level; algorithm hyperparameters live under dotted sections ``ace.`` and
``ppo.`` whose defaults come straight from the corresponding config tuples.
Values are parsed by the type of their default, and ``format_config`` emits a
canonical document that parses back to the identical mapping, so every run
can be reproduced from its echo.
"""

from typing import Dict, Optional, Union

from ace.learner import TrainConfig
from ace.ppo import PPOConfig

Value = Union[bool, int, float, str]

ALGOS = ("ace", "ace_ppo")

# Fields owned by top-level keys rather than a section.
_SHARED = ("side", "max_steps", "order_mode", "ia_enabled")


def default_config() -> Dict[str, Value]:
    cfg: Dict[str, Value] = {
        "algo": "ace",
        "seed": 0,
        "budget": 200_000,
        "side": 5,
        "max_steps": 100,
        "order": "sorted",
        "ia": True,
    }
    for name, value in TrainConfig()._asdict().items():
        if name not in _SHARED:
            cfg[f"ace.{name}"] = value
    for name, value in PPOConfig()._asdict().items():
        if name not in _SHARED:
            cfg[f"ppo.{name}"] = value
    return cfg


def _parse_value(key: str, text: str, default: Value) -> Value:
    text = text.strip()
    if isinstance(default, bool):
        if text == "true":
            return True
        if text == "false":
            return False
        raise ValueError(f"invalid value for {key}: {text!r} (expected true/false)")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"invalid value for {key}: {text!r} (expected int)")
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"invalid value for {key}: {text!r} (expected float)")
    return text


def set_key(cfg: Dict[str, Value], key: str, text: str) -> None:
    """Assign one key from its text form, typed by the default's type."""
    key = key.strip()
    if key not in cfg:
        raise ValueError(f"unknown config key {key!r}")
    cfg[key] = _parse_value(key, text, default_config()[key])


def parse_config(text: str, base: Optional[Dict[str, Value]] = None
                 ) -> Dict[str, Value]:
    """Parse a config document on top of ``base`` (defaults if omitted)."""
    cfg = dict(default_config() if base is None else base)
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"invalid config line {n}: {raw!r}")
        key, value = line.split("=", 1)
        set_key(cfg, key, value)
    if cfg["algo"] not in ALGOS:
        raise ValueError(f"unknown algo {cfg['algo']!r} (expected one of {ALGOS})")
    return cfg


def format_config(cfg: Dict[str, Value]) -> str:
    """Canonical echo: default key order, one ``key = value`` per line."""
    lines = []
    for key in default_config():
        value = cfg[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def _section(cfg: Dict[str, Value], prefix: str) -> Dict[str, Value]:
    return {key.split(".", 1)[1]: value for key, value in cfg.items()
            if key.startswith(prefix)}


def build_train_config(cfg: Dict[str, Value]) -> TrainConfig:
    return TrainConfig(side=cfg["side"], max_steps=cfg["max_steps"],
                       order_mode=cfg["order"], ia_enabled=cfg["ia"],
                       **_section(cfg, "ace.")).validate()


def build_ppo_config(cfg: Dict[str, Value]) -> PPOConfig:
    return PPOConfig(side=cfg["side"], max_steps=cfg["max_steps"],
                     order_mode=cfg["order"], ia_enabled=cfg["ia"],
                     **_section(cfg, "ppo.")).validate()
