"""Flat ``section.key = value`` configuration files.

Grammar, one entry per line::

    # comment
    train.E = 50
    train.eta_theta = auto
    fairness.zeta_y = [0.4, 0.6]
    sweep.B = [0.5, 1, 5]

Values are read as JSON where possible (numbers, ``true``/``false``,
``null``, bracketed arrays, quoted strings) and otherwise as bare strings.
Every key is checked against ``SCHEMA``; later lines and command-line
overrides replace earlier values.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .fed_engine import RoundConfig
from .linear_model import ConfigError, LossSpec
from .pffl import PfflConfig


def _opt(conv: Callable[[Any], Any]) -> Callable[[Any], Any]:
    return lambda v: None if v is None or v == "none" else conv(v)


def _bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("true", "yes", "1"):
        return True
    if s in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int(v: Any) -> int:
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ValueError(f"not an integer: {v!r}")
    return int(v)


def _float(v: Any) -> float:
    if isinstance(v, bool):
        raise ValueError(f"not a number: {v!r}")
    return float(v)


def _float_or_auto(v: Any) -> float | str:
    return "auto" if v == "auto" else _float(v)


def _list(conv: Callable[[Any], Any]) -> Callable[[Any], list]:
    def f(v: Any) -> list:
        if not isinstance(v, list):
            v = [v]
        return [conv(x) for x in v]
    return f


def _zeta_entry(v: Any) -> float | tuple[float, ...]:
    return tuple(_float(x) for x in v) if isinstance(v, list) else _float(v)


_str = str

# section -> key -> (converter, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[Any], Any], Any]]] = {
    "data": {
        "path": (_opt(_str), None),
        "test_path": (_opt(_str), None),
        "label_col": (_str, "label"),
        "group_col": (_str, "group"),
        "client_col": (_opt(_str), None),
        "include_group": (_bool, False),
    },
    "partition": {
        "kind": (_str, "key"),            # key | dirichlet
        "K": (_int, 10),
        "alpha": (_float, 0.5),
        "seed": (_int, 0),
    },
    "synthetic": {
        "K": (_int, 10),
        "n_per_client": (_int, 200),
        "n_test_per_client": (_int, 1000),
        "p": (_int, 5),
        "skew": (_float, 0.9),
        "seed": (_int, 0),
        "group_sep": (_float, 1.0),
        "client_shift": (_float, 1.0),
        "feature_scale": (_float, 1.0),
        "rule_angle": (_float, 0.0),
        "minority_share": (_float, 0.5),
        "label_noise": (_list(_float), [0.3, 1.0]),
    },
    "fairness": {
        "kind": (_str, "bgl"),
        "zeta": (_opt(_float), None),
        "zeta_y": (_opt(_list(_float)), None),
        "drop_empty_cells": (_bool, False),
    },
    "train": {
        "method": (_str, "pffl"),
        "E": (_int, 10),
        "T": (_int, 1),
        "J": (_int, 1),
        "schedule": (_str, "constant"),
        "eta_w": (_float, 0.1),
        "batch_size": (_opt(_int), None),
        "beta": (_float, 1.0),
        "B": (_float, 1.0),
        "nu": (_float, 0.1),
        "M": (_float, 1.0),
        "eta_theta": (_float_or_auto, "auto"),
        "seed": (_int, 0),
        "rho": (_opt(_float), None),
        "ridge_mu": (_float, 0.0),
        "bias": (_bool, True),
        "gate": (_bool, True),
        "tail_average": (_opt(_int), None),
        "detailed_trace": (_bool, False),
        "group_weights": (_opt(_list(_float)), None),
    },
    "sweep": {
        "B": (_list(_float), [1.0]),
        "zeta": (_list(_zeta_entry), []),
        "seeds": (_list(_int), [0]),
        "methods": (_list(_str), ["pffl"]),
        "gap": (_bool, False),
        "gap_tol": (_float, 1e-6),
    },
}


@dataclass
class Config:
    values: dict[str, dict[str, Any]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str) -> Any:
        section, key = _split_key(dotted)
        return self.values[section][key]

    def set(self, dotted: str, raw: Any) -> None:
        section, key = _split_key(dotted)
        conv, _ = SCHEMA[section][key]
        try:
            self.values[section][key] = conv(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{dotted}: {e}") from None

    def dumps(self) -> str:
        """Render every value back into the file grammar (round-trips through ``loads``)."""
        lines = []
        for section, entries in self.values.items():
            for key, v in entries.items():
                lines.append(f"{section}.{key} = {json.dumps(_plain(v))}")
        return "\n".join(lines) + "\n"


def _plain(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


def _split_key(dotted: str) -> tuple[str, str]:
    section, sep, key = dotted.strip().partition(".")
    if not sep or section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {dotted!r}")
    return section, key


def _split_items(body: str) -> list[str]:
    """Split an array body on top-level commas."""
    items, depth, start = [], 0, 0
    for i, ch in enumerate(body):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise ConfigError(f"unbalanced brackets in [{body}]")
        elif ch == "," and depth == 0:
            items.append(body[start:i])
            start = i + 1
    if depth:
        raise ConfigError(f"unbalanced brackets in [{body}]")
    items.append(body[start:])
    if len(items) == 1 and not items[0].strip():
        return []
    return items


def parse_value(text: str) -> Any:
    """JSON literal, bracketed array (elements parsed recursively) or bare string."""
    text = text.strip()
    if text in ("none", "None"):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    if text.startswith("[") or text.endswith("]"):
        if not (text.startswith("[") and text.endswith("]")):
            raise ConfigError(f"malformed array {text!r}")
        return [parse_value(item) for item in _split_items(text[1:-1])]
    return text


def defaults() -> Config:
    return Config({s: {k: copy.deepcopy(d) for k, (_c, d) in keys.items()}
                   for s, keys in SCHEMA.items()})


def loads(text: str, base: Config | None = None) -> Config:
    cfg = base or defaults()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        try:
            cfg.set(key.strip(), parse_value(raw))
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return cfg


def load(path: str | Path) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads(text)


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` strings (as given with ``--set``)."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not section.key=value")
        cfg.set(key, parse_value(raw))
    return cfg


def pffl_config(cfg: Config) -> PfflConfig:
    t = cfg["train"]
    rnd = RoundConfig(J=t["J"], T=t["T"], schedule=t["schedule"], eta_w=t["eta_w"],
                      batch_size=t["batch_size"], batch_seed=t["seed"])
    return PfflConfig(
        E=t["E"], round=rnd, beta=t["beta"], B=t["B"], nu=t["nu"], M=t["M"],
        eta_theta=t["eta_theta"], seed=t["seed"],
        loss=LossSpec(ridge_mu=t["ridge_mu"], bias=t["bias"]),
        rho=t["rho"], gate=t["gate"], tail_average=t["tail_average"],
        detailed_trace=t["detailed_trace"],
    )
