"""Line-based ``key = value`` pipeline configuration.

Keys are dotted (``grid.n_cells``), ``#`` starts a comment, unknown or
repeated keys are rejected and every error names its line.  ``echo()``
writes the effective configuration in the same format so it parses back
to an equal config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Callable

from .assembly import FORMULATIONS, STRONG
from .errors import ConfigError
from .grid import DIRICHLET, PERIODIC

SEED_ENV = "DDFEM_SEED"
NONE = "none"


def _int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}") from None
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _optional(parse):
    def inner(text):
        return None if text.lower() == NONE else parse(text)
    return inner


def _choice(*options):
    def inner(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return inner


def _float_list(text: str) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(1.0 if t == "untruncated" else _float(t) for t in items)


def _layout_list(text: str) -> tuple:
    out = []
    for t in (t.strip() for t in text.split(",")):
        if not t:
            continue
        parts = t.lower().split("x")
        if len(parts) != 2:
            raise ValueError(f"layouts are written RxC, got {t!r}")
        out.append((_int(parts[0]), _int(parts[1])))
    if not out:
        raise ValueError("expected a comma-separated list of RxC layouts")
    return tuple(out)


def _fmt(v) -> str:
    if v is None:
        return NONE
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return ", ".join(f"{r}x{c}" for r, c in v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _positive(v):
    return v is None or v > 0


def _at_least(lo):
    return lambda v: v is None or v >= lo


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""


SCHEMA: dict[str, Key] = {
    "problem": Key(_choice("poisson", "burgers"), "poisson"),
    "threads": Key(_int, 1, _at_least(0), ">= 0 (0 = auto)"),
    "grid.n_cells": Key(_int, 16, _at_least(2), ">= 2"),
    "train.n_samples": Key(_int, 500, _at_least(1), ">= 1"),
    "train.n_runs": Key(_int, 200, _at_least(1), ">= 1"),
    "train.seed": Key(_int, 0, lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
    "train.K_max": Key(_int, 4, _at_least(1), ">= 1"),
    "train.dt": Key(_float, 0.01, _positive, "> 0"),
    "train.t_final": Key(_float, 0.3, _positive, "> 0"),
    "train.save_every": Key(_int, 5, _at_least(1), ">= 1"),
    "train.nu": Key(_float, 1e-3, _positive, "> 0"),
    "basis.epsilon": Key(_float, 0.9999, lambda v: 0 < v <= 1, "in (0, 1]; 1 keeps every mode"),
    "basis.fixed_r": Key(_optional(_int), None, _at_least(1), ">= 1 or none"),
    "basis.port_split": Key(_bool, True),
    "layout.rows": Key(_int, 8, _at_least(1), ">= 1"),
    "layout.cols": Key(_int, 8, _at_least(1), ">= 1"),
    "layout.bc": Key(_choice(DIRICHLET, PERIODIC), DIRICHLET),
    "coupling.formulation": Key(_choice(*FORMULATIONS), STRONG),
    "coupling.eta": Key(_float, 10.0, _positive, "> 0"),
    "coupling.constraint_tol": Key(_float, 1e-10, lambda v: 0 < v < 1, "in (0, 1)"),
    "solve.source": Key(_choice("spiral", "sinusoidal", "zero"), "spiral"),
    "solve.k1": Key(_float, 0.3, lambda v: abs(v) <= 0.5, "in [-0.5, 0.5]"),
    "solve.k2": Key(_float, -0.2, lambda v: abs(v) <= 0.5, "in [-0.5, 0.5]"),
    "solve.theta": Key(_float, 0.1, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "solve.spiral_omega": Key(_float, 0.5),
    "solve.spiral_gamma": Key(_float, 1.0),
    "solve.ic_seed": Key(_int, 12345, lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
    "solve.dt_multiplier": Key(_int, 1, _at_least(1), ">= 1"),
    "solve.cg_rtol": Key(_float, 1e-12, lambda v: 0 < v < 1, "in (0, 1)"),
    "sweep.epsilons": Key(_float_list, (0.99, 0.999, 0.9999, 1.0),
                          lambda v: all(0 < x <= 1 for x in v), "each in (0, 1]"),
    "sweep.layouts": Key(_layout_list, ((2, 2), (4, 4), (8, 8)),
                         lambda v: all(r >= 1 and c >= 1 for r, c in v), "each R, C >= 1"),
    "output.dir": Key(str, "ddfem-out", lambda v: bool(v), "non-empty"),
    "output.dump_fields": Key(_bool, True),
}


@dataclass(frozen=True)
class PipelineConfig:
    values: dict = field(default_factory=lambda: {k: spec.default for k, spec in SCHEMA.items()})
    explicit: frozenset = field(default=frozenset(), compare=False)  # keys set in the source text

    def __getitem__(self, key: str):
        return self.values[key]

    def replace(self, **updates) -> "PipelineConfig":
        """``cfg.replace(**{"grid.n_cells": 8})``; values are validated."""
        vals = dict(self.values)
        for key, value in updates.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            _validate(key, value, None)
            vals[key] = value
        cfg = PipelineConfig(vals, self.explicit | frozenset(updates))
        _cross_check(cfg, {})
        return cfg

    @property
    def seed(self) -> int:
        return self.values["train.seed"]

    @property
    def epsilon(self) -> float | None:
        """Energy threshold, ``None`` when untruncated."""
        eps = self.values["basis.epsilon"]
        return None if eps >= 1.0 else eps

    def echo(self) -> str:
        lines = ["# effective ddfem configuration"]
        section = None
        for key in SCHEMA:
            head = key.split(".")[0] if "." in key else ""
            if head != section and head:
                lines.append("")
                section = head
            lines.append(f"{key} = {_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"

    def overrides(self) -> dict:
        return {k: self.values[k] for k in self.explicit}

    def as_dict(self) -> dict:
        return {k: (list(map(list, v)) if isinstance(v, tuple) and v and isinstance(v[0], tuple)
                    else list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}


def _validate(key: str, value, line: int | None) -> None:
    spec = SCHEMA[key]
    if not spec.check(value):
        raise ConfigError(f"{key} = {_fmt(value)} out of range (must be {spec.rule})", line=line)


def _cross_check(cfg: PipelineConfig, lines: dict) -> None:
    if cfg["problem"] == "burgers":
        if cfg["layout.bc"] != PERIODIC:
            raise ConfigError("problem = burgers needs layout.bc = periodic", line=lines.get("layout.bc"))
        if cfg["coupling.formulation"] != "constrained_residual":
            raise ConfigError("problem = burgers needs coupling.formulation = constrained_residual",
                              line=lines.get("coupling.formulation"))
        if cfg["train.dt"] > cfg["train.t_final"]:
            raise ConfigError("train.dt must not exceed train.t_final", line=lines.get("train.dt"))
    elif cfg["layout.bc"] != DIRICHLET:
        raise ConfigError("problem = poisson needs layout.bc = dirichlet_zero", line=lines.get("layout.bc"))
    if cfg["coupling.formulation"] == STRONG and not cfg["basis.port_split"]:
        raise ConfigError("strong_condensation needs basis.port_split = true",
                          line=lines.get("basis.port_split"))


def parse_config(text: str, *, env: dict | None = None) -> PipelineConfig:
    """Parse and validate; ``env`` (e.g. ``os.environ``) may override the seed."""
    values = {k: spec.default for k, spec in SCHEMA.items()}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", line=lineno)
        if not value:
            raise ConfigError(f"missing value for {key!r}", line=lineno)
        try:
            parsed = SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line=lineno) from None
        _validate(key, parsed, lineno)
        values[key] = parsed
        seen[key] = lineno
    if env and env.get(SEED_ENV):
        try:
            seed = _int(env[SEED_ENV].strip())
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}: {exc}") from None
        _validate("train.seed", seed, None)
        values["train.seed"] = seed
    cfg = PipelineConfig(values, frozenset(seen))
    _cross_check(cfg, seen)
    return cfg


def load_config(path, *, env: dict | None = None) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, env=os.environ if env is None else env)
