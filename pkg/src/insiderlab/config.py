"""Flat ``section.key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every key must be known; an
unknown key, a duplicate or a malformed value is a ConfigError that names
the line. ``render`` writes a manifest that parses back to the same config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from insiderlab import csvio
from insiderlab.drift import KINDS, InsiderInfo
from insiderlab.market import MarketParams
from insiderlab.utility import MIN_MC_PATHS


class ConfigError(ValueError):
    pass


def _parse_eta(text):
    """``0.1`` or piecewise ``0:0.1;0.5:0.2`` (start:value pairs)."""
    if ":" not in text:
        return float(text)
    pieces = []
    for part in text.split(";"):
        start, value = part.split(":")
        pieces.append((float(start), float(value)))
    return tuple(pieces)


def _render_eta(value):
    if isinstance(value, tuple):
        return ";".join(f"{csvio.fmt(a)}:{csvio.fmt(b)}" for a, b in value)
    return csvio.fmt(value)


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _render_floats(values):
    return ",".join(csvio.fmt(float(v)) for v in values)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _int(text):
    return int(text)


# key -> (parser, renderer, default)
SCHEMA = {
    "model.r": (float, csvio.fmt, 0.02),
    "model.eta": (_parse_eta, _render_eta, 0.1),
    "model.xi": (float, csvio.fmt, 0.2),
    "model.T": (float, csvio.fmt, 1.0),
    "model.s0": (float, csvio.fmt, 1.0),
    "model.x0": (float, csvio.fmt, 1.0),
    "info.kind": (_choice(*KINDS), str, "interval"),
    "info.c1": (float, csvio.fmt, -1.0),
    "info.c2": (float, csvio.fmt, 1.0),
    "sim.n_paths": (_int, str, 2000),
    "sim.n_steps": (_int, str, 1000),
    "sim.seed": (_int, str, 1),
    "sim.delta_frac": (float, csvio.fmt, 1e-4),
    "sim.refinement": (_choice("geometric", "uniform"), str, "geometric"),
    "utility.gamma": (float, csvio.fmt, 0.0),
    "run.strategy": (_choice("bond", "merton", "insider"), str, "merton"),
    "run.epsilon_frac": (float, csvio.fmt, 0.05),
    "run.leverages": (_floats, _render_floats, (1.0, 2.0, 4.0, 8.0)),
    "run.schedule": (_floats, _render_floats, (1e-1, 1e-2, 1e-3, 1e-4)),
    "run.export_paths": (_int, str, 20),
    "run.drift_x": (_floats, _render_floats, (-3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0)),
    "run.drift_t": (_floats, _render_floats, (0.0, 0.5, 0.9, 0.99, 0.999)),
    "run.steps_per_level": (_int, str, 250),
    "run.arb_paths": (_int, str, 10_000),
    "run.arb_steps": (_int, str, 500),
    "run.seed_scan": (_int, str, 10_000),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: v[2] for k, v in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        self.values[key] = value

    def market(self) -> MarketParams:
        v = self.values
        return MarketParams(r=v["model.r"], eta=v["model.eta"], xi=v["model.xi"], T=v["model.T"],
                            s0=v["model.s0"], x0=v["model.x0"])

    def info(self) -> InsiderInfo:
        kind, T = self.values["info.kind"], self.values["model.T"]
        if kind == "exact":
            return InsiderInfo.exact(T)
        if kind == "union":
            return InsiderInfo.union(T)
        return InsiderInfo.interval(self.values["info.c1"], self.values["info.c2"], T)

    @property
    def delta(self):
        return self.values["sim.delta_frac"] * self.values["model.T"]

    def validate(self):
        v = self.values
        try:
            self.market()
            self.info()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if v["sim.n_paths"] < MIN_MC_PATHS:
            raise ConfigError(f"sim.n_paths must be at least {MIN_MC_PATHS}")
        if v["sim.n_steps"] < 1:
            raise ConfigError("sim.n_steps must be positive")
        if not 0 < v["sim.delta_frac"] < 1:
            raise ConfigError("sim.delta_frac must lie in (0, 1)")
        if not 0 <= v["utility.gamma"] <= 1:
            raise ConfigError("utility.gamma must lie in [0, 1]")
        if not 0 <= v["sim.seed"] < 1 << 64:
            raise ConfigError("sim.seed must be a non-negative 64-bit integer")
        if not all(0 < d < 1 for d in v["run.schedule"]) or not math.isfinite(sum(v["run.schedule"])):
            raise ConfigError("run.schedule entries must lie in (0, 1)")
        return self

    def render(self) -> str:
        return "".join(f"{k} = {SCHEMA[k][1](self.values[k])}\n" for k in SCHEMA)


def parse(text: str, source="<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = lineno
        try:
            cfg.values[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse(fh.read(), str(path))
