"""Experiment configuration: dataclasses plus a sectioned ``key = value`` file format.

A config file looks like::

    [run]
    m = 8
    K = 1000
    seed = 0

    [scheme]
    name = partial
    tau = 4
    eta = 0.05

    [objective]
    kind = quadratic
    d = 16
    curvature = 1.0, 2.0, 0.5, 1.5
    noise = 1.0

Every key has a default (see the dataclasses below); unknown sections or
keys are rejected.  Lists are comma separated.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import rng as rngmod
from .errors import ConfigError


def _tuple_of(kind):
    def parse(text):
        text = text.strip()
        if not text:
            return ()
        return tuple(kind(tok.strip()) for tok in text.split(","))

    return parse


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_str(text):
    text = text.strip()
    return None if text in ("", "none", "None") else text


def _parse_int(text):
    # Accept "1e4"-style integers but reject fractional values.
    value = float(text) if any(c in text for c in ".eE") else int(text)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"not an integer: {text!r}")
        value = int(value)
    return value


def _opt(default, parse=None):
    return field(default=default, metadata={"parse": parse} if parse else {})


@dataclass(frozen=True)
class RunSection:
    m: int = 4
    K: int = 100
    seed: int = 0
    repetitions: int = 1


@dataclass(frozen=True)
class SchemeConfig:
    """Averaging scheme and local optimizer.

    ``milestones`` are iteration numbers at which the learning rate is
    multiplied by ``decay``; ``warmup_iters`` ramps it linearly from
    ``eta / warmup_iters`` up to ``eta``.
    """

    name: str = "partial"
    tau: int = 4
    partition: str = "contiguous"
    eta: float = 0.05
    momentum: float = 0.0
    milestones: tuple = _opt((), _tuple_of(int))
    decay: float = 0.1
    warmup_iters: int = 0
    batch_size: int = 1


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "quadratic"
    d: int = 10
    curvature: tuple = _opt((1.0,), _tuple_of(float))
    noise: tuple = _opt((0.0,), _tuple_of(float))
    shift_scale: float = 0.0
    init_scale: float = 1.0
    l2: float = 0.0
    hidden: tuple = _opt((8,), _tuple_of(int))
    bias: bool = True


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: str | None = _opt(None, _optional_str)
    n_samples: int = 400
    num_features: int = 5
    num_classes: int = 2
    split: str = "iid"
    alpha: float = 1.0
    min_samples: int = 1
    max_retries: int = 100


@dataclass(frozen=True)
class ParticipationConfig:
    """Partial device participation.

    ``reselect_every`` is measured in communication rounds and applies to the
    partial scheme; the full-averaging schemes reselect every round.  The
    averaging interval of the partial scheme is stretched by
    ``interval_stretch`` whenever ``active_ratio < 1``.
    """

    active_ratio: float = 1.0
    reselect_every: int = 10
    redistribution: str = "handoff"
    interval_stretch: float = 1.1


@dataclass(frozen=True)
class MetricsConfig:
    eval_every: int = 1
    output_dir: str | None = _opt(None, _optional_str)


@dataclass(frozen=True)
class SimConfig:
    run: RunSection = field(default_factory=RunSection)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    data: DataConfig = field(default_factory=DataConfig)
    participation: ParticipationConfig = field(default_factory=ParticipationConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    # Short accessors for the most used fields.
    @property
    def m(self) -> int:
        return self.run.m

    @property
    def K(self) -> int:
        return self.run.K

    @property
    def seed(self) -> int:
        return self.run.seed

    def replace(self, **sections) -> "SimConfig":
        """Return a copy with fields replaced, e.g. ``replace(scheme={"tau": 2})``."""
        updates = {}
        for name, changes in sections.items():
            current = getattr(self, name)
            updates[name] = dataclasses.replace(current, **changes) if isinstance(changes, dict) else changes
        return dataclasses.replace(self, **updates)

    def effective(self) -> "SimConfig":
        """Normalize implied values (``sync`` always runs with ``tau = 1``)."""
        if self.scheme.name == "sync" and self.scheme.tau != 1:
            return self.replace(scheme={"tau": 1})
        return self

    def validate(self) -> "SimConfig":
        _validate(self)
        return self

    def to_ini(self) -> str:
        lines = []
        for section in dataclasses.fields(self):
            sub = getattr(self, section.name)
            lines.append(f"[{section.name}]")
            for f in dataclasses.fields(sub):
                lines.append(f"{f.name} = {_render(getattr(sub, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """Hash of everything except seed, repetitions and output location."""
        base = self.replace(run={"seed": 0, "repetitions": 1}, metrics={"output_dir": None})
        return hashlib.sha256(base.to_ini().encode()).hexdigest()


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(SimConfig)}


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parser_for(f: dataclasses.Field, default):
    if "parse" in f.metadata:
        return f.metadata["parse"]
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return _parse_int
    if isinstance(default, float):
        return float
    return str


def _split_override(item: str) -> tuple[str, str, str]:
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    lhs, value = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section.strip(), key.strip(), value.strip()


def parse_config(text: str, overrides=(), source: str = "<config>") -> SimConfig:
    """Parse config text, apply ``section.key=value`` overrides and validate."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep "K" distinct from "k"
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for item in overrides:
        section, key, value = _split_override(item)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    built = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section; expected one of {sorted(SECTIONS)}", key=section)
    for name, factory in SECTIONS.items():
        default = factory()
        fields = {f.name: f for f in dataclasses.fields(default)}
        values = {}
        if cp.has_section(name):
            for key, raw in cp.items(name):
                if key not in fields:
                    raise ConfigError(f"unknown key; expected one of {sorted(fields)}", key=f"{name}.{key}")
                parse = _parser_for(fields[key], getattr(default, key))
                try:
                    values[key] = parse(raw)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"cannot parse {raw!r} ({exc})", key=f"{name}.{key}") from None
        built[name] = dataclasses.replace(default, **values)
    return SimConfig(**built).effective().validate()


def load_config(path, overrides=()) -> SimConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from None
    return parse_config(text, overrides, source=str(p))


def _require(cond, key, message):
    if not cond:
        raise ConfigError(message, key=key)


def _validate(cfg: SimConfig) -> None:
    r, s, o, d, p, mt = cfg.run, cfg.scheme, cfg.objective, cfg.data, cfg.participation, cfg.metrics
    _require(r.m >= 1, "run.m", "must be >= 1")
    _require(r.K >= 1, "run.K", "must be >= 1")
    _require(r.repetitions >= 1, "run.repetitions", "must be >= 1")
    try:
        rngmod.check_seed(r.seed)
    except ValueError as exc:
        raise ConfigError(str(exc), key="run.seed") from None
    _require(s.name in ("sync", "periodic", "partial"), "scheme.name", "must be sync, periodic or partial")
    _require(s.tau >= 1, "scheme.tau", "must be >= 1")
    _require(s.name != "sync" or s.tau == 1, "scheme.tau", "sync runs with tau = 1")
    _require(s.partition in ("contiguous", "strided"), "scheme.partition", "must be contiguous or strided")
    _require(math.isfinite(s.eta) and s.eta > 0, "scheme.eta", "must be positive")
    _require(0.0 <= s.momentum < 1.0, "scheme.momentum", "must lie in [0, 1)")
    _require(s.decay > 0, "scheme.decay", "must be positive")
    _require(s.warmup_iters >= 0, "scheme.warmup_iters", "must be >= 0")
    _require(all(mi >= 1 for mi in s.milestones), "scheme.milestones", "must be positive iterations")
    _require(s.batch_size >= 1, "scheme.batch_size", "must be >= 1")
    _require(o.kind in ("quadratic", "logistic", "mlp"), "objective.kind", "must be quadratic, logistic or mlp")
    if o.kind == "quadratic":
        _require(o.d >= 1, "objective.d", "must be >= 1")
        _require(len(o.curvature) >= 1 and all(c > 0 for c in o.curvature), "objective.curvature",
                 "must be a non-empty list of positive values")
        _require(len(o.noise) >= 1 and all(n >= 0 for n in o.noise), "objective.noise",
                 "must be a non-empty list of nonnegative values")
        _require(o.shift_scale >= 0, "objective.shift_scale", "must be >= 0")
        if len(o.curvature) > 1:
            _require(len(o.curvature) <= o.d, "objective.curvature", "more partitions than coordinates")
        if len(o.noise) > 1 and len(o.curvature) > 1:
            _require(len(o.noise) == len(o.curvature), "objective.noise", "must match curvature length")
    _require(o.l2 >= 0, "objective.l2", "must be >= 0")
    _require(o.init_scale >= 0, "objective.init_scale", "must be >= 0")
    _require(all(h >= 1 for h in o.hidden), "objective.hidden", "layer widths must be >= 1")
    _require(o.kind != "mlp" or len(o.hidden) >= 1, "objective.hidden", "needs at least one hidden layer")
    _require(d.source in ("synthetic", "csv"), "data.source", "must be synthetic or csv")
    if o.kind != "quadratic" and d.source == "csv":
        _require(d.path is not None, "data.path", "required when data.source = csv")
        _require(Path(d.path).is_file(), "data.path", f"file not found: {d.path}")
    _require(d.split in ("iid", "dirichlet"), "data.split", "must be iid or dirichlet")
    _require(d.alpha > 0, "data.alpha", "must be positive")
    _require(d.n_samples >= 1, "data.n_samples", "must be >= 1")
    _require(d.num_classes >= 2, "data.num_classes", "must be >= 2")
    _require(d.num_features >= 1, "data.num_features", "must be >= 1")
    _require(d.min_samples >= 0, "data.min_samples", "must be >= 0")
    _require(0.0 < p.active_ratio <= 1.0, "participation.active_ratio", "must lie in (0, 1]")
    _require(p.reselect_every >= 1, "participation.reselect_every", "must be >= 1")
    _require(p.redistribution in ("average", "handoff"), "participation.redistribution",
             "must be average or handoff")
    _require(p.interval_stretch >= 1.0, "participation.interval_stretch", "must be >= 1")
    _require(mt.eval_every >= 1, "metrics.eval_every", "must be >= 1")
