"""Line-oriented experiment config: ``section.key = value`` with ``#`` comments.

Sections map onto the settings dataclasses; ``metrics.thresholds``,
``run.seeds``, ``sweep.param`` and ``sweep.values`` take comma-separated
lists. Anything unknown is rejected with its line number.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from fedrare.defense import DefenseConfig
from fedrare.errors import ConfigError
from fedrare.experiment import DataConfig, ModelConfig, Settings, ThreatConfig
from fedrare.federation import FederationConfig

SECTIONS = {
    "federation": FederationConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "attack": ThreatConfig,
    "defense": DefenseConfig,
}
# the run seed lives in run.seeds, never in the federation section
_HIDDEN = {"federation.seed"}
_EXTRA = ("metrics.thresholds", "run.seeds", "sweep.param", "sweep.values")


@dataclass(frozen=True)
class ExperimentConfig:
    settings: Settings
    seeds: tuple = (0,)
    sweep_param: str | None = None
    sweep_values: tuple = ()

    def variants(self):
        """``(label, settings)`` per sweep value; a single unlabeled entry without a sweep."""
        if self.sweep_param is None:
            return [(None, self.settings)]
        return [
            (f"{self.sweep_param}={_fmt(v)}", with_value(self.settings, self.sweep_param, v))
            for v in self.sweep_values
        ]

    def digest(self):
        return hashlib.sha256(resolved_text(self).encode()).hexdigest()[:12]


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


def _convert(raw, type_name, path, line):
    optional = "None" in type_name
    base = type_name.replace("| None", "").strip()
    if optional and raw.lower() == "none":
        return None
    try:
        if base == "bool":
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "tuple":
            return tuple(float(x) for x in _split(raw))
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {base}", path, line) from None
    return raw


def _split(raw):
    parts = [p.strip() for p in raw.split(",")]
    if not all(parts):
        raise ValueError
    return parts


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _key_type(path):
    section, _, key = path.partition(".")
    if path in _HIDDEN or section not in SECTIONS:
        return None
    return _field_types(SECTIONS[section]).get(key)


def with_value(settings: Settings, path, value) -> Settings:
    section, _, key = path.partition(".")
    if section == "metrics":
        return replace(settings, thresholds=tuple(value))
    return replace(settings, **{section: replace(getattr(settings, section), **{key: value})})


def parse(text) -> ExperimentConfig:
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", None, no)
        key, _, val = (s.strip() for s in line.partition("="))
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key, no)
        if _key_type(key) is None and key not in _EXTRA:
            raise ConfigError("unknown key", key, no)
        if not val and _key_type(key) != "str":
            raise ConfigError("missing value", key, no)
        values[key], lines[key] = val, no
    try:
        return _build(values, lines)
    except ConfigError as err:
        if err.line is None and err.path in lines:
            err.line = lines[err.path]
        raise


def _build(values, lines):
    sections = {name: {} for name in SECTIONS}
    for key, raw in values.items():
        if key in _EXTRA:
            continue
        section, _, name = key.partition(".")
        sections[section][name] = _convert(raw, _key_type(key), key, lines[key])
    built = {name: cls(**sections[name]) for name, cls in SECTIONS.items()}
    kwargs = dict(built)
    if "metrics.thresholds" in values:
        kwargs["thresholds"] = _convert(values["metrics.thresholds"], "tuple", "metrics.thresholds", lines["metrics.thresholds"])
    settings = Settings(**kwargs)

    seeds = (0,)
    if "run.seeds" in values:
        try:
            seeds = tuple(int(s) for s in _split(values["run.seeds"]))
        except ValueError:
            raise ConfigError("seeds must be comma-separated integers", "run.seeds", lines["run.seeds"]) from None
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct", "run.seeds", lines["run.seeds"])

    param = values.get("sweep.param")
    sweep_vals = ()
    if (param is None) != ("sweep.values" not in values):
        missing = "sweep.values" if param is not None else "sweep.param"
        raise ConfigError("sweep needs both sweep.param and sweep.values", missing)
    if param is not None:
        type_name = "tuple" if param == "metrics.thresholds" else _key_type(param)
        if type_name is None:
            raise ConfigError(f"cannot sweep unknown key {param!r}", "sweep.param", lines["sweep.param"])
        try:
            raws = _split(values["sweep.values"])
        except ValueError:
            raise ConfigError("empty sweep value", "sweep.values", lines["sweep.values"]) from None
        sweep_vals = tuple(_convert(r, type_name, "sweep.values", lines["sweep.values"]) for r in raws)
        for v in sweep_vals:
            try:
                with_value(settings, param, v)
            except ConfigError as err:
                raise ConfigError(f"sweep value {_fmt(v)}: {err.args[0]}", "sweep.values", lines["sweep.values"]) from None
    return ExperimentConfig(settings, seeds, param, sweep_vals)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", str(path)) from None
    return parse(text)


def resolved_lines(cfg: ExperimentConfig):
    """Every setting with defaults filled in, in canonical order."""
    out = []
    for name in SECTIONS:
        obj = getattr(cfg.settings, name)
        for f in fields(obj):
            key = f"{name}.{f.name}"
            if key not in _HIDDEN:
                out.append(f"{key} = {_fmt(getattr(obj, f.name))}".rstrip())
    out.append(f"metrics.thresholds = {_fmt(tuple(cfg.settings.thresholds))}")
    out.append(f"run.seeds = {', '.join(str(s) for s in cfg.seeds)}")
    if cfg.sweep_param is not None:
        out.append(f"sweep.param = {cfg.sweep_param}")
        out.append(f"sweep.values = {_fmt(tuple(cfg.sweep_values))}")
    return out


def resolved_text(cfg: ExperimentConfig):
    return "\n".join(resolved_lines(cfg)) + "\n"
