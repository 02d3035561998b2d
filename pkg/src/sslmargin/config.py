"""Run configuration: typed, flat, and fully serializable.

Config files are TOML with at most one level of dotted keys::

    method = "marginmatch"
    epochs = 200
    seeds = [0, 1, 2]
    dataset.name = "two_moons"
    augment.strong_dropout_p = 0.2
    network.hidden = [32, 32]
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

METHODS = ("supervised", "pseudolabel", "fixmatch", "flexmatch", "marginmatch")
MEASURES = ("margin", "confidence", "entropy")
COMBINES = ("ema", "decay", "mean")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "two_moons"
    n: int = 1512
    n_classes: int = 2
    noise: float = 0.25
    labels_per_class: int = 4
    erroneous_frac: float = 0.05
    test_frac: float = 1.0 / 3.0
    label_noise: float = 0.0


@dataclass(frozen=True)
class AugmentConfig:
    weak_noise_sd: float = 0.05
    strong_noise_sd: float = 0.25
    strong_dropout_p: float = 0.2
    strong_scale_low: float = 0.7
    strong_scale_high: float = 1.3


@dataclass(frozen=True)
class NetworkConfig:
    hidden: Tuple[int, ...] = (32, 32)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "marginmatch"
    measure: str = "margin"
    combine: str = "ema"
    delta: float = 0.997
    tau: float = 0.95
    q: float = 0.95
    batch_size: int = 32
    ratio: int = 7
    lam: float = 1.0
    epochs: int = 200
    base_lr: float = 0.03
    momentum: float = 0.9
    total_steps: int = 0  # 0 means epochs * batches per epoch
    seed: int = 0
    normalize_sums: bool = True
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def validate(self) -> "TrainConfig":
        checks = [
            ("method", self.method in METHODS, f"must be one of {METHODS}"),
            ("measure", self.measure in MEASURES, f"must be one of {MEASURES}"),
            ("combine", self.combine in COMBINES, f"must be one of {COMBINES}"),
            ("delta", 0.0 < self.delta <= 1.0, "must lie in (0, 1]"),
            ("delta", self.combine != "decay" or self.delta < 1.0, "decay mode needs delta < 1"),
            ("tau", 0.0 < self.tau <= 1.0, "must lie in (0, 1]"),
            ("q", 0.0 < self.q <= 1.0, "must lie in (0, 1]"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("ratio", self.ratio >= 1, "must be >= 1"),
            ("lam", self.lam >= 0, "must be >= 0"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("base_lr", self.base_lr > 0, "must be > 0"),
            ("momentum", 0.0 <= self.momentum < 1.0, "must lie in [0, 1)"),
            ("total_steps", self.total_steps >= 0, "must be >= 0"),
            ("dataset.labels_per_class", self.dataset.labels_per_class >= 1, "must be >= 1"),
            ("dataset.erroneous_frac", 0.0 < self.dataset.erroneous_frac < 1.0, "must lie in (0, 1)"),
            ("dataset.test_frac", 0.0 < self.dataset.test_frac < 1.0, "must lie in (0, 1)"),
            ("dataset.label_noise", 0.0 <= self.dataset.label_noise < 1.0, "must lie in [0, 1)"),
            ("network.hidden", all(h >= 1 for h in self.network.hidden), "sizes must be >= 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)
        return self

    def to_flat(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _SECTIONS:
                for k, sub in asdict(v).items():
                    out[f"{f.name}.{k}"] = list(sub) if isinstance(sub, tuple) else sub
            else:
                out[f.name] = v
        return out

    def digest(self) -> str:
        flat = self.to_flat()
        flat.pop("seed")
        blob = json.dumps(flat, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]

    def with_value(self, key: str, value: Any) -> "TrainConfig":
        flat = self.to_flat()
        if key not in flat:
            raise ConfigError(key, "unknown key")
        flat[key] = value
        return config_from_flat(flat)


_SECTIONS = {"dataset": DatasetConfig, "augment": AugmentConfig, "network": NetworkConfig}


def _coerce(key: str, type_name: str, value):
    # field types are strings under postponed annotations
    if type_name.startswith("Tuple"):
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(key, "expected a list of integers")
        return tuple(value)
    if type_name == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true/false")
        return value
    if type_name == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
        return value
    if type_name == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or math.isnan(value):
            raise ConfigError(key, "expected a number")
        return float(value)
    if type_name == "str":
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value.lower()
    raise ConfigError(key, f"unsupported field type {type_name}")


def config_from_flat(flat: Dict[str, Any], require_method: bool = True) -> TrainConfig:
    """Build a validated :class:`TrainConfig` from dotted keys; unknown keys fail."""
    if require_method and "method" not in flat:
        raise ConfigError("method", "required key is missing")
    top = {f.name: f for f in fields(TrainConfig)}
    kwargs: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {s: {} for s in _SECTIONS}
    for key, value in flat.items():
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in _SECTIONS or "." in sub:
                raise ConfigError(key, "unknown key")
            sub_fields = {f.name: f for f in fields(_SECTIONS[section])}
            if sub not in sub_fields:
                raise ConfigError(key, "unknown key")
            sections[section][sub] = _coerce(key, sub_fields[sub].type, value)
        else:
            if key not in top or key in _SECTIONS:
                raise ConfigError(key, "unknown key")
            kwargs[key] = _coerce(key, top[key].type, value)
    for s, cls in _SECTIONS.items():
        kwargs[s] = cls(**sections[s])
    return TrainConfig(**kwargs).validate()


RUN_KEYS = {"seeds", "output_dir", "dump_ledger", "dump_decisions"}


@dataclass(frozen=True)
class RunSpec:
    config: TrainConfig
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    dump_ledger: bool = False
    dump_decisions: bool = False

    def for_seed(self, seed: int) -> TrainConfig:
        return replace(self.config, seed=int(seed))


def flatten(doc: Dict[str, Any]) -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                if isinstance(v, dict):
                    raise ConfigError(f"{key}.{sub}", "nesting deeper than one level")
                flat[f"{key}.{sub}"] = v
        else:
            flat[key] = value
    return flat


def parse_run_spec(text: str) -> RunSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from exc
    flat = flatten(doc)
    run_opts = {k: flat.pop(k) for k in list(flat) if k in RUN_KEYS}
    if "seed" in flat:
        if "seeds" in run_opts:
            raise ConfigError("seed", "give either seed or seeds, not both")
        run_opts["seeds"] = [flat.pop("seed")]
    seeds = run_opts.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds", "expected a non-empty list of integers")
    for key in ("dump_ledger", "dump_decisions"):
        if key in run_opts and not isinstance(run_opts[key], bool):
            raise ConfigError(key, "expected true/false")
    if "output_dir" in run_opts and not isinstance(run_opts["output_dir"], str):
        raise ConfigError("output_dir", "expected a string")
    return RunSpec(
        config=config_from_flat(flat),
        seeds=list(seeds),
        output_dir=run_opts.get("output_dir", "runs"),
        dump_ledger=run_opts.get("dump_ledger", False),
        dump_decisions=run_opts.get("dump_decisions", False),
    )


def load_run_spec(path: Path) -> RunSpec:
    return parse_run_spec(Path(path).read_text())


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_run_spec(cfg: TrainConfig, seeds: List[int], output_dir: str = "runs") -> str:
    """Render a config echo that :func:`parse_run_spec` reads back unchanged."""
    flat = cfg.to_flat()
    flat.pop("seed")
    lines = [f"seeds = {_toml_value(list(seeds))}", f"output_dir = {_toml_value(output_dir)}"]
    lines += [f"{k} = {_toml_value(v)}" for k, v in flat.items()]
    return "\n".join(lines) + "\n"
