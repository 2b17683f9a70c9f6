"""Key-value configuration files.

One ``key = value`` pair per line; ``#`` starts a comment.  Dotted keys
group per-graph settings, e.g. ``graph.roads.edges = roads.txt``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .gibbs import SamplerConfig

__all__ = ["ConfigError", "parse_kv", "FitConfig", "StructuralSpec", "load_config", "WORKERS_ENV"]

WORKERS_ENV = "GSBART_WORKERS"
MODELS = ("normal", "count", "classification")


class ConfigError(ValueError):
    """Invalid configuration value or key."""


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class StructuralSpec:
    """A structural graph: edge-list file, per-row vertex source and arborescence count."""

    label: str
    edges: str
    bins: str  # CSV column name, or path of a row->vertex file
    M: int = 5


@dataclass
class FitConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: str = "normal"
    chain_bins: int = 100
    feature_bins: dict = field(default_factory=dict)
    structural: list = field(default_factory=list)
    test_fraction: float = 0.2
    workers: int = 1

    def validate(self):
        try:
            self.sampler.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.chain_bins < 2 or any(b < 2 for b in self.feature_bins.values()):
            raise ConfigError("chain bin counts must be at least 2")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for s in self.structural:
            if s.M < 1:
                raise ConfigError(f"graph {s.label}: M must be at least 1")
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self.sampler, f.name) for f in fields(SamplerConfig)}
        d.update(model=self.model, chain_bins=self.chain_bins, feature_bins=dict(self.feature_bins),
                 structural=[vars(s).copy() for s in self.structural],
                 test_fraction=self.test_fraction, workers=self.workers)
        return d


_SAMPLER_KEYS = {f.name: f.type for f in fields(SamplerConfig)}
_ALIASES = {"T": "n_trees", "N": "n_sweeps", "trees": "n_trees", "sweeps": "n_sweeps"}


def _convert(key, value, kind):
    try:
        return int(value) if kind in ("int", int) else float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None


def config_from_dict(kv: dict[str, str], base_dir: Path | None = None) -> FitConfig:
    cfg = FitConfig()
    env = os.environ.get(WORKERS_ENV)
    if env:
        cfg.workers = _convert(WORKERS_ENV, env, "int")
    graphs: dict[str, dict] = {}
    for key, value in kv.items():
        name = _ALIASES.get(key, key)
        if name in _SAMPLER_KEYS:
            setattr(cfg.sampler, name, _convert(key, value, _SAMPLER_KEYS[name]))
        elif name == "model":
            cfg.model = value
        elif name == "chain_bins":
            cfg.chain_bins = _convert(key, value, "int")
        elif name == "test_fraction":
            cfg.test_fraction = _convert(key, value, "float")
        elif name == "workers":
            cfg.workers = _convert(key, value, "int")
        elif name.startswith("chain.") and name.endswith(".bins"):
            cfg.feature_bins[name[len("chain."):-len(".bins")]] = _convert(key, value, "int")
        elif name.startswith("graph.") and name.count(".") >= 2:
            label, attr = name[len("graph."):].rsplit(".", 1)
            if attr not in ("edges", "bins", "M"):
                raise ConfigError(f"unknown graph setting {key!r}")
            graphs.setdefault(label, {})[attr] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for label, spec in graphs.items():
        missing = {"edges", "bins"} - spec.keys()
        if missing:
            raise ConfigError(f"graph {label}: missing {', '.join(sorted(missing))}")
        edges, bins = spec["edges"], spec["bins"]
        if base_dir is not None:
            if not Path(edges).is_absolute():
                edges = str(base_dir / edges)
            if (base_dir / bins).is_file():
                bins = str(base_dir / bins)
        cfg.structural.append(StructuralSpec(label, edges, bins,
                                             _convert(f"graph.{label}.M", spec.get("M", "5"), "int")))
    return cfg.validate()


def load_config(path=None) -> FitConfig:
    """Read a config file; without a path, defaults plus the environment."""
    if path is None:
        return config_from_dict({})
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return config_from_dict(parse_kv(p.read_text(), str(p)), p.parent)
