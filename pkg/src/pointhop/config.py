"""Run configuration: ``key = value`` files plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidInput
from .tree import TreeConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


@dataclass
class RunConfig:
    num_hops: int = 4
    k_per_hop: tuple = (32, 16, 16, 16)
    points_per_hop: tuple = (1024, 768, 512, 384)
    energy_threshold: float = 1e-4
    aggregations: tuple = ("mean", "max")
    drop_below_threshold: bool = False
    sparse_input: str = "scale"
    num_bins: int = 32
    ranking: str = "none"
    num_features: int = 0
    ce_variant: str = "label"
    ensemble: bool = False
    ensemble_rotations: int = 8
    rotation_axis: str = "z"
    input_points: int = 1024
    normalize: bool = True
    standardize: bool = True
    ridge: float = 1e-6
    val_fraction: float = 0.1
    seed: int = 0
    data: str = ""
    model: str = ""
    out: str = ""

    def tree_config(self) -> TreeConfig:
        return TreeConfig(
            self.num_hops,
            self.k_per_hop,
            self.points_per_hop,
            self.energy_threshold,
            self.aggregations,
            self.drop_below_threshold,
            self.sparse_input,
        )

    def validate(self) -> "RunConfig":
        self.tree_config()
        if self.ranking not in ("none", "cross_entropy", "energy"):
            raise InvalidInput(f"ranking must be none, cross_entropy or energy, got {self.ranking!r}")
        if self.ce_variant not in ("label", "majority"):
            raise InvalidInput(f"ce_variant must be label or majority, got {self.ce_variant!r}")
        if self.num_bins < 2:
            raise InvalidInput("num_bins must be >= 2")
        if self.num_features < 0:
            raise InvalidInput("num_features must be >= 0 (0 keeps all)")
        if self.ensemble_rotations < 1:
            raise InvalidInput("ensemble_rotations must be >= 1")
        if self.rotation_axis not in ("x", "y", "z"):
            raise InvalidInput("rotation_axis must be x, y or z")
        if self.input_points < 1:
            raise InvalidInput("input_points must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise InvalidInput("val_fraction must lie in [0, 1)")
        if self.seed < 0:
            raise InvalidInput("seed must be a non-negative integer")
        return self

    def set(self, key: str, value: str):
        """Assign one field from its text form; unknown keys are rejected."""
        key = key.strip()
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise InvalidInput(f"unknown config key {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                parsed = _bool(value)
            elif kind == "int":
                parsed = int(value)
            elif kind == "float":
                parsed = float(value)
            elif kind == "tuple":
                parsed = _names(value) if key == "aggregations" else _ints(value)
            else:
                parsed = value.strip()
        except ValueError as exc:
            raise InvalidInput(f"bad value for {key}: {exc}") from None
        setattr(self, key, parsed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            lines.append(f"{f.name} = {v}\n")
        return "".join(lines)


def parse_assignments(lines, source: str = "config") -> list:
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = RunConfig()
    if path:
        text = Path(path).read_text()
        for key, value in parse_assignments(text.splitlines(), str(path)):
            cfg.set(key, value)
    for key, value in parse_assignments(overrides, "--set"):
        cfg.set(key, value)
    return cfg.validate()
