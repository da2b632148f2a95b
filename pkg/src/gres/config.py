"""Run configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Tuple

RANK_CRITERIA = ("pos", "neg", "pos_plus_neg", "random")


@dataclass
class SynthConfig:
    """Knobs for the synthetic colored-shapes corpus."""

    image_size: int = 64
    colors: Tuple[str, ...] = ("red", "green", "blue")
    shapes: Tuple[str, ...] = ("circle", "square", "triangle")
    n_groups: int = 200
    n_test_groups: int = 50
    N: int = 4
    min_size: int = 14
    max_size: int = 22
    max_distractors: int = 2

    def __post_init__(self):
        self.colors = tuple(self.colors)
        self.shapes = tuple(self.shapes)


@dataclass
class RunConfig:
    N: int = 4
    epochs: int = 40
    lr: float = 1e-3
    weight_decay: float = 1e-2
    grad_clip: float = 1.0  # max global grad norm; 0 disables
    image_size: int = 64
    C_l: int = 64
    C_v: int = 64
    m: float = 1.0
    lam: float = 1.0
    rank_criterion: str = "pos_plus_neg"
    use_tqm: bool = True
    use_hierarchizer: bool = True
    use_mirror: bool = True
    use_triplet: bool = True
    seed: int = 0
    # synthetic corpus (used by ``generate``)
    n_groups: int = 200
    n_test_groups: int = 50

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.m < 0:
            raise ValueError(f"margin m must be >= 0, got {self.m}")
        if self.grad_clip < 0:
            raise ValueError(f"grad_clip must be >= 0, got {self.grad_clip}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.rank_criterion not in RANK_CRITERIA:
            raise ValueError(
                f"rank_criterion must be one of {RANK_CRITERIA}, got {self.rank_criterion!r}"
            )
        if self.image_size % 4:
            raise ValueError("image_size must be divisible by the encoder stride 4")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def synth(self) -> SynthConfig:
        return SynthConfig(
            image_size=self.image_size,
            n_groups=self.n_groups,
            n_test_groups=self.n_test_groups,
            N=self.N,
        )


def valid_keys():
    return [f.name for f in fields(RunConfig)]


def _coerce(name, raw, typ):
    if typ in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {name!r}: cannot parse {raw!r} as bool")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(
                f"line {lineno}: unknown config key {key!r}; valid keys: {', '.join(valid_keys())}"
            )
        values[key] = _coerce(key, raw, types[key])
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(config: RunConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
