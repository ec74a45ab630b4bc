"""Run configuration: flat ``key = value`` files, defaults and a stable hash."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

from .core import VARIANTS, ModelVariant


@dataclass
class RunConfig:
    seed: int = 0
    # sampler
    iters: int = 30000
    warmup: int = 10000
    thin: int = 1
    variant: str = "full"
    # train/test split: a seeded permutation, one per split index
    n_train: int = 336
    n_test: int = 50
    split: int = 0
    # simulation
    n_shoes: int = 386
    median_count: int = 20
    mask_coverage: float = 0.6
    confine_to_active: bool = False
    # evaluation
    importance_samples: int = 1
    kde_restrict: bool = False
    # random match probability
    replicates: int = 10000
    radius: float = 3.0
    count_tolerance: int = 0
    match_mode: str = "cover"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.iters < 1 or self.thin < 1:
            raise ValueError("iters and thin must be positive")
        if not 0 <= self.warmup < self.iters:
            raise ValueError("need 0 <= warmup < iters")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be non-negative")
        if self.importance_samples < 1:
            raise ValueError("importance_samples must be at least 1")
        if self.radius < 0 or self.count_tolerance < 0:
            raise ValueError("radius and count_tolerance must be non-negative")

    @property
    def model_variant(self) -> ModelVariant:
        return ModelVariant.from_name(self.variant)

    def updated(self, **changes) -> "RunConfig":
        d = asdict(self)
        for k, v in changes.items():
            if v is None:
                continue
            if k not in d:
                raise KeyError(f"unknown config key {k!r}")
            d[k] = _coerce(k, v)
        return RunConfig(**d)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(asdict(self).items()))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key, value):
    t = _TYPES[key]
    if not isinstance(value, str):
        return value
    value = value.strip()
    if t in ("bool", bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if t in ("int", int):
        return int(value)
    if t in ("float", float):
        return float(value)
    return value


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in _TYPES:
            raise ValueError(f"config line {lineno}: unknown key {k!r}")
        try:
            out[k] = _coerce(k, v)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    return out


def load_config(path=None, **overrides) -> RunConfig:
    base = {}
    if path is not None:
        with open(path) as fh:
            base = parse_config(fh.read())
    return RunConfig().updated(**base).updated(**overrides)
