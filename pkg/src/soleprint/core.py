"""Domain types shared by the model, the samplers and the evaluators."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .grid import N_SHAPES, ContactSurface, Kernel, KernelParams, kernel_from_params


class ImpossibleAssignmentError(ValueError):
    """An accidental has no reachable cell with positive weight."""

    def __init__(self, message, shoe=None, accidental=None):
        super().__init__(message)
        self.shoe = shoe
        self.accidental = accidental


class DegenerateModelError(ValueError):
    pass


@dataclass(frozen=True)
class PriorConfig:
    q_shape: float = 2.0
    q_rate: float = 2.0
    p_variance: float = 4.0
    w_precision_diag: float = 1.0
    w_precision_adj: float = 0.2
    phi_upper: float = 1.0


@dataclass(frozen=True, eq=False)
class GlobalParams:
    """Population-level parameters: score shape ``q``, coarse spatial
    weights ``w_E``, shape effects ``phi`` and kernel tier parameters."""

    q: float
    w_E: np.ndarray
    phi: np.ndarray
    kparams: KernelParams

    def __post_init__(self):
        w = np.asarray(self.w_E, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if not self.q > 0:
            raise ValueError("q must be positive")
        if not (w > 0).all():
            raise ValueError("coarse weights must be positive")
        if phi.shape != (N_SHAPES,) or phi.min() < 0 or phi.max() > 1:
            raise ValueError(f"phi must hold {N_SHAPES} values in [0, 1]")
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "w_E", w)
        object.__setattr__(self, "phi", phi)

    @property
    def log_w_E(self):
        return np.log(self.w_E)

    @cached_property
    def kernel(self) -> Kernel:
        return kernel_from_params(self.kparams)

    def replace(self, **changes):
        return replace(self, **changes)


_VARIANT_NAMES = {
    (True, True, True, True): "full",
    (False, True, True, True): "no-scores",
    (True, False, True, True): "no-kernel",
    (False, False, True, True): "no-scores-kernel",
    (True, True, False, True): "no-w",
    (True, True, True, False): "no-phi",
}


@dataclass(frozen=True)
class ModelVariant:
    """Which model components are switched on; ablations fix the others at one."""

    scores: bool = True
    kernel: bool = True
    w: bool = True
    phi: bool = True

    @property
    def name(self):
        flags = (self.scores, self.kernel, self.w, self.phi)
        return _VARIANT_NAMES.get(flags, "custom:" + "".join("1" if f else "0" for f in flags))

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        for flags, n in _VARIANT_NAMES.items():
            if n == name:
                return cls(*flags)
        if name.startswith("custom:") and len(name) == 11:
            return cls(*(c == "1" for c in name[7:]))
        raise ValueError(f"unknown model variant {name!r}; choose from {sorted(_VARIANT_NAMES.values())}")


FULL = ModelVariant()
VARIANTS = {name: ModelVariant(*flags) for flags, name in _VARIANT_NAMES.items()}


@dataclass(frozen=True, eq=False)
class EffectiveParams:
    """Parameters after an ablation has been applied."""

    q: float
    w_E: np.ndarray
    phi: np.ndarray
    kernel: Kernel
    scores: bool = True


def apply_variant(theta: GlobalParams, v: ModelVariant = FULL) -> EffectiveParams:
    if isinstance(theta, EffectiveParams):
        return theta
    return EffectiveParams(
        q=theta.q,
        w_E=theta.w_E if v.w else np.ones_like(theta.w_E),
        phi=theta.phi if v.phi else np.ones_like(theta.phi),
        kernel=theta.kernel if v.kernel else Kernel.identity(),
        scores=v.scores,
    )


@dataclass(frozen=True, eq=False)
class Shoe:
    """Contact surface plus accidental locations in ``(0, n1] x (0, n2]``."""

    surface: ContactSurface
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    shoe_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        n1, n2 = self.surface.shape
        if len(pts) and (pts.min() < 0 or (pts[:, 0] > n1).any() or (pts[:, 1] > n2).any()):
            raise ValueError(f"shoe {self.shoe_id!r}: accidentals must lie in [0, {n1}] x [0, {n2}]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if not self.shoe_id and self.surface.shoe_id:
            object.__setattr__(self, "shoe_id", self.surface.shoe_id)

    @property
    def n(self) -> int:
        return len(self.points)

    @cached_property
    def cells(self) -> np.ndarray:
        """0-based ``(i1, i2)`` cell of every accidental."""
        return np.maximum(np.ceil(self.points).astype(np.int64) - 1, 0)
