"""Tiny grids and instances small enough for exhaustive checks."""
from __future__ import annotations

import numpy as np

from .core import PriorConfig, Shoe
from .generative import sample_prior
from .grid import CoarseMap, ContactSurface


def tiny_coarse_map(n_active=4, size=8, spacing=1) -> CoarseMap:
    """``size x size`` grid with ``n_active`` singleton regions on a lattice
    of pitch ``spacing`` in the middle (2x2 for four cells, 2x3 for six).

    Each region sits in its own ``spacing``-sized block, so lattice
    neighbours are adjacent in the coarse prior.
    """
    if not 1 <= n_active <= 9:
        raise ValueError("tiny maps hold 1..9 active cells")
    b = spacing
    c = (size // 2 - 1) // b
    order = [(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (1, 2), (2, 0), (2, 1), (2, 2)]
    reg = np.zeros((size, size), dtype=int)
    for k, (i, j) in enumerate(order[:n_active]):
        reg[(c + i) * b, (c + j) * b] = k + 1
    if reg.sum() != n_active * (n_active + 1) // 2:
        raise ValueError("grid too small for this layout")
    return CoarseMap(reg, n_regions=n_active, block=b)


def random_surface(rng, shape, p=0.5, shoe_id="") -> ContactSurface:
    return ContactSurface((rng.random(shape) < p).astype(np.uint8), shoe_id)


def random_tiny_instance(rng, max_active=6, max_n=3, size=8, prior=PriorConfig()):
    """Random ``(theta, shoe, coarse map)`` with accidentals reachable from
    the active cells."""
    cm = tiny_coarse_map(int(rng.integers(1, max_active + 1)), size)
    surf = random_surface(rng, cm.shape, shoe_id="tiny")
    n = int(rng.integers(1, max_n + 1))
    act = np.argwhere(cm.active)
    base = act[rng.integers(len(act), size=n)]
    cells = np.clip(base + rng.integers(-3, 4, size=(n, 2)), 0, size - 1)
    pts = cells + 1 - rng.random((n, 2))
    theta = sample_prior(rng, prior, cm)
    return theta, Shoe(surf, pts, "tiny"), cm
