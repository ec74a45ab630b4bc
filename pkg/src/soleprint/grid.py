"""Grid geometry, contact surfaces, shape codes, coarse regions and the
tiered-cake kernel.

Arrays describing a sole are indexed ``[a1 - 1, a2 - 1]`` so that the
default grid has shape ``(100, 200)``: 100 columns across the sole and
200 rows from heel (``a2 = 1``) to toe (``a2 = 200``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

N1 = 100
N2 = 200
N_SHAPES = 32
N_TIERS = 4
REACH = 3
DEFAULT_N_REGIONS = 138
DEFAULT_ACTIVE_CELLS = 11475


class ParseError(ValueError):
    """Malformed mask or coarse-map file."""

    def __init__(self, message, line=None, column=None):
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class GridIndex:
    a1: int
    a2: int

    def __post_init__(self):
        if not (1 <= self.a1 <= N1 and 1 <= self.a2 <= N2):
            raise ValueError(f"grid index {(self.a1, self.a2)} out of bounds")

    @classmethod
    def from_point(cls, x1, x2):
        """Cell containing a continuous location; 0 is clamped into cell 1."""
        return cls(max(1, int(np.ceil(x1))), max(1, int(np.ceil(x2))))


@dataclass(frozen=True, eq=False)
class ContactSurface:
    """Binary contact mask of one shoe."""

    bits: np.ndarray
    shoe_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError("contact surface must be a 2-d array")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("contact surface entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self):
        return self.bits.shape

    def __getitem__(self, a):
        a1, a2 = a
        n1, n2 = self.bits.shape
        if 1 <= a1 <= n1 and 1 <= a2 <= n2:
            return int(self.bits[a1 - 1, a2 - 1])
        return 0

    @cached_property
    def shape_codes(self):
        return shape_code_field(self)


def shape_code(surface: ContactSurface, a) -> int:
    """5-bit code (1..32) of the contact pattern in the cross around ``a``.

    Bits are weighted 1, 2, 4, 8, 16 for the down, left, center, right and
    up neighbours; neighbours off the grid count as non-contact.
    """
    a1, a2 = (a.a1, a.a2) if isinstance(a, GridIndex) else a
    return (1 + surface[a1, a2 - 1] + 2 * surface[a1 - 1, a2]
            + 4 * surface[a1, a2] + 8 * surface[a1 + 1, a2]
            + 16 * surface[a1, a2 + 1])


def shape_code_field(surface) -> np.ndarray:
    """Shape codes of every cell, as an ``int8`` array shaped like the mask."""
    bits = surface.bits if isinstance(surface, ContactSurface) else np.asarray(surface)
    p = np.pad(bits.astype(np.int8), 1)
    down = p[1:-1, :-2]
    left = p[:-2, 1:-1]
    center = p[1:-1, 1:-1]
    right = p[2:, 1:-1]
    up = p[1:-1, 2:]
    return (1 + down + 2 * left + 4 * center + 8 * right + 16 * up).astype(np.int8)


@dataclass(frozen=True, eq=False)
class CoarseMap:
    """Piecewise-constant partition of the active set into coarse regions.

    ``region_of`` holds 0 for inactive cells and ``1..n_regions`` otherwise.
    ``block`` is the side of the square coarse blocks; adjacency is between
    regions whose blocks are 4-neighbours.
    """

    region_of: np.ndarray
    n_regions: int = DEFAULT_N_REGIONS
    block: int = 10
    adjacency: tuple = field(default=None)

    def __post_init__(self):
        reg = np.asarray(self.region_of).astype(np.int32)
        if reg.ndim != 2:
            raise ValueError("region map must be 2-d")
        if reg.min() < 0 or reg.max() > self.n_regions:
            raise ValueError(f"region ids must lie in 0..{self.n_regions}")
        present = np.unique(reg[reg > 0])
        if len(present) != self.n_regions:
            missing = sorted(set(range(1, self.n_regions + 1)) - set(present.tolist()))
            raise ValueError(f"regions never used: {missing[:10]}")
        reg.setflags(write=False)
        object.__setattr__(self, "region_of", reg)

        b = self.block
        home = {}
        i1, i2 = np.nonzero(reg)
        for r, c1, c2 in zip(reg[i1, i2], i1 // b, i2 // b):
            blk = home.setdefault(int(r), (int(c1), int(c2)))
            if blk != (c1, c2):
                raise ValueError(f"region {r} spans more than one {b}x{b} block")
        if self.adjacency is None:
            by_block = {}
            for r, blk in home.items():
                by_block.setdefault(blk, []).append(r)
            pairs = set()
            for (c1, c2), rs in by_block.items():
                for nb in ((c1 + 1, c2), (c1, c2 + 1)):
                    for r in rs:
                        for s in by_block.get(nb, ()):
                            pairs.add((min(r, s), max(r, s)))
            object.__setattr__(self, "adjacency", tuple(sorted(pairs)))

    @property
    def shape(self):
        return self.region_of.shape

    @cached_property
    def active(self) -> np.ndarray:
        return self.region_of > 0

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.region_of.ravel(), minlength=self.n_regions + 1)[1:]

    def precision(self, diag=1.0, adj=0.2) -> np.ndarray:
        """Prior precision of the log coarse weights."""
        P = np.eye(self.n_regions) * diag
        for r, s in self.adjacency:
            P[r - 1, s - 1] = P[s - 1, r - 1] = adj
        return P


@dataclass(frozen=True)
class KernelParams:
    p_h: np.ndarray
    p_v: np.ndarray

    def __post_init__(self):
        for name in ("p_h", "p_v"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (N_TIERS,) or not np.isfinite(v).all():
                raise ValueError(f"{name} must be {N_TIERS} finite reals")
            object.__setattr__(self, name, v)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Separable tiered-cake kernel on offsets ``{-3..3}^2``."""

    kappa_h: np.ndarray
    kappa_v: np.ndarray

    def weights(self) -> np.ndarray:
        """7x7 array, entry ``[di + 3, dj + 3]``."""
        return np.outer(_unfold(self.kappa_h), _unfold(self.kappa_v))

    @classmethod
    def identity(cls):
        e = np.array([1.0, 0.0, 0.0, 0.0])
        return cls(e, e.copy())


def _unfold(kappa):
    k = np.asarray(kappa)
    return np.concatenate([k[:0:-1], k])


def tier_kappa(p) -> np.ndarray:
    """Unimodal 1-d tier masses from unconstrained tier parameters."""
    p = np.asarray(p, dtype=float)
    t = np.exp(p - p.max())
    t /= t.sum()
    widths = 2 * np.arange(1, N_TIERS + 1) - 1
    return np.cumsum((t / widths)[::-1])[::-1]


def kernel_from_params(p: KernelParams) -> Kernel:
    return Kernel(tier_kappa(p.p_h), tier_kappa(p.p_v))


def kernel_weight(k: Kernel, di: int, dj: int) -> float:
    if abs(di) > REACH or abs(dj) > REACH:
        raise ValueError(f"offset {(di, dj)} outside the kernel support")
    return float(k.kappa_h[abs(di)] * k.kappa_v[abs(dj)])


# --- file formats ----------------------------------------------------------

def format_mask(surface: ContactSurface) -> str:
    bits = surface.bits
    if bits.shape != (N1, N2):
        raise ValueError(f"mask files hold {N1}x{N2} grids")
    lines = [f"CSMASK {N1} {N2}"]
    for a2 in range(N2, 0, -1):
        lines.append("".join("1" if b else "0" for b in bits[:, a2 - 1]))
    return "\n".join(lines) + "\n"


def parse_mask(text: str, shoe_id="") -> ContactSurface:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != f"CSMASK {N1} {N2}":
        raise ParseError(f"expected header 'CSMASK {N1} {N2}'", line=1)
    rows = lines[1:]
    if len(rows) != N2:
        raise ParseError(f"expected {N2} rows, found {len(rows)}", line=len(lines))
    bits = np.zeros((N1, N2), dtype=np.uint8)
    for k, row in enumerate(rows, start=1):
        if len(row) != N1:
            raise ParseError(f"expected {N1} characters, found {len(row)}", line=k + 1)
        for j, ch in enumerate(row, start=1):
            if ch not in "01":
                raise ParseError(f"unexpected character {ch!r}", line=k + 1, column=j)
        bits[:, N2 - k] = np.frombuffer(row.encode(), dtype=np.uint8) - ord("0")
    return ContactSurface(bits, shoe_id)


def load_mask(path, shoe_id=None) -> ContactSurface:
    path = Path(path)
    return parse_mask(path.read_text(), shoe_id if shoe_id is not None else path.stem)


def write_mask(surface: ContactSurface, path):
    Path(path).write_text(format_mask(surface))


def format_coarse(cm: CoarseMap) -> str:
    if cm.shape != (N1, N2) or cm.n_regions != DEFAULT_N_REGIONS:
        raise ValueError(f"coarse files hold {N1}x{N2} grids with {DEFAULT_N_REGIONS} regions")
    lines = [f"COARSE {N1} {N2} {DEFAULT_N_REGIONS}"]
    for a2 in range(N2, 0, -1):
        lines.append(" ".join(str(int(v)) for v in cm.region_of[:, a2 - 1]))
    return "\n".join(lines) + "\n"


def parse_coarse(text: str) -> CoarseMap:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = f"COARSE {N1} {N2} {DEFAULT_N_REGIONS}"
    if not lines or lines[0] != header:
        raise ParseError(f"expected header '{header}'", line=1)
    rows = lines[1:]
    if len(rows) != N2:
        raise ParseError(f"expected {N2} rows, found {len(rows)}", line=len(lines))
    reg = np.zeros((N1, N2), dtype=np.int32)
    for k, row in enumerate(rows, start=1):
        toks = row.split(" ")
        if len(toks) != N1:
            raise ParseError(f"expected {N1} integers, found {len(toks)}", line=k + 1)
        for j, tok in enumerate(toks, start=1):
            if not tok.isdigit() or int(tok) > DEFAULT_N_REGIONS:
                raise ParseError(f"invalid region id {tok!r}", line=k + 1, column=j)
        reg[:, N2 - k] = [int(t) for t in toks]
    try:
        return CoarseMap(reg)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_coarse(path) -> CoarseMap:
    return parse_coarse(Path(path).read_text())


def write_coarse(cm: CoarseMap, path):
    Path(path).write_text(format_coarse(cm))


# --- default active set ----------------------------------------------------

# block columns touched per block row, heel (a2 = 1..10) to toe
_BLOCK_WIDTHS = (5, 7, 7, 7, 7, 6, 6, 6, 6, 6, 7, 7, 8, 8, 8, 8, 8, 8, 7, 6)


def default_coarse_map(target_cells=DEFAULT_ACTIVE_CELLS) -> CoarseMap:
    """Sole-shaped synthetic active set on the 100x200 grid.

    Touches 138 of the 10x10 blocks, keeps a 3-cell margin to the grid edge
    so kernel-smoothed mass never leaves the grid, and is trimmed to exactly
    ``target_cells`` active cells.
    """
    lo = np.zeros(N2, dtype=int)
    hi = np.zeros(N2, dtype=int)
    for j, k in enumerate(_BLOCK_WIDTHS):
        c0 = (10 - k) // 2
        for a2 in range(10 * j + 1, 10 * j + 11):
            if REACH < a2 <= N2 - REACH:
                lo[a2 - 1] = max(REACH + 1, 10 * c0 + 1)
                hi[a2 - 1] = min(N1 - REACH, 10 * (c0 + k))
    rows = np.flatnonzero(hi > 0)
    total = int((hi[rows] - lo[rows] + 1).sum())
    if total < target_cells:
        raise ValueError("target exceeds the available sole area")
    # trim row ends, always leaving each end block at least one cell per row
    lo_floor = ((lo - 1) // 10) * 10 + 10
    hi_floor = ((hi - 1) // 10) * 10 + 1
    # rows nearest the heel and toe are trimmed first
    order = rows[np.argsort(-np.abs(rows - (N2 - 1) / 2), kind="stable")]
    side = 0
    while total > target_cells:
        progressed = False
        for r in order:
            if total == target_cells:
                break
            if side == 0 and lo[r] < lo_floor[r] and lo[r] < hi[r]:
                lo[r] += 1
            elif side == 1 and hi[r] > hi_floor[r] and hi[r] > lo[r]:
                hi[r] -= 1
            else:
                continue
            total -= 1
            progressed = True
        side ^= 1
        if not progressed and side == 0:
            raise ValueError("cannot reach the requested active-set size")
    active = np.zeros((N1, N2), dtype=bool)
    for r in rows:
        active[lo[r] - 1:hi[r], r] = True
    return coarse_from_active(active)


def coarse_from_active(active, block=10) -> CoarseMap:
    """Number the touched ``block x block`` tiles of an active set in
    heel-to-toe, left-to-right order."""
    active = np.asarray(active, dtype=bool)
    n1, n2 = active.shape
    reg = np.zeros((n1, n2), dtype=np.int32)
    rid = 0
    for c2 in range(0, n2, block):
        for c1 in range(0, n1, block):
            tile = active[c1:c1 + block, c2:c2 + block]
            if tile.any():
                rid += 1
                reg[c1:c1 + block, c2:c2 + block][tile] = rid
    return CoarseMap(reg, n_regions=rid, block=block)
