"""Hadamard-derived binary illumination patterns and target masks.

A Sylvester Hadamard matrix of order ``M = side**2`` is built, and each of its
columns is reshaped column-major into a ``side x side`` sign pattern ``H_k``.
A modulator can only show 0/1 values, so every sign pattern is displayed as
the pair

    P_k     = (J + H_k) / 2
    P_{k+M} = J - P_k

with ``J`` the all-ones matrix. Pattern indices are 1-based throughout the
public interface (k = 1..2M).
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from ._validation import check_binary_matrix, check_fraction, is_power_of_two
from .netpbm import write_pgm

ORDERINGS = ("walsh", "natural")

BITSET_MAGIC = b"SPIP"
BITSET_VERSION = 1
_BITSET_HEADER = struct.Struct("<4sHHI")


@dataclass(frozen=True, eq=False)
class PatternSet:
    """Ordered basis of complementary binary patterns.

    Attributes
    ----------
    side : int
        Pixels per image edge.
    patterns : ndarray of uint8, shape (2M, side, side)
        ``patterns[k - 1]`` is pattern ``k``; the first M are originals and
        the last M their complements.
    order_map : ndarray of int, shape (M,)
        1-based original-pattern indices in significance order.
    active : ndarray of int
        1-based indices of the patterns used for reconstruction.
    """

    side: int
    patterns: np.ndarray = field(repr=False)
    order_map: np.ndarray = field(repr=False)
    active: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.side * self.side

    @property
    def subset_size(self) -> int:
        return len(self.active)

    @property
    def pairs(self) -> int:
        return len(self.active) // 2

    def pattern(self, k: int) -> np.ndarray:
        """Return pattern ``k`` (1-based)."""
        if not 1 <= k <= 2 * self.M:
            raise ValueError(f"pattern index {k} outside 1..{2 * self.M}")
        return self.patterns[k - 1]

    def sign_pattern(self, k: int) -> np.ndarray:
        """Return the +-1 Hadamard pattern ``2 P_k - J`` for an original k <= M."""
        if not 1 <= k <= self.M:
            raise ValueError(f"sign patterns exist only for originals 1..{self.M}")
        return 2 * self.patterns[k - 1].astype(np.int8) - 1

    def active_matrix(self, dtype=np.float64) -> np.ndarray:
        """Active patterns flattened row-major into an ``(N, M)`` matrix."""
        return self.patterns[self.active - 1].reshape(len(self.active), self.M).astype(dtype)


@dataclass(frozen=True)
class TargetProfile:
    """Binary transmission mask ``chi`` with an overall transmittance ``eta_e``."""

    chi: np.ndarray = field(repr=False)
    eta_e: float = 1.0

    def __post_init__(self):
        chi = check_binary_matrix(self.chi, "chi")
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "eta_e", check_fraction(self.eta_e, "eta_e"))

    @property
    def side(self) -> int:
        return self.chi.shape[0]

    @property
    def open_fraction(self) -> float:
        return float(self.chi.sum()) / self.chi.size

    def with_transmittance(self, eta_e: float) -> "TargetProfile":
        return replace(self, eta_e=eta_e)


def sign_changes(sign_patterns: np.ndarray) -> np.ndarray:
    """Count sign flips along rows plus along columns of each 2D pattern."""
    rows = np.count_nonzero(np.diff(sign_patterns, axis=-1), axis=(-2, -1))
    cols = np.count_nonzero(np.diff(sign_patterns, axis=-2), axis=(-2, -1))
    return rows + cols


def _natural_sign_patterns(side: int) -> np.ndarray:
    M = side * side
    H = hadamard(M, dtype=np.int8)
    # column k, reshaped column-major, is sign pattern k+1
    return H.T.reshape(M, side, side).transpose(0, 2, 1)


def build_pattern_set(side: int, ordering="walsh") -> PatternSet:
    """Build the full 2M-pattern complementary Hadamard basis.

    Parameters
    ----------
    side : int
        Image edge length; must be a power of two, at least 2.
    ordering : {"walsh", "natural"} or array-like or path
        Significance order of the originals. ``"walsh"`` sorts by the total
        number of sign changes along rows and columns (ties keep natural
        order), ``"natural"`` keeps Sylvester order. An array gives an
        explicit 1-based permutation and a path loads one from CSV.
    """
    if isinstance(side, bool) or not isinstance(side, (int, np.integer)):
        raise ValueError(f"side must be an integer, got {side!r}")
    if side < 2 or not is_power_of_two(int(side)):
        raise ValueError(f"side must be a power of two >= 2, got {side}")
    side = int(side)
    M = side * side
    signs = _natural_sign_patterns(side)
    originals = ((signs + 1) // 2).astype(np.uint8)
    patterns = np.concatenate([originals, 1 - originals])
    patterns.setflags(write=False)

    if isinstance(ordering, str) and ordering in ORDERINGS:
        if ordering == "walsh":
            order = np.argsort(sign_changes(signs), kind="stable") + 1
        else:
            order = np.arange(1, M + 1)
    elif isinstance(ordering, (str, os.PathLike)):
        order = read_order_csv(ordering)
    else:
        order = np.asarray(ordering, dtype=np.int64)
    order = _check_permutation(order, M)
    order.setflags(write=False)

    active = np.concatenate([order, order + M])
    active.setflags(write=False)
    return PatternSet(side=side, patterns=patterns, order_map=order, active=active)


def _check_permutation(order: np.ndarray, M: int) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64).ravel()
    if order.shape != (M,) or not np.array_equal(np.sort(order), np.arange(1, M + 1)):
        raise ValueError(f"ordering must be a permutation of 1..{M}")
    return order.copy()


def select_subset(ps: PatternSet, pairs: int) -> PatternSet:
    """Keep the first ``pairs`` originals in significance order plus their complements."""
    if not 1 <= pairs <= ps.M:
        raise ValueError(f"pairs must be in 1..{ps.M}, got {pairs}")
    chosen = ps.order_map[:pairs]
    active = np.concatenate([chosen, chosen + ps.M])
    active.setflags(write=False)
    return replace(ps, active=active)


def overlap_fraction(ps: PatternSet, k: int, t: TargetProfile) -> float:
    """Fraction of the M pixels that are both lit by pattern ``k`` and open in the target."""
    if t.chi.shape != (ps.side, ps.side):
        raise ValueError(f"target shape {t.chi.shape} does not match pattern side {ps.side}")
    if k not in set(ps.active.tolist()):
        raise ValueError(f"pattern {k} is not active in this pattern set")
    return float(np.sum(ps.pattern(k) * t.chi, dtype=np.int64)) / ps.M


def overlap_fractions(ps: PatternSet, t: TargetProfile) -> np.ndarray:
    """Vectorised :func:`overlap_fraction` over all active patterns, in active order."""
    if t.chi.shape != (ps.side, ps.side):
        raise ValueError(f"target shape {t.chi.shape} does not match pattern side {ps.side}")
    lit = ps.patterns[ps.active - 1].reshape(len(ps.active), ps.M).astype(np.int64)
    return lit @ t.chi.ravel().astype(np.int64) / ps.M


# Flying-wing outline in unit coordinates (x right, y down), nose at top. The
# small y offset keeps pixel centres off the edges so the raster is mirror
# symmetric.
_STEALTH_OUTLINE = (
    np.array(
        [
            (16, 4), (29, 17), (27, 20), (23, 18), (20, 21),
            (16, 18), (12, 21), (9, 18), (5, 20), (3, 17),
        ],
        dtype=float,
    )
    + (0.0, 0.01)
) / 32.0


def polygon_mask(side: int, outline: np.ndarray) -> np.ndarray:
    """Rasterise a closed polygon (unit coordinates) at pixel centres, even-odd rule."""
    y, x = (np.mgrid[0:side, 0:side] + 0.5) / side
    inside = np.zeros((side, side), dtype=bool)
    n = len(outline)
    for i in range(n):
        x1, y1 = outline[i]
        x2, y2 = outline[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        x_at = (x2 - x1) * (y - y1) / (y2 - y1) + x1
        inside ^= crosses & (x < x_at)
    return inside.astype(np.uint8)


def stealth_target(side: int = 32, eta_e: float = 1.0) -> TargetProfile:
    """Stealth-aircraft shaped aperture used as the default test object."""
    return TargetProfile(polygon_mask(side, _STEALTH_OUTLINE), eta_e)


# -- export / import -------------------------------------------------------------


def write_order_csv(path, order_map: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "k"])
        for rank, k in enumerate(order_map, start=1):
            writer.writerow([rank, int(k)])


def read_order_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "k" not in rows[0]:
        raise ValueError(f"{path}: expected a CSV with a 'k' column")
    rows.sort(key=lambda r: int(r.get("rank", 0)))
    return np.array([int(r["k"]) for r in rows], dtype=np.int64)


def write_bitset(path, ps: PatternSet, indices=None) -> None:
    """Pack patterns row-major, one bit per pixel, each pattern padded to whole bytes.

    Layout: 12-byte little-endian header (magic ``SPIP``, u16 side, u16
    version, u32 count) followed by ``count`` records of ``ceil(M/8)`` bytes,
    most significant bit first.
    """
    indices = ps.active if indices is None else np.asarray(indices)
    bits = ps.patterns[indices - 1].reshape(len(indices), ps.M)
    packed = np.packbits(bits, axis=1)
    with open(path, "wb") as fh:
        fh.write(_BITSET_HEADER.pack(BITSET_MAGIC, ps.side, BITSET_VERSION, len(indices)))
        fh.write(packed.tobytes())


def read_bitset(path) -> np.ndarray:
    """Read a bitset file back into a ``(count, side, side)`` uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _BITSET_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, side, version, count = _BITSET_HEADER.unpack_from(data)
    if magic != BITSET_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != BITSET_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    M = side * side
    stride = (M + 7) // 8
    body = np.frombuffer(data, dtype=np.uint8, offset=_BITSET_HEADER.size)
    if body.size != count * stride:
        raise ValueError(f"{path}: expected {count * stride} payload bytes, found {body.size}")
    bits = np.unpackbits(body.reshape(count, stride), axis=1)[:, :M]
    return bits.reshape(count, side, side)


def export_pgm(directory, ps: PatternSet, indices=None) -> list[Path]:
    """Write one 0/255 PGM per pattern, named ``pattern_<k>.pgm``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    indices = ps.active if indices is None else np.asarray(indices)
    width = len(str(2 * ps.M))
    paths = []
    for k in indices:
        path = directory / f"pattern_{int(k):0{width}d}.pgm"
        write_pgm(path, ps.pattern(int(k)) * 255)
        paths.append(path)
    return paths
