"""Region-based image SNR and the correlation-induced enhancement factor."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import astuple, dataclass, field, fields

import numpy as np
from scipy.ndimage import binary_dilation

from .reconstruction import ImageResult


@dataclass(frozen=True, eq=False)
class RegionSpec:
    target_mask: np.ndarray = field(repr=False)
    background_mask: np.ndarray = field(repr=False)
    guard: int = 0

    def __post_init__(self):
        t = np.asarray(self.target_mask, dtype=bool)
        b = np.asarray(self.background_mask, dtype=bool)
        if t.shape != b.shape or t.ndim != 2:
            raise ValueError("region masks must be 2D and of equal shape")
        if np.any(t & b):
            raise ValueError("target and background regions overlap")
        if not t.any() or not b.any():
            raise ValueError("both regions must contain at least one pixel")
        object.__setattr__(self, "target_mask", t)
        object.__setattr__(self, "background_mask", b)

    @classmethod
    def from_target(cls, chi, guard: int = 1) -> "RegionSpec":
        """Target = open pixels; background = closed pixels beyond a ``guard``-pixel band.

        The band uses 8-connectivity, so diagonal neighbours of the target are
        excluded too.
        """
        target = np.asarray(chi, dtype=bool)
        if guard > 0:
            grown = binary_dilation(target, structure=np.ones((3, 3), bool), iterations=guard)
        else:
            grown = target
        return cls(target, ~grown, guard)


def region_stats(img, r: RegionSpec) -> tuple[float, float, float, float]:
    """``(mu_T, sigma_T, mu_B, sigma_B)`` with population standard deviations."""
    g2 = img.g2 if isinstance(img, ImageResult) else np.asarray(img, dtype=float)
    if g2.shape != r.target_mask.shape:
        raise ValueError(f"image shape {g2.shape} does not match regions {r.target_mask.shape}")
    t, b = g2[r.target_mask], g2[r.background_mask]
    return float(t.mean()), float(t.std()), float(b.mean()), float(b.std())


def snr_from_stats(mu_t, sigma_t, mu_b, sigma_b) -> float:
    contrast = (mu_t - mu_b) ** 2
    spread = sigma_t + sigma_b
    if spread == 0:
        # noiseless image: infinite if there is any contrast at all
        return math.inf if contrast > 0 else 0.0
    return contrast / (2.0 * spread * spread)


def snr(img, r: RegionSpec) -> float:
    """``|mu_T - mu_B|^2 / (2 (sigma_T + sigma_B)^2)``; ``inf`` when both regions are flat."""
    return snr_from_stats(*region_stats(img, r))


def cef(snr_q: float, snr_c: float) -> float:
    """SNR_Q / SNR_C, NaN when the classical SNR is zero or either is not finite."""
    if snr_c == 0 or not (math.isfinite(snr_q) and math.isfinite(snr_c)):
        return math.nan
    return snr_q / snr_c


@dataclass(frozen=True)
class SchemeStats:
    snr: float
    mu_t: float
    sigma_t: float
    mu_b: float
    sigma_b: float

    @classmethod
    def of(cls, img, r: RegionSpec) -> "SchemeStats":
        stats = region_stats(img, r)
        return cls(snr_from_stats(*stats), *stats)


@dataclass(frozen=True)
class MetricsReport:
    """SNRs of both schemes for one simulated cell, plus their ratio."""

    classical: SchemeStats | None
    heralded: SchemeStats | None
    noise_level: float
    eta_e: float
    seed: int = -1
    mode: str = "expectation"
    sweep: str = "single"

    @property
    def snr_c(self) -> float:
        return self.classical.snr if self.classical else math.nan

    @property
    def snr_q(self) -> float:
        return self.heralded.snr if self.heralded else math.nan

    @property
    def cef(self) -> float:
        if self.classical is None or self.heralded is None:
            return math.nan
        return cef(self.snr_q, self.snr_c)

    def rows(self) -> list[list]:
        """One CSV row per simulated scheme, columns as in :data:`CSV_HEADER`."""
        out = []
        for scheme in ("classical", "heralded"):
            stats = getattr(self, scheme)
            if stats is None:
                continue
            out.append(
                [self.sweep, self.mode, scheme, self.noise_level, self.eta_e, self.seed, self.cef]
                + list(astuple(stats))
            )
        return out


CSV_HEADER = ["sweep", "mode", "scheme", "noise_level", "eta_e", "seed", "cef"] + [
    f.name for f in fields(SchemeStats)
]


def format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_metrics_csv(path, reports) -> None:
    """Append report rows, writing the header first if the file is new or empty."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CSV_HEADER)
        for rep in reports:
            for row in rep.rows():
                writer.writerow([format_cell(v) for v in row])
