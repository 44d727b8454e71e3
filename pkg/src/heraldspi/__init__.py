"""Classical and heralded single-pixel imaging under thermal noise and loss."""

from .metrics import MetricsReport, RegionSpec, cef, snr
from .patterns import (
    PatternSet,
    TargetProfile,
    build_pattern_set,
    overlap_fraction,
    overlap_fractions,
    select_subset,
    stealth_target,
)
from .photon_model import (
    CountBatch,
    CountRecord,
    OpticalConfig,
    classical_count,
    heralded_count,
    noise_level,
    simulate_counts,
    with_noise_level,
)
from .reconstruction import G2Imager, ImageResult, decompose, normalize, reconstruct
from .scenario import Scenario, report, run_loss_sweep, run_noise_sweep

__version__ = "0.1.0"

__all__ = [
    "CountBatch",
    "CountRecord",
    "G2Imager",
    "ImageResult",
    "MetricsReport",
    "OpticalConfig",
    "PatternSet",
    "RegionSpec",
    "Scenario",
    "TargetProfile",
    "build_pattern_set",
    "cef",
    "classical_count",
    "decompose",
    "heralded_count",
    "noise_level",
    "normalize",
    "overlap_fraction",
    "overlap_fractions",
    "reconstruct",
    "report",
    "run_loss_sweep",
    "run_noise_sweep",
    "select_subset",
    "simulate_counts",
    "snr",
    "stealth_target",
    "with_noise_level",
]
