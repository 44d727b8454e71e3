"""Per-pattern detected counts for classical and heralded single-pixel imaging.

The detection model has two stages. Incoming thermal light is integrated
over the acquisition time ``tau``. That time holds ``L = tau / tau_coh``
independent coherence bins, each carrying a Bose-Einstein photon number of
mean ``N``. By the central limit theorem the integrated number is drawn as

    n' ~ Normal(L N, L (N + N**2))        (truncated at zero)

The detector then fires a Poisson number of counts conditioned on the
integrated mean:

    classical:  mu_C = n'_s + n'_b
    heralded:   mu_Q = eta_h n'_s + n'_i n'_b T_c / tau

The signal draw ``n'_s`` carries ``eta_s eta_e eta_o chi_tilde``, with an
extra ``eta_i`` in the heralded case. The noise draw ``n'_b`` carries
``eta_s`` and the idler draw ``n'_i`` carries ``eta_i``.

In *expectation* mode every draw is replaced by its mean, which gives the
exact mean of the sampled-mode counts.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from ._validation import check_fraction, check_positive, check_random_state
from .patterns import TargetProfile

MODES = ("expectation", "sampled")
SCHEMES = ("classical", "heralded")

_MAX_REDRAWS = 100

# detected full-aperture signal rate (cps) and optics of the reference setup
DEFAULT_SIGNAL_RATE = 7800.0
DEFAULT_ETA_S = 0.6
DEFAULT_ETA_O = 0.05
DEFAULT_TAU_COH = 1e-9


class ZeroSignalError(ZeroDivisionError):
    """Raised when a noise level is requested relative to a vanishing signal."""


@dataclass(frozen=True)
class OpticalConfig:
    """Source rates and efficiencies of the imaging setup.

    ``n_s_bar`` and ``n_b_bar`` are mean photon numbers per coherence bin
    (signal photons injected on the modulator, and noise photons). Use
    :meth:`from_rates` to set them from detected count rates instead.
    """

    n_s_bar: float = DEFAULT_SIGNAL_RATE * DEFAULT_TAU_COH / (DEFAULT_ETA_S * DEFAULT_ETA_O)
    n_b_bar: float = 0.0
    tau: float = 1.5
    tau_s: float = DEFAULT_TAU_COH
    tau_b: float = DEFAULT_TAU_COH
    eta_s: float = DEFAULT_ETA_S
    eta_i: float = 0.6
    eta_o: float = DEFAULT_ETA_O
    eta_h: float = 0.14
    T_c: float = 650e-12

    def __post_init__(self):
        check_positive(self.n_s_bar, "n_s_bar", strict=False)
        check_positive(self.n_b_bar, "n_b_bar", strict=False)
        check_positive(self.tau, "tau")
        check_positive(self.tau_s, "tau_s")
        check_positive(self.tau_b, "tau_b")
        check_positive(self.T_c, "T_c")
        for name in ("eta_s", "eta_i", "eta_o", "eta_h"):
            check_fraction(getattr(self, name), name)
        if self.tau_s > self.tau or self.tau_b > self.tau:
            raise ValueError("coherence times must not exceed the acquisition time")
        if self.T_c / self.tau >= 1e-3:
            raise ValueError(f"T_c/tau must be < 1e-3, got {self.T_c / self.tau:g}")

    @classmethod
    def from_rates(cls, rate_s: float = DEFAULT_SIGNAL_RATE, rate_b: float = 0.0, **kwargs):
        """Build a config from detected rates in counts per second.

        ``rate_s`` is the classical detected signal rate for a fully open
        target (``chi_tilde = 1``, ``eta_e = 1``); ``rate_b`` is the detected
        noise rate.
        """
        base = cls(**{"n_s_bar": 0.0, **kwargs})
        check_positive(rate_s, "rate_s", strict=False)
        check_positive(rate_b, "rate_b", strict=False)
        if rate_s > 0 and base.eta_s * base.eta_o == 0:
            raise ValueError("a nonzero signal rate needs eta_s * eta_o > 0")
        if rate_b > 0 and base.eta_s == 0:
            raise ValueError("a nonzero noise rate needs eta_s > 0")
        n_s = rate_s * base.tau_s / (base.eta_s * base.eta_o) if rate_s else 0.0
        n_b = rate_b * base.tau_b / base.eta_s if rate_b else 0.0
        return replace(base, n_s_bar=n_s, n_b_bar=n_b)

    @property
    def L_s(self) -> float:
        return self.tau / self.tau_s

    @property
    def L_b(self) -> float:
        return self.tau / self.tau_b

    @property
    def rate_s(self) -> float:
        return self.eta_s * self.eta_o * self.n_s_bar / self.tau_s

    @property
    def rate_b(self) -> float:
        return self.eta_s * self.n_b_bar / self.tau_b

    @property
    def idler_counts(self) -> float:
        """Mean detected idler counts per acquisition, ``L_s eta_i n_s_bar``."""
        return self.L_s * self.eta_i * self.n_s_bar


@dataclass(frozen=True)
class CountRecord:
    """Detected counts for one pattern.

    ``I_C``/``I_Q`` hold whichever scheme was simulated (the other is
    ``None``). The ``n_*_prime`` fields are the integrated photon numbers
    behind the Poisson draw; ``n_i_prime`` is NaN for the classical scheme.
    """

    k: int
    chi_tilde: float
    I_C: float | None = None
    I_Q: float | None = None
    n_s_prime: float = math.nan
    n_b_prime: float = math.nan
    n_i_prime: float = math.nan
    mu_C: float | None = None
    mu_Q: float | None = None


@dataclass(frozen=True)
class CountBatch:
    """Counts for a whole pattern sequence of one scheme, as arrays."""

    scheme: str
    mode: str
    k: np.ndarray
    chi_tilde: np.ndarray
    counts: np.ndarray
    mu: np.ndarray
    n_s_prime: np.ndarray
    n_b_prime: np.ndarray
    n_i_prime: np.ndarray

    def records(self) -> list[CountRecord]:
        key_I, key_mu = ("I_C", "mu_C") if self.scheme == "classical" else ("I_Q", "mu_Q")
        return [
            CountRecord(
                k=int(self.k[j]),
                chi_tilde=float(self.chi_tilde[j]),
                n_s_prime=float(self.n_s_prime[j]),
                n_b_prime=float(self.n_b_prime[j]),
                n_i_prime=float(self.n_i_prime[j]),
                **{key_I: float(self.counts[j]), key_mu: float(self.mu[j])},
            )
            for j in range(len(self.k))
        ]


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def integrated_source_draw(mean_per_bin, bins, rng=None, mode: str = "sampled"):
    """Integrated photon number of ``bins`` i.i.d. Bose-Einstein bins.

    Sampled mode draws from the CLT normal approximation, redrawing negative
    values up to 100 times before clamping them to zero. Works elementwise on
    arrays; returns a float for scalar input.
    """
    _check_mode(mode)
    mean = np.asarray(mean_per_bin, dtype=float)
    if np.any(mean < 0) or not np.all(np.isfinite(mean)):
        raise ValueError("mean_per_bin must be finite and non-negative")
    bins = float(bins)
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    loc = bins * mean
    if mode == "expectation":
        return loc if loc.ndim else float(loc)

    rng = check_random_state(rng)
    scale = np.sqrt(bins * (mean + mean * mean))
    draw = np.atleast_1d(rng.normal(loc, scale))
    loc_b = np.broadcast_to(loc, draw.shape)
    scale_b = np.broadcast_to(scale, draw.shape)
    bad = np.flatnonzero(draw < 0)
    for _ in range(_MAX_REDRAWS):
        if bad.size == 0:
            break
        draw[bad] = rng.normal(loc_b[bad], scale_b[bad])
        bad = bad[draw[bad] < 0]
    draw[bad] = 0.0
    return draw.reshape(loc.shape) if loc.ndim else float(draw[0])


def simulate_counts(
    cfg: OpticalConfig,
    t: TargetProfile,
    chi_tilde,
    scheme: str,
    mode: str = "sampled",
    rng=None,
    k=None,
) -> CountBatch:
    """Counts of ``scheme`` for a sequence of overlap fractions, one per pattern."""
    _check_mode(mode)
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    chi = np.atleast_1d(np.asarray(chi_tilde, dtype=float))
    if np.any(chi < 0) or np.any(chi > 1):
        raise ValueError("chi_tilde must lie in [0, 1]")
    k = np.arange(1, len(chi) + 1) if k is None else np.atleast_1d(np.asarray(k))
    rng = None if mode == "expectation" else check_random_state(rng)

    signal_factor = cfg.eta_s * t.eta_e * cfg.eta_o * chi
    if scheme == "heralded":
        signal_factor = signal_factor * cfg.eta_i
    n_s = integrated_source_draw(signal_factor * cfg.n_s_bar, cfg.L_s, rng, mode)
    n_b = integrated_source_draw(np.full(chi.shape, cfg.eta_s * cfg.n_b_bar), cfg.L_b, rng, mode)

    if scheme == "classical":
        n_i = np.full(chi.shape, math.nan)
        mu = n_s + n_b
    else:
        n_i = integrated_source_draw(np.full(chi.shape, cfg.eta_i * cfg.n_s_bar), cfg.L_s, rng, mode)
        mu = cfg.eta_h * n_s + n_i * n_b * cfg.T_c / cfg.tau

    counts = mu.copy() if mode == "expectation" else rng.poisson(mu).astype(float)
    return CountBatch(scheme, mode, k, chi, counts, mu, n_s, n_b, n_i)


def classical_count(cfg, t, chi_tilde, mode="sampled", rng=None, k=1) -> CountRecord:
    """Non-time-gated single-detector count for one pattern."""
    return simulate_counts(cfg, t, [chi_tilde], "classical", mode, rng, [k]).records()[0]


def heralded_count(cfg, t, chi_tilde, mode="sampled", rng=None, k=1) -> CountRecord:
    """Signal-idler coincidence count for one pattern."""
    return simulate_counts(cfg, t, [chi_tilde], "heralded", mode, rng, [k]).records()[0]


def noise_level(cfg: OpticalConfig, t: TargetProfile) -> float:
    """Detected mean noise counts over detected full-aperture signal counts (classical)."""
    noise = cfg.L_b * cfg.eta_s * cfg.n_b_bar
    signal = cfg.L_s * cfg.eta_s * t.eta_e * cfg.eta_o * cfg.n_s_bar
    if signal == 0:
        raise ZeroSignalError("noise level undefined: full-aperture signal is zero")
    return noise / signal


def with_noise_level(cfg: OpticalConfig, level: float, t: TargetProfile) -> OpticalConfig:
    """Return ``cfg`` with ``n_b_bar`` chosen so that ``noise_level(cfg, t) == level``."""
    check_positive(level, "noise level", strict=False)
    signal = cfg.L_s * cfg.eta_s * t.eta_e * cfg.eta_o * cfg.n_s_bar
    if signal == 0:
        raise ZeroSignalError("cannot set a noise level against zero signal")
    if level == 0:
        return replace(cfg, n_b_bar=0.0)
    if cfg.eta_s == 0:
        raise ValueError("noise cannot be detected with eta_s = 0")
    return replace(cfg, n_b_bar=level * signal / (cfg.L_b * cfg.eta_s))


# -- config files ----------------------------------------------------------------

_CONFIG_KEYS = {f.name for f in fields(OpticalConfig)}


def config_from_mapping(values: dict) -> OpticalConfig:
    """Build a config from string or numeric key/values.

    Keys are the :class:`OpticalConfig` field names, plus ``rate_s`` /
    ``rate_b`` as an alternative to ``n_s_bar`` / ``n_b_bar``. Unknown keys
    raise ``ValueError``.
    """
    values = {k.strip(): float(v) for k, v in values.items()}
    unknown = set(values) - _CONFIG_KEYS - {"rate_s", "rate_b"}
    if unknown:
        raise ValueError(f"unknown optical config keys: {sorted(unknown)}")
    if "rate_s" in values and "n_s_bar" in values:
        raise ValueError("give either rate_s or n_s_bar, not both")
    if "rate_b" in values and "n_b_bar" in values:
        raise ValueError("give either rate_b or n_b_bar, not both")
    rates = {k: values.pop(k) for k in ("rate_s", "rate_b") if k in values}
    if "n_s_bar" not in values:
        rates.setdefault("rate_s", DEFAULT_SIGNAL_RATE)
    if not rates:
        return OpticalConfig(**values)
    cfg = OpticalConfig.from_rates(
        rate_s=rates.get("rate_s", 0.0),
        rate_b=rates.get("rate_b", 0.0),
        **{k: v for k, v in values.items() if k not in ("n_s_bar", "n_b_bar")},
    )
    keep = {k: values[k] for k in ("n_s_bar", "n_b_bar") if k in values}
    return replace(cfg, **keep)


def read_flat_config(path) -> dict[str, str]:
    """Read ``key = value`` lines (``#`` comments allowed, no sections)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_string("[root]\n" + fh.read(), source=str(path))
    return dict(parser["root"])


def load_config(path) -> OpticalConfig:
    raw = read_flat_config(path)
    return config_from_mapping({k: v for k, v in raw.items() if k in _CONFIG_KEYS | {"rate_s", "rate_b"}})


def dump_config(cfg: OpticalConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in asdict(cfg).items())
