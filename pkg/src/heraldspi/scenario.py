"""Noise and loss sweeps: simulate, reconstruct, score, persist.

A run directory holds:

* ``manifest.jsonl`` - a header line describing the scenario, then one line
  per finished cell with its metric rows. It is append-only, which makes
  interrupted sweeps resumable.
* ``metrics.csv`` - all rows in canonical cell order, rewritten from the
  manifest at the end of every run.
* ``images/`` - 16-bit PGM reconstructions, one per cell and scheme.
* ``histograms/`` - event mode only: the g2 histogram of each cell's first
  pattern, as CSV.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import timetag
from .metrics import CSV_HEADER, MetricsReport, RegionSpec, SchemeStats, format_cell
from .netpbm import read_pgm
from .patterns import PatternSet, TargetProfile, build_pattern_set, overlap_fractions, select_subset, stealth_target
from .photon_model import SCHEMES, OpticalConfig, config_from_mapping, read_flat_config, simulate_counts, with_noise_level
from .reconstruction import ImageResult, reconstruct, write_image_pgm

log = logging.getLogger(__name__)

SWEEPS = ("noise", "loss", "single")
RUN_MODES = ("expectation", "sampled", "event")

DEFAULT_NOISE_LEVELS = (0.0, 1.0, 2.0, 4.6, 10.0, 50.0, 70.0, 100.0, 500.0, 1000.0)
DEFAULT_ETA_E_VALUES = (1.0, 0.75, 0.5, 0.25, 0.1)

MANIFEST = "manifest.jsonl"
METRICS = "metrics.csv"
SUMMARY = "summary.csv"


@dataclass(frozen=True)
class Scenario:
    config: OpticalConfig = field(default_factory=OpticalConfig)
    target: TargetProfile = field(default_factory=stealth_target)
    pairs: int = 350
    sweep: str = "noise"
    noise_levels: tuple = DEFAULT_NOISE_LEVELS
    eta_e_values: tuple = DEFAULT_ETA_E_VALUES
    fixed_noise_level: float = 70.0
    fixed_eta_e: float = 1.0
    seeds: tuple = tuple(range(10))
    schemes: tuple = SCHEMES
    modes: tuple = ("sampled",)
    root_seed: int = 0
    ordering: str = "walsh"
    guard: int = 1
    save_images: bool = True
    switch_time: float = 1.0  # wall-clock metadata only

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}")
        if not self.noise_levels or not self.eta_e_values:
            raise ValueError("sweep axes must be non-empty")
        if any(level < 0 for level in self.noise_levels) or self.fixed_noise_level < 0:
            raise ValueError("noise levels must be >= 0")
        if any(not 0 <= e <= 1 for e in (*self.eta_e_values, self.fixed_eta_e)):
            raise ValueError("eta_e values must lie in [0, 1]")
        bad = set(self.modes) - set(RUN_MODES)
        if bad or not self.modes:
            raise ValueError(f"modes must be a non-empty subset of {RUN_MODES}, got {self.modes}")
        if set(self.schemes) - set(SCHEMES) or not self.schemes:
            raise ValueError(f"schemes must be a non-empty subset of {SCHEMES}")
        if any(int(s) < 0 for s in self.seeds):
            raise ValueError("seeds must be >= 0")
        if not self.seeds and set(self.modes) & {"sampled", "event"}:
            raise ValueError("sampled and event modes need at least one seed")
        if self.target.side * self.target.side < self.pairs:
            raise ValueError("more pattern pairs requested than the basis holds")

    def cells(self) -> list[tuple[str, float, float, int]]:
        """``(mode, noise_level, eta_e, seed)`` for every cell, in canonical order."""
        if self.sweep == "noise":
            axis = [(float(n), float(self.fixed_eta_e)) for n in self.noise_levels]
        elif self.sweep == "loss":
            axis = [(float(self.fixed_noise_level), float(e)) for e in self.eta_e_values]
        else:
            axis = [(float(self.fixed_noise_level), float(self.fixed_eta_e))]
        out = []
        for level, eta_e in axis:
            for mode in self.modes:
                seeds = [-1] if mode == "expectation" else list(self.seeds)
                out.extend((mode, level, eta_e, int(s)) for s in seeds)
        return out

    def describe(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("config", "target")}
        d["config"] = asdict(self.config)
        d["target_chi"] = "".join(map(str, self.target.chi.ravel()))
        return json.loads(json.dumps(d))


def _float_key(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def cell_seed(root_seed: int, mode: str, noise_level: float, eta_e: float, seed: int, scheme: str):
    """Independent random stream for one cell and scheme.

    Keyed on values rather than sweep position, so the same physical cell
    reached from a noise sweep and from a loss sweep replays identically.
    """
    # +1: expectation cells carry seed -1
    key = (RUN_MODES.index(mode), _float_key(noise_level), _float_key(eta_e), seed + 1, SCHEMES.index(scheme))
    return np.random.SeedSequence(root_seed, spawn_key=key)


def _cell_key(sweep, mode, level, eta_e, seed) -> str:
    return f"{sweep}|{mode}|{level!r}|{eta_e!r}|{seed}"


def _image_name(sweep, mode, level, eta_e, seed, scheme, ext="pgm") -> str:
    return f"{sweep}_{mode}_n{level:g}_e{eta_e:g}_s{seed}_{scheme}.{ext}"


def simulate_cell(
    scenario: Scenario,
    ps: PatternSet,
    mode: str,
    noise_level: float,
    eta_e: float,
    seed: int,
) -> tuple[MetricsReport, dict[str, ImageResult], timetag.CorrelationHistogram | None]:
    """Simulate, reconstruct and score every scheme of one sweep cell.

    The third item is the heralded g2 histogram of the first pattern in
    event mode, else None.
    """
    reference = scenario.target.with_transmittance(1.0)
    cfg = with_noise_level(scenario.config, noise_level, reference)
    target = scenario.target.with_transmittance(eta_e)
    chi = overlap_fractions(ps, target)
    regions = RegionSpec.from_target(target.chi, scenario.guard)

    stats, images = {}, {}
    histogram = None
    for scheme in scenario.schemes:
        rng = np.random.default_rng(cell_seed(scenario.root_seed, mode, noise_level, eta_e, seed, scheme))
        if mode == "event":
            counts, h = _event_counts(cfg, target, chi, scheme, rng)
            if h is not None:
                histogram = h
        else:
            counts = simulate_counts(cfg, target, chi, scheme, mode, rng, ps.active)
        img = reconstruct(ps, counts, scheme=scheme, mode=mode)
        stats[scheme] = SchemeStats.of(img, regions)
        images[scheme] = img
    report = MetricsReport(
        classical=stats.get("classical"),
        heralded=stats.get("heralded"),
        noise_level=noise_level,
        eta_e=eta_e,
        seed=seed,
        mode=mode,
        sweep=scenario.sweep,
    )
    return report, images, histogram


def _event_counts(cfg, target, chi, scheme, rng):
    if scheme == "classical":
        return np.array([timetag.classical_event_count(cfg, target, c, rng) for c in chi], dtype=float), None
    first, h = timetag.heralded_event_count(cfg, target, chi[0], rng, return_histogram=True)
    rest = [timetag.heralded_event_count(cfg, target, c, rng) for c in chi[1:]]
    return np.array([first, *rest], dtype=float), h


def _pattern_set(scenario: Scenario) -> PatternSet:
    return select_subset(build_pattern_set(scenario.target.side, scenario.ordering), scenario.pairs)


def _cell_job(args):
    scenario, ps, cell = args
    return simulate_cell(scenario, ps, *cell)


def _read_manifest(path: Path, header: dict) -> dict[str, list]:
    done = {}
    if not path.exists():
        return done
    with open(path) as fh:
        raw = [line for line in fh if line.strip()]
    lines = []
    for i, line in enumerate(raw):
        try:
            lines.append(json.loads(line))
        except json.JSONDecodeError:
            if i != len(raw) - 1:
                raise ValueError(f"{path}: corrupt manifest line {i + 1}") from None
            # a run killed mid-write; drop the partial line so appends stay valid
            log.warning("%s: dropping truncated final line", path)
            with open(path, "w") as fh:
                fh.writelines(raw[:-1])
    if not lines or lines[0].get("scenario") != header:
        raise ValueError(f"{path} belongs to a different scenario; use a fresh run directory")
    for entry in lines[1:]:
        done[entry["cell"]] = entry["rows"]
    return done


def run_scenario(scenario: Scenario, run_dir, workers: int = 1) -> list[MetricsReport]:
    """Run every cell of ``scenario`` not yet recorded in ``run_dir``.

    Returns reports for the cells computed in this call. ``metrics.csv`` is
    then rebuilt from the manifest, so it covers all cells in canonical order.
    """
    run_dir = Path(run_dir)
    try:
        (run_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create run directory {run_dir}: {exc}") from exc
    header = scenario.describe()
    manifest = run_dir / MANIFEST
    done = _read_manifest(manifest, header)
    if not manifest.exists():
        with open(manifest, "w") as fh:
            fh.write(json.dumps({"scenario": header}, sort_keys=True) + "\n")

    ps = _pattern_set(scenario)
    todo = [c for c in scenario.cells() if _cell_key(scenario.sweep, *c) not in done]
    if len(todo) < len(scenario.cells()):
        log.info("resuming: %d of %d cells already done", len(scenario.cells()) - len(todo), len(scenario.cells()))

    jobs = [(scenario, ps, cell) for cell in todo]
    if workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_cell_job, jobs)
    else:
        pool = None
        results = map(_cell_job, jobs)

    reports = []
    try:
        with open(manifest, "a") as fh:
            for cell, (report, images, histogram) in zip(todo, results):
                if scenario.save_images:
                    for scheme, img in images.items():
                        write_image_pgm(run_dir / "images" / _image_name(scenario.sweep, *cell, scheme), img)
                if histogram is not None:
                    (run_dir / "histograms").mkdir(exist_ok=True)
                    name = _image_name(scenario.sweep, *cell, "heralded", ext="csv")
                    timetag.write_histogram_csv(run_dir / "histograms" / name, histogram)
                rows = [[format_cell(v) for v in row] for row in report.rows()]
                fh.write(json.dumps({"cell": _cell_key(scenario.sweep, *cell), "rows": rows}) + "\n")
                fh.flush()
                done[_cell_key(scenario.sweep, *cell)] = rows
                reports.append(report)
    finally:
        if pool is not None:
            pool.shutdown()

    _write_metrics(run_dir / METRICS, [done[_cell_key(scenario.sweep, *c)] for c in scenario.cells()])
    return reports


def _write_metrics(path: Path, row_groups) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rows in row_groups:
            writer.writerows(rows)


def run_noise_sweep(scenario: Scenario, run_dir, workers: int = 1) -> list[MetricsReport]:
    if scenario.sweep != "noise":
        raise ValueError("run_noise_sweep needs a scenario with sweep='noise'")
    return run_scenario(scenario, run_dir, workers)


def run_loss_sweep(scenario: Scenario, run_dir, workers: int = 1) -> list[MetricsReport]:
    """Loss sweep at fixed absolute noise, set relative to the unattenuated signal."""
    if scenario.sweep != "loss":
        raise ValueError("run_loss_sweep needs a scenario with sweep='loss'")
    return run_scenario(scenario, run_dir, workers)


# -- summaries -------------------------------------------------------------------

SUMMARY_HEADER = ["sweep", "mode", "scheme", "noise_level", "eta_e", "n", "median", "q25", "q75"]


def summarize(rows: list[dict]) -> list[list]:
    """Median and interquartile range of SNR (and CEF) per sweep point."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        point = (row["sweep"], row["mode"], row["noise_level"], row["eta_e"])
        groups.setdefault((*point[:2], row["scheme"], *point[2:]), []).append(row["snr"])
        if row["scheme"] == "heralded":
            groups.setdefault((*point[:2], "cef", *point[2:]), []).append(row["cef"])
    out = []
    for (sweep, mode, scheme, level, eta_e), values in sorted(groups.items(), key=lambda kv: _sort_key(kv[0])):
        v = np.asarray(values, dtype=float)
        v = v[~np.isnan(v)]
        if v.size:
            q25, med, q75 = np.percentile(v, [25, 50, 75])
        else:
            q25 = med = q75 = float("nan")
        out.append([sweep, mode, scheme, level, eta_e, int(v.size), float(med), float(q25), float(q75)])
    return out


def _sort_key(key):
    sweep, mode, scheme, level, eta_e = key
    return (sweep, mode, level, -eta_e, ("classical", "heralded", "cef").index(scheme))


def read_metrics(path) -> tuple[list[dict], list[str]]:
    """Parse ``metrics.csv``; malformed lines are skipped and reported."""
    errors, rows = [], []
    path = Path(path)
    if not path.exists():
        return rows, [f"{path}: missing"]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            return rows, [f"{path}: unexpected header {header}"]
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(CSV_HEADER):
                errors.append(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(raw)}")
                continue
            rec = dict(zip(CSV_HEADER, raw))
            try:
                for k in ("noise_level", "eta_e", "cef", "snr", "mu_t", "sigma_t", "mu_b", "sigma_b"):
                    rec[k] = float(rec[k])
                rec["seed"] = int(rec["seed"])
            except ValueError as exc:
                errors.append(f"{path}:{lineno}: {exc}")
                continue
            rows.append(rec)
    return rows, errors


def report(run_dir) -> tuple[list[list], list[str]]:
    """Aggregate a run's metrics into ``summary.csv``.

    Returns the summary rows and a list of problems found. Problems never
    abort the summary; whatever could be read is still written.
    """
    run_dir = Path(run_dir)
    rows, errors = read_metrics(run_dir / METRICS)
    table = summarize(rows)
    if run_dir.is_dir():
        with open(run_dir / SUMMARY, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SUMMARY_HEADER)
            writer.writerows([format_cell(v) for v in row] for row in table)
    else:
        errors.append(f"{run_dir}: not a directory; summary not written")
    return table, errors


# -- scenario files --------------------------------------------------------------

_OPTICAL_KEYS = {
    "n_s_bar", "n_b_bar", "rate_s", "rate_b", "tau", "tau_s", "tau_b",
    "eta_s", "eta_i", "eta_o", "eta_h", "T_c",
}


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _seeds(text: str) -> tuple:
    parts = text.replace(",", " ").split()
    if len(parts) == 1:
        return tuple(range(int(parts[0])))
    return tuple(int(x) for x in parts)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _words(text: str) -> tuple:
    return tuple(text.replace(",", " ").split())


_SCENARIO_PARSERS = {
    "pairs": int,
    "sweep": str.strip,
    "noise_levels": _floats,
    "eta_e_values": _floats,
    "fixed_noise_level": float,
    "fixed_eta_e": float,
    "seeds": _seeds,
    "schemes": _words,
    "modes": _words,
    "root_seed": int,
    "ordering": str.strip,
    "guard": int,
    "save_images": _bool,
    "switch_time": float,
}


def scenario_from_mapping(raw: dict[str, str], base_dir=None) -> Scenario:
    """Build a :class:`Scenario` from flat ``key = value`` strings.

    Besides the :class:`Scenario` fields, ``side`` sets the image size for the
    built-in stealth target, ``target`` names a PGM mask file (non-zero =
    open), and optical keys go to :func:`config_from_mapping`.
    """
    raw = dict(raw)
    optical = {k: raw.pop(k) for k in list(raw) if k in _OPTICAL_KEYS}
    side = int(raw.pop("side", 32))
    target_spec = raw.pop("target", "stealth").strip()
    unknown = set(raw) - set(_SCENARIO_PARSERS)
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    kwargs = {k: _SCENARIO_PARSERS[k](v) for k, v in raw.items()}
    if target_spec == "stealth":
        target = stealth_target(side)
    else:
        path = Path(target_spec)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        target = TargetProfile((read_pgm(path) > 0).astype(np.uint8))
    if "ordering" in kwargs and kwargs["ordering"] not in ("walsh", "natural") and base_dir is not None:
        path = Path(kwargs["ordering"])
        if not path.is_absolute():
            kwargs["ordering"] = str(Path(base_dir) / path)
    return Scenario(config=config_from_mapping(optical), target=target, **kwargs)


def load_scenario(path) -> Scenario:
    return scenario_from_mapping(read_flat_config(path), base_dir=Path(path).parent)
