"""Command-line entry point: ``heraldspi <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import patterns, scenario, timetag
from .photon_model import dump_config


def _scenario(args) -> scenario.Scenario:
    sc = scenario.load_scenario(args.scenario) if args.scenario else scenario.Scenario()
    overrides = {}
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = tuple(range(args.seeds))
    if getattr(args, "root_seed", None) is not None:
        overrides["root_seed"] = args.root_seed
    if getattr(args, "modes", None):
        overrides["modes"] = tuple(args.modes)
    if getattr(args, "no_images", False):
        overrides["save_images"] = False
    return replace(sc, **overrides)


def cmd_patterns(args) -> int:
    ps = patterns.build_pattern_set(args.side, args.ordering)
    if args.pairs:
        ps = patterns.select_subset(ps, args.pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    patterns.write_order_csv(out / "order.csv", ps.order_map)
    if args.format in ("bitset", "both"):
        patterns.write_bitset(out / "patterns.spip", ps)
    if args.format in ("pgm", "both"):
        patterns.export_pgm(out / "pgm", ps)
    print(f"{ps.subset_size} active patterns of {ps.side}x{ps.side} written to {out}")
    return 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    sc = replace(
        sc,
        sweep="single",
        fixed_noise_level=args.noise_level,
        fixed_eta_e=args.eta_e,
        seeds=(args.seed,),
        modes=(args.mode,),
    )
    scenario.run_scenario(sc, args.out)
    (Path(args.out) / "optics.cfg").write_text(dump_config(sc.config))
    rows, _ = scenario.read_metrics(Path(args.out) / scenario.METRICS)
    for row in rows:
        print(f"{row['scheme']:>9}  SNR={row['snr']:.6g}  CEF={row['cef']:.6g}")
    return 0


def cmd_sweep(args) -> int:
    sc = replace(_scenario(args), sweep=args.axis)
    if args.axis == "noise":
        scenario.run_noise_sweep(sc, args.out, workers=args.workers)
    else:
        scenario.run_loss_sweep(sc, args.out, workers=args.workers)
    table, errors = scenario.report(args.out)
    _print_table(table)
    for e in errors:
        print(f"warning: {e}", file=sys.stderr)
    return 0


def cmd_correlate(args) -> int:
    if args.input:
        ts = timetag.read_tags(args.input)
    else:
        ts = timetag.generate_stream(
            pair_rate=args.pair_rate,
            signal_loss_prob=args.signal_loss,
            idler_loss_prob=args.idler_loss,
            noise_rate=args.noise_rate,
            jitter_sigma=args.jitter,
            path_delay=args.path_delay,
            duration=args.duration,
            rng=args.seed,
        )
        if args.save_tags:
            timetag.write_tags(args.save_tags, ts)
    h = timetag.correlate(ts, args.bin_width, args.max_delay, peak_window=args.tc)
    if args.out:
        timetag.write_histogram_csv(args.out, h)
    print(f"events: signal={ts.count(timetag.SIGNAL)} idler={ts.count(timetag.IDLER)}")
    if not h.peak_defined:
        print("no correlation peak (empty histogram)")
        return 1
    n = timetag.coincidences_in_window(h, args.tc)
    print(f"peak delay: {h.peak_delay:g} ps  coincidences in {args.tc:g} ps window: {n:g}")
    return 0


def cmd_report(args) -> int:
    table, errors = scenario.report(args.run_dir)
    _print_table(table)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return 1 if errors else 0


def _print_table(table) -> None:
    print(" ".join(f"{h:>11}" for h in scenario.SUMMARY_HEADER))
    for row in table:
        print(" ".join(f"{v:>11.4g}" if isinstance(v, float) and math.isfinite(v) else f"{v!s:>11}" for v in row))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heraldspi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("patterns", help="generate and export the Hadamard pattern basis")
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--pairs", type=int, default=None, help="keep only the first N pattern pairs")
    p.add_argument("--ordering", default="walsh", help="walsh, natural, or a CSV permutation file")
    p.add_argument("--format", choices=("bitset", "pgm", "both"), default="bitset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_patterns)

    def scenario_args(p):
        p.add_argument("--scenario", help="flat key = value scenario file")
        p.add_argument("--root-seed", type=int)
        p.add_argument("--no-images", action="store_true")
        p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("simulate", help="simulate one cell (noise level, transmittance, seed)")
    scenario_args(p)
    p.add_argument("--noise-level", type=float, default=0.0)
    p.add_argument("--eta-e", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=scenario.RUN_MODES, default="sampled")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a noise or loss sweep")
    p.add_argument("axis", choices=("noise", "loss"))
    scenario_args(p)
    p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    p.add_argument("--modes", nargs="+", choices=scenario.RUN_MODES)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correlate", help="g2 histogram and coincidences from time tags")
    p.add_argument("--input", help="binary tag file; omit to simulate a stream")
    p.add_argument("--pair-rate", type=float, default=62_400.0)
    p.add_argument("--signal-loss", type=float, default=0.95)
    p.add_argument("--idler-loss", type=float, default=0.4)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=timetag.DEFAULT_JITTER_PS, help="per-detector sigma, ps")
    p.add_argument("--path-delay", type=float, default=0.0, help="ps")
    p.add_argument("--duration", type=float, default=1.5, help="s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-tags", help="write the simulated stream to this file")
    p.add_argument("--bin-width", type=float, default=timetag.DEFAULT_BIN_WIDTH_PS)
    p.add_argument("--max-delay", type=float, default=timetag.DEFAULT_MAX_DELAY_PS)
    p.add_argument("--tc", type=float, default=650.0, help="coincidence window, ps")
    p.add_argument("--out", help="histogram CSV")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("report", help="summarise a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
