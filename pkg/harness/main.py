"""
Command-line entry point.

    python -m harness.main ber --channel case2 --detectors jdfft,jdchol --snr 0:14:2 --slots 100
    python -m harness.main complexity --out results
    python -m harness.main selftest

Exit status: 0 ok, 1 configuration error, 2 numerical failure or failed selftest.
"""

import argparse
import logging
import os
import sys

from analysis.complexity_model import (
    DETECTORS,
    comparison_table,
    entry_table,
    high_rate_reduction,
    jdfft_variant_table,
    mrops,
)
from config import settings
from detectors.errors import JdfftError, NumericalError
from detectors.jdfft_detector import JdfftOptions
from harness.scenario import load_scenario, parse_snr_grid, run_scenario
from harness.selftest import run_selftest
from simulators.signal_model import SlotConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="jdfft", description="Block-FFT joint detection link simulator.")
    parser.add_argument("--log-level", default=None, help="Overrides JDFFT_LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    ber = sub.add_parser("ber", help="Monte-Carlo BER over an SNR grid.")
    ber.add_argument("--config", help="INI scenario file.")
    ber.add_argument("--out", default=None, help="Output directory (default JDFFT_OUTPUT_DIR).")
    ber.add_argument("--seed", type=int, help="Master seed.")
    ber.add_argument("--slots", type=int, help="Timeslots per SNR point.")
    ber.add_argument("--full", action="store_true", help="Use the full slot count (JDFFT_FULL_SLOTS).")
    ber.add_argument("--snr", help="SNR grid in dB, start:stop:step or a comma list.")
    ber.add_argument("--detectors", help="Comma-separated subset of jdfft,jdchol,sdchol,sdfft,mf,oracle.")
    ber.add_argument("--channel", help="case1, case2, case2mod, case3 or custom.")
    ber.add_argument("--delays", help="Custom channel tap delays in chips, comma-separated.")
    ber.add_argument("--powers", help="Custom channel tap powers, comma-separated.")
    ber.add_argument("--correlated", action="store_true", help="Doppler-correlated fading across slots.")
    ber.add_argument("--p", type=int, choices=(61, 64), help="JDFFT processing length.")
    ber.add_argument("--compare-p", action="store_true", help="Also run JDFFT at P=N_s and P=64.")
    ber.add_argument("--oversample", type=int, help="Oversampling factor N.")
    ber.add_argument("--codes", type=int, help="Number of active codes K.")
    ber.add_argument("--single-user", action="store_true", help="Allocate every code to user 1.")
    ber.add_argument("--matched-filter", choices=("direct", "fft"))
    ber.add_argument("--bin-solve", choices=("lu", "explicit_inverse"))
    ber.add_argument("--no-window-extension", action="store_true")
    ber.add_argument("--cholesky-depth", type=int,
                     help="Exactly factored rows of the Cholesky detectors (default: until the rows settle).")
    ber.add_argument("--workers", type=int, default=None, help="Worker processes (default JDFFT_WORKERS).")

    cx = sub.add_parser("complexity", help="Operation-count (MROPS) report.")
    cx.add_argument("--out", default=None, help="Output directory (default JDFFT_OUTPUT_DIR).")
    cx.add_argument("--codes", type=int, default=8)
    cx.add_argument("--p", type=int, choices=(61, 64))
    cx.add_argument("--oversample", type=int, default=1)

    sub.add_parser("selftest", help="Runs the invariant suite.")
    return parser


def scenario_overrides(args):
    """Maps `ber` flags onto scenario fields; unset flags leave file values alone."""
    overrides = {}
    slot = {}
    jdfft = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.full:
        overrides["n_slots"] = settings.FULL_SLOTS
    if args.slots is not None:
        overrides["n_slots"] = args.slots
    if args.snr:
        overrides["snr_grid"] = parse_snr_grid(args.snr)
    if args.detectors:
        overrides["detectors"] = tuple(d.strip() for d in args.detectors.split(",") if d.strip())
    if args.channel:
        overrides["channel"] = args.channel
    if args.delays:
        overrides["custom_delays"] = tuple(int(x) for x in args.delays.split(","))
    if args.powers:
        overrides["custom_powers"] = tuple(float(x) for x in args.powers.split(","))
    if args.correlated:
        overrides["correlated"] = True
    if args.compare_p:
        overrides["compare_p"] = True
    if args.cholesky_depth is not None:
        overrides["cholesky_depth"] = args.cholesky_depth
    if args.oversample is not None:
        slot["n_over"] = args.oversample
    if args.codes is not None:
        slot["k"] = args.codes
    if args.single_user:
        overrides["single_user"] = True
    if args.p is not None:
        jdfft["p"] = args.p
    if args.matched_filter:
        jdfft["matched_filter"] = args.matched_filter
    if args.bin_solve:
        jdfft["bin_solve"] = args.bin_solve
    if args.no_window_extension:
        jdfft["window_extension"] = False
    if slot:
        overrides["slot"] = slot
    if jdfft:
        overrides["jdfft"] = jdfft
    return overrides


def run_ber(args):
    scenario = load_scenario(args.config, scenario_overrides(args))
    out_dir = args.out or settings.OUTPUT_DIR
    run_scenario(scenario, out_dir=out_dir, workers=args.workers)
    return EXIT_OK


def run_complexity(args):
    config = SlotConfig(k=args.codes, n_over=args.oversample)
    options = JdfftOptions(p=args.p)
    out_dir = args.out or settings.OUTPUT_DIR
    os.makedirs(out_dir, exist_ok=True)

    sections = []
    for detector in DETECTORS:
        report = mrops(config, detector, options)
        report.to_csv(os.path.join(out_dir, f"complexity_{detector}.csv"))
        sections.append(report.to_text())
    entries = entry_table(config, options.model_copy(update={"bin_solve": "explicit_inverse"}))
    variants = jdfft_variant_table(config)
    comparison = comparison_table(config, options.model_copy(update={"bin_solve": "lu"}))
    entries.to_csv(os.path.join(out_dir, "complexity_jdfft_entries.csv"), index=False, float_format="%.6f")
    variants.to_csv(os.path.join(out_dir, "complexity_jdfft_variants.csv"), index=False, float_format="%.6f")
    comparison.to_csv(os.path.join(out_dir, "complexity_comparison.csv"), index=False, float_format="%.6f")

    sections.append("JDFFT entries vs reference\n" + entries.to_string(index=False, float_format="%.4f"))
    sections.append("JDFFT variants vs reference\n" + variants.to_string(index=False, float_format="%.4f"))
    sections.append("Technique comparison\n" + comparison.to_string(index=False, float_format="%.2f"))
    if args.codes <= 12 <= config.sf:
        sections.append(f"12-code JDFFT saving over JDChol: {high_rate_reduction(config):.1%}")
    text_path = os.path.join(out_dir, "complexity.txt")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write("\n\n".join(sections) + "\n")
    logger.info(f"Complexity report written to {text_path}")
    print(comparison.to_string(index=False, float_format="%.2f"))
    return EXIT_OK


def run_selftest_command(_args):
    results = run_selftest()
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {"ber": run_ber, "complexity": run_complexity, "selftest": run_selftest_command}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    settings.configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERIC
    except (JdfftError, ValueError) as e:
        # pydantic ValidationError is a ValueError.
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
