"""Command line interface.

Subcommands: ``calibrate`` (threshold solving, tables, feasibility),
``recover`` (run recovery on stored observations), ``simulate``
(single-point Monte Carlo), ``sweep`` (grid Monte Carlo to CSV).

Exit codes: 0 success, 2 usage/config errors, 1 runtime failures.  All
error output is a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import calibration
from .codec import ChannelModel, GeneratorSpec, build_trellis
from .harness import (ConfigError, ExperimentConfig, correct_probability,
                      parse_config_file, sweep, wasted_iterations)
from .recovery import run_recovery
from .stopping import StoppingMonitor, ThresholdPair


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="master RNG seed")
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--threads", type=int,
                        help=f"worker threads (default ${'{'}TURBOPI_THREADS{'}'} or 1)")
    parser.add_argument("--A", type=float, dest="threshold_a",
                        help="stop-rule gap threshold")
    parser.add_argument("--B", type=int, dest="threshold_b",
                        help="stop-rule run length")
    parser.add_argument("--no-early-stop", action="store_true",
                        help="disable the stop rule")
    parser.add_argument("--policy", choices=("all", "unused"),
                        help="candidate policy")


def _add_code_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ff", type=int, help="feedforward mask (default 23)")
    parser.add_argument("--fb", type=int, help="feedback mask (default 25)")
    parser.add_argument("--memory", type=int, help="encoder memory (default 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbopi",
        description="Blind turbo-code interleaver recovery with calibrated "
                    "early stopping")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="solve stop-rule thresholds")
    cal.add_argument("--K", type=int, help="block length")
    cal.add_argument("--B", type=int, dest="threshold_b", default=5,
                     help="run length (default 5)")
    cal.add_argument("--target-ew", type=float, default=7.5,
                     help="wasted-work budget E(W) (default 7.5)")
    cal.add_argument("--table", action="store_true",
                     help="solve for a list of block lengths")
    cal.add_argument("--K-list", default="512,1024,2048,4096,8192,16384",
                     help="comma list of block lengths for --table")
    cal.add_argument("--feasibility", action="store_true",
                     help="list feasible (B, A) bands for given budgets")
    cal.add_argument("--max-ew", type=float,
                     help="E(W) budget for --feasibility")
    cal.add_argument("--max-eml", type=float,
                     help="E_max(L) budget for --feasibility")
    cal.add_argument("--surface", action="store_true",
                     help="emit E(W)/E_max(L) over an (A, B) grid")
    cal.add_argument("--a-min", type=float, default=3.0)
    cal.add_argument("--a-max", type=float, default=5.0)
    cal.add_argument("--a-step", type=float, default=0.25)
    cal.add_argument("--b-list", default="1,3,5,7,9")
    cal.add_argument("--out", help="output CSV path")
    cal.set_defaults(func=cmd_calibrate)

    rec = sub.add_parser("recover", help="recover one stored dataset")
    rec.add_argument("--data", required=True,
                     help=".npz file with arrays 'x' and 'z' (blocks x K)")
    _add_code_flags(rec)
    group = rec.add_mutually_exclusive_group(required=True)
    group.add_argument("--noise-std", type=float)
    group.add_argument("--snr-db", type=float)
    rec.add_argument("--A", type=float, dest="threshold_a")
    rec.add_argument("--B", type=int, dest="threshold_b", default=5)
    rec.add_argument("--no-early-stop", action="store_true")
    rec.add_argument("--policy", choices=("all", "unused"), default="all")
    rec.add_argument("--out", help="trace CSV path")
    rec.set_defaults(func=cmd_recover)

    sim = sub.add_parser("simulate", help="single-point Monte Carlo")
    _add_common(sim)
    _add_code_flags(sim)
    sim.add_argument("--K", type=int, help="block length")
    sim.add_argument("--M", type=int, help="observed blocks per trial")
    sim.add_argument("--snr-db", type=float, help="channel Es/N0 in dB")
    sim.add_argument("--trials", type=int)
    sim.set_defaults(func=cmd_simulate)

    swp = sub.add_parser("sweep", help="grid Monte Carlo to CSV")
    _add_common(swp)
    _add_code_flags(swp)
    swp.add_argument("--K", type=int)
    swp.add_argument("--M", help="comma list of block counts")
    swp.add_argument("--snr-db", help="comma list of Es/N0 values in dB")
    swp.add_argument("--trials", type=int)
    swp.set_defaults(func=cmd_sweep)
    return parser


def _config_from_args(args: argparse.Namespace,
                      snr_is_list: bool) -> ExperimentConfig:
    mapping: dict[str, str] = {}
    if args.config:
        mapping.update(parse_config_file(args.config))
    overrides = {
        "K": getattr(args, "K", None),
        "M": getattr(args, "M", None),
        "snr_db": getattr(args, "snr_db", None),
        "trials": getattr(args, "trials", None),
        "seed": getattr(args, "seed", None),
        "ff": getattr(args, "ff", None),
        "fb": getattr(args, "fb", None),
        "memory": getattr(args, "memory", None),
        "A": getattr(args, "threshold_a", None),
        "B": getattr(args, "threshold_b", None),
        "policy": getattr(args, "policy", None),
        "threads": getattr(args, "threads", None),
        "out": getattr(args, "out", None),
    }
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = str(value)
    if getattr(args, "no_early_stop", False):
        mapping["early_stop"] = "false"
    return ExperimentConfig.from_mapping(mapping)


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.feasibility:
        if args.K is None or args.max_ew is None or args.max_eml is None:
            raise ConfigError("--feasibility needs --K, --max-ew and --max-eml")
        bands = calibration.feasibility_region(args.K, args.max_ew,
                                               args.max_eml)
        if not bands:
            print("no feasible (B, A) pairs under the given budgets")
        for band in bands:
            print(f"B={band.b:2d}  A in [{band.a_lo:.3f}, {band.a_hi:.3f}]")
        return 0
    if args.surface:
        if args.K is None:
            raise ConfigError("--surface needs --K")
        a_values = np.arange(args.a_min, args.a_max + args.a_step / 2,
                             args.a_step)
        b_values = [int(tok) for tok in args.b_list.split(",") if tok.strip()]
        rows = calibration.loss_surface(args.K, a_values, b_values)
        if not args.out:
            raise ConfigError("--surface needs --out")
        calibration.write_calibration_csv(rows, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")
        return 0
    if args.table:
        ks = [int(tok) for tok in args.K_list.split(",") if tok.strip()]
        rows = calibration.threshold_table(ks, args.threshold_b,
                                           args.target_ew)
        for row in rows:
            print(f"K={row['K']:6d}  A={row['A']:.3f}  B={row['B']}  "
                  f"E(W)={row['E_W']:.3f}  100*E_max(L)={100 * row['E_max_L']:.3f}  "
                  f"T*={row['T_star']:.2f}")
        if args.out:
            calibration.write_calibration_csv(rows, args.out)
            print(f"wrote {len(rows)} rows to {args.out}")
        return 0
    if args.K is None:
        raise ConfigError("calibrate needs --K (or --table/--feasibility)")
    a = calibration.solve_threshold_a(args.K, args.threshold_b, args.target_ew)
    loss, t_star = calibration.max_expected_loss(a, args.threshold_b, args.K)
    print(f"K={args.K}  B={args.threshold_b}  target E(W)={args.target_ew}")
    print(f"A={a:.3f}  E(W)={calibration.expected_wasted(a, args.threshold_b, args.K):.3f}  "
          f"E_max(L)={loss:.6f}  T*={t_star:.2f}")
    return 0


def cmd_recover(args: argparse.Namespace) -> int:
    try:
        data = np.load(args.data)
    except OSError as exc:
        raise ConfigError(f"cannot read data file {args.data!r}: {exc}")
    if "x" not in data or "z" not in data:
        raise ConfigError("data file must contain arrays 'x' and 'z'")
    x, z = data["x"], data["z"]
    spec = GeneratorSpec(args.ff if args.ff is not None else 0b10111,
                         args.fb if args.fb is not None else 0b11001,
                         args.memory if args.memory is not None else 4)
    channel = ChannelModel(args.noise_std) if args.noise_std is not None \
        else ChannelModel.from_snr_db(args.snr_db)
    monitor = None
    if not args.no_early_stop:
        a = args.threshold_a
        if a is None:
            a = calibration.stored_threshold_a(np.atleast_2d(x).shape[1])
        monitor = StoppingMonitor(ThresholdPair(a=a, b=args.threshold_b))
    result = run_recovery(build_trellis(spec), channel, x, z, monitor=monitor,
                          candidate_policy=args.policy)
    status = "stopped early" if result.stopped_early else "completed"
    print(f"{status} at iteration {result.stop_iteration}")
    print("pi_hat:", " ".join(str(v) for v in result.permutation))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(calibration.CSV_SCHEMA_LINE + "\n")
            writer = csv.writer(fh)
            writer.writerow(["iteration", "pi_hat", "score", "epsilon"])
            for i, j in enumerate(result.permutation):
                writer.writerow([i + 1, int(j),
                                 repr(float(result.score_trace[i])),
                                 repr(float(result.epsilon_trace[i]))])
        print(f"wrote trace to {args.out}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config_from_args(args, snr_is_list=False)
    result = sweep(config)
    k = config.block_length
    for row in result.rows:
        arm = "with stop rule" if row.monitor == "es" else "no stop rule"
        print(f"snr={row.snr_db:+.2f} dB  M={row.num_blocks}  [{arm}]  "
              f"P_C={row.p_c:.4f} (+-{row.p_c_halfwidth:.4f})  "
              f"E(W)={row.e_w:.2f} (+-{row.e_w_halfwidth:.2f})  "
              f"delta P_C={row.delta_p_c:.5f}")
    if config.out:
        print(f"wrote {len(result.rows)} rows to {config.out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config_from_args(args, snr_is_list=True)
    if not config.out:
        raise ConfigError("sweep needs an output CSV (--out or out= in config)")
    result = sweep(config)
    print(f"wrote {len(result.rows)} rows to {config.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":       # pragma: no cover
    sys.exit(main())
