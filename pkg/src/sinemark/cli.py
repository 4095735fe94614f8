"""Command-line front end.

Subcommands: keygen, watermark, detect, simulate, sweep, eval-map.
Exit codes: 0 success, 1 usage error, 2 data error, 3 detection not
feasible (too few probes survive selection).  Output files are written
atomically.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from ._jsonio import atomic_write_text, dumps_record
from .detect import (
    DetectionParams,
    detect_watermark,
    mean_average_precision,
    read_probe_records,
    write_probe_records,
    write_report,
)
from .errors import TooFewProbesError, WatermarkError
from .keys import WatermarkConfig, generate_key, load_key_with_config, save_key
from .spectral import (
    DEFAULT_GRID_MAX,
    DEFAULT_GRID_MIN,
    DEFAULT_GRID_STEP,
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW_WIDTH,
)
from .watermark import serve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures on exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class _DataError(Exception):
    """File or content problem; maps to exit code 2."""


def _build_parser() -> _Parser:
    parser = _Parser(prog="sinemark",
                     description="Keyed sinusoidal watermarking of classification APIs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a watermark key file")
    p.add_argument("--classes", type=int, required=True, help="number of classes m")
    p.add_argument("--vocab", type=int, required=True, help="vocabulary size")
    p.add_argument("--dim", type=int, required=True, help="projection dimension n")
    p.add_argument("--freq", type=float, required=True, help="watermark frequency f_w")
    p.add_argument("--target-class", type=int, required=True)
    p.add_argument("--eps", type=float, required=True, help="watermark level in [0, 0.5]")
    p.add_argument("--tau", type=float, required=True, help="selection ratio in [0, 1]")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--out", required=True, help="key file path")

    p = sub.add_parser("watermark", help="watermark a prediction file line by line")
    p.add_argument("--key", required=True)
    p.add_argument("--mode", choices=("soft", "hard"), required=True)
    p.add_argument("--in", dest="infile", required=True,
                   help="line-oriented records {\"x\": int, \"probs\": [...]}")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0,
                   help="sampling stream seed for hard mode")
    p.add_argument("--eps", type=float, default=None,
                   help="override the key file watermark level")
    p.add_argument("--tau", type=float, default=None,
                   help="override the key file selection ratio")

    p = sub.add_parser("detect", help="score a probe file against a key")
    p.add_argument("--key", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--report", required=True, help="detection report path")
    p.add_argument("--delta", type=float, default=DEFAULT_WINDOW_WIDTH)
    p.add_argument("--fmax", type=float, default=None,
                   help="noise band upper edge (default: grid end)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--grid-min", type=float, default=DEFAULT_GRID_MIN)
    p.add_argument("--grid-max", type=float, default=DEFAULT_GRID_MAX)
    p.add_argument("--grid-step", type=float, default=DEFAULT_GRID_STEP)
    p.add_argument("--tau", type=float, default=None,
                   help="override the key file selection ratio")

    p = sub.add_parser("simulate", help="run a detection experiment")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True, help="experiment result document")
    p.add_argument("--emit-key", default=None,
                   help="also write the experiment key file here")
    p.add_argument("--emit-probe", default=None,
                   help="also write the first positive's probe records here")

    p = sub.add_parser("sweep", help="sweep one parameter over several experiments")
    _add_experiment_flags(p)
    p.add_argument("--parameter", required=True,
                   choices=("epsilon", "tau", "target-class-mass"))
    p.add_argument("--values", required=True,
                   help="comma-separated parameter values")
    p.add_argument("--out", required=True, help="sweep table (text)")
    p.add_argument("--json-out", default=None,
                   help="optional full per-value results document")

    p = sub.add_parser("eval-map", help="mean average precision of ranking trials")
    p.add_argument("--scores", required=True,
                   help="document with a 'trials' list of score sets")
    p.add_argument("--out", default=None, help="optional result document")

    return parser


def _add_experiment_flags(p) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=2000)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--concentration", type=float, default=0.3)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--freq", type=float, default=16.0)
    p.add_argument("--target-class", type=int, default=0)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--positives", type=int, default=10)
    p.add_argument("--negatives-unwatermarked", type=int, default=10)
    p.add_argument("--negatives-true-label", type=int, default=10)
    p.add_argument("--coverage", type=float, default=0.9)
    p.add_argument("--hard-repeats", type=int, default=50)
    p.add_argument("--student", choices=("table", "featurized"), default="table")
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--target-class-mass", type=float, default=None)
    p.add_argument("--soft-only", action="store_true")
    p.add_argument("--hard-only", action="store_true")


def _experiment_config(args):
    from .sim import ExperimentConfig

    if args.soft_only and args.hard_only:
        raise _DataError("--soft-only and --hard-only are mutually exclusive")
    return ExperimentConfig(
        vocab_size=args.vocab, m=args.classes, concentration=args.concentration,
        zipf_exponent=args.zipf, dim=args.dim, f_w=args.freq,
        target_class=args.target_class, epsilon=args.eps, tau=args.tau,
        n_positive=args.positives,
        n_negative_unwatermarked=args.negatives_unwatermarked,
        n_negative_true_label=args.negatives_true_label,
        coverage=args.coverage, hard_repeats=args.hard_repeats,
        student_kind=args.student, feature_dim=args.feature_dim,
        epochs=args.epochs, lr=args.lr, seed=args.seed,
        target_class_mass=args.target_class_mass,
        run_soft=not args.hard_only, run_hard=not args.soft_only,
    )


def _load_key_and_config(path, eps_override=None, tau_override=None, mode="soft"):
    key, config = load_key_with_config(path)
    eps = eps_override if eps_override is not None else (
        config.epsilon if config else None)
    tau = tau_override if tau_override is not None else (
        config.tau if config else None)
    if eps is None or tau is None:
        raise _DataError(
            f"key file {path} carries no watermark settings; pass --eps and --tau")
    return key, WatermarkConfig(epsilon=eps, tau=tau, mode=mode)


def _read_prediction_lines(path):
    """Parse {"x": int, "probs": [...]} lines; yields (lineno, x, probs)."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise _DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _DataError(f"{path} line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(doc, dict) or "x" not in doc or "probs" not in doc:
                raise _DataError(
                    f"{path} line {lineno}: expected an object with 'x' and 'probs'")
            x = doc["x"]
            if isinstance(x, bool) or not isinstance(x, int):
                raise _DataError(f"{path} line {lineno}: 'x' must be an integer")
            probs = doc["probs"]
            if not isinstance(probs, list) or not probs:
                raise _DataError(f"{path} line {lineno}: 'probs' must be a nonempty array")
            yield lineno, x, probs


def _cmd_keygen(args) -> int:
    key = generate_key(args.classes, args.vocab, args.dim, args.freq,
                       args.target_class, seed=args.seed)
    config = WatermarkConfig(epsilon=args.eps, tau=args.tau, mode=args.mode)
    save_key(key, args.out, config)
    print(f"wrote key file {args.out}")
    return EXIT_OK


def _cmd_watermark(args) -> int:
    key, cfg = _load_key_and_config(args.key, args.eps, args.tau, args.mode)
    lines = []
    for lineno, x, probs in _read_prediction_lines(args.infile):
        try:
            p_hat = np.asarray(probs, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise _DataError(f"{args.infile} line {lineno}: {exc}") from exc
        rng = np.random.default_rng((args.seed, lineno)) if args.mode == "hard" else None
        try:
            out = serve(key, cfg, x, p_hat, rng=rng)
        except WatermarkError as exc:
            raise _DataError(f"{args.infile} line {lineno}: {exc}") from exc
        if out.mode == "soft":
            record = {"x": x, "probs": [float(v) for v in out.soft],
                      "selected": out.selected}
        else:
            record = {"x": x, "label": out.hard, "selected": out.selected}
        lines.append(dumps_record(record))
    atomic_write_text(args.out, "\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} records to {args.out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    key, cfg = _load_key_and_config(args.key, None, args.tau)
    try:
        records = read_probe_records(args.probe)
    except (OSError, ValueError) as exc:
        raise _DataError(str(exc)) from exc
    params = DetectionParams(
        grid_min=args.grid_min, grid_max=args.grid_max, grid_step=args.grid_step,
        delta=args.delta, f_max=args.fmax, threshold=args.threshold)
    try:
        report = detect_watermark(key, cfg, records, params)
    except WatermarkError as exc:
        raise _DataError(str(exc)) from exc
    write_report(report, args.report)
    print(f"decision {report.decision}; p_snr {report.p_snr:.6g}; "
          f"probes used {report.n_probes_used}; report {args.report}")
    if report.warning == "too_few_probes":
        print(f"too few probes survive selection ({report.n_probes_used})",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from .sim import run_detection_experiment
    from .sim.experiment import first_positive_probe_artifacts

    config = _experiment_config(args)
    result = run_detection_experiment(config)
    doc = result.to_dict()
    doc["config"]["detection"] = dataclasses.asdict(config.detection)
    atomic_write_text(args.out, json.dumps(doc, indent=2) + "\n")
    print(f"wrote experiment result to {args.out}")
    if args.emit_key or args.emit_probe:
        if not config.run_soft:
            raise _DataError("--emit-key/--emit-probe need the soft block (drop --hard-only)")
        key, cfg, records, p_snr = first_positive_probe_artifacts(config)
        if args.emit_key:
            save_key(key, args.emit_key, cfg)
            print(f"wrote key file {args.emit_key}")
        if args.emit_probe:
            write_probe_records(records, args.emit_probe)
            print(f"wrote {len(records)} probe records to {args.emit_probe} "
                  f"(in-process p_snr {p_snr:.12g})")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .sim import sweep_parameter, sweep_table

    config = _experiment_config(args)
    parameter = args.parameter.replace("-", "_")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise _DataError(f"--values must be comma-separated numbers: {exc}") from exc
    if not values:
        raise _DataError("--values is empty")
    results = sweep_parameter(config, parameter, values)
    atomic_write_text(args.out, sweep_table(parameter, values, results))
    print(f"wrote sweep table to {args.out}")
    if args.json_out:
        doc = [r.to_dict() for r in results]
        atomic_write_text(args.json_out, json.dumps(doc, indent=2) + "\n")
        print(f"wrote per-value results to {args.json_out}")
    return EXIT_OK


def _cmd_eval_map(args) -> int:
    try:
        with open(args.scores, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _DataError(f"cannot read {args.scores}: {exc}") from exc
    if not isinstance(doc, dict) or "trials" not in doc:
        raise _DataError(f"{args.scores}: expected an object with a 'trials' list")
    try:
        value = mean_average_precision(doc["trials"])
    except (KeyError, TypeError, ValueError) as exc:
        raise _DataError(f"{args.scores}: {exc}") from exc
    print(f"mAP {value:.6f}")
    if args.out:
        atomic_write_text(args.out, json.dumps({"map": value}) + "\n")
    return EXIT_OK


_COMMANDS = {
    "keygen": _cmd_keygen,
    "watermark": _cmd_watermark,
    "detect": _cmd_detect,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "eval-map": _cmd_eval_map,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TooFewProbesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except _DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (WatermarkError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
