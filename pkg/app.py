#!/usr/bin/env python3
"""
ARGUS detector command-line entry point.

Subcommands wrap the ml/ pipeline: import, simulate, attack, train, detect,
evaluate, ablate, gradcheck, benchmark. Machine-readable output goes to
files or stdout; logs go to stderr.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

load_dotenv()

from ml.detector import (  # noqa: E402
    StreamDetector,
    evaluate,
    fit,
    load_detector,
    save_detector,
    verdict_line,
)
from ml.error_handling import ArgusError, error_line  # noqa: E402
from ml.harness import (  # noqa: E402
    emit_report,
    report_json,
    run_alpha_beta_grid,
    run_baseline_comparison,
    run_benchmark,
    run_noise_robustness,
    run_poisoning_ablation,
    run_threshold_comparison,
    run_threshold_trace,
    run_training_duration_ablation,
)
from ml.nn import TrainConfig, init_model, numeric_gradient_check  # noqa: E402
from ml.simulator import (  # noqa: E402
    AttackScenario,
    HomeProfile,
    build_benchmark,
    default_profile,
    flicker_pool,
    generate_home,
    inject_attack,
)
from ml.threshold import ThresholdConfig  # noqa: E402
from ml.trace import load_home_assistant_export, read_trace, write_trace  # noqa: E402
from src.core.config import Config  # noqa: E402

logger = logging.getLogger("argus")

ABLATIONS = ("threshold", "alphabeta", "duration", "noise", "poison", "baseline", "thresholdtrace")

DEFAULT_EXPERIMENT = {
    "alphas": [round(0.1 * i, 1) for i in range(11)],
    "betas": [round(0.1 * i, 1) for i in range(11)],
    "durations": [1, 2, 3, 4, 5, 6, 7],
    "sigmas": [0, 1, 2, 3, 4, 5, 6],
    "devices": ["sensor.temperature", "light.ceiling", "binary_sensor.motion"],
    "fractions": [0.0, 0.001, 0.006, 0.02, 0.05],
    "pool_episodes": 400,
}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _read_json(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArgusError(f"{path}: invalid JSON ({e})")


def _write_bytes(path: str, data: bytes) -> None:
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def _train_config(args, doc: Dict[str, Any]) -> TrainConfig:
    options = dict(doc.get("train", {}))
    options["seed"] = args.seed
    if args.desk_scale:
        return TrainConfig.desk_scale(**options)
    return TrainConfig.from_dict(options)


def _threshold_config(args, doc: Dict[str, Any], benchmark: bool = False) -> ThresholdConfig:
    options = doc.get("threshold", {})
    cfg = ThresholdConfig.for_benchmark(**options) if benchmark else ThresholdConfig.from_dict(options)
    if getattr(args, "alpha", None) is not None:
        cfg = replace(cfg, alpha=args.alpha)
    if getattr(args, "beta", None) is not None:
        cfg = replace(cfg, beta=args.beta)
    return cfg


def _scenarios(doc: Any) -> List[AttackScenario]:
    items = doc.get("scenarios", [doc]) if isinstance(doc, dict) else doc
    return [AttackScenario.from_dict(item) for item in items]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_import(args) -> int:
    trace = load_home_assistant_export(args.input, tz=args.tz)
    _write_bytes(args.output, write_trace(trace))
    logger.info(f"import: {len(trace.updates)} updates from {len(trace.devices)} devices")
    return 0


def cmd_simulate(args) -> int:
    doc = _read_json(args.profile)
    profile = HomeProfile.from_dict({**doc, "seed": args.seed}) if doc else default_profile(args.seed)
    trace = generate_home(profile, args.days)
    _write_bytes(args.output, write_trace(trace))
    logger.info(f"simulate: {len(trace.updates)} updates, seed={args.seed}")
    return 0


def cmd_attack(args) -> int:
    trace = read_trace(args.input)
    for k, scenario in enumerate(_scenarios(_read_json(args.scenario))):
        trace = inject_attack(trace, scenario, seed=args.seed + k)
    _write_bytes(args.output, write_trace(replace(trace, seed=args.seed)))
    return 0


def cmd_train(args) -> int:
    doc = _read_json(args.config)
    trace = read_trace(args.input)
    detector = fit(
        trace,
        _train_config(args, doc),
        _threshold_config(args, doc),
        l=int(doc.get("l", Config.WINDOW_LENGTH)),
        context_depth=int(doc.get("context_depth", Config.CONTEXT_DEPTH)),
    )
    _write_bytes(args.output, save_detector(detector))
    return 0


def cmd_detect(args) -> int:
    detector = load_detector(Path(args.model).read_bytes())
    checkpoint = _read_json(args.state_in) if args.state_in else None
    stream = StreamDetector(detector, checkpoint)
    trace = read_trace(args.input)
    out = sys.stdout if args.output == "-" else open(args.output, "w", encoding="utf-8")
    try:
        alerts = 0
        for update in trace.updates:
            verdict = stream.process(update)
            alerts += verdict.decision.value == "attack"
            out.write(verdict_line(verdict) + "\n")
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    if args.state_out:
        Path(args.state_out).write_text(json.dumps(stream.checkpoint(), sort_keys=True, indent=2) + "\n")
    logger.info(f"detect: {len(trace.updates)} events, {alerts} alerts")
    return 0


def cmd_evaluate(args) -> int:
    detector = load_detector(Path(args.model).read_bytes())
    report = evaluate(detector, read_trace(args.input), seed=args.seed)
    _write_bytes(args.output, report_json(report).encode("utf-8"))
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    model = init_model(n_devices=3, l=4, hidden=(4, 2), rng=rng)
    window = rng.uniform(0.0, 1.0, size=(4, 3))
    result = numeric_gradient_check(model, window, n_checks=args.checks, seed=args.seed)
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0 if result.passed else 1


def cmd_benchmark(args) -> int:
    doc = _read_json(args.config)
    report, _, _ = run_benchmark(
        seed=args.seed,
        train_cfg=_train_config(args, doc),
        thr_cfg=_threshold_config(args, doc, benchmark=True),
        l=int(doc.get("l", Config.WINDOW_LENGTH)),
    )
    for path in emit_report(report, args.formats, args.out_dir):
        print(path)
    return 0


def cmd_ablate(args) -> int:
    doc = {**DEFAULT_EXPERIMENT, **_read_json(args.config)}
    train_cfg = _train_config(args, doc)
    thr_cfg = _threshold_config(args, doc, benchmark=True)
    l = int(doc.get("l", Config.WINDOW_LENGTH))
    seed = args.seed
    bench = build_benchmark(seed=seed)

    if args.kind == "duration":
        report = run_training_duration_ablation(bench.train, doc["durations"], bench.test, train_cfg, thr_cfg, l, seed)
    elif args.kind == "poison":
        pool = flicker_pool(bench.train, int(doc["pool_episodes"]), seed=seed)
        report = run_poisoning_ablation(bench.train, pool, doc["fractions"], bench.test, train_cfg, thr_cfg, l, seed)
    elif args.kind == "baseline":
        report = run_baseline_comparison(bench.train, bench.test, train_cfg, thr_cfg, l, seed)
    else:
        if args.model:
            detector = load_detector(Path(args.model).read_bytes())
        else:
            detector = fit(bench.train, train_cfg, thr_cfg, l=l)
        if args.kind == "threshold":
            report = run_threshold_comparison(detector, bench.test, seed)
        elif args.kind == "alphabeta":
            report = run_alpha_beta_grid(detector, bench.test, doc["alphas"], doc["betas"], seed)
        elif args.kind == "thresholdtrace":
            report = run_threshold_trace(detector, bench.test, seed)
        else:
            report = run_noise_robustness(detector, bench.test_benign, doc["sigmas"], doc["devices"], seed)

    for path in emit_report(report, args.formats, args.out_dir):
        print(path)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="argus",
        description="Contextual intrusion detection for smart-home event streams",
    )
    parser.add_argument(
        "--log-level", default=Config.LOG_LEVEL, type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], help="logging level (default from ARGUS_LOG_LEVEL)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, training: bool = False):
        p.add_argument("--seed", type=int, default=Config.SEED, help="seed for every randomised step")
        if training:
            p.add_argument("--config", help="JSON document with train/threshold/l/context_depth sections")
            p.add_argument("--desk-scale", action="store_true", help="reduced training profile (hidden 32/8, 2000 epochs)")
            p.add_argument("--alpha", type=float, help="threshold aging factor override")
            p.add_argument("--beta", type=float, help="threshold security level override")

    p = sub.add_parser("import", help="convert a state-history export (CSV or JSON records) to a trace")
    p.add_argument("--in", dest="input", required=True, help="export file (.csv or .json)")
    p.add_argument("--tz", default=Config.DEFAULT_TZ, help="home timezone for day boundaries (default from ARGUS_TZ)")
    p.add_argument("-o", "--output", default="-", help="trace output path ('-' for stdout)")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("simulate", help="generate a benign synthetic home trace")
    common(p)
    p.add_argument("--profile", help="HomeProfile JSON (default: built-in single-inhabitant home)")
    p.add_argument("--days", type=int, default=14, help="calendar days to simulate")
    p.add_argument("-o", "--output", default="-", help="trace output path ('-' for stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="inject attack scenarios into a trace")
    common(p)
    p.add_argument("--in", dest="input", required=True, help="input trace")
    p.add_argument("--scenario", required=True, help="AttackScenario JSON (one object, a list, or {'scenarios': [...]})")
    p.add_argument("-o", "--output", default="-", help="labelled trace output path")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train", help="fit a detector on a benign trace")
    common(p, training=True)
    p.add_argument("--in", dest="input", required=True, help="training trace")
    p.add_argument("-o", "--output", required=True, help="detector container output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="stream verdicts for a trace")
    common(p)
    p.add_argument("--model", required=True, help="detector container")
    p.add_argument("--in", dest="input", required=True, help="trace to classify")
    p.add_argument("-o", "--output", default="-", help="verdict JSON lines output path")
    p.add_argument("--state-in", help="resume from a stream checkpoint")
    p.add_argument("--state-out", help="write the stream checkpoint after the last event")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score a detector on a labelled trace")
    common(p)
    p.add_argument("--model", required=True, help="detector container")
    p.add_argument("--in", dest="input", required=True, help="labelled trace")
    p.add_argument("-o", "--output", default="-", help="report JSON output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run one experiment on the synthetic benchmark")
    common(p, training=True)
    p.add_argument("--kind", required=True, choices=ABLATIONS, help="experiment to run")
    p.add_argument("--model", help="reuse a trained detector (threshold, alphabeta, thresholdtrace, noise)")
    p.add_argument("--out-dir", default=Config.REPORT_DIR, help="report directory")
    p.add_argument("--formats", nargs="+", default=["json", "csv"], choices=["json", "csv"], help="report formats")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("benchmark", help="end-to-end fourteen-day benchmark with all nine attacks")
    common(p, training=True)
    p.add_argument("--out-dir", default=Config.REPORT_DIR, help="report directory")
    p.add_argument("--formats", nargs="+", default=["json", "csv"], choices=["json", "csv"], help="report formats")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="finite-difference check of the autoencoder gradients")
    common(p)
    p.add_argument("--checks", type=int, default=200, help="parameter entries to check")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=args.log_level.upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )
    problems = Config.validate()
    if problems:
        for problem in problems:
            print(error_line(ArgusError(problem)), file=sys.stderr)
        return 1

    try:
        return args.func(args)
    except (ArgusError, OSError) as e:
        print(error_line(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
