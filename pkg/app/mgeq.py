#!/usr/bin/env python3
"""
mgeq - microgrid dynamic equivalent toolkit

    mgeq.py synth --params p.params --fault t=10,dur=0.5,vsag=0.4 --span 9:14 --dt 0.01 --out fault.csv
    mgeq.py simulate --params p.params --input fault.csv
    mgeq.py rank --params p.params --input fault.csv --window 10:14 --out ranking.csv
    mgeq.py estimate --params p.params --input fault.csv --window1 9:9.99 --window2 10:14 --out-dir out
    mgeq.py validate --params out/fitted.params --event fault_11s.csv --window 11:14
    mgeq.py run scenario.txt

Exit codes: 0 success (validated), 1 error, 2 retune required.
"""

import argparse
import os
import sys

# Ensure app root is in path
current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

from core import config
from core.exceptions import EquivalentModelError
from core.logger import setup_logger
from services.de_estimator import DeConfig, save_history_csv, two_stage_estimate
from services.parameters import STAGE1, STAGE2
from services.pipeline import EXIT_ERROR, EXIT_RETUNE, EXIT_VALIDATED, ScenarioConfig, run_pipeline
from services.playin_simulator import SimConfig, simulate_playin, synth_scenario
from services.sensitivity import SCALES, parse_policy, rank_parameters, save_ranking_csv, select_parameters
from services.validation_report import ValidationEvent, emit_comparison, save_report_csv, validate
from utils import naming_conventions as names
from utils.parameter_file import load_parameter_set, save_parameter_set, split_list
from utils.timeseries_io import (BaseSystem, PreprocessConfig, Window, load_pcc_csv, preprocess,
                                 save_pcc_csv, write_pcc_csv)

logger = setup_logger("mgeq")


def _sim_config(args) -> SimConfig:
    anchor = config.settings.anchor if args.anchor is None else args.anchor
    return SimConfig(dt_int=args.dt_int, method=args.method, anchor=anchor)


def _load_series(path, args, base):
    return preprocess(load_pcc_csv(path, base), PreprocessConfig(args.cutoff_hz, args.resample_dt))


def _write_series(series, out):
    if out:
        save_pcc_csv(series, out)
        logger.info(f"[📁] Wrote {len(series)} samples to {out}")
    else:
        write_pcc_csv(series, sys.stdout)


# =============================================================================
# Subcommands
# =============================================================================

def cmd_simulate(args, base) -> int:
    params = load_parameter_set(args.params)
    series = _load_series(args.input, args, base)
    out = simulate_playin(params, series, _sim_config(args), base)
    _write_series(series.with_power(out.p_hat, out.q_hat), args.out)
    return 0


def cmd_synth(args, base) -> int:
    params = load_parameter_set(args.params)
    template = names.parse_fault_template(args.fault)
    logger.info(f"[⚡] Synthesising {names.format_fault_template(template)} on {args.span}")
    series = synth_scenario(params, template, base, Window.parse(args.span), args.dt, _sim_config(args))
    _write_series(series, args.out)
    return 0


def cmd_rank(args, base) -> int:
    params = load_parameter_set(args.params)
    series = _load_series(args.input, args, base)
    candidates = split_list(args.names) if args.names else None
    ranking = rank_parameters(params, series, Window.parse(args.window), args.rel_step, candidates,
                              _sim_config(args), base, args.scale)
    if args.out:
        save_ranking_csv(ranking, args.out)
        logger.info(f"[📁] Ranking written to {args.out}")
    else:
        for e in ranking.entries:
            print(f"{e.param_name},{e.e_p!r},{e.e_q!r},{e.combined_score!r}")
    if args.select:
        selection = select_parameters(ranking, parse_policy(args.select))
        logger.info(f"[🧬] Selected: {', '.join(selection.selected)}")
    return 0


def cmd_estimate(args, base) -> int:
    params = load_parameter_set(args.params)
    series = _load_series(args.input, args, base)
    w1, w2 = Window.parse(args.window1), Window.parse(args.window2)
    stage1_cfg = DeConfig.stage1(seed=args.seed, **_de_overrides(args, 1))
    stage2_cfg = DeConfig.stage2(seed=stage1_cfg.seed + 1, **_de_overrides(args, 2))
    stage1_names = split_list(args.stage1_free) if args.stage1_free else STAGE1
    stage2_names = split_list(args.stage2_free) if args.stage2_free else STAGE2
    result = two_stage_estimate(params.with_free(()), series, w1, w2, stage1_cfg, stage2_cfg,
                                stage1_names, stage2_names, _sim_config(args), base)
    fitted_path = names.get_artifact_path(args.out_dir, names.FITTED_PARAMS)
    history_path = names.get_artifact_path(args.out_dir, names.HISTORY)
    save_parameter_set(result.fitted, fitted_path)
    save_history_csv(result, history_path)
    logger.info(f"[✓] eps={result.best_eps:.4e}; wrote {fitted_path} and {history_path}")
    return 0


def _de_overrides(args, stage: int) -> dict:
    overrides = {}
    for attr, flag in (("population_size", "population"), ("max_generations", "generations")):
        value = getattr(args, f"{flag}{stage}")
        if value is not None:
            overrides[attr] = value
    if args.target_eps is not None:
        overrides["target_eps"] = args.target_eps
    return overrides


def cmd_validate(args, base) -> int:
    if len(args.event) != len(args.window):
        logger.error(f"[❌] {len(args.event)} --event but {len(args.window)} --window given")
        return EXIT_ERROR
    fitted = load_parameter_set(args.params)
    cfg = _sim_config(args)
    events = [ValidationEvent(names.event_label_from_path(path), _load_series(path, args, base), Window.parse(w))
              for path, w in zip(args.event, args.window)]
    report = validate(fitted, events, args.threshold, cfg, base)
    if args.out:
        save_report_csv(report, args.out)
        logger.info(f"[📁] Report written to {args.out}")
    else:
        for r in report.records:
            print(f"{r.event_label},{r.window.label},{r.mse_p!r},{r.mse_q!r},{r.mse_total!r},{r.status}")
    if args.emit_curves:
        for ev, record in zip(events, report.records):
            if not record.failed:
                emit_comparison(fitted, ev.series,
                                os.path.join(args.emit_curves, names.get_comparison_filename(ev.label)), cfg, base)
    print(report.verdict)
    return EXIT_VALIDATED if report.validated else EXIT_RETUNE


def cmd_run(args, base) -> int:
    scenario = ScenarioConfig.load(args.scenario)
    return run_pipeline(scenario, base).exit_code


# =============================================================================
# Argument parsing
# =============================================================================

def _add_sim_flags(p):
    p.add_argument("--dt-int", type=float, default=config.settings.dt_int, help="integration step [s]")
    p.add_argument("--method", choices=["rk4", "trapezoidal"], default=config.settings.method)
    anchor = p.add_mutually_exclusive_group()
    anchor.add_argument("--anchor", dest="anchor", action="store_true", default=None,
                        help="match the initial PCC flow through the ZIP constant-power terms")
    anchor.add_argument("--no-anchor", dest="anchor", action="store_false")
    p.set_defaults(anchor=None)


def _add_input_flags(p):
    p.add_argument("--input", required=True, help="PCC CSV (t,v,f,p,q)")
    p.add_argument("--cutoff-hz", type=float, default=None, help="first-order low-pass cutoff [Hz]")
    p.add_argument("--resample-dt", type=float, default=None, help="decimate to this sample interval [s]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgeq", description="Microgrid gray-box dynamic equivalent")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="play the PCC voltage/frequency into the equivalent")
    p.add_argument("--params", required=True)
    _add_input_flags(p)
    p.add_argument("--out", help="output CSV (default: stdout)")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="synthesise a fault scenario from known parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--fault", required=True, help="t=10,dur=0.5,vsag=0.4[,vpre=,tau=,fdev=,tauf=]")
    p.add_argument("--span", default="9:14", help="t0:t1 [s]")
    p.add_argument("--dt", type=float, default=0.01, help="sample interval [s]")
    p.add_argument("--out", help="output CSV (default: stdout)")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rank", help="rank parameters by trajectory sensitivity")
    p.add_argument("--params", required=True)
    _add_input_flags(p)
    p.add_argument("--window", required=True, help="t0:t1 [s]")
    p.add_argument("--rel-step", type=float, default=config.settings.rel_step)
    p.add_argument("--scale", choices=SCALES, default="relative",
                   help="rank theta*dy/dtheta (relative) or dy/dtheta (absolute)")
    p.add_argument("--names", help="comma-separated candidates (default: free parameters or all rankable)")
    p.add_argument("--select", help="top_k:K or threshold:F")
    p.add_argument("--out", help="ranking CSV (default: stdout)")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("estimate", help="two-stage differential-evolution estimation")
    p.add_argument("--params", required=True)
    _add_input_flags(p)
    p.add_argument("--window1", required=True, help="pre-disturbance window t0:t1")
    p.add_argument("--window2", required=True, help="disturbance window t0:t1")
    p.add_argument("--stage1-free", help="comma-separated stage-1 parameters")
    p.add_argument("--stage2-free", help="comma-separated stage-2 parameters")
    p.add_argument("--seed", type=int, default=config.settings.seed)
    p.add_argument("--population1", type=int, default=None)
    p.add_argument("--population2", type=int, default=None)
    p.add_argument("--generations1", type=int, default=None)
    p.add_argument("--generations2", type=int, default=None)
    p.add_argument("--target-eps", type=float, default=None)
    p.add_argument("--out-dir", default="out")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("validate", help="score a fitted equivalent on held-out events")
    p.add_argument("--params", required=True)
    p.add_argument("--event", action="append", default=[], required=True, help="PCC CSV (repeatable)")
    p.add_argument("--window", action="append", default=[], required=True, help="t0:t1 per event")
    p.add_argument("--threshold", type=float, default=config.settings.threshold)
    p.add_argument("--out", help="report CSV (default: stdout)")
    p.add_argument("--emit-curves", metavar="DIR", help="write comparison_<event>.csv files here")
    p.add_argument("--cutoff-hz", type=float, default=None)
    p.add_argument("--resample-dt", type=float, default=None)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="execute a scenario file end to end")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, BaseSystem.default())
    except (EquivalentModelError, OSError) as e:
        logger.error(f"[❌] {args.command}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
