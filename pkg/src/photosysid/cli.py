"""Command-line front end for the identification pipeline.

Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure,
4 partial failure (some grid points or validation cases failed while
others succeeded).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bdm, excitation, lpv, pipeline, spectral, tffit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None,
                   help="experiment config file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the global seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--grid", type=str, default=None,
                   help="override the u_dc grid as min:step:max")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers for independent simulations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photosysid",
        description="frequency-domain identification of photosynthesis dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("excite", help="design a multisine and render one period")
    _add_common(p)
    p.add_argument("--udc", type=float, default=None)
    p.add_argument("--periods", type=int, default=1)

    p = sub.add_parser("simulate", help="simulate the model under a light program")
    _add_common(p)
    p.add_argument("--udc", type=float, default=None, help="constant light level")
    p.add_argument("--sine", type=str, default=None,
                   help="sine program as u_dc:amplitude:f_hz")
    p.add_argument("--spec", type=Path, default=None,
                   help="multisine spec file to use as the program")
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--rate", type=float, default=None, help="sample rate (Hz)")

    p = sub.add_parser("frf", help="best linear approximation from traces")
    _add_common(p)
    p.add_argument("--traces", type=str, required=True,
                   help="comma-separated trace CSVs, one per realization")
    p.add_argument("--specs", type=str, required=True,
                   help="comma-separated spec files matching the traces")

    p = sub.add_parser("fit", help="fit a rational model to an FRF file")
    _add_common(p)
    p.add_argument("--frf", type=Path, required=True)

    p = sub.add_parser("identify", help="full per-grid-point identification")
    _add_common(p)

    p = sub.add_parser("lpv-build", help="fit schedules through local models")
    _add_common(p)
    p.add_argument("--models", type=Path, default=None,
                   help="model directory (default <out>/models)")
    p.add_argument("--yss", type=Path, default=None,
                   help="steady-state table (default <out>/yss.csv)")

    p = sub.add_parser("validate", help="compare LPV and reference model")
    _add_common(p)
    p.add_argument("--schedule", type=Path, default=None,
                   help="schedule file (default <out>/schedule.txt)")
    p.add_argument("--paper-schedule", action="store_true",
                   help="use the published schedule coefficients verbatim")
    p.add_argument("--stabilize", choices=("strict", "reflect"), default="strict",
                   help="how to treat unstable scheduled poles")

    p = sub.add_parser("figures", help="export figure CSV bundles from artifacts")
    _add_common(p)
    return parser


def _load_config(args) -> pipeline.ExperimentConfig:
    if args.config is not None:
        config = pipeline.load_config(args.config)
    else:
        config = pipeline.ExperimentConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.jobs is not None:
        config = replace(config, jobs=args.jobs)
    if args.grid is not None:
        parts = args.grid.split(":")
        if len(parts) != 3:
            raise pipeline.ConfigError("--grid expects min:step:max")
        lo, step, hi = (float(tok) for tok in parts)
        if step <= 0 or hi < lo:
            raise pipeline.ConfigError("--grid expects min <= max and step > 0")
        config = replace(config, u_min=lo, u_step=step, u_max=hi)
    return config


def _cmd_excite(args, config) -> int:
    u_dc = args.udc if args.udc is not None else config.u_min
    spec = excitation.design_multisine(
        u_dc, config.amplitude, config.f_min_hz, config.f_max_hz, config.tones,
        grid_rule=config.grid_rule, rng_seed=config.seed,
        amplitude_mode=config.amplitude_mode)
    args.out.mkdir(parents=True, exist_ok=True)
    spec_path = args.out / "excitation_spec.txt"
    excitation.save_spec(spec, spec_path)
    signal = excitation.render(spec, config.sample_rate_hz, periods=args.periods)
    csv_path = args.out / "excitation.csv"
    excitation.save_signal_csv(signal, csv_path)
    print(f"wrote {spec_path} and {csv_path} "
          f"(crest factor {excitation.crest_factor(signal):.3f})")
    return EXIT_OK


def _cmd_simulate(args, config) -> int:
    params = config.parameters()
    if args.spec is not None:
        program = bdm.MultisineLight(excitation.load_spec(args.spec))
    elif args.sine is not None:
        u_dc, amp, f = (float(tok) for tok in args.sine.split(":"))
        program = bdm.SineLight(u_dc, amp, f)
    elif args.udc is not None:
        program = bdm.ConstantLight(args.udc)
    else:
        raise pipeline.ConfigError("simulate needs --udc, --sine or --spec")
    rate = args.rate
    if rate is None:
        rate = max(10.0 * program.max_frequency, 1.0)
    trace = bdm.simulate(params, program, t_span=(0.0, args.duration),
                         sample_rate=rate)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "trace.csv"
    bdm.save_trace_csv(trace, path)
    for note in trace.metadata.get("warnings", []):
        print(f"warning: {note}", file=sys.stderr)
    print(f"wrote {path} ({trace.t.size} samples, "
          f"{trace.metadata.get('steps', 0)} solver steps)")
    return EXIT_OK


def _cmd_frf(args, config) -> int:
    trace_paths = [Path(tok) for tok in args.traces.split(",")]
    spec_paths = [Path(tok) for tok in args.specs.split(",")]
    if len(trace_paths) != len(spec_paths):
        raise pipeline.ConfigError("--traces and --specs must pair up")
    realizations = []
    for t_path, s_path in zip(trace_paths, spec_paths):
        trace = bdm.load_trace_csv(t_path)
        spec = excitation.load_spec(s_path)
        realizations.append(spectral.realization_from_trace(
            trace, spec, keep_last=config.keep_periods))
    estimate = spectral.bla(realizations)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "frf.csv"
    spectral.save_frf_csv(estimate, path)
    print(f"wrote {path} ({int(np.sum(estimate.excited_mask))} excited bins, "
          f"M={estimate.realizations})")
    return EXIT_OK


def _cmd_fit(args, config) -> int:
    estimate = spectral.load_frf_csv(args.frf)
    fit = tffit.fit_local_model(estimate, n_a=config.n_a, n_b=config.n_b,
                                weights=config.weights)
    zpk = tffit.tf_to_zpk(fit.tf)
    zpk = tffit.enforce_stability(zpk, policy=config.stability)
    diagnostics = dict(fit.diagnostics)
    diagnostics["stability_action"] = "none"
    model = tffit.LocalModel(fit.tf, zpk, u_dc=float("nan"), diagnostics=diagnostics)
    args.out.mkdir(parents=True, exist_ok=True)
    model_path = args.out / "model.txt"
    tffit.save_local_model(model, model_path)
    bode_path = args.out / "bode.csv"
    tffit.save_bode_csv(fit.tf, estimate.excited_frequencies(), bode_path)
    print(f"wrote {model_path} and {bode_path} "
          f"(poles {np.array2string(zpk.poles, precision=4)})")
    return EXIT_OK


def _cmd_identify(args, config) -> int:
    result = pipeline.cmd_identify(config, args.out, jobs=args.jobs)
    ok = len(result.models)
    for u_dc, err in result.failures:
        print(f"u_dc={u_dc:g} failed: {err}", file=sys.stderr)
    print(f"identified {ok}/{result.grid.size} grid points -> {args.out} "
          f"(manifest {result.manifest_hash[:12]})")
    if ok == 0:
        return EXIT_NUMERIC
    return EXIT_PARTIAL if result.failures else EXIT_OK


def _cmd_lpv_build(args, config) -> int:
    models_dir = args.models if args.models is not None else args.out / "models"
    yss_path = args.yss if args.yss is not None else args.out / "yss.csv"
    models = pipeline.load_models_dir(models_dir)
    yss = pipeline.load_yss_csv(yss_path)
    schedule = pipeline.cmd_lpv_build(models, yss, args.out, config)
    r2 = " ".join(f"{k}={v:.3f}" for k, v in sorted(schedule.r2.items()))
    print(f"wrote {args.out / 'schedule.txt'} ({r2})")
    return EXIT_OK


def _cmd_validate(args, config) -> int:
    if args.paper_schedule:
        schedule = lpv.LpvSchedule.paper_published()
    else:
        path = args.schedule if args.schedule is not None else args.out / "schedule.txt"
        schedule = lpv.load_schedule(path)
    report = pipeline.cmd_validate(schedule, config, args.out,
                                   stability_policy=args.stabilize)
    for case in report.cases:
        if case.error:
            print(f"{case.case.name}: FAILED ({case.error})", file=sys.stderr)
        else:
            print(f"{case.case.name}: R^2 = {case.r2:.4f} "
                  f"(shape {case.r2_shape:.4f})")
    n_bad = len(report.failures)
    if n_bad == len(report.cases):
        return EXIT_NUMERIC
    return EXIT_PARTIAL if n_bad else EXIT_OK


def _cmd_figures(args, config) -> int:
    written = pipeline.cmd_figures(args.out, config)
    print(f"wrote {len(written)} figure CSVs under {args.out / 'figures'}")
    return EXIT_OK


_HANDLERS = {
    "excite": _cmd_excite,
    "simulate": _cmd_simulate,
    "frf": _cmd_frf,
    "fit": _cmd_fit,
    "identify": _cmd_identify,
    "lpv-build": _cmd_lpv_build,
    "validate": _cmd_validate,
    "figures": _cmd_figures,
}

_NUMERIC_ERRORS = (
    bdm.IntegrationError, bdm.SteadyStateError, bdm.BdmDomainError,
    bdm.SingularOutputError, spectral.NotSettledError,
    spectral.InsufficientPeriodsError, spectral.InsufficientRealizationsError,
    spectral.ZeroInputBinError, tffit.RankDeficientError,
    tffit.UnstableModelError, lpv.ScheduleRangeError,
    lpv.ScheduleStabilityError, lpv.TrackingError,
    excitation.NonnegativityError, excitation.CoherenceError,
    np.linalg.LinAlgError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        config = _load_config(args)
        return _HANDLERS[args.command](args, config)
    except (pipeline.ConfigError, FileNotFoundError, ValueError) as exc:
        if isinstance(exc, _NUMERIC_ERRORS):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
