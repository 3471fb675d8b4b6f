"""End-to-end experiment orchestration and artifact persistence.

Stages: identify (per-grid-point multisine experiments, BLA, local model
fits), lpv-build (schedules through the local models), validate (LPV vs
full model on held-out operating points), figures (CSV bundles for the
standard plots).  Every random draw derives from the global seed plus a
(grid index, realization, attempt) key, so reruns are bit-identical.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bdm, excitation, lpv, spectral, tffit

TOOL_VERSION = "photosysid 0.1.0"


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ValidationCase:
    kind: str                  # "sine" | "multisine"
    u_dc: float
    amplitude: float
    freqs: tuple[float, ...]   # one entry for sine, several for multisine

    @property
    def name(self) -> str:
        if self.kind == "sine":
            return f"sine_u{self.u_dc:g}_f{self.freqs[0]:g}"
        return f"multisine_u{self.u_dc:g}"

    @property
    def base_frequency(self) -> float:
        return min(self.freqs)


def _parse_case(token: str) -> ValidationCase:
    parts = token.split(":")
    if len(parts) != 4 or parts[0] not in ("sine", "multisine"):
        raise ConfigError(
            f"bad validation case {token!r}; expected "
            "sine:<u_dc>:<amplitude>:<f_hz> or "
            "multisine:<u_dc>:<amplitude>:<f1,f2,...>"
        )
    kind, u_dc, amp, freqs = parts
    freq_tuple = tuple(float(tok) for tok in freqs.split(","))
    if kind == "sine" and len(freq_tuple) != 1:
        raise ConfigError(f"sine case {token!r} must carry exactly one frequency")
    return ValidationCase(kind, float(u_dc), float(amp), freq_tuple)


_SCHEMA: dict[str, dict[str, str]] = {
    "run": {"seed": "int", "jobs": "int"},
    "bdm": {"f0_over_fv": "float", "*": "float"},  # any model parameter override
    "multisine": {
        "f_min_hz": "float", "f_max_hz": "float", "tones": "int",
        "grid": "str", "amplitude": "float", "amplitude_mode": "str",
        "sample_rate_hz": "float", "keep_periods": "int",
        "settle_periods": "int", "realizations": "int", "max_redraws": "int",
    },
    "grid": {"u_min": "float", "u_max": "float", "u_step": "float"},
    "fit": {"n_a": "int", "n_b": "int", "weights": "str", "stability": "str"},
    "schedule": {"f0_ss_init": "float", "fit_f0_ss": "bool"},
    "validation": {
        "horizon_s": "float", "multisine_horizon_s": "float",
        "samples_per_cycle": "float", "multisine_sample_rate_hz": "float",
        "cases": "str",
    },
}


@dataclass
class ExperimentConfig:
    """Everything one run needs; see configs/desk.cfg for the schema."""

    seed: int = 20240001
    jobs: int = 1
    f0_over_fv: float = 0.2
    bdm_overrides: dict = field(default_factory=dict)

    f_min_hz: float = 1e-3
    f_max_hz: float = 10.0
    tones: int = 200
    grid_rule: str = "logarithmic"
    amplitude: float = 38.0
    amplitude_mode: str = "peak"
    sample_rate_hz: float = 100.0
    keep_periods: int = 4
    settle_periods: int = 2
    realizations: int = 6
    max_redraws: int = 3

    u_min: float = 100.0
    u_max: float = 1000.0
    u_step: float = 50.0

    n_a: int = 2
    n_b: int = 2
    weights: str = "relative"
    stability: str = "reject"

    f0_ss_init: float = 6.7e-5
    fit_f0_ss: bool = True

    horizon_s: float = 3600.0
    multisine_horizon_s: float = 4000.0
    samples_per_cycle: float = 200.0
    multisine_sample_rate_hz: float = 400.0
    cases: tuple[ValidationCase, ...] = ()

    def __post_init__(self):
        if not self.cases:
            self.cases = default_validation_cases()

    def parameters(self) -> bdm.BdmParameters:
        return bdm.BdmParameters(f0_over_fv=self.f0_over_fv, **self.bdm_overrides)

    def u_grid(self) -> np.ndarray:
        n = int(round((self.u_max - self.u_min) / self.u_step))
        grid = self.u_min + self.u_step * np.arange(n + 1)
        return grid[grid <= self.u_max + 1e-9]

    def canonical_string(self) -> str:
        rows = []
        for key, value in sorted(vars(self).items()):
            if key == "cases":
                value = " ".join(
                    f"{c.kind}:{c.u_dc:g}:{c.amplitude:g}:" + ",".join(f"{f:g}" for f in c.freqs)
                    for c in self.cases
                )
            elif key == "bdm_overrides":
                value = ",".join(f"{k}={v:.17g}" for k, v in sorted(value.items()))
            rows.append(f"{key}={value}")
        return "\n".join(rows)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_string().encode()).hexdigest()


def default_validation_cases() -> tuple[ValidationCase, ...]:
    cases = []
    for u_dc in (420.0, 860.0):
        for f in (1e-3, 1e-2, 1e-1, 1.0):
            cases.append(ValidationCase("sine", u_dc, 10.0, (f,)))
    cases.append(ValidationCase("multisine", 530.0, 20.0, (1e-3, 1e-2, 1e-1, 10.0)))
    return tuple(cases)


def _convert(value: str, kind: str, where: str):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if value.lower() in ("true", "yes", "1"):
                return True
            if value.lower() in ("false", "no", "0"):
                return False
            raise ValueError(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {value!r} as {kind}") from exc


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    values: dict = {"bdm_overrides": {}}
    bdm_fields = {f.name for f in fields(bdm.BdmParameters)}
    key_map = {
        ("run", "seed"): "seed", ("run", "jobs"): "jobs",
        ("multisine", "f_min_hz"): "f_min_hz", ("multisine", "f_max_hz"): "f_max_hz",
        ("multisine", "tones"): "tones", ("multisine", "grid"): "grid_rule",
        ("multisine", "amplitude"): "amplitude",
        ("multisine", "amplitude_mode"): "amplitude_mode",
        ("multisine", "sample_rate_hz"): "sample_rate_hz",
        ("multisine", "keep_periods"): "keep_periods",
        ("multisine", "settle_periods"): "settle_periods",
        ("multisine", "realizations"): "realizations",
        ("multisine", "max_redraws"): "max_redraws",
        ("grid", "u_min"): "u_min", ("grid", "u_max"): "u_max",
        ("grid", "u_step"): "u_step",
        ("fit", "n_a"): "n_a", ("fit", "n_b"): "n_b",
        ("fit", "weights"): "weights", ("fit", "stability"): "stability",
        ("schedule", "f0_ss_init"): "f0_ss_init",
        ("schedule", "fit_f0_ss"): "fit_f0_ss",
        ("validation", "horizon_s"): "horizon_s",
        ("validation", "multisine_horizon_s"): "multisine_horizon_s",
        ("validation", "samples_per_cycle"): "samples_per_cycle",
        ("validation", "multisine_sample_rate_hz"): "multisine_sample_rate_hz",
    }

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            where = f"[{section}] {key}"
            if section == "bdm":
                if key == "f0_over_fv":
                    values["f0_over_fv"] = _convert(raw, "float", where)
                elif key in bdm_fields:
                    values["bdm_overrides"][key] = _convert(raw, "float", where)
                else:
                    raise ConfigError(f"{where}: not a model parameter")
                continue
            if section == "validation" and key == "cases":
                values["cases"] = tuple(_parse_case(tok) for tok in raw.split())
                continue
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key")
            values[key_map[(section, key)]] = _convert(raw, _SCHEMA[section][key], where)

    return ExperimentConfig(**values)


def save_config(config: ExperimentConfig, path):
    """Write a config file equivalent to this configuration."""
    cases = " ".join(
        f"{c.kind}:{c.u_dc:g}:{c.amplitude:g}:" + ",".join(f"{f:g}" for f in c.freqs)
        for c in config.cases
    )
    text = f"""[run]
seed = {config.seed}
jobs = {config.jobs}

[bdm]
f0_over_fv = {config.f0_over_fv:g}
"""
    for key, value in sorted(config.bdm_overrides.items()):
        text += f"{key} = {value:g}\n"
    text += f"""
[multisine]
f_min_hz = {config.f_min_hz:g}
f_max_hz = {config.f_max_hz:g}
tones = {config.tones}
grid = {config.grid_rule}
amplitude = {config.amplitude:g}
amplitude_mode = {config.amplitude_mode}
sample_rate_hz = {config.sample_rate_hz:g}
keep_periods = {config.keep_periods}
settle_periods = {config.settle_periods}
realizations = {config.realizations}
max_redraws = {config.max_redraws}

[grid]
u_min = {config.u_min:g}
u_max = {config.u_max:g}
u_step = {config.u_step:g}

[fit]
n_a = {config.n_a}
n_b = {config.n_b}
weights = {config.weights}
stability = {config.stability}

[schedule]
f0_ss_init = {config.f0_ss_init:g}
fit_f0_ss = {str(config.fit_f0_ss).lower()}

[validation]
horizon_s = {config.horizon_s:g}
multisine_horizon_s = {config.multisine_horizon_s:g}
samples_per_cycle = {config.samples_per_cycle:g}
multisine_sample_rate_hz = {config.multisine_sample_rate_hz:g}
cases = {cases}
"""
    Path(path).write_text(text)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Artifact registry; the manifest hash covers config plus contents."""

    def __init__(self, out_dir: Path, config_hash: str):
        self.path = Path(out_dir) / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
            if self.data.get("config_hash") != config_hash:
                self.data = self._fresh(config_hash)
        else:
            self.data = self._fresh(config_hash)

    @staticmethod
    def _fresh(config_hash: str) -> dict:
        return {"tool_version": TOOL_VERSION, "config_hash": config_hash,
                "artifacts": {}, "timings_s": {}, "manifest_hash": ""}

    def record(self, stage: str, out_dir: Path, paths, elapsed: float):
        for p in paths:
            rel = str(Path(p).relative_to(out_dir))
            self.data["artifacts"][rel] = _file_hash(Path(p))
        self.data["timings_s"][stage] = round(elapsed, 3)
        body = self.data["config_hash"] + "".join(
            f"{k}:{v}" for k, v in sorted(self.data["artifacts"].items())
        )
        self.data["manifest_hash"] = hashlib.sha256(body.encode()).hexdigest()
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    @property
    def manifest_hash(self) -> str:
        return self.data["manifest_hash"]


# ---------------------------------------------------------------------------
# identify
# ---------------------------------------------------------------------------

def _tone_seed(global_seed: int, grid_index: int, realization: int,
               attempt: int) -> int:
    ss = np.random.SeedSequence(entropy=global_seed,
                                spawn_key=(grid_index, realization, attempt))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class _RealizationTask:
    grid_index: int
    realization: int
    u_dc: float
    x0: np.ndarray
    config: ExperimentConfig


def _run_realization(task: _RealizationTask):
    """One multisine experiment: design, simulate, extract the FRF."""
    cfg = task.config
    params = cfg.parameters()
    spec = None
    for attempt in range(cfg.max_redraws + 1):
        seed = _tone_seed(cfg.seed, task.grid_index, task.realization, attempt)
        try:
            spec = excitation.design_multisine(
                task.u_dc, cfg.amplitude, cfg.f_min_hz, cfg.f_max_hz,
                cfg.tones, grid_rule=cfg.grid_rule, rng_seed=seed,
                amplitude_mode=cfg.amplitude_mode)
            break
        except excitation.NonnegativityError:
            spec = None
    if spec is None:
        raise excitation.NonnegativityError(
            f"u_dc={task.u_dc:g}: no nonnegative realization within "
            f"{cfg.max_redraws + 1} phase draws; raise u_dc or lower amplitude"
        )
    light = bdm.MultisineLight(spec, validate=False)
    total_periods = cfg.keep_periods + cfg.settle_periods
    trace = bdm.simulate(params, light, x0=task.x0,
                         t_span=(0.0, total_periods * spec.period),
                         sample_rate=cfg.sample_rate_hz)
    realization = spectral.realization_from_trace(trace, spec,
                                                  keep_last=cfg.keep_periods)
    return task.grid_index, task.realization, spec, realization


@dataclass
class GridPointResult:
    u_dc: float
    frf: spectral.FrfEstimate | None = None
    model: tffit.LocalModel | None = None
    error: str | None = None


@dataclass
class IdentifyResult:
    grid: np.ndarray
    points: list[GridPointResult]
    yss_table: np.ndarray      # (n, 2): u_dc, y_ss
    out_dir: Path
    manifest_hash: str = ""

    @property
    def models(self) -> list[tffit.LocalModel]:
        return [p.model for p in self.points if p.model is not None]

    @property
    def failures(self) -> list[tuple[float, str]]:
        return [(p.u_dc, p.error) for p in self.points if p.error]


def cmd_identify(config: ExperimentConfig, out_dir, jobs: int | None = None) -> IdentifyResult:
    """Per grid point: M multisine realizations -> BLA -> local model."""
    t_start = time.perf_counter()
    out = Path(out_dir)
    for sub in ("frf", "models", "bode", "specs"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    params = config.parameters()
    grid = config.u_grid()
    points = [GridPointResult(u_dc=float(u)) for u in grid]
    written: list[Path] = []

    # steady states anchor the initial conditions and the y_ss table
    yss_rows = []
    x0_by_point: dict[int, np.ndarray] = {}
    for g, u in enumerate(grid):
        try:
            state, y_ss = bdm.steady_state(params, float(u))
            x0_by_point[g] = state.as_array()
            yss_rows.append((float(u), y_ss))
        except (bdm.SteadyStateError, bdm.BdmDomainError) as exc:
            points[g].error = f"steady state: {exc}"
    yss_table = np.array(yss_rows) if yss_rows else np.zeros((0, 2))

    tasks = [
        _RealizationTask(g, m, float(grid[g]), x0_by_point[g], config)
        for g in range(grid.size) if g in x0_by_point
        for m in range(config.realizations)
    ]
    n_jobs = jobs if jobs is not None else config.jobs
    results: dict[tuple[int, int], tuple] = {}
    failures: dict[int, str] = {}

    def consume(outcome, task):
        g = task.grid_index
        if isinstance(outcome, Exception):
            failures.setdefault(g, f"realization {task.realization}: {outcome}")
        else:
            results[(outcome[0], outcome[1])] = outcome

    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [(pool.submit(_run_realization, t), t) for t in tasks]
            for future, task in futures:
                try:
                    consume(future.result(), task)
                except Exception as exc:  # worker died or raised
                    consume(exc, task)
    else:
        for task in tasks:
            try:
                consume(_run_realization(task), task)
            except Exception as exc:
                consume(exc, task)

    for g in range(grid.size):
        point = points[g]
        if point.error:
            continue
        if g in failures:
            point.error = failures[g]
            continue
        entries = [results[(g, m)] for m in range(config.realizations)
                   if (g, m) in results]
        if len(entries) != config.realizations:
            point.error = "missing realizations"
            continue
        try:
            tag = f"udc_{int(round(point.u_dc)):04d}"
            realizations = []
            for _, m, spec, realization in entries:
                spec_path = out / "specs" / f"{tag}_m{m:02d}.txt"
                excitation.save_spec(spec, spec_path)
                written.append(spec_path)
                realizations.append(realization)
            estimate = spectral.bla(realizations)
            frf_path = out / "frf" / f"{tag}.csv"
            spectral.save_frf_csv(estimate, frf_path)
            written.append(frf_path)

            fit = tffit.fit_local_model(estimate, n_a=config.n_a, n_b=config.n_b,
                                        weights=config.weights)
            zpk = tffit.tf_to_zpk(fit.tf, u_dc=point.u_dc)
            stabilized = tffit.enforce_stability(zpk, policy=config.stability)
            action = "none"
            tf_final = fit.tf
            if stabilized is not zpk:
                action = "reflect"
                tf_final = tffit.zpk_to_tf(stabilized)
            diagnostics = dict(fit.diagnostics)
            diagnostics["stability_action"] = action
            diagnostics["fit_rms_db"] = _fit_rms_db(estimate, tf_final)
            model = tffit.LocalModel(tf_final, stabilized, point.u_dc, diagnostics)
            model_path = out / "models" / f"{tag}.txt"
            tffit.save_local_model(model, model_path)
            written.append(model_path)
            bode_path = out / "bode" / f"{tag}.csv"
            tffit.save_bode_csv(tf_final, estimate.excited_frequencies(), bode_path)
            written.append(bode_path)
            point.frf = estimate
            point.model = model
        except Exception as exc:
            point.error = str(exc)

    yss_path = out / "yss.csv"
    with open(yss_path, "w") as fh:
        fh.write("u_dc,y_ss\n")
        for u, y in yss_rows:
            fh.write(f"{u:.17g},{y:.17g}\n")
    written.append(yss_path)

    manifest = RunManifest(out, config.config_hash())
    manifest.record("identify", out, written, time.perf_counter() - t_start)
    return IdentifyResult(grid, points, yss_table, out, manifest.manifest_hash)


def _fit_rms_db(estimate: spectral.FrfEstimate, tf: tffit.RationalTf) -> float:
    freqs = estimate.excited_frequencies()
    g = estimate.excited_values()
    keep = np.isfinite(g) & (np.abs(g) > 0)
    resp = tf.freq_response(freqs[keep])
    err_db = 20.0 * np.log10(np.abs(resp / g[keep]))
    return float(np.sqrt(np.mean(err_db ** 2)))


# ---------------------------------------------------------------------------
# schedule build
# ---------------------------------------------------------------------------

def cmd_lpv_build(models: list[tffit.LocalModel], yss_table: np.ndarray,
                  out_dir, config: ExperimentConfig) -> lpv.LpvSchedule:
    t_start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    zpks = [m.zpk for m in models]
    schedule = lpv.fit_schedules(zpks, yss_table, f0_ss=config.f0_ss_init,
                                 fit_f0_ss=config.fit_f0_ss)
    schedule_path = out / "schedule.txt"
    lpv.save_schedule(schedule, schedule_path)
    r2_path = out / "schedule_r2.csv"
    with open(r2_path, "w") as fh:
        fh.write("curve,r2\n")
        for key, value in sorted(schedule.r2.items()):
            fh.write(f"{key},{value:.17g}\n")
    manifest = RunManifest(out, config.config_hash())
    manifest.record("lpv-build", out, [schedule_path, r2_path],
                    time.perf_counter() - t_start)
    return schedule


def load_models_dir(models_dir) -> list[tffit.LocalModel]:
    paths = sorted(Path(models_dir).glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no model files in {models_dir}")
    return [tffit.load_local_model(p) for p in paths]


def load_yss_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class CaseResult:
    case: ValidationCase
    r2: float | None = None
    r2_shape: float | None = None
    csv_path: Path | None = None
    error: str | None = None


@dataclass
class ValidationReport:
    cases: list[CaseResult]
    summary_path: Path | None = None

    @property
    def failures(self) -> list[CaseResult]:
        return [c for c in self.cases if c.error]


def _case_program(case: ValidationCase):
    if case.kind == "sine":
        return bdm.SineLight(case.u_dc, case.amplitude, case.freqs[0])
    f0 = case.base_frequency
    harmonics = np.array(sorted(int(round(f / f0)) for f in case.freqs),
                         dtype=np.int64)
    spec = excitation.MultisineSpec(
        case.u_dc, f0, harmonics,
        np.full(harmonics.size, case.amplitude),
        np.zeros(harmonics.size))
    return bdm.MultisineLight(spec)


def _case_rates(case: ValidationCase, config: ExperimentConfig):
    if case.kind == "sine":
        f = case.freqs[0]
        fs = config.samples_per_cycle * f
        horizon = config.horizon_s
    else:
        fs = config.multisine_sample_rate_hz
        horizon = config.multisine_horizon_s
    return fs, horizon


def run_validation_case(case: ValidationCase, schedule: lpv.LpvSchedule,
                        config: ExperimentConfig,
                        stability_policy: str = "strict"):
    """Simulate the reference model and the LPV model on one case.

    Returns (window_t, window_u, window_y_bdm, window_y_lpv, r2, r2_shape)
    computed on the last full base period of the record.
    """
    params = config.parameters()
    program = _case_program(case)
    fs, horizon = _case_rates(case, config)
    trace = bdm.simulate(params, program, t_span=(0.0, horizon), sample_rate=fs)
    sim = lpv.lpv_simulate(schedule, trace.t, trace.u, u_dc=case.u_dc,
                           scheduling="frozen",
                           stability_policy=stability_policy)
    n_per = int(round(fs / case.base_frequency))
    sl = slice(trace.t.size - n_per, trace.t.size)
    y_ref = trace.y1[sl]
    y_mod = sim.y[sl]
    r2 = lpv.r_squared(y_ref, y_mod)
    r2_shape = lpv.r_squared(y_ref - y_ref.mean(), y_mod - y_mod.mean())
    return trace.t[sl], trace.u[sl], y_ref, y_mod, r2, r2_shape


def cmd_validate(schedule: lpv.LpvSchedule, config: ExperimentConfig, out_dir,
                 stability_policy: str = "strict",
                 cases: tuple[ValidationCase, ...] | None = None) -> ValidationReport:
    t_start = time.perf_counter()
    out = Path(out_dir)
    (out / "validate").mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    results = []
    for case in (cases if cases is not None else config.cases):
        result = CaseResult(case)
        try:
            t, u, y_ref, y_mod, r2, r2_shape = run_validation_case(
                case, schedule, config, stability_policy)
            path = out / "validate" / f"{case.name}.csv"
            with open(path, "w") as fh:
                fh.write("t,u,y_bdm,y_lpv\n")
                np.savetxt(fh, np.column_stack([t, u, y_ref, y_mod]),
                           fmt="%.17g", delimiter=",")
            written.append(path)
            result.r2, result.r2_shape, result.csv_path = r2, r2_shape, path
        except Exception as exc:
            result.error = str(exc)
        results.append(result)

    summary_path = out / "validate" / "summary.csv"
    with open(summary_path, "w") as fh:
        fh.write("case,f_hz,u_dc,r2\n")
        for r in results:
            r2_txt = f"{r.r2:.6g}" if r.r2 is not None else "nan"
            fh.write(f"{r.case.name},{r.case.base_frequency:.17g},"
                     f"{r.case.u_dc:.17g},{r2_txt}\n")
    written.append(summary_path)
    manifest = RunManifest(out, config.config_hash())
    manifest.record("validate", out, written, time.perf_counter() - t_start)
    return ValidationReport(results, summary_path)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    return path


def cmd_figures(artifact_dir, config: ExperimentConfig) -> list[Path]:
    """CSV bundles mirroring the standard plots, one file per panel,
    written into <artifact_dir>/figures."""
    t_start = time.perf_counter()
    art = Path(artifact_dir)
    out = art / "figures"
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, header: str, rows: np.ndarray):
        path = out / name
        with open(path, "w") as fh:
            fh.write(header + "\n")
            np.savetxt(fh, np.atleast_2d(rows), fmt="%.17g", delimiter=",")
        written.append(path)

    base_tag = f"udc_{int(round(config.u_min)):04d}"

    # 1: excitation amplitude spectrum of the first realization
    spec = excitation.load_spec(_require(art / "specs" / f"{base_tag}_m00.txt"))
    emit("fig01_multisine_spectrum.csv", "f_hz,amplitude",
         np.column_stack([spec.harmonics * spec.f0, spec.amplitudes]))

    # 2: BLA magnitude vs total-distortion level at the base operating point
    frf = spectral.load_frf_csv(_require(art / "frf" / f"{base_tag}.csv"))
    mask = frf.excited_mask
    f_exc = frf.frequencies[mask]
    g = frf.g_bla[mask]
    sig2 = frf.sigma2_total[mask]
    m_count = max(frf.realizations, 1)
    with np.errstate(divide="ignore"):
        frf_db = 20.0 * np.log10(np.abs(g))
        nl_db = 10.0 * np.log10(m_count * sig2)
    emit("fig02_frf_vs_distortion.csv", "f_hz,frf_db,nl_db",
         np.column_stack([f_exc, frf_db, nl_db]))

    # 3 and 4: plain LS fit vs the shipped weighted fit at the base point
    ls_fit = tffit.fit_local_model(frf, n_a=config.n_a, n_b=config.n_b,
                                   weights="uniform")
    ls_db = 20.0 * np.log10(np.abs(ls_fit.tf.freq_response(f_exc)))
    emit("fig03_parametric_ls.csv", "f_hz,frf_db,fit_db",
         np.column_stack([f_exc, frf_db, ls_db]))
    model = tffit.load_local_model(_require(art / "models" / f"{base_tag}.txt"))
    wls_db = 20.0 * np.log10(np.abs(model.tf.freq_response(f_exc)))
    emit("fig04_parametric_wls.csv", "f_hz,frf_db,fit_db",
         np.column_stack([f_exc, frf_db, wls_db]))

    # 5: FRF/fit overlays on a spread of operating points
    for u in (200, 400, 600, 1000):
        tag = f"udc_{u:04d}"
        frf_u = spectral.load_frf_csv(_require(art / "frf" / f"{tag}.csv"))
        model_u = tffit.load_local_model(_require(art / "models" / f"{tag}.txt"))
        mask_u = frf_u.excited_mask
        f_u = frf_u.frequencies[mask_u]
        with np.errstate(divide="ignore"):
            db_u = 20.0 * np.log10(np.abs(frf_u.g_bla[mask_u]))
            fit_u = 20.0 * np.log10(np.abs(model_u.tf.freq_response(f_u)))
        emit(f"fig05_bode_{tag}.csv", "f_hz,frf_db,fit_db",
             np.column_stack([f_u, db_u, fit_u]))

    # 6-8: schedules against the local-model data
    models = load_models_dir(art / "models")
    schedule = lpv.load_schedule(_require(art / "schedule.txt"))
    u = np.array([m.u_dc for m in models])
    from numpy.polynomial import polynomial as npoly
    emit("fig06_gain_schedule.csv", "u_dc,k,k_fit",
         np.column_stack([u, [m.zpk.gain for m in models],
                          npoly.polyval(u, schedule.k_poly)]))
    pole_rows, zero_rows = [], []
    for m in models:
        poles = sorted(m.zpk.poles.real)
        zeros = sorted(m.zpk.zeros.real)
        pole_rows.append((poles[0], poles[1]))
        zero_rows.append((zeros[0], zeros[1]))
    pole_rows = np.array(pole_rows)
    zero_rows = np.array(zero_rows)
    emit("fig07_pole_zero_schedules.csv",
         "u_dc,p1,p1_fit,p2,p2_fit,z1,z1_fit,z2,z2_fit",
         np.column_stack([
             u, pole_rows[:, 0], npoly.polyval(u, schedule.p1_poly),
             pole_rows[:, 1], npoly.polyval(u, schedule.p2_poly),
             zero_rows[:, 0], npoly.polyval(u, schedule.z1_poly),
             zero_rows[:, 1], npoly.polyval(u, schedule.z2_poly)]))
    yss = load_yss_csv(_require(art / "yss.csv"))
    emit("fig08_steady_state_map.csv", "u_dc,y_ss,y_ss_fit",
         np.column_stack([yss[:, 0], yss[:, 1], schedule.y_ss(yss[:, 0])]))

    # 9-10: sine validation overlays
    for fig, u_dc in (("fig09", 420), ("fig10", 860)):
        for f in (1e-3, 1e-2, 1e-1, 1.0):
            case = ValidationCase("sine", float(u_dc), 10.0, (f,))
            src = _require(art / "validate" / f"{case.name}.csv")
            rows = np.loadtxt(src, delimiter=",", skiprows=1)
            emit(f"{fig}_{case.name}.csv", "t,u,y_bdm,y_lpv", rows)

    # 11-12: multisine validation, zooming slices
    ms_case = next((c for c in config.cases if c.kind == "multisine"), None)
    if ms_case is not None:
        src = _require(art / "validate" / f"{ms_case.name}.csv")
        rows = np.loadtxt(src, delimiter=",", skiprows=1)
        t_end = rows[-1, 0]
        slices = [("last_period", rows[0, 0]), ("last_100s", t_end - 100.0),
                  ("last_10s", t_end - 10.0), ("last_1s", t_end - 1.0)]
        for label, t0 in slices:
            part = rows[rows[:, 0] >= t0 - 1e-12]
            emit(f"fig11_light_{label}.csv", "t,u", part[:, :2])
            emit(f"fig12_output_{label}.csv", "t,y_bdm,y_lpv",
                 part[:, [0, 2, 3]])

    manifest = RunManifest(art, config.config_hash())
    manifest.record("figures", art, written, time.perf_counter() - t_start)
    return written
