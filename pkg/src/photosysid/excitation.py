"""Periodic excitation signals: random-phase multisines and stepped sines.

A multisine is a sum of harmonically related sinusoids on top of a DC
offset,

    u(t) = u_dc + sum_k A_k sin(2 pi k f0 t + phi_k),

where the harmonic numbers k are integers so the signal is exactly
1/f0-periodic.  Coherent sampling (an integer number of samples per
period) keeps the DFT leakage-free, which the downstream spectral
averaging relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * np.pi

# samples per fastest excited period used by the nonnegativity scan
NONNEG_CHECK_DENSITY = 32


class NonnegativityError(ValueError):
    """The designed light signal dips below zero."""


class CoherenceError(ValueError):
    """Sampling is not coherent with the signal period."""


@dataclass
class MultisineSpec:
    """Full description of one periodic excitation realization.

    ``harmonics`` are the excited integer multiples of the base frequency
    ``f0``; together with per-tone ``amplitudes`` and ``phases`` they
    determine the signal exactly.  ``rng_seed`` records the seed the
    phases were drawn from so a realization can be reproduced bit-exactly.
    """

    u_dc: float                       # DC light level (uE m^-2 s^-1)
    f0: float                         # base frequency (Hz); period is 1/f0
    harmonics: np.ndarray             # distinct sorted positive ints
    amplitudes: np.ndarray            # per-tone amplitude (uE m^-2 s^-1)
    phases: np.ndarray                # per-tone phase (rad)
    rng_seed: int | None = None

    def __post_init__(self):
        self.harmonics = np.asarray(self.harmonics, dtype=np.int64)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.phases = np.asarray(self.phases, dtype=float)
        if self.f0 <= 0:
            raise ValueError("base frequency must be positive")
        if self.harmonics.ndim != 1 or self.harmonics.size == 0:
            raise ValueError("at least one excited harmonic is required")
        if np.any(self.harmonics < 1):
            raise ValueError("harmonics must be positive integers")
        if np.any(np.diff(self.harmonics) <= 0):
            raise ValueError("harmonics must be strictly increasing")
        if not (self.amplitudes.shape == self.phases.shape == self.harmonics.shape):
            raise ValueError("harmonics, amplitudes and phases must have equal length")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")

    @property
    def period(self) -> float:
        return 1.0 / self.f0

    @property
    def f_max(self) -> float:
        return float(self.harmonics[-1] * self.f0)

    @property
    def tone_count(self) -> int:
        return int(self.harmonics.size)

    def ac_waveform(self, t: np.ndarray) -> np.ndarray:
        """AC part (no DC) evaluated at arbitrary times, tone by tone."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for k, a, p in zip(self.harmonics, self.amplitudes, self.phases):
            out += a * np.sin(TWO_PI * self.f0 * k * t + p)
        return out

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        return self.u_dc + self.ac_waveform(t)

    def minimum_value(self) -> float:
        """Minimum of u(t) over one period on a dense grid.

        The grid has at least NONNEG_CHECK_DENSITY samples per fastest
        excited period, which bounds how far a true minimum can hide
        between samples.
        """
        n = NONNEG_CHECK_DENSITY * int(self.harmonics[-1])
        t = np.arange(n) * (self.period / n)
        return float(self.evaluate(t).min())

    def validate_nonnegative(self):
        m = self.minimum_value()
        if m < 0.0:
            raise NonnegativityError(
                f"light intensity dips to {m:.3f}; raise u_dc (currently "
                f"{self.u_dc:g}) or lower the amplitudes so the signal "
                "stays nonnegative"
            )


@dataclass
class SampledSignal:
    """A rendered periodic signal: P exact periods of N samples each."""

    sample_rate: float
    samples: np.ndarray
    periods: int
    samples_per_period: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.size != self.periods * self.samples_per_period:
            raise ValueError("sample count must equal periods * samples_per_period")

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def period_view(self, j: int) -> np.ndarray:
        n = self.samples_per_period
        return self.samples[j * n:(j + 1) * n]


def _allocate_harmonics(targets_hz: np.ndarray, f0: float) -> np.ndarray:
    """Round target frequencies to distinct harmonics of f0.

    Collisions move to the nearest unused integer (lower candidate wins a
    tie), so dense low ends of a logarithmic grid fill 1, 2, 3, ...
    """
    used: set[int] = set()
    out = []
    for tgt in targets_hz:
        k = max(1, int(round(tgt / f0)))
        step = 0
        while True:
            candidates = (k,) if step == 0 else (k - step, k + step)
            hit = next((c for c in candidates if c >= 1 and c not in used), None)
            if hit is not None:
                used.add(hit)
                out.append(hit)
                break
            step += 1
    return np.array(sorted(out), dtype=np.int64)


def design_multisine(
    u_dc: float,
    amplitude: float,
    f_min: float,
    f_max: float,
    tone_count: int,
    grid_rule: str = "logarithmic",
    rng_seed: int | None = None,
    amplitude_mode: str = "per-tone",
) -> MultisineSpec:
    """Construct a flat random-phase multisine.

    The base frequency is f_min, so the slowest tone sets the period.
    ``amplitude_mode`` fixes what ``amplitude`` means:

    * ``per-tone``  -- every tone gets that amplitude verbatim.
    * ``power``     -- total AC power equals a single sine of that
                       amplitude (per-tone A/sqrt(F)).
    * ``peak``      -- tones are scaled so the realized AC waveform peaks
                       at that amplitude, guaranteeing u(t) >= u_dc - A.

    Phases are drawn i.i.d. uniform on [0, 2 pi) from ``rng_seed``.
    Raises NonnegativityError when the realized signal dips below zero.
    """
    if not (0 < f_min <= f_max):
        raise ValueError("need 0 < f_min <= f_max")
    if tone_count < 1:
        raise ValueError("tone_count must be >= 1")
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if f_min == f_max and tone_count > 1:
        raise ValueError("a degenerate band can only hold one tone")

    f0 = f_min
    if tone_count == 1:
        targets = np.array([f_min])
    elif grid_rule == "uniform":
        targets = np.linspace(f_min, f_max, tone_count)
    elif grid_rule == "logarithmic":
        targets = np.logspace(np.log10(f_min), np.log10(f_max), tone_count)
    else:
        raise ValueError(f"unknown grid_rule {grid_rule!r}")
    harmonics = _allocate_harmonics(targets, f0)

    rng = np.random.default_rng(rng_seed)
    phases = rng.uniform(0.0, TWO_PI, size=tone_count)

    if amplitude_mode == "per-tone":
        amplitudes = np.full(tone_count, amplitude)
    elif amplitude_mode == "power":
        amplitudes = np.full(tone_count, amplitude / np.sqrt(tone_count))
    elif amplitude_mode == "peak":
        probe = MultisineSpec(0.0, f0, harmonics, np.ones(tone_count), phases)
        n = NONNEG_CHECK_DENSITY * int(harmonics[-1])
        t = np.arange(n) * (1.0 / f0 / n)
        unit_peak = float(np.max(np.abs(probe.ac_waveform(t))))
        amplitudes = np.full(tone_count, amplitude / unit_peak if unit_peak > 0 else 0.0)
    else:
        raise ValueError(f"unknown amplitude_mode {amplitude_mode!r}")

    spec = MultisineSpec(u_dc, f0, harmonics, amplitudes, phases, rng_seed=rng_seed)
    spec.validate_nonnegative()
    return spec


def single_tone(u_dc: float, amplitude: float, frequency: float,
                phase: float = 0.0) -> MultisineSpec:
    """One-sine special case of the multisine."""
    return MultisineSpec(u_dc, frequency, np.array([1]), np.array([amplitude]),
                         np.array([phase]))


def render(spec: MultisineSpec, sample_rate: float | None = None,
           periods: int = 1) -> SampledSignal:
    """Sample the signal coherently: P exact periods, integer N per period.

    One period is evaluated and tiled, so periods are bit-identical by
    construction.  Default sample rate is the smallest coherent rate at
    or above 10x the fastest excited frequency.
    """
    if periods < 1:
        raise ValueError("periods must be >= 1")
    if sample_rate is None:
        n = int(np.ceil(10.0 * spec.f_max / spec.f0))
        sample_rate = n * spec.f0
    n_float = sample_rate / spec.f0
    n = int(round(n_float))
    if abs(n_float - n) > 1e-9 * max(1.0, n_float) or n < 1:
        raise CoherenceError(
            f"sample rate {sample_rate:g} Hz is not an integer multiple of "
            f"f0={spec.f0:g} Hz; coherent (leakage-free) sampling requires "
            "an integer number of samples per period"
        )
    if sample_rate <= 2.0 * spec.f_max:
        raise ValueError(
            f"sample rate {sample_rate:g} Hz does not exceed twice the "
            f"fastest excited frequency {spec.f_max:g} Hz"
        )
    t1 = np.arange(n) / sample_rate
    one = spec.evaluate(t1)
    return SampledSignal(sample_rate, np.tile(one, periods), periods, n)


def crest_factor(signal: SampledSignal | np.ndarray) -> float:
    """Peak over RMS of the AC component."""
    x = signal.samples if isinstance(signal, SampledSignal) else np.asarray(signal, float)
    ac = x - x.mean()
    peak = np.max(np.abs(ac))
    if peak == 0.0:
        raise ValueError("crest factor is undefined for a constant signal")
    return float(peak / np.sqrt(np.mean(ac ** 2)))


@dataclass
class SteppedSineStep:
    spec: MultisineSpec
    settle_periods: int
    measure_periods: int
    start_time: float

    @property
    def duration(self) -> float:
        return (self.settle_periods + self.measure_periods) * self.spec.period


@dataclass
class SteppedSineSchedule:
    steps: list[SteppedSineStep] = field(default_factory=list)

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.steps)


def stepped_sine_schedule(u_dc: float, amplitude: float, frequencies,
                          settle_periods: int, measure_periods: int) -> SteppedSineSchedule:
    """Sequential single-tone experiments, slow alternative to the multisine."""
    freqs = np.asarray(list(frequencies), dtype=float)
    if np.any(freqs <= 0):
        raise ValueError("frequencies must be positive")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("frequencies must be sorted ascending")
    if settle_periods < 0 or measure_periods < 1:
        raise ValueError("need settle_periods >= 0 and measure_periods >= 1")
    steps, t = [], 0.0
    for f in freqs:
        step = SteppedSineStep(single_tone(u_dc, amplitude, f),
                               settle_periods, measure_periods, start_time=t)
        steps.append(step)
        t += step.duration
    return SteppedSineSchedule(steps)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_spec(spec: MultisineSpec, path):
    """Key-value header plus one table row per tone; %.17g round-trips."""
    lines = [
        "# multisine excitation specification",
        f"u_dc = {spec.u_dc:.17g}",
        f"f0_hz = {spec.f0:.17g}",
        f"rng_seed = {spec.rng_seed if spec.rng_seed is not None else 'none'}",
        f"tones = {spec.tone_count}",
        "# harmonic  amplitude  phase_rad",
    ]
    for k, a, p in zip(spec.harmonics, spec.amplitudes, spec.phases):
        lines.append(f"{k:d}  {a:.17g}  {p:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_spec(path) -> MultisineSpec:
    header: dict[str, str] = {}
    rows = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, value = (part.strip() for part in line.split("=", 1))
                header[key] = value
            else:
                k, a, p = line.split()
                rows.append((int(k), float(a), float(p)))
    if len(rows) != int(header["tones"]):
        raise ValueError(f"{path}: expected {header['tones']} tones, found {len(rows)}")
    seed = None if header["rng_seed"] == "none" else int(header["rng_seed"])
    harm = np.array([r[0] for r in rows], dtype=np.int64)
    amp = np.array([r[1] for r in rows])
    pha = np.array([r[2] for r in rows])
    return MultisineSpec(float(header["u_dc"]), float(header["f0_hz"]),
                         harm, amp, pha, rng_seed=seed)


def save_signal_csv(signal: SampledSignal, path):
    with open(path, "w") as fh:
        fh.write("t,u\n")
        for t, u in zip(signal.t, signal.samples):
            fh.write(f"{t:.17g},{u:.17g}\n")
