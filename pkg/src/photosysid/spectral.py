"""Nonparametric frequency-domain analysis of periodic records.

The workflow: segment a settled trace into its last P periods, DFT each
period, average spectra per realization, divide output by input on the
excited bins, and average the per-realization frequency responses into
the best linear approximation.  Scatter across periods measures noise;
scatter across random-phase realizations measures nonlinear distortion
plus noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bdm import SimulationTrace
from .excitation import MultisineSpec


class InsufficientPeriodsError(ValueError):
    """A variance needs at least two periods."""


class InsufficientRealizationsError(ValueError):
    """A distortion estimate needs at least two realizations."""


class NotSettledError(RuntimeError):
    """The trace still carries a transient; simulate longer."""


class ZeroInputBinError(ZeroDivisionError):
    """An excited bin has no input energy."""


def dft(samples: np.ndarray) -> np.ndarray:
    """Per-sample-normalized DFT, bins 0..N/2.

    X(k) = (1/N) sum_n x(n) exp(-j 2 pi k n / N); a sine of amplitude A
    on bin k therefore shows |X(k)| = A/2, and X(0) is the mean.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a 1-D array of at least two samples")
    return np.fft.rfft(x) / x.size


def mean_and_variance(spectra: np.ndarray, want_variance: bool = True):
    """Sample mean and (complex-modulus) sample variance over axis 0.

    Variance is (1/(P-1)) sum |X_l - mean|^2 per bin.
    """
    X = np.asarray(spectra)
    if X.ndim != 2:
        raise ValueError("expected a (periods x bins) array")
    P = X.shape[0]
    mean = X.mean(axis=0)
    if not want_variance:
        return mean, None
    if P < 2:
        raise InsufficientPeriodsError(
            f"variance needs at least 2 periods, got {P}"
        )
    var = np.sum(np.abs(X - mean) ** 2, axis=0) / (P - 1)
    return mean, var


@dataclass
class PeriodSpectra:
    """Per-period DFTs of input and output over P settled periods."""

    input_spectra: np.ndarray    # (P, nbins) complex
    output_spectra: np.ndarray   # (P, nbins) complex
    f0: float                    # bin resolution (Hz)
    excited_mask: np.ndarray     # (nbins,) bool

    def __post_init__(self):
        if self.input_spectra.shape != self.output_spectra.shape:
            raise ValueError("input and output spectra must have equal shape")
        if self.input_spectra.shape[0] < 1:
            raise ValueError("need at least one period")
        if self.excited_mask.shape != (self.input_spectra.shape[1],):
            raise ValueError("excited mask length must match the bin count")

    @property
    def periods(self) -> int:
        return self.input_spectra.shape[0]

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.input_spectra.shape[1]) * self.f0


@dataclass
class PeriodStatistics:
    u_mean: np.ndarray
    u_variance: np.ndarray | None
    y_mean: np.ndarray
    y_variance: np.ndarray | None


def period_statistics(spectra: PeriodSpectra,
                      want_variance: bool = True) -> PeriodStatistics:
    u_mean, u_var = mean_and_variance(spectra.input_spectra, want_variance)
    y_mean, y_var = mean_and_variance(spectra.output_spectra, want_variance)
    return PeriodStatistics(u_mean, u_var, y_mean, y_var)


@dataclass
class FrfRealization:
    """One experiment's frequency response on the excited bins.

    ``g`` holds Y/U at excited bins and NaN elsewhere; ``output_residual``
    holds |Y| at the non-excited bins (intermodulation leak-through) and
    NaN at excited ones.  ``noise_variance_g`` is the variance of g due to
    period-to-period noise, zero for noise-free simulation data.
    """

    g: np.ndarray
    output_residual: np.ndarray
    excited_mask: np.ndarray
    f0: float
    periods: int = 1
    noise_variance_g: np.ndarray | None = None

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.g.size) * self.f0


def frf_realization(u_mean: np.ndarray, y_mean: np.ndarray,
                    excited_mask: np.ndarray, f0: float = 1.0,
                    periods: int = 1,
                    y_variance: np.ndarray | None = None) -> FrfRealization:
    """Divide averaged spectra on the excited bins only."""
    u_mean = np.asarray(u_mean)
    y_mean = np.asarray(y_mean)
    excited_mask = np.asarray(excited_mask, dtype=bool)
    dead = excited_mask & (np.abs(u_mean) == 0.0)
    if np.any(dead):
        raise ZeroInputBinError(
            f"excited bin(s) {np.flatnonzero(dead).tolist()} carry zero input"
        )
    g = np.full(u_mean.shape, np.nan + 0j, dtype=complex)
    g[excited_mask] = y_mean[excited_mask] / u_mean[excited_mask]
    residual = np.full(u_mean.shape, np.nan)
    residual[~excited_mask] = np.abs(y_mean[~excited_mask])
    noise_var = None
    if y_variance is not None:
        noise_var = np.zeros(u_mean.shape)
        noise_var[excited_mask] = (y_variance[excited_mask] / periods) / \
            np.abs(u_mean[excited_mask]) ** 2
    return FrfRealization(g, residual, excited_mask, f0, periods, noise_var)


@dataclass
class FrfEstimate:
    """Best linear approximation with noise and total-distortion levels."""

    g_bla: np.ndarray             # complex; NaN at non-excited bins
    sigma2_noise: np.ndarray      # variance of g_bla due to noise
    sigma2_total: np.ndarray      # variance of g_bla across realizations
    output_residual: np.ndarray   # mean |Y| on non-excited bins
    excited_mask: np.ndarray
    f0: float
    realizations: int
    periods: int

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.g_bla.size) * self.f0

    def excited_frequencies(self) -> np.ndarray:
        return self.frequencies[self.excited_mask]

    def excited_values(self) -> np.ndarray:
        return self.g_bla[self.excited_mask]


def bla(realizations: list[FrfRealization]) -> FrfEstimate:
    """Average per-realization FRFs; scatter across them is the total
    distortion (nonlinearity plus noise) of the averaged estimate."""
    if len(realizations) < 1:
        raise InsufficientRealizationsError("need at least one realization")
    first = realizations[0]
    for r in realizations[1:]:
        if r.g.shape != first.g.shape or not np.array_equal(r.excited_mask, first.excited_mask):
            raise ValueError("realizations must share bin grid and excited mask")
    M = len(realizations)
    G = np.array([r.g for r in realizations])
    g_bla = G.mean(axis=0)

    sigma2_total = np.zeros(first.g.shape)
    if M >= 2:
        mask = first.excited_mask
        diffs = np.abs(G[:, mask] - g_bla[mask]) ** 2
        sigma2_total[mask] = diffs.sum(axis=0) / (M * (M - 1))
    else:
        sigma2_total[:] = 0.0

    sigma2_noise = np.zeros(first.g.shape)
    if all(r.noise_variance_g is not None for r in realizations):
        sigma2_noise = sum(r.noise_variance_g for r in realizations) / M ** 2

    residual = np.nanmean(np.array([r.output_residual for r in realizations]), axis=0) \
        if M > 1 else first.output_residual

    return FrfEstimate(g_bla, sigma2_noise, sigma2_total, residual,
                       first.excited_mask.copy(), first.f0, M, first.periods)


def total_distortion(estimate: FrfEstimate) -> np.ndarray:
    """sigma^2 of the BLA on excited bins; raises when M < 2."""
    if estimate.realizations < 2:
        raise InsufficientRealizationsError(
            "total distortion needs at least two realizations"
        )
    return estimate.sigma2_total[estimate.excited_mask]


def steady_period_extractor(trace: SimulationTrace, spec: MultisineSpec,
                            keep_last: int = 4, transient_tol: float = 1e-4,
                            output: str = "y1") -> PeriodSpectra:
    """Segment the last ``keep_last`` settled periods and transform them.

    The trace must cover at least keep_last + 1 full periods so at least
    one settling period is discarded.  A transient metric (relative RMS
    difference between the first and last kept period of the output) above
    ``transient_tol`` aborts with advice to simulate longer.
    """
    if keep_last < 1:
        raise ValueError("keep_last must be >= 1")
    fs = trace.sample_rate
    n_float = fs / spec.f0
    n = int(round(n_float))
    if abs(n_float - n) > 1e-9 * max(1.0, n_float):
        raise ValueError(
            f"trace sample rate {fs:g} Hz is not coherent with the signal "
            f"period {spec.period:g} s"
        )
    total = trace.t.size
    if total - 1 < (keep_last + 1) * n:
        raise ValueError(
            f"trace holds {(total - 1) / n:.2f} periods; need at least "
            f"{keep_last + 1} (kept periods plus settling)"
        )

    y = getattr(trace, output)
    end = total - 1  # final sample starts the next period; exclude it
    start = end - keep_last * n

    y_first = y[start:start + n]
    y_last = y[end - n:end]
    denom = np.sqrt(np.mean(y_last ** 2))
    metric = np.sqrt(np.mean((y_first - y_last) ** 2)) / denom if denom > 0 else np.inf
    if metric > transient_tol:
        raise NotSettledError(
            f"first and last kept periods differ by {metric:.2e} relative RMS "
            f"(threshold {transient_tol:g}); simulate more settling periods"
        )

    n_bins = n // 2 + 1
    U = np.empty((keep_last, n_bins), dtype=complex)
    Y = np.empty((keep_last, n_bins), dtype=complex)
    for l in range(keep_last):
        seg = slice(start + l * n, start + (l + 1) * n)
        U[l] = dft(trace.u[seg])
        Y[l] = dft(y[seg])

    mask = np.zeros(n_bins, dtype=bool)
    if spec.harmonics[-1] >= n_bins:
        raise ValueError("excited harmonics exceed the Nyquist bin")
    mask[spec.harmonics] = True
    return PeriodSpectra(U, Y, spec.f0, mask)


def realization_from_trace(trace: SimulationTrace, spec: MultisineSpec,
                           keep_last: int = 4,
                           transient_tol: float = 1e-4) -> FrfRealization:
    """Trace -> settled periods -> averaged spectra -> FRF, in one step."""
    spectra = steady_period_extractor(trace, spec, keep_last, transient_tol)
    stats = period_statistics(spectra, want_variance=spectra.periods >= 2)
    return frf_realization(stats.u_mean, stats.y_mean, spectra.excited_mask,
                           f0=spec.f0, periods=spectra.periods,
                           y_variance=stats.y_variance)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_frf_csv(estimate: FrfEstimate, path):
    """One row per bin: f_hz,re_G,im_G,sigma2_noise,sigma2_total,excited.

    At non-excited bins the FRF columns are empty and sigma2_total holds
    the squared output residual, which is what distortion displays plot.
    """
    freqs = estimate.frequencies
    with open(path, "w") as fh:
        fh.write(f"# realizations={estimate.realizations} periods={estimate.periods} "
                 f"f0_hz={estimate.f0:.17g}\n")
        fh.write("f_hz,re_G,im_G,sigma2_noise,sigma2_total,excited\n")
        for i, f in enumerate(freqs):
            if estimate.excited_mask[i]:
                g = estimate.g_bla[i]
                fh.write(f"{f:.17g},{g.real:.17g},{g.imag:.17g},"
                         f"{estimate.sigma2_noise[i]:.17g},"
                         f"{estimate.sigma2_total[i]:.17g},1\n")
            else:
                res = estimate.output_residual[i]
                res2 = res * res if np.isfinite(res) else float("nan")
                fh.write(f"{f:.17g},nan,nan,nan,{res2:.17g},0\n")


def load_frf_csv(path) -> FrfEstimate:
    meta = {"realizations": 0, "periods": 0, "f0_hz": 0.0}
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("#"):
        for token in first[1:].split():
            if "=" in token:
                key, value = token.split("=")
                if key in meta:
                    meta[key] = float(value)
    rows = np.genfromtxt(path, delimiter=",", skip_header=2 if first.startswith("#") else 1)
    if rows.ndim == 1:
        rows = rows[None, :]
    freqs = rows[:, 0]
    excited = rows[:, 5] > 0.5
    g = np.where(excited, rows[:, 1] + 1j * rows[:, 2], np.nan + 0j)
    sigma2_noise = np.where(excited, rows[:, 3], 0.0)
    sigma2_total = np.where(excited, rows[:, 4], 0.0)
    residual = np.where(excited, np.nan, np.sqrt(np.abs(rows[:, 4])))
    f0 = meta["f0_hz"] or (freqs[1] - freqs[0] if freqs.size > 1 else 1.0)
    return FrfEstimate(g, sigma2_noise, sigma2_total, residual, excited,
                       float(f0), realizations=int(meta["realizations"]),
                       periods=int(meta["periods"]))
