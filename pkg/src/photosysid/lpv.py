"""Linear parameter-varying model scheduled on the DC light level.

Local second-order models (gain, two poles, two zeros) are interpolated
over the operating range by low-order polynomials in u_dc, and the
steady-state output map by a third-harmonic Fourier series in u_dc.  The
model simulates in perturbation coordinates around the operating point
and reconstructs the measured output as y = y_bar + y_ss(u_dc).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import minimize_scalar
from scipy.signal import cont2discrete, lfilter

from .tffit import ZpkModel

TWO_PI = 2.0 * np.pi


class ScheduleRangeError(ValueError):
    """Scheduling value outside the schedule's validity range."""


class ScheduleStabilityError(ValueError):
    """Schedule evaluation produced a pole with nonnegative real part."""


class TrackingError(ValueError):
    """Pole/zero branches could not be followed across the grid."""


@dataclass
class LpvSchedule:
    """Polynomial schedules for the zpk parameters plus the y_ss map.

    Polynomial coefficients are stored lowest power first.  ``yss_fourier``
    holds (a0, a1, b1, a2, b2, a3, b3) with a_i on sines and b_i on
    cosines of multiples of 2 pi f0_ss u_dc - the independent variable of
    this "periodic" map is the DC light level, not time.
    """

    k_poly: np.ndarray        # degree 4
    p1_poly: np.ndarray       # degree 2, fast pole
    p2_poly: np.ndarray       # degree 2, slow pole
    z1_poly: np.ndarray       # degree 2, fast zero
    z2_poly: np.ndarray       # degree 2, slow zero
    yss_fourier: np.ndarray   # (a0, a1, b1, a2, b2, a3, b3)
    f0_ss: float              # Hz-like fundamental of the y_ss series
    u_min: float
    u_max: float
    r2: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.k_poly = np.asarray(self.k_poly, dtype=float)
        for name in ("p1_poly", "p2_poly", "z1_poly", "z2_poly"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.yss_fourier = np.asarray(self.yss_fourier, dtype=float)
        if self.yss_fourier.size != 7:
            raise ValueError("yss_fourier must hold 7 coefficients (a0..b3)")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")

    @classmethod
    def paper_published(cls) -> "LpvSchedule":
        """The published schedule, transcribed verbatim.

        Note the fast-pole polynomial as printed turns positive above
        u_dc ~ 301, which contradicts the stated stability guarantee;
        evaluate with stability_policy="reflect" to mirror such poles.
        """
        return cls(
            k_poly=np.array([3.97e-6, 1 / 5.62e8, -1 / 2.17e10,
                             1 / 2.76e13, -1 / 1.17e16]),
            p1_poly=np.array([-1.11e-2, -1 / 7.48e2, 1 / 2.19e5]),
            p2_poly=np.array([-9.08e-3, 1 / 2.82e5, -1 / 7.45e8]),
            z1_poly=np.array([-637.87, -1.49, -1 / 1.58e3]),
            z2_poly=np.array([-2.98e-3, 1 / 1.78e5, 1 / 8.46e9]),
            yss_fourier=np.array([-20038.0, 7236.8, 29213.0, -5640.9,
                                  -10688.0, 1349.2, 1512.8]),
            f0_ss=6.7e-5,
            u_min=100.0,
            u_max=1000.0,
            notes=["published coefficients loaded verbatim"],
        )

    def check_range(self, u_dc: float):
        if not (self.u_min <= u_dc <= self.u_max):
            raise ScheduleRangeError(
                f"u_dc={u_dc:g} outside validity range "
                f"[{self.u_min:g}, {self.u_max:g}]"
            )

    def y_ss(self, u_dc) -> np.ndarray | float:
        a0, a1, b1, a2, b2, a3, b3 = self.yss_fourier
        w = TWO_PI * self.f0_ss * np.asarray(u_dc, dtype=float)
        return (a0 + a1 * np.sin(w) + b1 * np.cos(w)
                + a2 * np.sin(2 * w) + b2 * np.cos(2 * w)
                + a3 * np.sin(3 * w) + b3 * np.cos(3 * w))


@dataclass
class LocalTfParams:
    """Schedule evaluation at one operating point: zpk parameters, the
    matching transfer function coefficients, and the output offset."""

    u_dc: float
    gain: float
    z1: float
    z2: float
    p1: float
    p2: float
    y_ss: float
    b: tuple[float, float, float]   # (b0, b1, b2)
    a: tuple[float, float]          # (a1, a2)
    notes: list[str] = field(default_factory=list)


def _coefficients(gain, z1, z2, p1, p2):
    b = (gain, (-z1 - z2) * gain, z1 * z2 * gain)
    a = (-p1 - p2, p1 * p2)
    return b, a


def eval_schedule(schedule: LpvSchedule, u_dc: float,
                  range_policy: str = "strict",
                  stability_policy: str = "strict") -> LocalTfParams:
    """Evaluate all schedules and map zpk values to TF coefficients.

    ``range_policy``: "strict" raises outside the validity range, "clamp"
    projects onto it.  ``stability_policy``: "strict" raises on a pole
    with nonnegative real part, "reflect" mirrors it (gain sign-corrected
    so the zero-frequency response is preserved), "ignore" passes it
    through for diagnostic use.
    """
    if range_policy == "strict":
        schedule.check_range(u_dc)
    elif range_policy == "clamp":
        u_dc = float(np.clip(u_dc, schedule.u_min, schedule.u_max))
    else:
        raise ValueError(f"unknown range_policy {range_policy!r}")

    gain = float(npoly.polyval(u_dc, schedule.k_poly))
    p1 = float(npoly.polyval(u_dc, schedule.p1_poly))
    p2 = float(npoly.polyval(u_dc, schedule.p2_poly))
    z1 = float(npoly.polyval(u_dc, schedule.z1_poly))
    z2 = float(npoly.polyval(u_dc, schedule.z2_poly))
    notes = []

    if p1 >= 0 or p2 >= 0:
        if stability_policy == "strict":
            raise ScheduleStabilityError(
                f"unstable pole at u_dc={u_dc:g}: P1={p1:g}, P2={p2:g}"
            )
        if stability_policy == "reflect":
            for name, value in (("P1", p1), ("P2", p2)):
                if value > 0:
                    gain = -gain
                    notes.append(f"reflected {name}={value:g} to {-value:g}")
                elif value == 0:
                    raise ScheduleStabilityError(
                        f"{name}=0 at u_dc={u_dc:g} cannot be reflected"
                    )
            p1, p2 = -abs(p1), -abs(p2)
        elif stability_policy != "ignore":
            raise ValueError(f"unknown stability_policy {stability_policy!r}")

    b, a = _coefficients(gain, z1, z2, p1, p2)
    return LocalTfParams(u_dc, gain, z1, z2, p1, p2,
                         float(schedule.y_ss(u_dc)), b, a, notes)


@dataclass
class LpvStateSpace:
    """Controllable companion realization of the scheduled second-order TF."""

    a: np.ndarray   # (2, 2)
    b: np.ndarray   # (2, 1)
    c: np.ndarray   # (1, 2)
    d: np.ndarray   # (1, 1)
    u_dc: float

    def freq_response(self, f_hz) -> np.ndarray:
        s = 1j * TWO_PI * np.asarray(f_hz, dtype=float).ravel()
        eye = np.eye(2)
        out = np.array([
            (self.c @ np.linalg.solve(si * eye - self.a, self.b) + self.d)[0, 0]
            for si in s
        ])
        return out

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.a)


def lpv_state_space(schedule: LpvSchedule, u_dc: float, **eval_kwargs) -> LpvStateSpace:
    lp = eval_schedule(schedule, u_dc, **eval_kwargs)
    b0, b1, b2 = lp.b
    a1, a2 = lp.a
    return LpvStateSpace(
        a=np.array([[0.0, 1.0], [-a2, -a1]]),
        b=np.array([[0.0], [1.0]]),
        c=np.array([[b2 - b0 * a2, b1 - b0 * a1]]),
        d=np.array([[b0]]),
        u_dc=u_dc,
    )


# ---------------------------------------------------------------------------
# decomposition and simulation
# ---------------------------------------------------------------------------

@dataclass
class OperatingDecomposition:
    """Split of the measured input into scheduling value and perturbation."""

    u_dc: float
    u_bar: np.ndarray


def decompose(u: np.ndarray, u_dc: float | None = None) -> OperatingDecomposition:
    u = np.asarray(u, dtype=float)
    if u_dc is None:
        u_dc = float(u.mean())
    return OperatingDecomposition(u_dc, u - u_dc)


@dataclass
class LpvSimResult:
    t: np.ndarray
    y: np.ndarray          # reconstructed output y_bar + y_ss
    y_bar: np.ndarray      # perturbation output
    y_ss: np.ndarray       # offset applied per sample (scalar broadcast when frozen)
    u_dc: np.ndarray       # scheduling trajectory (constant when frozen)
    notes: list[str] = field(default_factory=list)


def _uniform_dt(t: np.ndarray) -> float:
    dt = np.diff(t)
    if t.size < 2 or np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("simulation requires a uniform, increasing time grid")
    return float(dt[0])


def lpv_simulate(schedule: LpvSchedule, t: np.ndarray, u: np.ndarray,
                 u_dc: float | None = None, scheduling: str = "frozen",
                 window: float | None = None,
                 range_policy: str = "strict",
                 stability_policy: str = "strict") -> LpvSimResult:
    """Simulate from rest (x_bar(0) = 0) under a sampled input.

    ``frozen`` scheduling holds one u_dc for the record (given, or the
    input mean) and integrates exactly for linearly interpolated input via
    a first-order-hold discretization built on the matrix exponential.
    ``windowed-mean`` re-evaluates the schedule every sample from a
    trailing moving average of the input (the real-time estimator), using
    a trapezoidal rule on the time-varying system; ``window`` (seconds) is
    typically one base period of the excitation.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if t.shape != u.shape:
        raise ValueError("t and u must have equal length")
    dt = _uniform_dt(t)

    if scheduling == "frozen":
        dec = decompose(u, u_dc)
        lp = eval_schedule(schedule, dec.u_dc, range_policy=range_policy,
                           stability_policy=stability_policy)
        num = np.array([lp.b[0], lp.b[1], lp.b[2]])
        den = np.array([1.0, lp.a[0], lp.a[1]])
        (numd, dend, _) = cont2discrete((num, den), dt, method="foh")
        y_bar = lfilter(numd[0], dend, dec.u_bar)
        y_ss = np.full_like(y_bar, lp.y_ss)
        return LpvSimResult(t, y_bar + y_ss, y_bar, y_ss,
                            np.full_like(y_bar, dec.u_dc), notes=lp.notes)

    if scheduling != "windowed-mean":
        raise ValueError(f"unknown scheduling policy {scheduling!r}")
    if window is None or window <= 0:
        raise ValueError("windowed-mean scheduling needs a positive window")

    # trailing moving average as the scheduling trajectory
    n_w = max(1, int(round(window / dt)))
    csum = np.concatenate([[0.0], np.cumsum(u)])
    idx = np.arange(u.size)
    lo = np.maximum(0, idx - n_w + 1)
    sched = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)

    if range_policy == "strict":
        bad = (sched < schedule.u_min) | (sched > schedule.u_max)
        if np.any(bad):
            raise ScheduleRangeError(
                f"scheduling trajectory leaves [{schedule.u_min:g}, "
                f"{schedule.u_max:g}] at t={t[np.argmax(bad)]:g}"
            )
    else:
        sched = np.clip(sched, schedule.u_min, schedule.u_max)

    gain = npoly.polyval(sched, schedule.k_poly)
    p1 = npoly.polyval(sched, schedule.p1_poly)
    p2 = npoly.polyval(sched, schedule.p2_poly)
    z1 = npoly.polyval(sched, schedule.z1_poly)
    z2 = npoly.polyval(sched, schedule.z2_poly)
    unstable = (p1 >= 0) | (p2 >= 0)
    notes = []
    if np.any(unstable):
        if stability_policy == "strict":
            raise ScheduleStabilityError(
                f"unstable pole on the scheduling trajectory near "
                f"t={t[np.argmax(unstable)]:g}"
            )
        if stability_policy == "reflect":
            flips = (p1 > 0).astype(int) + (p2 > 0).astype(int)
            gain = gain * (-1.0) ** flips
            p1, p2 = -np.abs(p1), -np.abs(p2)
            notes.append(f"reflected poles on {int(np.sum(unstable))} samples")

    b0 = gain
    b1 = (-z1 - z2) * gain
    b2 = z1 * z2 * gain
    a1 = -p1 - p2
    a2 = p1 * p2

    u_bar = u - sched
    x1 = np.zeros(u.size)
    x2 = np.zeros(u.size)
    h = dt
    for i in range(u.size - 1):
        # trapezoid on x' = A(u_dc) x + B u_bar with A varying per sample
        r1 = x1[i] + 0.5 * h * x2[i]
        r2 = x2[i] + 0.5 * h * (-a2[i] * x1[i] - a1[i] * x2[i]
                                + u_bar[i]) + 0.5 * h * u_bar[i + 1]
        d11 = 1.0
        d12 = -0.5 * h
        d21 = 0.5 * h * a2[i + 1]
        d22 = 1.0 + 0.5 * h * a1[i + 1]
        det = d11 * d22 - d12 * d21
        x1[i + 1] = (r1 * d22 - d12 * r2) / det
        x2[i + 1] = (d11 * r2 - d21 * r1) / det

    y_bar = (b2 - b0 * a2) * x1 + (b1 - b0 * a1) * x2 + b0 * u_bar
    y_ss = np.asarray(schedule.y_ss(sched))
    return LpvSimResult(t, y_bar + y_ss, y_bar, y_ss, sched, notes=notes)


def r_squared(y_ref: np.ndarray, y_mod: np.ndarray) -> float:
    """Coefficient of determination of y_mod against the reference."""
    y_ref = np.asarray(y_ref, dtype=float)
    y_mod = np.asarray(y_mod, dtype=float)
    if y_ref.shape != y_mod.shape or y_ref.size < 2:
        raise ValueError("need two equal-length series of at least 2 samples")
    ss_tot = float(np.sum((y_ref - y_ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for a constant reference")
    ss_res = float(np.sum((y_ref - y_mod) ** 2))
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# schedule fitting
# ---------------------------------------------------------------------------

def _track_branches(values_by_point: list[np.ndarray], u_grid: np.ndarray,
                    kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Split per-point root pairs into a fast and a slow branch.

    Branch 1 starts as the root with the more negative real part and is
    continued by nearest-neighbor matching; an ambiguous assignment (both
    pairings equally good) raises.
    """
    fast, slow = [], []
    for i, (roots, u) in enumerate(zip(values_by_point, u_grid)):
        if roots.size != 2:
            raise TrackingError(f"{kind} at u_dc={u:g}: expected 2 roots, got {roots.size}")
        if np.any(np.abs(roots.imag) > 1e-9 * np.maximum(1.0, np.abs(roots))):
            raise TrackingError(
                f"{kind} at u_dc={u:g} form a complex pair {roots}; "
                "real-branch schedules cannot represent them"
            )
        r = roots.real
        if i == 0:
            a, b = (r[0], r[1]) if r[0] <= r[1] else (r[1], r[0])
        else:
            straight = abs(r[0] - fast[-1]) + abs(r[1] - slow[-1])
            swapped = abs(r[1] - fast[-1]) + abs(r[0] - slow[-1])
            scale = max(abs(r[0]), abs(r[1]), 1e-12)
            if abs(straight - swapped) <= 1e-9 * scale:
                raise TrackingError(
                    f"{kind} branch assignment ambiguous between "
                    f"u_dc={u_grid[i-1]:g} and u_dc={u:g}"
                )
            a, b = (r[0], r[1]) if straight < swapped else (r[1], r[0])
        fast.append(a)
        slow.append(b)
    return np.array(fast), np.array(slow)


def _poly_r2(u, values, coeffs):
    pred = npoly.polyval(u, coeffs)
    ss_tot = np.sum((values - values.mean()) ** 2)
    if ss_tot == 0:
        return 1.0
    return float(1.0 - np.sum((values - pred) ** 2) / ss_tot)


def _yss_design(u, f0_ss):
    w = TWO_PI * f0_ss * u
    return np.column_stack([np.ones_like(u), np.sin(w), np.cos(w),
                            np.sin(2 * w), np.cos(2 * w),
                            np.sin(3 * w), np.cos(3 * w)])


def fit_schedules(local_models: list[ZpkModel], yss_samples,
                  f0_ss: float = 6.7e-5, fit_f0_ss: bool = True,
                  gain_degree: int = 4, root_degree: int = 2) -> LpvSchedule:
    """Least-squares schedules through a grid of local models.

    ``yss_samples`` is an iterable of (u_dc, y_ss) pairs.  The Fourier
    fundamental defaults to the published value and is refined by a
    bounded scalar search unless ``fit_f0_ss`` is false.
    """
    models = sorted(local_models, key=lambda m: m.u_dc)
    if len(models) < 6:
        raise ValueError(f"need at least 6 local models, got {len(models)}")
    if any(m.u_dc is None for m in models):
        raise ValueError("every local model must carry its u_dc tag")
    u = np.array([m.u_dc for m in models], dtype=float)
    if np.any(np.diff(u) <= 0):
        raise ValueError("local models must have distinct u_dc values")

    gains = np.array([m.gain for m in models])
    p_fast, p_slow = _track_branches([m.poles for m in models], u, "poles")
    z_fast, z_slow = _track_branches([m.zeros for m in models], u, "zeros")

    k_poly = npoly.polyfit(u, gains, gain_degree)
    p1_poly = npoly.polyfit(u, p_fast, root_degree)
    p2_poly = npoly.polyfit(u, p_slow, root_degree)
    z1_poly = npoly.polyfit(u, z_fast, root_degree)
    z2_poly = npoly.polyfit(u, z_slow, root_degree)

    yss_pairs = np.asarray(list(yss_samples), dtype=float)
    if yss_pairs.ndim != 2 or yss_pairs.shape[1] != 2:
        raise ValueError("yss_samples must be (u_dc, y_ss) pairs")
    uy, yy = yss_pairs[:, 0], yss_pairs[:, 1]

    def yss_sse(f0):
        design = _yss_design(uy, f0)
        coeffs, *_ = np.linalg.lstsq(design, yy, rcond=None)
        return float(np.sum((design @ coeffs - yy) ** 2))

    if fit_f0_ss:
        res = minimize_scalar(yss_sse, bounds=(f0_ss / 5.0, f0_ss * 5.0),
                              method="bounded")
        f0_used = float(res.x)
        if yss_sse(f0_ss) < res.fun:
            f0_used = f0_ss
    else:
        f0_used = f0_ss
    design = _yss_design(uy, f0_used)
    yss_coeffs, *_ = np.linalg.lstsq(design, yy, rcond=None)
    yss_pred = design @ yss_coeffs
    ss_tot = np.sum((yy - yy.mean()) ** 2)
    yss_r2 = float(1.0 - np.sum((yy - yss_pred) ** 2) / ss_tot) if ss_tot > 0 else 1.0

    r2 = {
        "K": _poly_r2(u, gains, k_poly),
        "P1": _poly_r2(u, p_fast, p1_poly),
        "P2": _poly_r2(u, p_slow, p2_poly),
        "Z1": _poly_r2(u, z_fast, z1_poly),
        "Z2": _poly_r2(u, z_slow, z2_poly),
        "y_ss": yss_r2,
    }
    schedule = LpvSchedule(k_poly, p1_poly, p2_poly, z1_poly, z2_poly,
                           yss_coeffs, f0_used, float(u.min()), float(u.max()),
                           r2=r2)

    # the schedule must stay stable everywhere it claims validity
    u_dense = np.linspace(schedule.u_min, schedule.u_max, 1001)
    for name, poly in (("P1", p1_poly), ("P2", p2_poly)):
        vals = npoly.polyval(u_dense, poly)
        if np.any(vals >= 0):
            raise ScheduleStabilityError(
                f"fitted {name} schedule reaches {vals.max():g} inside the "
                "validity range"
            )
    return schedule


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _display_poly(name: str, coeffs: np.ndarray) -> str:
    """Human-readable constant-plus-divisors form, e.g.
    K(u) = 3.97e-06 + u/5.62e+08 - u^2/2.17e+10 + ..."""
    parts = [f"{coeffs[0]:.6g}"]
    for power, c in enumerate(coeffs[1:], start=1):
        if c == 0.0:
            continue
        term = "u" if power == 1 else f"u^{power}"
        sign = "+" if c > 0 else "-"
        parts.append(f"{sign} {term}/{1.0 / abs(c):.6g}")
    return f"{name}(u) = " + " ".join(parts)


def save_schedule(schedule: LpvSchedule, path):
    lines = ["# LPV schedule: zpk parameter polynomials and steady-state map"]
    for name, coeffs in (("K", schedule.k_poly), ("P1", schedule.p1_poly),
                         ("P2", schedule.p2_poly), ("Z1", schedule.z1_poly),
                         ("Z2", schedule.z2_poly)):
        lines.append("# " + _display_poly(name, coeffs))
    a0, a1, b1, a2, b2, a3, b3 = schedule.yss_fourier
    lines.append(f"# y_ss(u) = {a0:.6g} + {a1:.6g} sin(w u) + {b1:.6g} cos(w u) "
                 f"+ {a2:.6g} sin(2 w u) + {b2:.6g} cos(2 w u) "
                 f"+ {a3:.6g} sin(3 w u) + {b3:.6g} cos(3 w u), "
                 f"w = 2 pi {schedule.f0_ss:.6g}")
    lines += [
        f"u_min = {schedule.u_min:.17g}",
        f"u_max = {schedule.u_max:.17g}",
        f"f0_ss = {schedule.f0_ss:.17g}",
        "K_coeffs = " + " ".join(f"{c:.17g}" for c in schedule.k_poly),
        "P1_coeffs = " + " ".join(f"{c:.17g}" for c in schedule.p1_poly),
        "P2_coeffs = " + " ".join(f"{c:.17g}" for c in schedule.p2_poly),
        "Z1_coeffs = " + " ".join(f"{c:.17g}" for c in schedule.z1_poly),
        "Z2_coeffs = " + " ".join(f"{c:.17g}" for c in schedule.z2_poly),
        "yss_coeffs = " + " ".join(f"{c:.17g}" for c in schedule.yss_fourier),
    ]
    for key, value in sorted(schedule.r2.items()):
        lines.append(f"r2_{key} = {value:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_schedule(path) -> LpvSchedule:
    kv = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            kv[key] = value
    def arr(key):
        return np.array([float(tok) for tok in kv[key].split()])
    r2 = {key[3:]: float(value) for key, value in kv.items() if key.startswith("r2_")}
    return LpvSchedule(arr("K_coeffs"), arr("P1_coeffs"), arr("P2_coeffs"),
                       arr("Z1_coeffs"), arr("Z2_coeffs"), arr("yss_coeffs"),
                       float(kv["f0_ss"]), float(kv["u_min"]), float(kv["u_max"]),
                       r2=r2)
