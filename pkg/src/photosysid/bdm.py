"""Five-state photosynthesis model under modulated light.

States:
    x1  oxidized plastoquinone pool PQ (per RCII)
    x2  lumen proton concentration H_L (uM)
    x3  active quencher fraction FQ_act (-)
    x4  stromal ATP concentration (uM)
    x5  oxidized PSI donor fraction PI_ox (-)

Outputs:
    y1  chlorophyll fluorescence yield (-), the identification signal
    y2  non-photochemical quenching (-)
    y3  oxygen evolution rate (per RCII / s)

Rate constants span 4e-3 .. 2.5e4 1/s, so trajectories are integrated
with LSODA (adaptive, switches to implicit BDF in the stiff regime) and
sampled onto a uniform grid by the solver's dense output.  An explicit
fixed-step RK4 is provided only for short cross-check runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from numba import njit
from scipy.integrate import odeint
from scipy.optimize import root

from .excitation import MultisineSpec

__all__ = [
    "BdmParameters", "BdmState", "BdmRates", "SimulationTrace",
    "ConstantLight", "SineLight", "MultisineLight", "SampledLight",
    "bdm_rhs", "bdm_rates", "bdm_outputs", "bdm_outputs_batch",
    "simulate", "simulate_rk4", "steady_state",
    "BdmDomainError", "SingularOutputError", "IntegrationError", "SteadyStateError",
    "save_parameters", "load_parameters",
]


class BdmDomainError(ValueError):
    """State left the domain where the rate expressions are defined."""


class SingularOutputError(ValueError):
    """Output map is singular (quencher term reaches 1)."""


class IntegrationError(RuntimeError):
    """The ODE solver failed; carries the last successfully reached time."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class SteadyStateError(RuntimeError):
    """No steady state found within tolerance; carries the best residual."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------

@dataclass(kw_only=True)
class BdmParameters:
    """Physical rate and stoichiometry constants.

    Defaults are the published reference values.  ``f0_over_fv`` is the
    fluorescence baseline ratio F0/FV entering the output map only; no
    reference value exists for it, so it must be supplied explicitly.
    ``kI`` is carried along for completeness but appears in no equation.
    """

    f0_over_fv: float                    # F0/FV baseline ratio (-); required
    k1_plus: float = 2.5e4               # 1/s, RCII_closed -> PQ electron transfer
    k1_minus: float = 2.5e3              # 1/s, PQH2 -> RCII_open rate limit
    k2_plus: float = 100.0               # 1/s, PQH2 -> PI_ox rate limit
    k2_minus: float = 10.0               # 1/s, PI_red -> PQ rate limit
    k3: float = 0.05                     # 1/s, quencher activation
    k4: float = 0.004                    # 1/s, quencher deactivation
    k5: float = 100.0                    # 1/s, ATP formation
    k6: float = 10.0                     # 1/s, ATP consumption
    k7: float = 500.0                    # 1/s, proton leakage
    k8: float = 1.0                      # 1/s, PQ reduction by terminal oxidase
    A_tot: float = 1000.0                # uM, adenylate pool
    b_H: float = 0.01                    # -, lumen pH buffer
    FQ_max: float = 0.6                  # -, maximal quencher extent, in (0, 1)
    n_hill: float = 5.3                  # -, quencher activation Hill coefficient
    cEqP: float = 4.3e-8                 # -, phosphorylation equilibrium constant
    K_Q: float = 1.0                     # uM, quencher activation constant
    PQ_tot: float = 7.0                  # per RCII, plastoquinone pool size
    n_PSII: float = 1.0                  # -, PSII stoichiometry
    n_PSI: float = 1.0                   # per RCII, PSI stoichiometry
    sigma_II: float = 1.0                # 1/s per uE m^-2 s^-1, PSII antenna
    sigma_I: float = 1.0                 # 1/s per uE m^-2 s^-1, PSI antenna
    H_stroma: float = 10.0 ** -1.8       # uM, stromal proton concentration
    V_L: float = 2.62e-21                # L per RCII, lumen volume
    V_S: float = 2.09e-20                # L per RCII, stroma volume
    L_half: float = 1.0e4                # uE m^-2 s^-1, PSI half saturation
    N_A: float = 6.022e17                # 1/umol, Avogadro constant
    kI: float = 0.0                      # listed in the parameter vector, unused

    _POSITIVE = (
        "k1_plus", "k1_minus", "k2_plus", "k2_minus", "k3", "k4", "k5", "k6",
        "k7", "k8", "A_tot", "b_H", "n_hill", "cEqP", "K_Q", "PQ_tot",
        "n_PSII", "n_PSI", "sigma_II", "sigma_I", "H_stroma", "V_L", "V_S",
        "L_half", "N_A",
    )

    def __post_init__(self):
        for name in self._POSITIVE:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.FQ_max < 1.0:
            raise ValueError("FQ_max must lie in (0, 1)")
        if self.f0_over_fv < 0:
            raise ValueError("f0_over_fv must be nonnegative")

    def dynamics_vector(self) -> np.ndarray:
        """Constants packed for the compiled right-hand side."""
        return np.array([getattr(self, name) for name in _DYNAMICS_ORDER])


_DYNAMICS_ORDER = (
    "k1_plus", "k1_minus", "k2_plus", "k2_minus", "k3", "k4", "k5", "k6",
    "k7", "k8", "A_tot", "b_H", "FQ_max", "n_hill", "cEqP", "K_Q", "PQ_tot",
    "n_PSII", "n_PSI", "sigma_II", "sigma_I", "H_stroma", "V_L", "V_S",
    "L_half", "N_A",
)


@dataclass
class BdmState:
    """One point in state space; `as_array` is the solver-facing view."""

    x1: float   # oxidized PQ pool, in [0, PQ_tot]
    x2: float   # lumen H+ (uM), > 0
    x3: float   # active quencher fraction, in [0, 1]
    x4: float   # ATP (uM), in [0, A_tot]
    x5: float   # oxidized PSI donor fraction, in [0, 1]

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4, self.x5])

    @classmethod
    def from_array(cls, x) -> "BdmState":
        x = np.asarray(x, dtype=float)
        return cls(*x.tolist())

    def validate(self, params: BdmParameters, tol: float = 0.0):
        checks = [
            ("x1", self.x1, 0.0, params.PQ_tot),
            ("x3", self.x3, 0.0, 1.0),
            ("x4", self.x4, 0.0, params.A_tot),
            ("x5", self.x5, 0.0, 1.0),
        ]
        for name, value, lo, hi in checks:
            slack = tol * (hi - lo)
            if not (lo - slack <= value <= hi + slack):
                raise BdmDomainError(f"{name}={value:g} outside [{lo:g}, {hi:g}]")
        if self.x2 <= 0:
            raise BdmDomainError(f"x2={self.x2:g} must be positive")


# ---------------------------------------------------------------------------
# light programs
# ---------------------------------------------------------------------------

# descriptor codes consumed by the compiled kernels
_LIGHT_CONSTANT = 0
_LIGHT_MULTISINE = 1
_LIGHT_SAMPLED = 2

_EMPTY_F = np.zeros(0)
_EMPTY_I = np.zeros(0, dtype=np.int64)


class ConstantLight:
    """L(t) = level."""

    def __init__(self, level: float):
        if level < 0:
            raise ValueError("light intensity must be nonnegative")
        self.level = float(level)

    dc = property(lambda self: self.level)
    max_frequency = 0.0

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.level)

    def _descriptor(self):
        return (_LIGHT_CONSTANT, self.level, 0.0, _EMPTY_I, _EMPTY_F, _EMPTY_F,
                0.0, 1.0, _EMPTY_F, 0)


class MultisineLight:
    """Periodic excitation defined by a MultisineSpec."""

    def __init__(self, spec: MultisineSpec, validate: bool = True):
        if validate:
            spec.validate_nonnegative()
        self.spec = spec

    dc = property(lambda self: self.spec.u_dc)
    max_frequency = property(lambda self: self.spec.f_max)

    def __call__(self, t):
        return self.spec.evaluate(np.asarray(t, dtype=float))

    def _descriptor(self):
        s = self.spec
        return (_LIGHT_MULTISINE, s.u_dc, s.f0, s.harmonics,
                s.amplitudes, s.phases, 0.0, 1.0, _EMPTY_F, 0)


class SineLight(MultisineLight):
    """L(t) = u_dc + amplitude * sin(2 pi f t + phase)."""

    def __init__(self, u_dc: float, amplitude: float, frequency: float,
                 phase: float = 0.0):
        if amplitude > u_dc:
            raise ValueError("amplitude exceeds u_dc; light would go negative")
        spec = MultisineSpec(u_dc, frequency, np.array([1]),
                             np.array([float(amplitude)]), np.array([float(phase)]))
        super().__init__(spec, validate=False)


class SampledLight:
    """Tabulated light on a uniform time grid with linear or hold interpolation."""

    def __init__(self, t: np.ndarray, u: np.ndarray, interp: str = "linear"):
        t = np.asarray(t, dtype=float)
        u = np.asarray(u, dtype=float)
        if t.size < 2 or t.shape != u.shape:
            raise ValueError("need matching t and u arrays with >= 2 samples")
        dt = np.diff(t)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
            raise ValueError("sample grid must be uniform")
        if np.any(u < 0):
            raise ValueError("light intensity must be nonnegative")
        if interp not in ("linear", "previous"):
            raise ValueError(f"unknown interpolation rule {interp!r}")
        self.table_t = t
        self.table_u = u
        self.interp = interp

    dc = property(lambda self: float(np.mean(self.table_u)))

    @property
    def max_frequency(self):
        # Nyquist of the table is all that can be represented
        return 0.5 / (self.table_t[1] - self.table_t[0])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.interp == "linear":
            return np.interp(t, self.table_t, self.table_u)
        idx = np.clip(((t - self.table_t[0]) / (self.table_t[1] - self.table_t[0]))
                      .astype(np.int64), 0, self.table_u.size - 1)
        return self.table_u[idx]

    def _descriptor(self):
        hold = 0 if self.interp == "linear" else 1
        return (_LIGHT_SAMPLED, 0.0, 0.0, _EMPTY_I, _EMPTY_F, _EMPTY_F,
                float(self.table_t[0]), float(self.table_t[1] - self.table_t[0]),
                self.table_u, hold)


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _light_value(t, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold):
    if kind == 0:
        return c0
    if kind == 1:
        L = c0
        for i in range(harm.size):
            L += amp[i] * math.sin(2.0 * math.pi * f0 * harm[i] * t + phase[i])
        return L
    # sampled table
    pos = (t - tab_t0) / tab_dt
    n = tab_u.size
    if hold == 1:
        i = int(math.floor(pos))
        if i < 0:
            i = 0
        elif i > n - 1:
            i = n - 1
        return tab_u[i]
    i = int(math.floor(pos))
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    w = pos - i
    return (1.0 - w) * tab_u[i] + w * tab_u[i + 1]


@njit(cache=True)
def _bdm_f(x, L, p):
    k1p, k1m, k2p, k2m = p[0], p[1], p[2], p[3]
    k3, k4, k5, k6, k7, k8 = p[4], p[5], p[6], p[7], p[8], p[9]
    Atot, bH, FQmax, n_hill, cEqP, KQ, PQtot = p[10], p[11], p[12], p[13], p[14], p[15], p[16]
    nPSII, nPSI, sII, sI = p[17], p[18], p[19], p[20]
    Hs, VL, VS, Lhalf, NA = p[21], p[22], p[23], p[24], p[25]

    x1, x2, x3, x4, x5 = x[0], x[1], x[2], x[3], x[4]
    q = 1.0 - FQmax * x3

    den = q * L + k1m * (PQtot - x1)
    if den > 0.0:
        rcii_cl = 1.0 / (1.0 + k1p * x1 / den)
    elif x1 > 0.0:
        rcii_cl = 0.0   # closed-pool limit: the ratio diverges
    else:
        rcii_cl = 1.0
    rcii_op = 1.0 - rcii_cl

    v1 = k1p * rcii_cl * x1 - k1m * (1.0 - rcii_cl) * (PQtot - x1)
    v2 = k2p * (PQtot - x1) * x5 - k2m * x1 * (1.0 - x5)
    v3 = k3 * (1.0 - x3) / (1.0 + (KQ / x2) ** n_hill)
    v4 = k4 * x3
    v5 = k5 * (Atot - x4 - (x4 / cEqP) * (Hs / x2) ** (14.0 / 3.0))
    v6 = k6 * x4
    v7 = k7 * (x2 - Hs)
    v8 = k8 * (PQtot - x1)
    v_psii = nPSII * sII * q * rcii_op * L
    v_psi = nPSI * sI * (Lhalf * L / (Lhalf + L)) * (1.0 - x5)

    out = np.empty(5)
    out[0] = 0.5 * (v2 - v1) + v8
    out[1] = bH * ((v_psii + v2) / (NA * VL) - (14.0 / 3.0) * (VS / VL) * v5 - v7)
    out[2] = v3 - v4
    out[3] = v5 - v6
    out[4] = v_psi - v2
    return out


@njit(cache=True)
def _rhs_odeint(x, t, p, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold):
    if x[1] <= 0.0:
        # outside the model domain; make the solver reject the step
        bad = np.empty(5)
        bad[:] = np.nan
        return bad
    L = _light_value(t, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold)
    return _bdm_f(x, L, p)


@njit(cache=True)
def _rk4_fixed(x0, t_grid, p, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold):
    n = t_grid.size
    out = np.empty((n, 5))
    out[0] = x0
    x = x0.copy()
    for i in range(n - 1):
        t = t_grid[i]
        h = t_grid[i + 1] - t
        k1 = _rhs_odeint(x, t, p, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold)
        k2 = _rhs_odeint(x + 0.5 * h * k1, t + 0.5 * h, p, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold)
        k3 = _rhs_odeint(x + 0.5 * h * k2, t + 0.5 * h, p, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold)
        k4 = _rhs_odeint(x + h * k3, t + h, p, kind, c0, f0, harm, amp, phase, tab_t0, tab_dt, tab_u, hold)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = x
    return out


# ---------------------------------------------------------------------------
# rates and outputs
# ---------------------------------------------------------------------------

@dataclass
class BdmRates:
    """Individual reaction rates; useful for diagnostics and unit checks."""

    v1: float
    v2: float
    v3: float
    v4: float
    v5: float
    v6: float
    v7: float
    v8: float
    v_psii: float
    v_psi: float
    rcii_cl: float
    rcii_op: float


def _as_state_array(state) -> np.ndarray:
    if isinstance(state, BdmState):
        return state.as_array()
    x = np.asarray(state, dtype=float)
    if x.shape != (5,):
        raise ValueError("state must be a BdmState or a length-5 vector")
    return x


def _check_domain(x, light, params):
    if light < 0:
        raise BdmDomainError("light intensity must be nonnegative")
    if x[1] <= 0:
        raise BdmDomainError(
            f"x2={x[1]:g} <= 0: the (K_Q/x2)^n_hill and (H_stroma/x2)^(14/3) "
            "terms are undefined"
        )


def bdm_rates(state, light: float, params: BdmParameters) -> BdmRates:
    """All reaction rates at one (state, light) point."""
    x = _as_state_array(state)
    _check_domain(x, light, params)
    p = params
    x1, x2, x3, x4, x5 = x
    q = 1.0 - p.FQ_max * x3

    den = q * light + p.k1_minus * (p.PQ_tot - x1)
    if den > 0.0:
        rcii_cl = 1.0 / (1.0 + p.k1_plus * x1 / den)
    else:
        rcii_cl = 0.0 if x1 > 0 else 1.0
    rcii_op = 1.0 - rcii_cl

    return BdmRates(
        v1=p.k1_plus * rcii_cl * x1 - p.k1_minus * (1.0 - rcii_cl) * (p.PQ_tot - x1),
        v2=p.k2_plus * (p.PQ_tot - x1) * x5 - p.k2_minus * x1 * (1.0 - x5),
        v3=p.k3 * (1.0 - x3) / (1.0 + (p.K_Q / x2) ** p.n_hill),
        v4=p.k4 * x3,
        v5=p.k5 * (p.A_tot - x4 - (x4 / p.cEqP) * (p.H_stroma / x2) ** (14.0 / 3.0)),
        v6=p.k6 * x4,
        v7=p.k7 * (x2 - p.H_stroma),
        v8=p.k8 * (p.PQ_tot - x1),
        v_psii=p.n_PSII * p.sigma_II * q * rcii_op * light,
        v_psi=p.n_PSI * p.sigma_I * (p.L_half * light / (p.L_half + light)) * (1.0 - x5),
        rcii_cl=rcii_cl,
        rcii_op=rcii_op,
    )


def bdm_rhs(state, light: float, params: BdmParameters) -> np.ndarray:
    """State derivative f(x, u); pure, deterministic."""
    x = _as_state_array(state)
    _check_domain(x, light, params)
    out = _bdm_f(x, float(light), params.dynamics_vector())
    if not np.all(np.isfinite(out)):
        raise BdmDomainError(
            f"non-finite derivative at x={x}, L={light:g}; check x2 and light"
        )
    return out


def bdm_outputs(state, light: float, params: BdmParameters):
    """(y1, y2, y3) = (fluorescence yield, NPQ, O2 evolution rate)."""
    x = _as_state_array(state)
    quench = params.FQ_max * x[2]
    if quench >= 1.0:
        raise SingularOutputError(
            f"FQ_max*x3 = {quench:g} >= 1 makes the NPQ output singular"
        )
    r = bdm_rates(x, light, params)
    y1 = (1.0 - quench) * (params.f0_over_fv + r.rcii_cl)
    y2 = quench / (1.0 - quench)
    y3 = r.v_psii / 4.0
    return y1, y2, y3


def bdm_outputs_batch(x: np.ndarray, light: np.ndarray,
                      params: BdmParameters) -> np.ndarray:
    """Vectorized output map for trajectories; returns an (n, 3) array."""
    x = np.asarray(x, dtype=float)
    L = np.broadcast_to(np.asarray(light, dtype=float), (x.shape[0],))
    p = params
    q = 1.0 - p.FQ_max * x[:, 2]
    if np.any(q <= 0.0):
        raise SingularOutputError("FQ_max*x3 >= 1 somewhere along the trajectory")
    den = q * L + p.k1_minus * (p.PQ_tot - x[:, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = p.k1_plus * x[:, 0] / den
    rcii_cl = np.where(den > 0.0, 1.0 / (1.0 + ratio),
                       np.where(x[:, 0] > 0.0, 0.0, 1.0))
    rcii_op = 1.0 - rcii_cl
    y = np.empty((x.shape[0], 3))
    y[:, 0] = q * (p.f0_over_fv + rcii_cl)
    y[:, 1] = p.FQ_max * x[:, 2] / q
    y[:, 2] = p.n_PSII * p.sigma_II * q * rcii_op * L / 4.0
    return y


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

# error-control floors per state, scaled to each state's physical range
_ATOL_SCALE = np.array([7.0, 1.0, 1.0, 1000.0, 1.0])
_BOUND_TOL = 1e-6


@dataclass
class SimulationTrace:
    """Sampled trajectory on a uniform grid with solver metadata."""

    t: np.ndarray          # s
    u: np.ndarray          # light (uE m^-2 s^-1)
    x: np.ndarray          # (n, 5) states
    y: np.ndarray          # (n, 3) outputs
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.t.size
        if not (self.u.shape == (n,) and self.x.shape == (n, 5) and self.y.shape == (n, 3)):
            raise ValueError("trace arrays must share one sample grid")
        if n > 1:
            dt = np.diff(self.t)
            if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
                raise ValueError("sample grid must be strictly increasing and uniform")

    @property
    def y1(self):
        return self.y[:, 0]

    @property
    def y2(self):
        return self.y[:, 1]

    @property
    def y3(self):
        return self.y[:, 2]

    @property
    def sample_rate(self) -> float:
        if self.t.size < 2:
            raise ValueError("degenerate trace has no sample rate")
        return 1.0 / (self.t[1] - self.t[0])


def default_atol(params: BdmParameters, rtol: float = 1e-6) -> np.ndarray:
    return _ATOL_SCALE * rtol * 1e-3


def simulate(params: BdmParameters, program, x0=None, t_span=(0.0, 1.0),
             sample_rate: float = 1.0, rtol: float = 1e-6,
             atol: np.ndarray | None = None, max_steps: int = 50_000_000) -> SimulationTrace:
    """Integrate the model under a light program onto a uniform grid.

    ``x0=None`` starts from the steady state at the program's DC level, so
    periodic programs begin near their steady cycle.  State bounds are
    checked after the run; violations beyond solver tolerance are recorded
    as warnings in the metadata, never clamped.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 < t0:
        raise ValueError("t_span must be nondecreasing")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    if sample_rate <= 2.0 * program.max_frequency:
        raise ValueError(
            f"sample_rate {sample_rate:g} Hz must exceed twice the fastest "
            f"program frequency {program.max_frequency:g} Hz"
        )

    if x0 is None:
        x0_arr = steady_state(params, program.dc)[0].as_array()
    else:
        x0_arr = _as_state_array(x0)
        BdmState.from_array(x0_arr).validate(params, tol=_BOUND_TOL)

    if t1 == t0:
        t = np.array([t0])
        u = program(t)
        x = x0_arr[None, :]
        y = bdm_outputs_batch(x, u, params)
        return SimulationTrace(t, u, x, y, metadata={"steps": 0, "rtol": rtol})

    n_float = (t1 - t0) * sample_rate
    n_steps = int(round(n_float))
    if abs(n_float - n_steps) > 1e-6 * max(1.0, n_float) or n_steps < 1:
        raise ValueError("t_span length must be an integer number of samples")
    t = t0 + np.arange(n_steps + 1) / sample_rate

    if atol is None:
        atol = default_atol(params, rtol)
    p = params.dynamics_vector()
    desc = program._descriptor()

    x, info = odeint(_rhs_odeint, x0_arr, t, args=(p,) + desc,
                     rtol=rtol, atol=atol, mxstep=max_steps, full_output=True,
                     printmessg=False)
    if info["message"] != "Integration successful.":
        reached = float(info["tcur"][-1]) if len(info.get("tcur", [])) else t0
        raise IntegrationError(
            f"solver failed: {info['message']} (reached t={reached:g} s)",
            last_time=reached,
        )
    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
        raise IntegrationError(
            f"non-finite state at t={t[bad]:g} s", last_time=float(t[max(bad - 1, 0)])
        )

    warnings = _bound_violations(x, params)
    u = program(t)
    y = bdm_outputs_batch(x, u, params)
    metadata = {
        "method": "lsoda",
        "rtol": rtol,
        "atol": list(np.asarray(atol, dtype=float)),
        "steps": int(info["nst"][-1]),
        "rhs_evaluations": int(info["nfe"][-1]),
        "jacobian_evaluations": int(info["nje"][-1]),
        "warnings": warnings,
    }
    return SimulationTrace(t, u, x, y, metadata=metadata)


def _bound_violations(x: np.ndarray, params: BdmParameters) -> list[str]:
    bounds = [
        ("x1", 0, 0.0, params.PQ_tot),
        ("x3", 2, 0.0, 1.0),
        ("x4", 3, 0.0, params.A_tot),
        ("x5", 4, 0.0, 1.0),
    ]
    notes = []
    for name, col, lo, hi in bounds:
        slack = _BOUND_TOL * (hi - lo)
        below, above = x[:, col].min(), x[:, col].max()
        if below < lo - slack or above > hi + slack:
            notes.append(
                f"{name} left [{lo:g}, {hi:g}] (range [{below:g}, {above:g}])"
            )
    if x[:, 1].min() <= 0:
        notes.append("x2 reached a nonpositive value")
    return notes


def simulate_rk4(params: BdmParameters, program, x0, t_grid: np.ndarray) -> np.ndarray:
    """Fixed-step explicit RK4 states on an explicit grid.

    Cross-check utility only: the fast rates force steps around 1e-5 s,
    so this is infeasible beyond short spans.
    """
    x0_arr = _as_state_array(x0)
    t_grid = np.asarray(t_grid, dtype=float)
    return _rk4_fixed(x0_arr, t_grid, params.dynamics_vector(), *program._descriptor())


# ---------------------------------------------------------------------------
# steady state
# ---------------------------------------------------------------------------

def _residual_scale(params: BdmParameters) -> np.ndarray:
    return np.array([params.PQ_tot, max(params.K_Q, params.H_stroma), 1.0,
                     params.A_tot, 1.0])


def _quencher_equilibrium(x2, p: BdmParameters):
    act = 1.0 / (1.0 + (p.K_Q / x2) ** p.n_hill)
    return p.k3 * act / (p.k3 * act + p.k4)


def _atp_equilibrium(x2, p: BdmParameters):
    h = (p.H_stroma / x2) ** (14.0 / 3.0)
    return p.k5 * p.A_tot / (p.k5 * (1.0 + h / p.cEqP) + p.k6)


def steady_state(params: BdmParameters, u_dc: float,
                 residual_tol: float = 1e-9) -> tuple[BdmState, float]:
    """Fixed point of the dynamics under constant light, plus y1 there.

    The quencher and ATP equations are eliminated analytically (both are
    explicit in x2 at equilibrium), leaving a three-variable root problem
    in (x1, log x2, x5) that is well conditioned even in darkness.  A
    relaxation run plus full-state polish serves as fallback.  The
    residual is measured relative to each state's scale.
    """
    if u_dc < 0:
        raise ValueError("u_dc must be nonnegative")
    p_vec = params.dynamics_vector()
    scale = _residual_scale(params)

    def full_residual(x):
        return _bdm_f(x, u_dc, p_vec)

    def assemble(z):
        x1, lx2, x5 = z
        x2 = np.exp(lx2)
        return np.array([x1, x2, _quencher_equilibrium(x2, params),
                         _atp_equilibrium(x2, params), x5])

    def reduced(z):
        x = assemble(z)
        f = full_residual(x)
        return np.array([f[0], f[1] / x[1], f[4]])

    best_x, best_res = None, np.inf

    guesses = [
        np.array([0.5 * params.PQ_tot, np.log(max(params.H_stroma, 0.02 * params.K_Q)), 0.4]),
        np.array([0.9 * params.PQ_tot, np.log(params.H_stroma), 0.6]),
        np.array([0.3 * params.PQ_tot, np.log(params.K_Q), 0.5]),
    ]
    for z0 in guesses:
        try:
            sol = root(reduced, z0, method="hybr", tol=1e-13)
        except (ZeroDivisionError, FloatingPointError, OverflowError):
            continue
        x = assemble(sol.x)
        if not np.all(np.isfinite(x)) or x[1] <= 0:
            continue
        res = float(np.max(np.abs(full_residual(x)) / scale))
        if res < best_res:
            best_x, best_res = x, res
        if res <= residual_tol:
            break

    if best_res > residual_tol:
        # fallback: relax by integration, then polish all five states
        relax0 = np.array([0.5 * params.PQ_tot, max(params.H_stroma, 0.02),
                           0.3, 0.5 * params.A_tot, 0.5])
        try:
            trace = simulate(params, ConstantLight(u_dc), x0=relax0,
                             t_span=(0.0, 8000.0), sample_rate=1.0 / 8000.0,
                             rtol=1e-10, atol=default_atol(params, 1e-10))
            xf = trace.x[-1]
            sol = root(full_residual, xf, method="hybr", tol=1e-13)
            x = sol.x
            if np.all(np.isfinite(x)) and x[1] > 0:
                res = float(np.max(np.abs(full_residual(x)) / scale))
                if res < best_res:
                    best_x, best_res = x, res
        except (IntegrationError, BdmDomainError):
            pass

    if best_x is None or best_res > residual_tol:
        raise SteadyStateError(
            f"no steady state within tolerance {residual_tol:g} at u_dc={u_dc:g} "
            f"(best residual {best_res:.3e})",
            best_residual=best_res,
        )
    state = BdmState.from_array(best_x)
    state.validate(params, tol=1e-6)
    y1, _, _ = bdm_outputs(best_x, u_dc, params)
    return state, float(y1)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_UNIT_COMMENTS = {
    "f0_over_fv": "-", "k1_plus": "1/s", "k1_minus": "1/s", "k2_plus": "1/s",
    "k2_minus": "1/s", "k3": "1/s", "k4": "1/s", "k5": "1/s", "k6": "1/s",
    "k7": "1/s", "k8": "1/s", "A_tot": "uM", "b_H": "-", "FQ_max": "-",
    "n_hill": "-", "cEqP": "-", "K_Q": "uM", "PQ_tot": "per RCII",
    "n_PSII": "-", "n_PSI": "per RCII",
    "sigma_II": "1/s per uE m^-2 s^-1", "sigma_I": "1/s per uE m^-2 s^-1",
    "H_stroma": "uM", "V_L": "L per RCII", "V_S": "L per RCII",
    "L_half": "uE m^-2 s^-1", "N_A": "1/umol", "kI": "unused",
}


def save_parameters(params: BdmParameters, path):
    lines = ["# model parameters"]
    for f in fields(params):
        value = getattr(params, f.name)
        lines.append(f"{f.name} = {value:.17g}  # {_UNIT_COMMENTS[f.name]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_parameters(path) -> BdmParameters:
    names = {f.name for f in fields(BdmParameters)}
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in names:
                raise ValueError(f"{path}: unknown parameter {key!r}")
            values[key] = float(value)
    return BdmParameters(**values)


def save_trace_csv(trace: SimulationTrace, path):
    """Full-precision trace table: t,u,y1,y2,y3,x1,x2,x3,x4,x5."""
    data = np.column_stack([trace.t, trace.u, trace.y, trace.x])
    with open(path, "w") as fh:
        fh.write("t,u,y1,y2,y3,x1,x2,x3,x4,x5\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def load_trace_csv(path) -> SimulationTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 10:
        raise ValueError(f"{path}: expected 10 columns")
    return SimulationTrace(t=data[:, 0], u=data[:, 1], x=data[:, 5:10],
                           y=data[:, 2:5], metadata={"source": str(path)})
