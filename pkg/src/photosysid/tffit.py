"""Parametric frequency-domain fitting of rational transfer functions.

The equation error A(s)G(k) - B(s) is linear in the polynomial
coefficients, so a single weighted least-squares solve yields the model.
Frequencies are normalized by their geometric mean before building the
regression (the raw columns span several decades and are hopelessly
ill-conditioned) and coefficients are de-normalized afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import FrfEstimate

TWO_PI = 2.0 * np.pi


class RankDeficientError(np.linalg.LinAlgError):
    """The regression matrix is numerically rank deficient."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class UnstableModelError(ValueError):
    """A pole with nonnegative real part under the reject policy."""


@dataclass
class RationalTf:
    """Rational transfer function, leading coefficients first.

    Continuous domain: value = sum_l num[l] s^(nb-l) / sum_l den[l] s^(na-l).
    Discrete domain:   value = sum_l num[l] z^(-l)  / sum_l den[l] z^(-l),
    with den[0] = 1 in both conventions.
    """

    num: np.ndarray
    den: np.ndarray
    domain: str = "s"
    sample_rate: float | None = None

    def __post_init__(self):
        self.num = np.atleast_1d(np.asarray(self.num, dtype=float))
        self.den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if self.domain not in ("s", "z"):
            raise ValueError("domain must be 's' or 'z'")
        if self.domain == "z" and not self.sample_rate:
            raise ValueError("discrete models need a sample rate")
        if not (np.all(np.isfinite(self.num)) and np.all(np.isfinite(self.den))):
            raise ValueError("coefficients must be finite")
        if self.den[0] != 1.0:
            raise ValueError("denominator must be monic (a0 = 1)")

    @property
    def n_b(self) -> int:
        return self.num.size - 1

    @property
    def n_a(self) -> int:
        return self.den.size - 1

    def freq_response(self, f_hz: np.ndarray) -> np.ndarray:
        f = np.asarray(f_hz, dtype=float)
        if self.domain == "s":
            s = 1j * TWO_PI * f
            return np.polyval(self.num, s) / np.polyval(self.den, s)
        zinv = np.exp(-1j * TWO_PI * f / self.sample_rate)
        return (np.polyval(self.num[::-1], zinv) / np.polyval(self.den[::-1], zinv))


@dataclass
class ZpkModel:
    """Zero-pole-gain factorization, tagged with its operating point."""

    gain: float
    zeros: np.ndarray
    poles: np.ndarray
    u_dc: float | None = None
    domain: str = "s"
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.zeros = np.atleast_1d(np.asarray(self.zeros, dtype=complex))
        self.poles = np.atleast_1d(np.asarray(self.poles, dtype=complex))

    @property
    def is_stable(self) -> bool:
        if self.domain == "s":
            return bool(np.all(self.poles.real < 0))
        return bool(np.all(np.abs(self.poles) < 1))

    def freq_response(self, f_hz: np.ndarray) -> np.ndarray:
        s = 1j * TWO_PI * np.asarray(f_hz, dtype=float)
        num = np.prod([s - z for z in self.zeros], axis=0) if self.zeros.size else 1.0
        den = np.prod([s - p for p in self.poles], axis=0) if self.poles.size else 1.0
        return self.gain * num / den


@dataclass
class WeightProfile:
    """Per-bin nonnegative weights for the stacked real/imag rows."""

    weights: np.ndarray
    rule: str = "custom"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.weights.sum() <= 0:
            raise ValueError("at least one weight must be positive")

    @classmethod
    def uniform(cls, n: int) -> "WeightProfile":
        return cls(np.ones(n), rule="uniform")

    @classmethod
    def inverse_decade(cls, freqs_hz: np.ndarray) -> "WeightProfile":
        """1 / (number of bins in the same log10 decade)."""
        decades = np.floor(np.log10(np.asarray(freqs_hz, dtype=float))).astype(int)
        counts = {d: int(np.sum(decades == d)) for d in np.unique(decades)}
        w = np.array([1.0 / counts[d] for d in decades])
        return cls(w, rule="inverse-bin-density")


def build_regression(frf_input: np.ndarray, frf_output: np.ndarray,
                     basis: np.ndarray, n_a: int, n_b: int,
                     domain: str = "s") -> tuple[np.ndarray, np.ndarray]:
    """Real-valued design matrix and target for the equation error.

    theta = (a1..a_na, b0..b_nb).  Continuous domain builds
    Y s^na = -sum a_l Y s^(na-l) + sum b_l U s^(nb-l);
    the discrete domain uses inverse powers of z with target Y.
    The complex rows are stacked as [real; imag].
    """
    U = np.asarray(frf_input, dtype=complex)
    Y = np.asarray(frf_output, dtype=complex)
    v = np.asarray(basis, dtype=complex)
    if not (U.shape == Y.shape == v.shape) or U.ndim != 1:
        raise ValueError("input, output and basis must be equal-length vectors")
    F = U.size
    if F < 1:
        raise ValueError("empty regression")
    if not np.all(np.isfinite(v)):
        raise ValueError("basis values must be finite")

    cols = []
    if domain == "s":
        target = Y * v ** n_a
        for l in range(1, n_a + 1):
            cols.append(-Y * v ** (n_a - l))
        for l in range(0, n_b + 1):
            cols.append(U * v ** (n_b - l))
    elif domain == "z":
        target = Y.copy()
        for l in range(1, n_a + 1):
            cols.append(-Y * v ** (-l))
        for l in range(0, n_b + 1):
            cols.append(U * v ** (-l))
    else:
        raise ValueError("domain must be 's' or 'z'")

    K = np.column_stack(cols) if cols else np.zeros((F, 0), dtype=complex)
    design = np.vstack([K.real, K.imag])
    target_real = np.concatenate([target.real, target.imag])
    return design, target_real


def _scaled_lstsq(design: np.ndarray, target: np.ndarray):
    """Column-equilibrated least squares; returns theta, rank, cond, residual."""
    col_norm = np.linalg.norm(design, axis=0)
    col_norm[col_norm == 0.0] = 1.0
    scaled = design / col_norm
    theta_s, _, rank, sv = np.linalg.lstsq(scaled, target, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else np.inf
    theta = theta_s / col_norm
    residual = float(np.linalg.norm(design @ theta - target))
    return theta, int(rank), cond, residual


def solve_ls(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimize ||K theta - Y||_2 by orthogonal decomposition.

    The normal equations define the problem; the solve itself goes through
    an SVD for numerical safety.  Rank deficiency raises.
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    target = np.asarray(target, dtype=float)
    if design.shape[0] < design.shape[1]:
        raise ValueError("need at least as many rows as unknowns")
    theta, rank, cond, _ = _scaled_lstsq(design, target)
    if rank < design.shape[1]:
        raise RankDeficientError(
            f"design matrix is rank deficient ({rank}/{design.shape[1]}, "
            f"condition ~ {cond:.3e})", condition=cond)
    return theta


def solve_wls(design: np.ndarray, target: np.ndarray,
              weights: WeightProfile | np.ndarray) -> np.ndarray:
    """Weighted variant: row k (both its real and imaginary copies) is
    scaled by sqrt(w_k) before the ordinary solve."""
    w = weights.weights if isinstance(weights, WeightProfile) else np.asarray(weights, float)
    design = np.atleast_2d(np.asarray(design, dtype=float))
    if design.shape[0] != 2 * w.size:
        raise ValueError("need one weight per frequency bin (rows = 2 * bins)")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    sq = np.sqrt(np.concatenate([w, w]))
    return solve_ls(design * sq[:, None], np.asarray(target, float) * sq)


@dataclass
class FitResult:
    tf: RationalTf
    weighted_residual: float
    condition: float
    rank_deficient: bool
    weight_rule: str

    @property
    def diagnostics(self) -> dict:
        return {
            "weighted_residual": self.weighted_residual,
            "condition": self.condition,
            "rank_deficient": self.rank_deficient,
            "weight_rule": self.weight_rule,
        }


def _resolve_weights(rule, freqs, target_mag):
    if isinstance(rule, WeightProfile):
        return rule
    if rule == "uniform":
        return WeightProfile.uniform(freqs.size)
    if rule == "inverse-decade":
        return WeightProfile.inverse_decade(freqs)
    if rule == "relative":
        mag = np.maximum(target_mag, 1e-300)
        return WeightProfile(1.0 / mag ** 2, rule="relative")
    raise ValueError(f"unknown weight rule {rule!r}")


def fit_local_model(frf: FrfEstimate, n_a: int = 2, n_b: int = 2,
                    weights="relative", f_band: tuple[float, float] | None = None,
                    domain: str = "s") -> FitResult:
    """Fit one rational model to the BLA over its excited bins.

    The default weighting normalizes every equation-error row by its
    target magnitude |G(k) s_k^na|, which both emphasizes the sparse
    low-frequency bins and removes the high-frequency bias the plain
    equation error suffers from.  Rank-deficient data (a flat FRF, say)
    is not an error here; the minimum-norm solution is returned and
    flagged.
    """
    freqs = frf.excited_frequencies()
    g = frf.excited_values()
    keep = np.isfinite(g)
    if f_band is not None:
        keep &= (freqs >= f_band[0]) & (freqs <= f_band[1])
    freqs, g = freqs[keep], g[keep]
    if freqs.size < max(5, n_a + n_b + 1):
        raise ValueError(
            f"{freqs.size} usable bins are too few for a {n_a}/{n_b} fit"
        )

    if domain != "s":
        raise ValueError("use fit_local_model_z for the discrete-domain basis")
    omega = TWO_PI * freqs
    w0 = float(np.exp(np.mean(np.log(omega))))
    basis = 1j * omega / w0

    design, target = build_regression(np.ones_like(g), g, basis, n_a, n_b, domain="s")
    profile = _resolve_weights(weights, freqs, np.abs(g * basis ** n_a))
    sq = np.sqrt(np.concatenate([profile.weights, profile.weights]))
    theta, rank, cond, residual = _scaled_lstsq(design * sq[:, None], target * sq)

    a_norm = np.concatenate([[1.0], theta[:n_a]])
    b_norm = theta[n_a:]
    powers = np.arange(n_a + 1)
    den = a_norm * w0 ** powers
    num = b_norm * w0 ** (np.arange(n_b + 1) + n_a - n_b)
    tf = RationalTf(num, den, domain="s")

    wres = np.sqrt(residual ** 2 / max(np.sum(sq ** 2), 1e-300))
    return FitResult(tf, weighted_residual=float(wres), condition=cond,
                     rank_deficient=rank < design.shape[1],
                     weight_rule=profile.rule)


def fit_local_model_z(frf: FrfEstimate, sample_rate: float, n_a: int = 2,
                      n_b: int = 2, weights="relative") -> FitResult:
    """Discrete-domain variant of fit_local_model (basis z_k on the unit circle)."""
    freqs = frf.excited_frequencies()
    g = frf.excited_values()
    keep = np.isfinite(g)
    freqs, g = freqs[keep], g[keep]
    if freqs.size < max(5, n_a + n_b + 1):
        raise ValueError("too few bins")
    z = np.exp(1j * TWO_PI * freqs / sample_rate)
    design, target = build_regression(np.ones_like(g), g, z, n_a, n_b, domain="z")
    profile = _resolve_weights(weights, freqs, np.abs(g))
    sq = np.sqrt(np.concatenate([profile.weights, profile.weights]))
    theta, rank, cond, residual = _scaled_lstsq(design * sq[:, None], target * sq)
    den = np.concatenate([[1.0], theta[:n_a]])
    num = theta[n_a:]
    tf = RationalTf(num, den, domain="z", sample_rate=sample_rate)
    wres = np.sqrt(residual ** 2 / max(np.sum(sq ** 2), 1e-300))
    return FitResult(tf, float(wres), cond, rank < design.shape[1], profile.rule)


# ---------------------------------------------------------------------------
# zero-pole-gain form
# ---------------------------------------------------------------------------

def _conjugate_closed(roots: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Snap nearly conjugate pairs to exact conjugates, real-axis strays to real."""
    roots = np.asarray(roots, dtype=complex)
    out = []
    pool = list(roots)
    while pool:
        r = pool.pop(0)
        if abs(r.imag) <= tol * max(1.0, abs(r)):
            out.append(complex(r.real, 0.0))
            continue
        # find the best conjugate partner
        best, dist = None, np.inf
        for i, c in enumerate(pool):
            d = abs(c - r.conjugate())
            if d < dist:
                best, dist = i, d
        if best is not None and dist <= 1e-6 * max(1.0, abs(r)):
            partner = pool.pop(best)
            re = 0.5 * (r.real + partner.real)
            im = 0.5 * (abs(r.imag) + abs(partner.imag))
            out.extend([complex(re, im), complex(re, -im)])
        else:
            out.append(r)  # genuinely unpaired (odd degree edge case)
    return np.array(sorted(out, key=lambda z: (z.real, abs(z.imag), z.imag)))


def tf_to_zpk(tf: RationalTf, u_dc: float | None = None) -> ZpkModel:
    """Factor numerator and denominator; gain is the leading coefficient
    ratio.  A vanishing leading numerator coefficient drops the order and
    is recorded in the model notes."""
    notes = []
    num = tf.num.copy()
    lead_drop = 0
    while num.size > 1 and num[0] == 0.0:
        num = num[1:]
        lead_drop += 1
    if lead_drop:
        notes.append(f"leading numerator coefficient zero; order dropped by {lead_drop}")
    gain = float(num[0] / tf.den[0])
    zeros = _conjugate_closed(np.roots(num)) if num.size > 1 else np.zeros(0, complex)
    poles = _conjugate_closed(np.roots(tf.den)) if tf.den.size > 1 else np.zeros(0, complex)
    return ZpkModel(gain, zeros, poles, u_dc=u_dc, domain=tf.domain, notes=notes)


def zpk_to_tf(model: ZpkModel) -> RationalTf:
    num = model.gain * np.real(np.poly(model.zeros)) if model.zeros.size else np.array([model.gain])
    den = np.real(np.poly(model.poles)) if model.poles.size else np.array([1.0])
    return RationalTf(num, den, domain=model.domain)


def enforce_stability(model: ZpkModel, policy: str = "reject") -> ZpkModel:
    """Guarantee poles in the open left half plane.

    ``reject`` raises on violation; ``reflect`` mirrors offending poles'
    real parts and flips the gain sign once per reflected real pole so the
    zero-frequency response is preserved exactly.
    """
    if model.domain != "s":
        raise NotImplementedError("stability enforcement is continuous-domain only")
    unstable = model.poles.real >= 0
    if not np.any(unstable):
        return model
    if policy == "reject":
        raise UnstableModelError(
            f"poles with nonnegative real part: {model.poles[unstable]}"
        )
    if policy != "reflect":
        raise ValueError(f"unknown stability policy {policy!r}")
    if np.any(model.poles.real == 0):
        raise UnstableModelError("cannot reflect a pole on the imaginary axis")
    new_poles = np.where(unstable,
                         -np.abs(model.poles.real) + 1j * model.poles.imag,
                         model.poles)
    flips = int(np.sum(unstable & (model.poles.imag == 0)))
    gain = model.gain * (-1.0) ** flips
    notes = model.notes + [
        f"reflected {int(np.sum(unstable))} unstable pole(s): "
        f"{model.poles[unstable]} -> {new_poles[unstable]}"
    ]
    return ZpkModel(gain, model.zeros.copy(), new_poles, u_dc=model.u_dc,
                    domain=model.domain, notes=notes)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

@dataclass
class LocalModel:
    """Fitted model bundle persisted per operating point."""

    tf: RationalTf
    zpk: ZpkModel
    u_dc: float
    diagnostics: dict = field(default_factory=dict)


def _fmt_complex(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def save_local_model(model: LocalModel, path):
    d = model.diagnostics
    lines = [
        "# local transfer function model",
        f"domain = {model.tf.domain}",
        f"u_dc = {model.u_dc:.17g}",
        "b = " + " ".join(f"{c:.17g}" for c in model.tf.num),
        "a = " + " ".join(f"{c:.17g}" for c in model.tf.den),
        f"K = {model.zpk.gain:.17g}",
        "Z = " + " ".join(_fmt_complex(z) for z in model.zpk.zeros),
        "P = " + " ".join(_fmt_complex(p) for p in model.zpk.poles),
        f"weighted_residual = {d.get('weighted_residual', float('nan')):.17g}",
        f"condition = {d.get('condition', float('nan')):.17g}",
        f"rank_deficient = {int(bool(d.get('rank_deficient', False)))}",
        f"stability_action = {d.get('stability_action', 'none')}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_local_model(path) -> LocalModel:
    kv = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            kv[key] = value
    tf = RationalTf(np.array([float(c) for c in kv["b"].split()]),
                    np.array([float(c) for c in kv["a"].split()]),
                    domain=kv["domain"])
    zeros = np.array([complex(tok) for tok in kv["Z"].split()], dtype=complex) \
        if kv["Z"] else np.zeros(0, complex)
    poles = np.array([complex(tok) for tok in kv["P"].split()], dtype=complex) \
        if kv["P"] else np.zeros(0, complex)
    u_dc = float(kv["u_dc"])
    zpk = ZpkModel(float(kv["K"]), zeros, poles, u_dc=u_dc, domain=kv["domain"])
    diagnostics = {
        "weighted_residual": float(kv["weighted_residual"]),
        "condition": float(kv["condition"]),
        "rank_deficient": bool(int(kv["rank_deficient"])),
        "stability_action": kv["stability_action"],
    }
    return LocalModel(tf, zpk, u_dc, diagnostics)


def save_bode_csv(tf: RationalTf, freqs_hz: np.ndarray, path):
    """Magnitude/phase table for overlaying fits on measured FRFs."""
    resp = tf.freq_response(freqs_hz)
    with open(path, "w") as fh:
        fh.write("f_hz,mag_db,phase_deg\n")
        for f, r in zip(freqs_hz, resp):
            mag = 20.0 * np.log10(abs(r)) if abs(r) > 0 else -np.inf
            fh.write(f"{f:.17g},{mag:.17g},{np.degrees(np.angle(r)):.17g}\n")
