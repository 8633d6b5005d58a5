"""Model coefficients (beta, b, D) and their regularized companions.

A model is the triple of a nondecreasing diffusion nonlinearity beta with
beta(0) = 0, a nonnegative bounded drift strength b, and a bounded drift
direction field D.  The structural constants are

* ``alpha1``  linear-growth bound |beta(r)| <= alpha1 |r|,
* ``alpha2``  slaving bound |b(r)r - b(s)s| <= alpha2 |beta(r) - beta(s)|,

both declared on a finite validity window ``r_range`` (super-linear models
such as power-law diffusion only satisfy them locally; solutions of interest
stay inside the window).  ``validate_hypotheses`` checks everything by dense
sampling, log-spaced near zero to probe degeneracy of beta'.

Regularization follows the construction used by the resolvent solver:
b is mollified over a bump stencil and damped by 1/(1+eps|r|); D is cut off
by a C^2 profile equal to one on |x| < 1/eps and zero beyond sqrt(2)/eps.

All coefficient evaluations are pure and reentrant; model objects can be
shared across threads without synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import ConfigError
from .grid import bump_profile

Scalar = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]

RHO_FLOOR = 1e-12


@dataclass(frozen=True)
class CoefficientSet:
    """The model triple (beta, b, D) with its structural constants."""

    name: str
    beta: Scalar
    beta_prime: Scalar
    b: Scalar
    D: VectorField
    alpha1: float
    alpha2: float
    r_range: tuple[float, float] = (-4.0, 4.0)
    b_sup: float = 0.0
    b_is_zero: bool = False
    D_is_zero: bool = False

    @property
    def drift_active(self) -> bool:
        return not (self.b_is_zero or self.D_is_zero)

    def b_star(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return self.b(r) * r

    def diffusion_ratio(self, rho: np.ndarray) -> np.ndarray:
        """beta(rho)/rho with the value beta'(0) below the density floor."""
        rho = np.asarray(rho, dtype=np.float64)
        safe = np.where(np.abs(rho) < RHO_FLOOR, 1.0, rho)
        ratio = np.where(
            np.abs(rho) < RHO_FLOOR,
            self.beta_prime(np.zeros_like(rho)),
            self.beta(safe) / safe,
        )
        return ratio

    def local_constants(self, r_max: float, n_samples: int = 400) -> tuple[float, float]:
        """Fitted (alpha3, alpha4) on [-r_max, r_max]: the slaving ratio and
        1/sup beta', matching the range-truncated constants of the uniqueness
        bound."""
        r = _sample_grid(-r_max, r_max, n_samples)
        sup_bp = float(np.max(self.beta_prime(r)))
        alpha4 = np.inf if sup_bp == 0.0 else 1.0 / sup_bp
        alpha3 = _fitted_alpha2(self, r)
        return alpha3, alpha4


def eval_b_star(c: CoefficientSet, r: float) -> float:
    """b(r) * r."""
    return float(c.b_star(np.asarray([r]))[0])


# ---------------------------------------------------------------------------
# Built-in model library


def _zero_scalar(r):
    return np.zeros_like(np.asarray(r, dtype=np.float64))


def _zero_vector(x):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _tanh_drift(scale: float) -> VectorField:
    def D(x):
        x = np.asarray(x, dtype=np.float64)
        return -scale * np.tanh(x) / np.sqrt(x.shape[-1])

    return D


def _linear_drift(scale: float) -> VectorField:
    def D(x):
        x = np.asarray(x, dtype=np.float64)
        return -scale * x

    return D


_DRIFTS = {"none": None, "tanh": _tanh_drift, "linear": _linear_drift}


def _self_b(name: str, beta: Scalar, beta_prime: Scalar) -> Scalar:
    """b(r) = beta(r)/r extended by beta'(0) at r = 0 (an even function for
    odd beta)."""

    def b(r):
        r = np.asarray(r, dtype=np.float64)
        tiny = np.abs(r) < 1e-10
        safe = np.where(tiny, 1.0, r)
        return np.where(tiny, beta_prime(np.zeros_like(r)), beta(safe) / safe)

    return b


def make_model(
    name: str,
    *,
    m: float = 2.0,
    a: float = 1.0,
    p: float = 3.0,
    b_mode: str = "zero",
    b_value: float = 1.0,
    drift: str = "none",
    drift_scale: float = 1.0,
    r_range: tuple[float, float] = (-4.0, 4.0),
) -> CoefficientSet:
    """Build a model from the built-in library.

    Names: ``heat`` (beta = r), ``porous_medium`` (beta = r|r|^(m-1)),
    ``bose_einstein`` (beta = a ln(1+r) for r >= 0, odd extension),
    ``power_law`` (beta = sign(r) a |r|^p).  ``b_mode`` selects the drift
    strength: "zero", "const" (b = b_value) or "self" (b = beta(r)/r).
    """
    R = max(abs(r_range[0]), abs(r_range[1]))
    if name == "heat":
        beta = lambda r: np.asarray(r, dtype=np.float64).copy()
        beta_prime = lambda r: np.ones_like(np.asarray(r, dtype=np.float64))
        alpha1 = 1.0
    elif name == "porous_medium":
        if m < 1.0:
            raise ConfigError("porous_medium requires m >= 1")
        beta = lambda r, m=m: np.sign(r) * np.abs(np.asarray(r, dtype=np.float64)) ** m
        beta_prime = lambda r, m=m: m * np.abs(np.asarray(r, dtype=np.float64)) ** (m - 1.0)
        alpha1 = R ** (m - 1.0)
    elif name == "bose_einstein":
        beta = lambda r, a=a: a * np.sign(r) * np.log1p(np.abs(np.asarray(r, dtype=np.float64)))
        beta_prime = lambda r, a=a: a / (1.0 + np.abs(np.asarray(r, dtype=np.float64)))
        alpha1 = a
    elif name == "power_law":
        beta = lambda r, a=a, p=p: a * np.sign(r) * np.abs(np.asarray(r, dtype=np.float64)) ** p
        beta_prime = lambda r, a=a, p=p: a * p * np.abs(np.asarray(r, dtype=np.float64)) ** (p - 1.0)
        alpha1 = a * R ** (p - 1.0) if p >= 1.0 else np.inf
    else:
        raise ConfigError(f"unknown model '{name}'")

    if b_mode == "zero":
        b: Scalar = _zero_scalar
        b_is_zero = True
        b_sup = 0.0
        alpha2 = 1.0
    elif b_mode == "self":
        b = _self_b(name, beta, beta_prime)
        b_is_zero = False
        b_sup = float(np.max(np.abs(b(np.array([r_range[0], 0.0, r_range[1]])))))
        alpha2 = 1.0
    elif b_mode == "const":
        b = lambda r, c=b_value: np.full_like(np.asarray(r, dtype=np.float64), c)
        b_is_zero = b_value == 0.0
        b_sup = abs(b_value)
        # |b*(r)-b*(s)| = |b||r-s| needs beta' bounded below; degenerate beta
        # admits no finite slaving constant for a constant b.
        bp_min = float(np.min(beta_prime(_sample_grid(*r_range, 200))))
        alpha2 = abs(b_value) / bp_min if bp_min > 1e-12 else np.inf
    else:
        raise ConfigError(f"unknown b_mode '{b_mode}'")

    if drift not in _DRIFTS:
        raise ConfigError(f"unknown drift '{drift}'")
    if drift == "none" or b_is_zero:
        D: VectorField = _zero_vector
        D_is_zero = True
    else:
        D = _DRIFTS[drift](drift_scale)
        D_is_zero = False

    tag = name
    if b_mode != "zero":
        tag += f"+b_{b_mode}"
    if not D_is_zero:
        tag += f"+{drift}"
    return CoefficientSet(
        name=tag,
        beta=beta,
        beta_prime=beta_prime,
        b=b,
        D=D,
        alpha1=alpha1,
        alpha2=alpha2,
        r_range=r_range,
        b_sup=b_sup,
        b_is_zero=b_is_zero,
        D_is_zero=D_is_zero,
    )


def load_coefficients_csv(
    path,
    *,
    name: str = "custom_csv",
    alpha1: float | None = None,
    alpha2: float = 1.0,
    drift: str = "none",
    drift_scale: float = 1.0,
) -> CoefficientSet:
    """Custom piecewise-polynomial model from knots r, beta(r), beta'(r)[, b(r)].

    beta interpolates both values and derivatives (cubic Hermite); b, when
    present, uses monotone cubic interpolation.  Knots must bracket the use
    range; evaluations clamp to the knot range.
    """
    data = np.genfromtxt(path, delimiter=",", names=True)
    cols = data.dtype.names
    if cols is None or len(cols) < 3:
        raise ConfigError("coefficient CSV needs header r,beta,beta_prime[,b]")
    r = np.asarray(data[cols[0]], dtype=float)
    if np.any(np.diff(r) <= 0):
        raise ConfigError("coefficient CSV knots must be strictly increasing in r")
    bv = np.asarray(data[cols[1]], dtype=float)
    bp = np.asarray(data[cols[2]], dtype=float)
    spline = CubicHermiteSpline(r, bv, bp)
    dspline = spline.derivative()
    lo, hi = float(r[0]), float(r[-1])

    def beta(x):
        return spline(np.clip(np.asarray(x, dtype=np.float64), lo, hi))

    def beta_prime(x):
        return np.maximum(dspline(np.clip(np.asarray(x, dtype=np.float64), lo, hi)), 0.0)

    if len(cols) >= 4:
        bdata = np.asarray(data[cols[3]], dtype=float)
        b_interp = PchipInterpolator(r, bdata)

        def b(x):
            return b_interp(np.clip(np.asarray(x, dtype=np.float64), lo, hi))

        b_is_zero = bool(np.all(bdata == 0.0))
        b_sup = float(np.max(np.abs(bdata)))
    else:
        b = _zero_scalar
        b_is_zero = True
        b_sup = 0.0

    fitted_a1 = float(np.max(np.abs(bv[r != 0]) / np.abs(r[r != 0]))) if np.any(r != 0) else 1.0
    if drift == "none" or b_is_zero:
        D: VectorField = _zero_vector
        D_is_zero = True
    else:
        D = _DRIFTS[drift](drift_scale)
        D_is_zero = False
    return CoefficientSet(
        name=name,
        beta=beta,
        beta_prime=beta_prime,
        b=b,
        D=D,
        alpha1=alpha1 if alpha1 is not None else fitted_a1,
        alpha2=alpha2,
        r_range=(lo, hi),
        b_sup=b_sup,
        b_is_zero=b_is_zero,
        D_is_zero=D_is_zero,
    )


# ---------------------------------------------------------------------------
# Hypothesis validation


@dataclass(frozen=True)
class HypothesisResult:
    hypothesis: str
    passed: bool
    detail: str
    witness: float | tuple[float, float] | None = None


@dataclass(frozen=True)
class ValidationReport:
    model: str
    results: tuple[HypothesisResult, ...]
    fitted_alpha1: float
    fitted_alpha2: float
    drift_sup: float
    div_drift_neg_sup: float
    notes: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = [f"model {self.model}:"]
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            w = "" if r.witness is None else f"  witness r={r.witness}"
            out.append(f"  ({r.hypothesis}) {status}: {r.detail}{w}")
        out.append(
            f"  fitted alpha1={self.fitted_alpha1:.6g} alpha2={self.fitted_alpha2:.6g}"
        )
        for n in self.notes:
            out.append(f"  note: {n}")
        return out


def _sample_grid(r_min: float, r_max: float, n_samples: int) -> np.ndarray:
    """Sampling grid on [r_min, r_max], log-spaced near zero on each side."""
    pts = [r_min, r_max]
    top = max(abs(r_min), abs(r_max))
    mags = np.logspace(-8, np.log10(top), max(n_samples // 2, 2))
    for s in (1.0, -1.0):
        vals = s * mags
        pts.extend(vals[(vals >= r_min) & (vals <= r_max)])
    if r_min <= 0.0 <= r_max:
        pts.append(0.0)
    return np.unique(np.asarray(pts, dtype=np.float64))


def _fitted_alpha2(c: CoefficientSet, r: np.ndarray) -> float:
    bstar = c.b_star(r)
    beta = c.beta(r)
    dbs = np.abs(bstar[:, None] - bstar[None, :])
    dbe = np.abs(beta[:, None] - beta[None, :])
    ok = dbe > 0.0
    if np.any(~ok & (dbs > 1e-14)):
        return np.inf
    if not np.any(ok):
        return 0.0
    return float(np.max(dbs[ok] / dbe[ok]))


def validate_hypotheses(
    c: CoefficientSet,
    sampler: dict | None = None,
    *,
    drift_box: float = 8.0,
    drift_samples: int = 201,
) -> ValidationReport:
    """Check the model hypotheses by dense sampling.

    ``sampler`` carries r_min, r_max and n_samples; defaults to the model's
    declared validity window with 201 samples.
    """
    sampler = dict(sampler or {})
    r_min = float(sampler.get("r_min", c.r_range[0]))
    r_max = float(sampler.get("r_max", c.r_range[1]))
    n_samples = int(sampler.get("n_samples", 201))
    if n_samples < 2:
        raise ConfigError("n_samples must be at least 2")
    if not r_max > r_min:
        raise ConfigError("degenerate sample range: r_max must exceed r_min")

    r = _sample_grid(r_min, r_max, n_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = c.beta(r)
        bprime = c.beta_prime(r)
        bvals = c.b(r)
    results = []

    # (i) monotone C^2 diffusion with linear growth
    beta0 = float(c.beta(np.array([0.0]))[0])
    nonzero = r != 0.0
    growth = np.abs(beta[nonzero]) - c.alpha1 * np.abs(r[nonzero]) * (1.0 + 1e-12)
    i_fail = None
    if abs(beta0) > 1e-13:
        i_fail, detail = 0.0, f"beta(0) = {beta0:.3e} != 0"
    elif not np.isfinite(c.alpha1):
        ratios = np.abs(beta[nonzero]) / np.abs(r[nonzero])
        i_fail = float(r[nonzero][np.argmax(ratios)])
        detail = "no finite linear-growth constant alpha1 exists"
    elif np.any(bprime < -1e-13):
        i_fail = float(r[np.argmin(bprime)])
        detail = "beta' negative"
    elif np.any(bprime[nonzero] <= 0.0):
        idx = np.where(bprime[nonzero] <= 0.0)[0][0]
        i_fail = float(r[nonzero][idx])
        detail = "beta' vanishes off r=0"
    elif np.any(growth > 1e-12):
        idx = np.argmax(growth)
        i_fail = float(r[nonzero][idx])
        detail = f"|beta(r)| > alpha1 |r| (alpha1={c.alpha1:.6g})"
    else:
        detail = "beta(0)=0, beta' > 0 off zero, linear growth holds"
    results.append(HypothesisResult("i", i_fail is None, detail, i_fail))

    # (ii) bounded drift, discrete divergence surrogate
    x = np.linspace(-drift_box, drift_box, drift_samples)
    pts = x[:, None]
    Dv = np.asarray(c.D(pts))
    dmag = np.abs(Dv[:, 0])
    h = x[1] - x[0]
    div = np.gradient(Dv[:, 0], h)
    drift_sup = float(np.max(dmag))
    div_neg_sup = float(np.max(np.maximum(-div, 0.0)))
    ii_ok = np.isfinite(drift_sup) and np.isfinite(div_neg_sup)
    results.append(
        HypothesisResult(
            "ii",
            bool(ii_ok),
            f"sup|D|={drift_sup:.6g}, sup (div D)^- = {div_neg_sup:.6g} (discrete surrogate)",
        )
    )

    # (iii) b bounded and nonnegative
    iii_fail = None
    if np.any(bvals < -1e-13):
        iii_fail = float(r[np.argmin(bvals)])
        detail = "b takes negative values"
    elif not np.all(np.isfinite(bvals)):
        iii_fail = float(r[np.argmax(~np.isfinite(bvals))])
        detail = "b unbounded on samples"
    else:
        detail = f"0 <= b <= {float(np.max(bvals)):.6g} on samples"
    results.append(HypothesisResult("iii", iii_fail is None, detail, iii_fail))

    # (iv) slaving of b* to beta over all sampled pairs
    bstar = bvals * r
    dbs = np.abs(bstar[:, None] - bstar[None, :])
    dbe = np.abs(beta[:, None] - beta[None, :])
    if not np.isfinite(c.alpha2):
        ratios = np.where(dbe > 0.0, dbs / np.where(dbe > 0.0, dbe, 1.0), 0.0)
        i, j = np.unravel_index(np.argmax(ratios), dbs.shape)
        results.append(
            HypothesisResult(
                "iv",
                False,
                "no finite slaving constant alpha2 exists for this model",
                (float(r[i]), float(r[j])),
            )
        )
    else:
        bad = dbs > c.alpha2 * dbe * (1.0 + 1e-9) + 1e-13
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            results.append(
                HypothesisResult(
                    "iv",
                    False,
                    f"|b*(r)-b*(s)| = {dbs[i, j]:.3e} exceeds alpha2 |beta(r)-beta(s)| = "
                    f"{c.alpha2 * dbe[i, j]:.3e}",
                    (float(r[i]), float(r[j])),
                )
            )
        else:
            results.append(
                HypothesisResult("iv", True, f"slaving holds with alpha2={c.alpha2:.6g}")
            )

    fitted_a1 = float(np.max(np.abs(beta[nonzero]) / np.abs(r[nonzero])))
    fitted_a2 = _fitted_alpha2(c, r)
    notes = (
        "div D checked as a finite-difference surrogate on a 1D section",
        f"hypotheses sampled on [{r_min:g}, {r_max:g}] with {len(r)} points",
    )
    return ValidationReport(
        model=c.name,
        results=tuple(results),
        fitted_alpha1=fitted_a1,
        fitted_alpha2=fitted_a2,
        drift_sup=drift_sup,
        div_drift_neg_sup=div_neg_sup,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Regularization


def smoothstep_c2(t: np.ndarray) -> np.ndarray:
    """Quintic smoothstep: 0 at t<=0, 1 at t>=1, C^2 across the joints."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


@dataclass(frozen=True)
class RegularizedCoefficients:
    """Mollified-and-damped b* together with the cutoff drift."""

    eps: float
    mollifier_width: float
    base: CoefficientSet
    stencil: np.ndarray
    weights: np.ndarray

    def b_mollified(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if self.base.b_is_zero or self.mollifier_width == 0.0:
            return self.base.b(r)
        shifted = r[..., None] - self.stencil
        return np.asarray(self.base.b(shifted)) @ self.weights

    def b_star_eps(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return self.b_mollified(r) * r / (1.0 + self.eps * np.abs(r))

    def eta_eps(self, x: np.ndarray) -> np.ndarray:
        """C^2 cutoff profile: one on |x| < 1/eps, zero beyond sqrt(2)/eps."""
        x = np.asarray(x, dtype=np.float64)
        u = self.eps**2 * np.sum(x * x, axis=-1)
        return 1.0 - smoothstep_c2(u - 1.0)

    def D_eps(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.base.D_is_zero:
            return np.zeros_like(x)
        return self.base.D(x) * self.eta_eps(x)[..., None]

    def lipschitz_bound(self) -> float:
        """Computable global Lipschitz bound for b*_eps from |b|_inf and the
        stencil's total variation: |r|/(1+eps|r|) <= 1/eps caps the mollified
        derivative term and the damping factor itself is 1-Lipschitz in r."""
        if self.base.b_is_zero:
            return 0.0
        if self.mollifier_width == 0.0:
            return np.inf
        ds = float(self.stencil[1] - self.stencil[0])
        tv = float(np.abs(np.diff(self.weights)).sum() + self.weights[0] + self.weights[-1])
        lip_b = self.base.b_sup * tv / ds
        return self.base.b_sup + lip_b / self.eps


_WIDTH_FLOOR = 1e-8


def regularize(
    c: CoefficientSet, eps: float, mollifier_width: float, n_stencil: int = 64
) -> RegularizedCoefficients:
    """Build the eps-regularized companions of a model.

    The mollifier is a composite-midpoint quadrature of a C-infinity bump over
    ``n_stencil`` points spanning [-width, width]; width 0 skips mollification,
    as do widths below 1e-8, which double precision cannot resolve against
    order-one arguments.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if mollifier_width < 0:
        raise ValueError("mollifier_width must be nonnegative")
    if mollifier_width < _WIDTH_FLOOR:
        mollifier_width = 0.0
    if mollifier_width > 0:
        step = 2.0 * mollifier_width / n_stencil
        stencil = -mollifier_width + (np.arange(n_stencil) + 0.5) * step
        w = bump_profile(stencil / mollifier_width)
        weights = w / w.sum()
    else:
        stencil = np.zeros(1)
        weights = np.ones(1)
    return RegularizedCoefficients(
        eps=eps,
        mollifier_width=mollifier_width,
        base=c,
        stencil=stencil,
        weights=weights,
    )
