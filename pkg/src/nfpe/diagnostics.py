"""Uniqueness diagnostics and analytic validation oracles.

The scalar functional h_eps(y1, y2) = (Phi_eps z_eps, z_eps), with z the
difference of two states, z_eps its mollification and Phi_eps the Helmholtz
inverse, measures an H^{-1}-type gap.  Along two trajectories it obeys a
Gronwall bound with constants fitted from the coefficients on the observed
range, which turns the uniqueness theory into a runnable check.

The heat kernel and the self-similar source solution of the porous medium
equation provide closed-form oracle trajectories for validating the stepper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr

from .coefficients import CoefficientSet
from .errors import GridMismatch, InvariantViolation
from .grid import (
    Field,
    GridSpec,
    apply_helmholtz_inverse,
    h1_seminorm_sq,
    l1_distance,
    mollify_field,
    require_same_grid,
)
from .semigroup import Trajectory


def h_eps_functional(y1: Field, y2: Field, eps: float) -> float:
    """(Phi_eps z_eps, z_eps) for z = y1 - y2, with an exactness self-check.

    The summation-by-parts identity
    eps |Phi z|_2^2 + |grad Phi z|_2^2 = (z, Phi z) must hold to 1e-10
    relative; a violation means the Helmholtz solve or the gradient sum is
    corrupt, so it raises rather than returning a bad diagnostic.
    """
    require_same_grid(y1, y2)
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = y1.grid
    z = Field(grid, y1.values - y2.values)
    z_eps = mollify_field(z, eps)
    u = apply_helmholtz_inverse(z_eps.values, grid, eps)
    vol = grid.cell_volume
    h = float(np.sum(u * z_eps.values) * vol)
    lhs = eps * float(np.sum(u * u) * vol) + h1_seminorm_sq(Field(grid, u))
    if abs(lhs - h) > 1e-10 * max(abs(h), 1e-30) + 1e-300:
        raise InvariantViolation(
            f"energy identity violated: {lhs!r} vs {h!r} (corrupt Helmholtz solve?)"
        )
    return h


@dataclass(frozen=True)
class UniquenessReport:
    eps: float
    times: np.ndarray
    h_eps: np.ndarray
    gronwall_bound: np.ndarray
    gronwall_constant: float
    violated: bool


def uniqueness_gap(
    traj1: Trajectory,
    traj2: Trajectory,
    eps: float,
    coefficients: CoefficientSet | None = None,
    *,
    floor: float = 0.0,
    slack: float = 0.10,
) -> UniquenessReport:
    """Evaluate h_eps along two trajectories against its Gronwall majorant.

    The majorant is max(h_eps(0), floor) * exp(C t) with
    C = max(1, alpha3^2 |D|_inf^2 / alpha4) fitted on [-N, N],
    N = max observed sup norm; ``floor`` keeps the flag meaningful when the
    initial gap is zero (solver-noise comparisons).  Violation means h_eps
    exceeds the majorant by more than ``slack``.
    """
    if len(traj1.times) != len(traj2.times) or not np.allclose(
        traj1.times, traj2.times, rtol=0, atol=1e-12
    ):
        raise GridMismatch("trajectories do not share time stamps")
    require_same_grid(traj1.states[0], traj2.states[0])

    h_vals = np.array(
        [
            h_eps_functional(a, b, eps)
            for a, b in zip(traj1.states, traj2.states)
        ]
    )
    if coefficients is not None:
        sup = max(
            max(float(np.abs(s.values).max()) for s in traj1.states),
            max(float(np.abs(s.values).max()) for s in traj2.states),
            1e-6,
        )
        alpha3, alpha4 = coefficients.local_constants(sup)
        d_sup = drift_sup_norm(coefficients, traj1.grid)
        growth = 0.0 if alpha4 == np.inf else alpha3**2 * d_sup**2 / alpha4
        const = max(1.0, growth)
    else:
        const = 1.0
    base = max(float(h_vals[0]), floor)
    bound = base * np.exp(const * (traj1.times - traj1.times[0]))
    violated = bool(np.any(h_vals > (1.0 + slack) * bound))
    return UniquenessReport(
        eps=eps,
        times=traj1.times.copy(),
        h_eps=h_vals,
        gronwall_bound=bound,
        gronwall_constant=const,
        violated=violated,
    )


def initial_trace_gap(
    traj1: Trajectory, traj2: Trajectory, n_probes: int = 5
) -> np.ndarray:
    """max_k |(y1(t_j) - y2(t_j), phi_k)| over a fixed bank of smooth bumps.

    A vanishing limit as t_j -> 0 is the discrete reading of the shared
    initial-trace condition under which two distributional solutions must
    coincide.  The probe bank holds ``n_probes`` compactly supported bumps
    of staggered centers and widths.
    """
    if len(traj1.times) != len(traj2.times):
        raise GridMismatch("trajectories do not share time stamps")
    require_same_grid(traj1.states[0], traj2.states[0])
    grid = traj1.grid
    pts = grid.cell_centers()
    L = grid.half_width
    probes = []
    for k in range(n_probes):
        center = -0.5 * L + k * (L / max(n_probes - 1, 1))
        width = 0.15 * L * (1.0 + 0.5 * (k % 3))
        r2 = np.sum((pts - center) ** 2, axis=1) / width**2
        phi = np.where(r2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
        probes.append(phi.reshape(grid.shape))
    vol = grid.cell_volume
    out = np.empty(len(traj1.times))
    for j, (a, b) in enumerate(zip(traj1.states, traj2.states)):
        z = a.values - b.values
        out[j] = max(abs(float(np.sum(z * phi) * vol)) for phi in probes)
    return out


def drift_sup_norm(c: CoefficientSet, grid: GridSpec) -> float:
    """sup |D| sampled at cell centers (discrete surrogate)."""
    if c.D_is_zero:
        return 0.0
    d_vals = np.asarray(c.D(grid.cell_centers()))
    return float(np.max(np.linalg.norm(d_vals, axis=1)))


def drift_linf_bound_factor(c: CoefficientSet, grid: GridSpec) -> float:
    """1 + sup(|D| + (div D)^-)^(1/2) sampled discretely on the grid."""
    if c.D_is_zero:
        return 1.0
    pts = grid.cell_centers()
    d_vals = np.asarray(c.D(pts))
    mag = np.linalg.norm(d_vals, axis=1).reshape(grid.shape)
    if grid.d == 1:
        div = np.gradient(d_vals[:, 0], grid.dx)
    else:
        dx_comp = np.gradient(d_vals[:, 0].reshape(grid.shape), grid.dx, axis=0)
        dy_comp = np.gradient(d_vals[:, 1].reshape(grid.shape), grid.dx, axis=1)
        div = (dx_comp + dy_comp).ravel()
    total = mag.ravel() + np.maximum(-div, 0.0)
    return 1.0 + float(np.sqrt(np.max(total)))


# ---------------------------------------------------------------------------
# Analytic oracles


def heat_oracle(rho0_params: dict, t: float, grid: GridSpec) -> Field:
    """Gaussian evolved by the heat flow: variance sigma0^2 + 2t per axis.

    Cell averages are exact CDF differences, so the discrete mass equals the
    probability of the box.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    mean = rho0_params.get("mean", 0.0)
    sigma0 = float(rho0_params["sigma0"])
    var = sigma0**2 + 2.0 * t
    sd = np.sqrt(var)
    means = np.broadcast_to(np.asarray(mean, dtype=float), (grid.d,))
    edges = grid.axis_edges()
    vals = None
    for axis in range(grid.d):
        cdf = ndtr((edges - means[axis]) / sd)
        marginal = np.diff(cdf) / grid.dx
        vals = marginal if vals is None else np.multiply.outer(vals, marginal)
    return Field(grid, vals)


def barenblatt_profile_constant(m: float, d: int) -> tuple[float, float]:
    """(C0, k) of the unit-mass self-similar profile (C0 - k |xi|^2)_+^(1/(m-1))."""
    alpha = d / (d * (m - 1.0) + 2.0)
    k = alpha * (m - 1.0) / (2.0 * d * m)
    # integral over R^d of (1 - |u|^2)_+^(1/(m-1)) in closed Gamma form
    q = 1.0 / (m - 1.0)
    log_v = (d / 2.0) * np.log(np.pi) + gammaln(q + 1.0) - gammaln(q + 1.0 + d / 2.0)
    v = np.exp(log_v)
    c0 = (k ** (d / 2.0) / v) ** (1.0 / (q + d / 2.0))
    return float(c0), float(k)


def barenblatt_oracle(m: float, t: float, t0: float, grid: GridSpec) -> Field:
    """Self-similar source solution of rho_t = Lap(rho^m), unit mass.

    Evaluated at time t + t0; t0 offsets the initial Dirac singularity.
    Cell averages use Gauss-Legendre quadrature split at the support edge,
    then a global renormalization pins the discrete mass to one.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    tau = t + t0
    if not tau > 0:
        raise ValueError("t + t0 must be positive")
    d = grid.d
    c0, k = barenblatt_profile_constant(m, d)
    alpha = d / (d * (m - 1.0) + 2.0)
    scale = tau ** (alpha / d)
    radius = np.sqrt(c0 / k) * scale
    if radius > grid.half_width:
        raise ValueError("profile support exceeds the grid half width")

    q = 1.0 / (m - 1.0)

    def profile(x2: np.ndarray) -> np.ndarray:
        arg = np.maximum(c0 - k * x2 / scale**2, 0.0)
        return arg**q / tau**alpha

    nodes, weights = np.polynomial.legendre.leggauss(12)
    edges = grid.axis_edges()
    if d == 1:
        vals = np.zeros(grid.n)
        for j in range(grid.n):
            a, b = edges[j], edges[j + 1]
            if b <= -radius or a >= radius:
                continue
            pieces = sorted({a, b, *(c for c in (-radius, radius) if a < c < b)})
            acc = 0.0
            for lo, hi in zip(pieces, pieces[1:]):
                xs = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
                acc += 0.5 * (hi - lo) * float(np.sum(weights * profile(xs**2)))
            vals[j] = acc / grid.dx
    else:
        vals = np.zeros((grid.n, grid.n))
        xs = 0.5 * grid.dx * nodes
        wx = weights * 0.5 * grid.dx
        centers = grid.axis_centers()
        lo = np.searchsorted(edges, -radius) - 1
        hi = np.searchsorted(edges, radius) + 1
        for i in range(max(lo, 0), min(hi, grid.n)):
            px = centers[i] + xs
            for j in range(max(lo, 0), min(hi, grid.n)):
                py = centers[j] + xs
                x2 = px[:, None] ** 2 + py[None, :] ** 2
                cell = float(wx @ profile(x2) @ wx)
                vals[i, j] = cell / grid.cell_volume
    field = Field(grid, vals)
    total = field.mass()
    field.values /= total
    return field


@dataclass(frozen=True)
class ErrorCurve:
    times: np.ndarray
    l1_errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.max(self.l1_errors))


def compare_l1(traj: Trajectory, oracle) -> ErrorCurve:
    """Per-time L1 distance between a trajectory and a time-indexed oracle.

    ``oracle`` is either a callable t -> Field or a Trajectory sharing the
    same time stamps.
    """
    if isinstance(oracle, Trajectory):
        if len(oracle.times) != len(traj.times) or not np.allclose(
            oracle.times, traj.times, rtol=0, atol=1e-12
        ):
            raise GridMismatch("oracle trajectory does not share time stamps")
        refs = oracle.states
    else:
        refs = [oracle(float(t)) for t in traj.times]
    errs = np.array([l1_distance(s, r) for s, r in zip(traj.states, refs)])
    return ErrorCurve(times=traj.times.copy(), l1_errors=errs)
