"""Resolvent of the nonlinear Fokker-Planck operator by eps-continuation.

One implicit time step of the flow solves the stationary problem

    y + lam * ( -Lap beta(y) + div(D b(y) y) ) = f .

The solver regularizes it as

    y + lam (eps I - Lap)(beta(y) + eps y) + lam div(D_eps b*_eps(y)) = f

and follows a decreasing eps schedule with warm starts; each level is solved
by a Picard iteration that freezes the upwind drift term at the previous
iterate and treats the monotone diffusion block by a damped Newton method
whose Jacobian uses beta'.  The Picard relaxation factor is halved whenever
the full L1 residual fails to decrease.  Continuation stops once consecutive
eps iterates are Cauchy in L1.

The map f -> y is a pure function of its arguments: repeated calls with the
same inputs are bitwise identical, which makes semigroup compositions exactly
associative at the discrete level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .coefficients import CoefficientSet, RegularizedCoefficients, regularize
from .errors import ContinuationStalled, MaxItersExceeded, NonFiniteIterate
from .grid import (
    Field,
    GridSpec,
    apply_divergence_upwind,
    laplacian_matrix,
    sample_face_velocity,
)


@dataclass(frozen=True)
class ResolventConfig:
    """Continuation and inner-solver knobs.

    ``lam`` is the default time scale of one resolvent application; steps
    larger than ``lambda0`` are realized upstream by composing resolvents.
    The eps schedule is eps0 * eps_factor**k for k < n_eps, truncated early
    once consecutive iterates are within ``cauchy_tol`` in L1.
    ``mollifier_width`` of the drift smoothing defaults to eps itself
    (width < 0 requests that coupling); set >= 0 to pin it.
    """

    lam: float = 0.1
    lambda0: float = 0.5
    eps0: float = 0.1
    eps_factor: float = 0.5
    n_eps: int = 45
    inner_tol: float = 1e-10
    cauchy_tol: float = 1e-10
    max_inner_iters: int = 200
    damping: float = 1.0
    mollifier_width: float = -1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not (0.0 < self.eps_factor < 1.0):
            raise ValueError("eps_factor must lie in (0, 1)")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.eps_schedule()[-1] >= self.inner_tol:
            raise ValueError(
                "eps schedule must decrease below inner_tol; "
                "raise n_eps or lower eps0"
            )

    def eps_schedule(self) -> np.ndarray:
        return self.eps0 * self.eps_factor ** np.arange(self.n_eps)


@dataclass(frozen=True)
class ResolventSolution:
    y: Field
    beta_y: Field
    residual_l1: float
    eps_history: tuple[tuple[float, float], ...]
    lam: float


class _LevelWorkspace:
    """Per-(grid, eps) arrays shared by the residual and the Newton solve."""

    def __init__(
        self,
        grid: GridSpec,
        c: CoefficientSet,
        reg: RegularizedCoefficients,
        lam: float,
        eps: float,
    ):
        self.grid = grid
        self.c = c
        self.reg = reg
        self.lam = lam
        self.eps = eps
        self.vol = grid.cell_volume
        inv2 = 1.0 / grid.dx**2
        n = grid.n
        if grid.d == 1:
            # (eps I - Lap) tridiagonals; mirror closure trims the boundary rows.
            self.A_diag = np.full(n, eps + 2.0 * inv2)
            if grid.boundary == "no_flux":
                self.A_diag[0] = self.A_diag[-1] = eps + inv2
            self.A_off = np.full(n - 1, -inv2)
            self.A_sp = None
        else:
            self.A_sp = (
                eps * scipy.sparse.identity(n**2, format="csr") - laplacian_matrix(grid)
            )
            self.A_diag = self.A_off = None
        if c.drift_active:
            self.faces = sample_face_velocity(grid, reg.D_eps)
        else:
            self.faces = None

    # -- operator applications ------------------------------------------------

    def apply_A(self, w: np.ndarray) -> np.ndarray:
        """(eps I - Lap) w."""
        if self.grid.d == 1:
            out = self.A_diag * w
            out[:-1] += self.A_off * w[1:]
            out[1:] += self.A_off * w[:-1]
            return out
        return self.A_sp.dot(w.ravel()).reshape(self.grid.shape)

    def drift_divergence(self, y: np.ndarray) -> np.ndarray:
        if self.faces is None:
            return np.zeros_like(y)
        g = self.reg.b_star_eps(y)
        return apply_divergence_upwind([g] * self.grid.d, self.faces, self.grid)

    def beta_eps(self, y: np.ndarray) -> np.ndarray:
        return self.c.beta(y) + self.eps * y

    def residual(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        r = y + self.lam * self.apply_A(self.beta_eps(y)) - f
        if self.faces is not None:
            r += self.lam * self.drift_divergence(y)
        return r

    def l1(self, r: np.ndarray) -> float:
        return float(np.abs(r).sum() * self.vol)

    # -- Newton solve of the drift-frozen diffusion block ----------------------

    def solve_diffusion(
        self, g: np.ndarray, y0: np.ndarray, tol: float, max_iters: int = 60
    ) -> tuple[np.ndarray, float]:
        """Solve y + lam (eps I - Lap) beta_eps(y) = g by damped Newton.

        The Jacobian I + lam (eps I - Lap) diag(beta_eps'(y)) is strictly
        column dominant for every eps > 0, so the linear solves never break
        down, including where beta' vanishes.
        """
        y = y0.copy()
        r = y + self.lam * self.apply_A(self.beta_eps(y)) - g
        rn = self.l1(r)
        best = rn
        for _ in range(max_iters):
            if rn <= tol:
                return y, rn
            bp = self.c.beta_prime(y) + self.eps
            delta = self._newton_step(bp, r)
            s = 1.0
            for _ in range(40):
                y_try = y + s * delta
                if not np.all(np.isfinite(y_try)):
                    s *= 0.5
                    continue
                r_try = y_try + self.lam * self.apply_A(self.beta_eps(y_try)) - g
                rn_try = self.l1(r_try)
                if rn_try < rn * (1.0 - 1e-4 * s) or rn_try < tol:
                    break
                s *= 0.5
            else:
                # Flat line search: accept the smallest step and let the
                # outer damping logic react to the stagnant residual.
                y_try = y + s * delta
                r_try = y_try + self.lam * self.apply_A(self.beta_eps(y_try)) - g
                rn_try = self.l1(r_try)
            y, r, rn = y_try, r_try, rn_try
            best = min(best, rn)
            if not np.all(np.isfinite(y)):
                idx = np.argwhere(~np.isfinite(y))[0]
                raise NonFiniteIterate("Newton iterate lost finiteness", tuple(idx))
        if rn <= tol:
            return y, rn
        raise MaxItersExceeded("Newton on the diffusion block stalled", best)

    def _newton_step(self, bp: np.ndarray, r: np.ndarray) -> np.ndarray:
        lam = self.lam
        if self.grid.d == 1:
            n = self.grid.n
            ab = np.zeros((3, n))
            ab[1, :] = 1.0 + lam * self.A_diag * bp
            ab[0, 1:] = lam * self.A_off * bp[1:]
            ab[2, :-1] = lam * self.A_off * bp[:-1]
            return scipy.linalg.solve_banded((1, 1), ab, -r)
        jac = scipy.sparse.identity(self.grid.n**2, format="csr") + lam * (
            self.A_sp @ scipy.sparse.diags(bp.ravel())
        )
        delta = scipy.sparse.linalg.splu(jac.tocsc()).solve(-r.ravel())
        return delta.reshape(self.grid.shape)


def _solve_level(
    ws: _LevelWorkspace, f: np.ndarray, y0: np.ndarray, cfg: ResolventConfig
) -> tuple[np.ndarray, float]:
    """One eps level: Picard on the lagged drift, Newton on the diffusion."""
    if ws.faces is None:
        return ws.solve_diffusion(f, y0, cfg.inner_tol)

    y = y0.copy()
    resid = ws.l1(ws.residual(y, f))
    best = resid
    omega = cfg.damping
    for _ in range(cfg.max_inner_iters):
        if resid <= cfg.inner_tol:
            return y, resid
        g = f - ws.lam * ws.drift_divergence(y)
        inner_tol = max(0.05 * resid, 0.2 * cfg.inner_tol)
        y_hat, _ = ws.solve_diffusion(g, y, inner_tol)
        accepted = False
        while omega >= 1e-4:
            y_try = y + omega * (y_hat - y)
            if not np.all(np.isfinite(y_try)):
                idx = np.argwhere(~np.isfinite(y_try))[0]
                raise NonFiniteIterate("Picard iterate lost finiteness", tuple(idx))
            r_try = ws.l1(ws.residual(y_try, f))
            if r_try < resid or r_try <= cfg.inner_tol:
                y, resid = y_try, r_try
                accepted = True
                omega = min(cfg.damping, omega * 1.5)
                break
            omega *= 0.5
        if not accepted:
            raise MaxItersExceeded("Picard relaxation collapsed", best)
        best = min(best, resid)
    if resid <= cfg.inner_tol:
        return y, resid
    raise MaxItersExceeded("Picard iteration exhausted max_inner_iters", best)


def solve_regularized(
    f: Field,
    c: CoefficientSet,
    lam: float,
    eps: float,
    cfg: ResolventConfig,
    warm_start: Field | None = None,
) -> Field:
    """Solve the eps-regularized stationary problem at a single eps."""
    if not (lam > 0 and eps > 0):
        raise ValueError("lam and eps must be positive")
    width = cfg.mollifier_width if cfg.mollifier_width >= 0.0 else eps
    reg = regularize(c, eps, width)
    ws = _LevelWorkspace(f.grid, c, reg, lam, eps)
    y0 = warm_start.values if warm_start is not None else f.values
    y, _ = _solve_level(ws, f.values, y0, cfg)
    return Field(f.grid, y)


def resolvent(f: Field, c: CoefficientSet, cfg: ResolventConfig) -> ResolventSolution:
    """Continuation along the eps schedule with warm starts.

    Stops when consecutive eps iterates are within cauchy_tol in L1; raises
    ContinuationStalled when the Cauchy gap stops decreasing for three
    consecutive levels while still above tolerance.
    """
    lam = cfg.lam
    grid = f.grid
    y = f.values.copy()
    history: list[tuple[float, float]] = []
    gaps: list[float] = []
    resid = math.inf
    for eps in cfg.eps_schedule():
        width = cfg.mollifier_width if cfg.mollifier_width >= 0.0 else float(eps)
        reg = regularize(c, float(eps), width)
        ws = _LevelWorkspace(grid, c, reg, lam, float(eps))
        y_new, resid = _solve_level(ws, f.values, y, cfg)
        gap = float(np.abs(y_new - y).sum() * grid.cell_volume) if history else math.nan
        history.append((float(eps), gap))
        y = y_new
        if len(history) > 1:
            gaps.append(gap)
            if gap <= cfg.cauchy_tol:
                break
            if len(gaps) >= 4 and all(
                gaps[-k] >= gaps[-k - 1] * (1.0 - 1e-12) for k in (1, 2, 3)
            ):
                raise ContinuationStalled(
                    "eps continuation stopped converging", gaps[-4:]
                )
    return ResolventSolution(
        y=Field(grid, y),
        beta_y=Field(grid, c.beta(y)),
        residual_l1=resid,
        eps_history=tuple(history),
        lam=lam,
    )


def resolvent_identity_check(
    f: Field,
    c: CoefficientSet,
    lambda1: float,
    lambda2: float,
    cfg: ResolventConfig,
) -> float:
    """L1 defect of the resolvent identity tying J at two time scales.

    Exact solutions satisfy J_l2(f) = J_l1((l1/l2) f + (1 - l1/l2) J_l2(f));
    the returned defect measures accumulated solver error only.
    """
    if not (lambda1 > 0 and lambda2 > 0):
        raise ValueError("lambda1, lambda2 must be positive")
    y2 = resolvent(f, c, replace(cfg, lam=lambda2)).y
    ratio = lambda1 / lambda2
    mixed = Field(f.grid, ratio * f.values + (1.0 - ratio) * y2.values)
    y12 = resolvent(mixed, c, replace(cfg, lam=lambda1)).y
    return float(np.abs(y2.values - y12.values).sum() * f.grid.cell_volume)
