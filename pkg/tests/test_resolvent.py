import numpy as np
import pytest
import scipy.sparse
import scipy.sparse.linalg
from dataclasses import replace

import nfpe
from nfpe import Field, ResolventConfig, make_model, resolvent, resolvent_identity_check, solve_regularized
from nfpe.errors import MaxItersExceeded
from nfpe.grid import laplacian_matrix

from conftest import random_density


def heat_direct_solve(f: Field, lam: float, eps: float) -> np.ndarray:
    """Independent oracle: assemble and solve the linear regularized system
    (I + lam (eps I - Lap)(1 + eps)) y = f with a dense/sparse direct solve."""
    n_tot = f.grid.n ** f.grid.d
    A = eps * scipy.sparse.identity(n_tot) - laplacian_matrix(f.grid)
    sys = scipy.sparse.identity(n_tot) + lam * (1.0 + eps) * A
    y = scipy.sparse.linalg.spsolve(sys.tocsr(), f.values.ravel())
    return y.reshape(f.grid.shape)


def independent_residual(y, f, c, lam, eps, grid, b_star_eps, face_v):
    """Residual of the regularized equation recomputed with explicit loops."""
    n = grid.n
    w = c.beta(y) + eps * y
    lap = np.zeros(n)
    for i in range(n):
        left = w[i - 1] if i > 0 else w[0]
        right = w[i + 1] if i < n - 1 else w[-1]
        lap[i] = (left - 2 * w[i] + right) / grid.dx**2
    div = np.zeros(n)
    g = b_star_eps(y)
    flux = np.zeros(n + 1)
    for k in range(1, n):
        donor = g[k - 1] if face_v[k] >= 0 else g[k]
        flux[k] = face_v[k] * donor
    for i in range(n):
        div[i] = (flux[i + 1] - flux[i]) / grid.dx
    r = y + lam * (eps * w - lap) + lam * div - f
    return float(np.abs(r).sum() * grid.dx)


class TestSolveRegularized:
    def test_zero_input_zero_output(self, grid64, rcfg):
        y = solve_regularized(Field(grid64, np.zeros(grid64.shape)), make_model("heat"), 0.1, 0.05, rcfg)
        assert np.all(y.values == 0.0)

    @pytest.mark.parametrize("eps", [0.1, 1e-3, 1e-6])
    def test_heat_matches_direct_linear_solve(self, grid64, rcfg, eps):
        rng = np.random.default_rng(0)
        f = random_density(grid64, rng)
        y = solve_regularized(f, make_model("heat"), 0.1, eps, rcfg)
        expected = heat_direct_solve(f, 0.1, eps)
        err = np.abs(y.values - expected).sum() * grid64.cell_volume
        assert err < 1e-9

    def test_porous_medium_residual_and_positivity(self, grid64, rcfg):
        rng = np.random.default_rng(1)
        f = random_density(grid64, rng)
        c = make_model("porous_medium", m=2)
        eps, lam = 1e-4, 0.2
        y = solve_regularized(f, c, lam, eps, rcfg)
        assert float(y.values.min()) >= -1e-10
        from nfpe.coefficients import regularize

        reg = regularize(c, eps, eps)
        res = independent_residual(
            y.values, f.values, c, lam, eps, grid64, reg.b_star_eps, np.zeros(grid64.n + 1)
        )
        assert res <= rcfg.inner_tol * 1.01

    def test_drift_residual_independent_stencil(self, grid64, rcfg):
        rng = np.random.default_rng(2)
        f = random_density(grid64, rng)
        c = make_model("porous_medium", m=2, b_mode="self", drift="tanh")
        eps, lam = 1e-3, 0.1
        y = solve_regularized(f, c, lam, eps, rcfg)
        from nfpe.coefficients import regularize
        from nfpe.grid import sample_face_velocity

        reg = regularize(c, eps, eps)
        face_v = sample_face_velocity(grid64, reg.D_eps)[0]
        res = independent_residual(
            y.values, f.values, c, lam, eps, grid64, reg.b_star_eps, face_v
        )
        assert res <= rcfg.inner_tol * 1.01

    def test_invalid_args(self, grid64, rcfg):
        f = Field(grid64, np.zeros(grid64.shape))
        with pytest.raises(ValueError):
            solve_regularized(f, make_model("heat"), -0.1, 0.1, rcfg)
        with pytest.raises(ValueError):
            solve_regularized(f, make_model("heat"), 0.1, 0.0, rcfg)


class TestResolventContinuation:
    def test_probability_preservation(self, grid64, rcfg):
        rng = np.random.default_rng(3)
        for name, kw in [("heat", {}), ("porous_medium", dict(m=2)),
                         ("bose_einstein", dict(a=1, b_mode="self", drift="tanh"))]:
            c = make_model(name, **kw)
            f = random_density(grid64, rng)
            sol = resolvent(f, c, replace(rcfg, lam=0.1))
            assert abs(sol.y.mass() - 1.0) < 1e-8
            assert float(sol.y.values.min()) >= -1e-10
            assert sol.residual_l1 <= rcfg.inner_tol

    def test_l1_contraction(self, grid64, rcfg):
        rng = np.random.default_rng(4)
        c = make_model("porous_medium", m=2, b_mode="self", drift="tanh")
        for lam in (0.01, 0.5):
            f1 = random_density(grid64, rng)
            f2 = random_density(grid64, rng)
            y1 = resolvent(f1, c, replace(rcfg, lam=lam)).y
            y2 = resolvent(f2, c, replace(rcfg, lam=lam)).y
            assert nfpe.l1_distance(y1, y2) <= nfpe.l1_distance(f1, f2) * (1 + 1e-8)

    def test_beta_y_consistency(self, grid64, rcfg):
        rng = np.random.default_rng(5)
        c = make_model("bose_einstein", a=1)
        sol = resolvent(random_density(grid64, rng), c, rcfg)
        assert np.array_equal(sol.beta_y.values, c.beta(sol.y.values))

    def test_eps_history_recorded_and_decreasing(self, grid64, rcfg):
        rng = np.random.default_rng(6)
        sol = resolvent(random_density(grid64, rng), make_model("heat"), rcfg)
        eps_seq = [e for e, _ in sol.eps_history]
        assert all(b < a for a, b in zip(eps_seq, eps_seq[1:]))
        assert np.isnan(sol.eps_history[0][1])
        gaps = [g for _, g in sol.eps_history[1:]]
        assert gaps[-1] <= rcfg.cauchy_tol
        # gaps eventually decreasing
        tail = gaps[-4:-1]
        assert all(b <= a for a, b in zip(tail, tail[1:]))

    def test_deterministic_bitwise(self, grid64, rcfg):
        rng = np.random.default_rng(7)
        f = random_density(grid64, rng)
        c = make_model("porous_medium", m=2, b_mode="self", drift="tanh")
        a = resolvent(f, c, rcfg).y.values
        b = resolvent(f, c, rcfg).y.values
        assert np.array_equal(a, b)

    def test_2d_probability_preservation(self, grid2d, rcfg):
        rng = np.random.default_rng(8)
        f = random_density(grid2d, rng)
        c = make_model("porous_medium", m=2, b_mode="self", drift="tanh")
        sol = resolvent(f, c, replace(rcfg, lam=0.1))
        assert abs(sol.y.mass() - 1.0) < 1e-8
        assert float(sol.y.values.min()) >= -1e-10

    def test_linf_bound_no_drift(self, grid64, rcfg):
        rng = np.random.default_rng(9)
        f = random_density(grid64, rng, smooth=False)
        for lam in (0.01, 0.1, 0.5):
            y = resolvent(f, make_model("porous_medium", m=2), replace(rcfg, lam=lam)).y
            assert np.abs(y.values).max() <= np.abs(f.values).max() + 1e-8

    def test_max_iters_error_carries_residual(self, grid64):
        cfg = ResolventConfig(max_inner_iters=1, n_eps=40, inner_tol=1e-10)
        rng = np.random.default_rng(10)
        f = random_density(grid64, rng)
        c = make_model("bose_einstein", a=1, b_mode="self", drift="tanh")
        with pytest.raises(MaxItersExceeded) as exc_info:
            resolvent(f, c, replace(cfg, lam=0.5))
        assert exc_info.value.best_residual > 0.0

    def test_continuation_stall_detector(self, grid64, rcfg, monkeypatch):
        # script the level solutions so consecutive gaps stop decreasing
        import importlib

        rmod = importlib.import_module("nfpe.resolvent")
        rng = np.random.default_rng(99)
        drifts = iter([0.0, 1.0, 1.0, 1.0, 1.0, 1.0])

        def scripted(ws, f, y0, cfg):
            return y0 + next(drifts), 0.0

        monkeypatch.setattr(rmod, "_solve_level", scripted)
        f = Field(grid64, rng.random(grid64.shape))
        from nfpe.errors import ContinuationStalled

        with pytest.raises(ContinuationStalled):
            resolvent(f, make_model("heat"), rcfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ResolventConfig(lam=-1.0)
        with pytest.raises(ValueError):
            ResolventConfig(eps_factor=1.5)
        with pytest.raises(ValueError):
            ResolventConfig(n_eps=3)  # schedule does not reach inner_tol
        with pytest.raises(ValueError):
            ResolventConfig(damping=0.0)


class TestResolventIdentity:
    def test_equal_lambdas_zero_defect(self, grid64, rcfg):
        rng = np.random.default_rng(11)
        f = random_density(grid64, rng)
        defect = resolvent_identity_check(f, make_model("heat"), 0.05, 0.05, rcfg)
        assert defect <= 10 * rcfg.cauchy_tol

    def test_heat_linear_identity(self, grid64, rcfg):
        rng = np.random.default_rng(12)
        f = random_density(grid64, rng)
        defect = resolvent_identity_check(f, make_model("heat"), 0.01, 0.02, rcfg)
        assert defect <= 1e-8

    def test_porous_medium_identity(self, grid64, rcfg):
        rng = np.random.default_rng(13)
        f = random_density(grid64, rng)
        defect = resolvent_identity_check(f, make_model("porous_medium", m=2), 0.005, 0.01, rcfg)
        assert defect <= 10 * rcfg.cauchy_tol

    def test_invalid_lambdas(self, grid64, rcfg):
        f = Field(grid64, np.zeros(grid64.shape))
        with pytest.raises(ValueError):
            resolvent_identity_check(f, make_model("heat"), -0.1, 0.1, rcfg)
