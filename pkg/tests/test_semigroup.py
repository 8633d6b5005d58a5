import numpy as np
import pytest
import scipy.sparse
import scipy.sparse.linalg

import nfpe
from nfpe import Field, make_model, mild_solution, semigroup_law_check, step
from nfpe.grid import h1_seminorm_sq, laplacian_matrix
from nfpe.semigroup import exponential_formula_study

from conftest import random_density


def heat_implicit_euler_oracle(rho0: Field, h: float, n_steps: int) -> np.ndarray:
    """Independent oracle: (I - h Lap)^{-1} applied n_steps times by sparse LU."""
    n_tot = rho0.grid.n ** rho0.grid.d
    sys = (scipy.sparse.identity(n_tot) - h * laplacian_matrix(rho0.grid)).tocsc()
    lu = scipy.sparse.linalg.splu(sys)
    y = rho0.values.ravel().copy()
    for _ in range(n_steps):
        y = lu.solve(y)
    return y.reshape(rho0.grid.shape)


class TestStep:
    def test_zero_fixed_point(self, grid64, rcfg):
        zero = Field(grid64, np.zeros(grid64.shape))
        out = step(zero, make_model("porous_medium", m=2), 0.1, rcfg)
        assert np.all(out.values == 0.0)

    def test_heat_step_matches_sparse_solve(self, grid64, rcfg):
        rng = np.random.default_rng(0)
        rho0 = random_density(grid64, rng)
        out = step(rho0, make_model("heat"), 0.01, rcfg)
        oracle = heat_implicit_euler_oracle(rho0, 0.01, 1)
        assert np.abs(out.values - oracle).sum() * grid64.cell_volume < 1e-9

    def test_large_step_substepping(self, grid64, rcfg):
        # h > lambda0 must compose substeps: compare against the explicit chain
        rng = np.random.default_rng(1)
        rho0 = random_density(grid64, rng)
        c = make_model("heat")
        out = step(rho0, c, 1.2, rcfg)  # lambda0 = 0.5 -> 3 substeps of 0.4
        oracle = heat_implicit_euler_oracle(rho0, 0.4, 3)
        assert np.abs(out.values - oracle).sum() * grid64.cell_volume < 1e-8

    def test_probability_preserved(self, grid64, rcfg):
        rng = np.random.default_rng(2)
        rho0 = random_density(grid64, rng)
        out = step(rho0, make_model("bose_einstein", a=1, b_mode="self", drift="tanh"), 0.05, rcfg)
        assert abs(out.mass() - 1.0) < 1e-8
        assert float(out.values.min()) >= -1e-10


class TestMildSolution:
    def test_single_step_equals_step(self, grid64, rcfg):
        rng = np.random.default_rng(3)
        rho0 = random_density(grid64, rng)
        c = make_model("porous_medium", m=2)
        traj = mild_solution(rho0, c, 0.01, 0.01, rcfg)
        assert len(traj.states) == 2
        direct = step(rho0, c, 0.01, rcfg)
        assert np.array_equal(traj.final().values, direct.values)

    def test_trajectory_times_equispaced(self, grid64, rcfg):
        rng = np.random.default_rng(4)
        traj = mild_solution(random_density(grid64, rng), make_model("heat"), 0.05, 0.01, rcfg)
        assert np.allclose(np.diff(traj.times), 0.01, atol=1e-15)
        assert traj.times[0] == 0.0

    def test_heat_run_matches_sparse_chain(self, grid64, rcfg):
        rng = np.random.default_rng(5)
        rho0 = random_density(grid64, rng)
        traj = mild_solution(rho0, make_model("heat"), 0.05, 0.01, rcfg)
        oracle = heat_implicit_euler_oracle(rho0, 0.01, 5)
        assert np.abs(traj.final().values - oracle).sum() * grid64.cell_volume < 5e-9

    def test_mass_and_positivity_along_trajectory(self, grid128, rcfg):
        rng = np.random.default_rng(6)
        rho0 = random_density(grid128, rng)
        c = make_model("porous_medium", m=2, b_mode="self", drift="tanh")
        traj = mild_solution(rho0, c, 0.02, 1e-3, rcfg)
        masses = [s.mass() for s in traj.states]
        assert max(abs(m - 1.0) for m in masses) < 1e-7
        assert min(float(s.values.min()) for s in traj.states) >= -1e-8

    def test_flow_l1_contraction(self, grid64, rcfg):
        rng = np.random.default_rng(7)
        c = make_model("bose_einstein", a=1, b_mode="self", drift="tanh")
        r1 = random_density(grid64, rng)
        r2 = random_density(grid64, rng)
        n_steps = 5
        t1 = mild_solution(r1, c, n_steps * 0.01, 0.01, rcfg)
        t2 = mild_solution(r2, c, n_steps * 0.01, 0.01, rcfg)
        assert nfpe.l1_distance(t1.final(), t2.final()) <= (
            nfpe.l1_distance(r1, r2) + n_steps * 1e-8
        )

    def test_linf_no_blowup(self, grid64, rcfg):
        rng = np.random.default_rng(8)
        rho0 = random_density(grid64, rng, smooth=False)
        c = make_model("heat", b_mode="self", drift="tanh")
        traj = mild_solution(rho0, c, 0.05, 0.01, rcfg)
        peak = max(float(np.abs(s.values).max()) for s in traj.states)
        assert peak <= 2.0 * float(np.abs(rho0.values).max())

    def test_heat_l2_energy_monotone(self, grid64, rcfg):
        # self-adjoint linear contraction: the L2 norm never increases
        rng = np.random.default_rng(9)
        traj = mild_solution(random_density(grid64, rng), make_model("heat"), 0.05, 0.01, rcfg)
        l2 = [float(np.sum(s.values**2)) for s in traj.states]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(l2, l2[1:]))

    def test_energy_estimate_under_coercivity(self, grid64, rcfg):
        # models with beta(r) r >= alpha0 r^2: discrete energy balance
        # |rho(T)|_2^2 + 2 sum h |grad beta(rho_j)|^2 <= (alpha1/alpha0) |rho0|_2^2
        rng = np.random.default_rng(10)
        rho0 = random_density(grid64, rng)
        c = make_model("heat")
        budgets = []
        for h in (0.01, 0.005):
            traj = mild_solution(rho0, c, 0.05, h, rcfg)
            vol = grid64.cell_volume
            grad_sum = sum(
                h * h1_seminorm_sq(Field(grid64, c.beta(s.values)))
                for s in traj.states[1:]
            )
            l2_final = float(np.sum(traj.final().values ** 2) * vol)
            budgets.append(l2_final + 2.0 * grad_sum)
        l2_init = float(np.sum(rho0.values**2) * grid64.cell_volume)
        for b in budgets:
            assert b <= l2_init * (1.0 + 1e-9)

    def test_invalid_time_args(self, grid64, rcfg):
        rho0 = Field(grid64, np.zeros(grid64.shape))
        with pytest.raises(ValueError):
            mild_solution(rho0, make_model("heat"), -1.0, 0.1, rcfg)
        with pytest.raises(ValueError):
            mild_solution(rho0, make_model("heat"), 0.1, 0.2, rcfg)


class TestExponentialFormula:
    def test_zero_initial_state_zero_gaps(self, grid64, rcfg):
        zero = Field(grid64, np.zeros(grid64.shape))
        rep = exponential_formula_study(zero, make_model("porous_medium", m=2), 0.1, [2, 4, 8], rcfg)
        assert all(g == 0.0 for g in rep.gaps)

    def test_heat_first_order(self, grid64, rcfg):
        rng = np.random.default_rng(11)
        rho0 = random_density(grid64, rng)
        rep = exponential_formula_study(rho0, make_model("heat"), 0.1, [4, 8, 16, 32], rcfg)
        assert all(b < a for a, b in zip(rep.gaps, rep.gaps[1:]))
        assert rep.fitted_order >= 0.8

    def test_gaps_decreasing_all_models(self, grid64, rcfg):
        rng = np.random.default_rng(12)
        rho0 = random_density(grid64, rng)
        for name, kw in [("porous_medium", dict(m=2)), ("bose_einstein", dict(a=1, b_mode="self", drift="tanh"))]:
            rep = exponential_formula_study(rho0, make_model(name, **kw), 0.1, [4, 8, 16], rcfg)
            assert all(b < a for a, b in zip(rep.gaps, rep.gaps[1:]))

    def test_invalid_n_list(self, grid64, rcfg):
        rho0 = Field(grid64, np.zeros(grid64.shape))
        with pytest.raises(ValueError):
            exponential_formula_study(rho0, make_model("heat"), 0.1, [4, 4], rcfg)
        with pytest.raises(ValueError):
            exponential_formula_study(rho0, make_model("heat"), 0.1, [0, 2], rcfg)


class TestSemigroupLaw:
    def test_t_zero_exact(self, grid64, rcfg):
        rng = np.random.default_rng(13)
        rho0 = random_density(grid64, rng)
        assert semigroup_law_check(rho0, make_model("heat"), 0.0, 0.02, 0.01, rcfg) == 0.0

    def test_heat_composition(self, grid64, rcfg):
        rng = np.random.default_rng(14)
        rho0 = random_density(grid64, rng)
        d = semigroup_law_check(rho0, make_model("heat"), 0.05, 0.05, 0.01, rcfg)
        assert d <= 1e-8

    def test_porous_medium_composition(self, grid64, rcfg):
        rng = np.random.default_rng(15)
        rho0 = random_density(grid64, rng)
        d = semigroup_law_check(rho0, make_model("porous_medium", m=2), 0.05, 0.05, 0.01, rcfg)
        assert d <= 10 * rcfg.cauchy_tol * 10

    def test_rejects_unaligned_times(self, grid64, rcfg):
        rho0 = Field(grid64, np.zeros(grid64.shape))
        with pytest.raises(ValueError):
            semigroup_law_check(rho0, make_model("heat"), 0.015, 0.02, 0.01, rcfg)
