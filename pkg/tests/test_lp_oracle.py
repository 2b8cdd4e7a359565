import itertools

import numpy as np
import pytest

from vmot.coupling import Covariance, Custom, DiscreteMeasure, independent_coupling, monotone_coupling
from vmot.distributions import Discrete, DomainError, convex_order
from vmot.lp_oracle import (
    CE_KERNELS,
    CE_U,
    CE_U2,
    CE_Z,
    DiscreteVmot,
    DualCertificate,
    Status,
    assemble,
    counterexample_d3,
    counterexample_instance,
    load_instance,
    random_monotone_instance,
    save_instance,
    save_solution,
    solve,
    total_variation,
    verify_monotone_d2,
)
from vmot.modularity import GridFn, legendre_at

DELTA0 = Discrete([0.0], [1.0])
SPLIT = Discrete([-1.0, 1.0], [0.5, 0.5])


def y1y2(x, y):
    return y[..., 0] * y[..., 1]




class TestAssemble:
    def test_single_point(self):
        inst = DiscreteVmot.from_marginals([DELTA0], [DELTA0], Custom(lambda x, y: 3.0 + 0 * x[..., 0]))
        lp = assemble(inst)
        assert lp.shape == (1, 1)
        sol = solve(inst)
        assert sol.value == pytest.approx(3.0)

    def test_forced_split(self):
        c = Custom(lambda x, y: y[..., 0] ** 3 + 2 * y[..., 0])
        inst = DiscreteVmot.from_marginals([DELTA0], [SPLIT], c)
        sol = solve(inst)
        np.testing.assert_allclose(sol.plan, [[0.5, 0.5]], atol=1e-10)
        assert sol.value == pytest.approx(0.5 * c(np.zeros((1, 1)), -np.ones((1, 1)))[0]
                                          + 0.5 * c(np.zeros((1, 1)), np.ones((1, 1)))[0])

    def test_row_counts(self):
        inst = random_monotone_instance(np.random.default_rng(0))
        lp = assemble(inst)
        m, n = inst.x_support.shape[0], inst.y_support.shape[0]
        n_marg = sum(mu.atoms.size for mu in inst.mus) + sum(nu.atoms.size for nu in inst.nus)
        assert lp.A_eq.shape == (n_marg + 2 * m, m * n)

    def test_bad_support(self):
        with pytest.raises(DomainError):
            DiscreteVmot([[0.0]], [[1.0]], [DELTA0], [DELTA0], [[0.0]])

    def test_counterexample_feasible(self):
        inst, plan, _ = counterexample_instance()
        assert solve(inst).optimal


class TestSolve:
    @pytest.fixture
    def pair(self):
        return DiscreteVmot.from_marginals([DELTA0, DELTA0], [SPLIT, SPLIT], Custom(y1y2, True))

    def test_max(self, pair):
        # the four y-pairs (+-1, +-1) each carry y1 y2 = +-1; comonotone kernel puts all mass on +1
        assert solve(pair, "max").value == pytest.approx(1.0, abs=1e-9)

    def test_min(self, pair):
        assert solve(pair, "min").value == pytest.approx(-1.0, abs=1e-9)

    def test_enumeration_oracle(self, pair):
        # plan on y-pairs (p_{--}, p_{-+}, p_{+-}, p_{++}); marginal constraints leave one free parameter t
        vals = []
        for t in np.linspace(0, 0.5, 51):
            p = np.array([t, 0.5 - t, 0.5 - t, t])
            vals.append(p @ np.array([1, -1, -1, 1]))
        assert solve(pair).value == pytest.approx(max(vals))

    def test_equal_marginals_stay_put(self, rng):
        mu = [Discrete.from_samples(rng.normal(size=3)) for _ in range(2)]
        c = Covariance(np.array([[0, 1.0], [0, 0]]), np.array([[0, 2.0], [0, 0]]))
        inst = DiscreteVmot.from_marginals(mu, mu, c)
        sol = solve(inst)
        for k, l in zip(*np.nonzero(sol.plan > 1e-9)):
            np.testing.assert_allclose(inst.x_support[k], inst.y_support[l])
        best = sum(w * 3 * p[0] * p[1] for p, w in zip(monotone_coupling(mu).points, monotone_coupling(mu).weights))
        assert sol.value == pytest.approx(best, abs=1e-9)

    def test_infeasible(self):
        inst = DiscreteVmot.from_marginals([SPLIT], [DELTA0], Custom(lambda x, y: y[..., 0] ** 2))
        assert solve(inst).status is Status.INFEASIBLE

    def test_feasibility_matches_convex_order(self, rng):
        for _ in range(50):
            a = rng.integers(-3, 4, size=3).astype(float)
            b = rng.integers(-4, 5, size=4).astype(float)
            mu = Discrete.from_samples(a)
            nu = Discrete.from_samples(b + (a.mean() - b.mean()) * rng.integers(0, 2))
            inst = DiscreteVmot.from_marginals([mu], [nu], Custom(lambda x, y: y[..., 0] ** 2))
            grid = np.linspace(-12, 12, 4801)
            assert solve(inst).optimal == convex_order(mu, nu, grid)

    def test_fixing_never_helps(self, rng):
        for _ in range(10):
            inst = random_monotone_instance(rng)
            free = solve(inst).value
            ind = solve(inst.with_fixed(independent_coupling(inst.mus)))
            if ind.optimal:
                assert ind.value <= free + 1e-9
            best = solve(inst.with_fixed(solve(inst).x_marginal()))
            assert best.value == pytest.approx(free, abs=1e-8)

    def test_scaling(self, rng):
        inst = random_monotone_instance(rng)
        assert solve(inst.scaled(3.5)).value == pytest.approx(3.5 * solve(inst).value, abs=1e-9)

    def test_residuals(self, rng):
        sol = solve(random_monotone_instance(rng))
        assert max(sol.residuals.values()) < 1e-8

    def test_direction_checked(self, pair):
        with pytest.raises(DomainError):
            solve(pair, "up")


class TestWeakDuality:
    def test_fenchel_young_hedge(self, rng):
        # x y <= b(x) + b*(y) with b = half-square, conjugate taken numerically
        for _ in range(5):
            inst = random_monotone_instance(rng, eps=0.1)
            grid = np.linspace(-40, 40, 16_001)
            half_sq = GridFn([grid], 0.5 * grid**2)

            def conj(v):
                return legendre_at(half_sq, np.asarray(v, float)[:, None])

            a = [np.sort(m.atoms) for m in inst.mus]
            b = [np.sort(m.atoms) for m in inst.nus]
            cert = DualCertificate(
                phi=[0.1 * 0.5 * a[0] ** 2, 0.1 * conj(a[1])],
                psi=[0.5 * b[0] ** 2, conj(b[1])],
                h=np.zeros((len(inst.x_support), 2)),
            )
            assert cert.slack(inst).min() >= -1e-9
            assert cert.value(inst) >= solve(inst).value - 1e-9


class TestMonotone:
    def test_coin_instance(self):
        mu = Discrete([0.0, 1.0], [0.5, 0.5])
        nu = Discrete([-1.0, 0.0, 1.0, 2.0], [0.25] * 4)
        c = Covariance(np.array([[0, 0.1], [0, 0]]), np.array([[0, 1.0], [0, 0]]))
        rep = verify_monotone_d2(DiscreteVmot.from_marginals([mu, mu], [nu, nu], c))
        assert rep.passed
        assert total_variation(rep.lp_marginal, DiscreteMeasure([[0, 0], [1, 1]], [0.5, 0.5])) <= 1e-7

    def test_submodular_mirror(self, rng):
        for _ in range(5):
            rep = verify_monotone_d2(random_monotone_instance(rng, anti=True), anti=True)
            assert rep.passed, rep.tv

    def test_zero_first_period_cost(self, rng):
        inst = random_monotone_instance(rng, eps=0.0)
        rep = verify_monotone_d2(inst)
        assert rep.value_fixed == pytest.approx(rep.value, abs=1e-8)

    def test_random_suite(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            rep = verify_monotone_d2(random_monotone_instance(rng))
            assert all(rep.irreducible)
            assert rep.tv <= 1e-7

    def test_rejects_three_assets(self):
        inst, _, _ = counterexample_instance()
        with pytest.raises(DomainError):
            verify_monotone_d2(inst)


class TestCounterexample:
    def test_kernel_weights(self):
        # barycentre system p3 = 1/2, p2 + p3 = 3/4, -p1 + p3 = 1/4 solved by hand
        np.testing.assert_allclose(CE_KERNELS[0], [0.25, 0.25, 0.5])
        np.testing.assert_allclose(CE_KERNELS[0] @ CE_Z, CE_U)
        np.testing.assert_allclose(CE_KERNELS[1] @ CE_Z, CE_U2)

    def test_constructed_value(self):
        c_on_z = CE_Z[:, 0] * CE_Z[:, 1] + CE_Z[:, 1] * CE_Z[:, 2] + CE_Z[:, 2] * CE_Z[:, 0]
        np.testing.assert_allclose(c_on_z, [0, 0, 3])
        _, plan, _ = counterexample_instance()
        y = plan.points[:, 3:]
        val = plan.weights @ (y[:, 0] * y[:, 1] + y[:, 1] * y[:, 2] + y[:, 2] * y[:, 0])
        assert val == pytest.approx(0.5 * 1.5 + 0.5 * 1.2)

    def test_report(self):
        rep = counterexample_d3()
        assert rep.free_value == pytest.approx(27 / 20, abs=1e-8)
        assert rep.free_value - rep.fixed_value > 1e-6
        assert rep.dual_value == pytest.approx(27 / 20, abs=1e-12)
        assert rep.min_slack >= -1e-12
        assert rep.max_support_slack <= 1e-12
        assert rep.passed

    def test_delta_on_second_piece(self):
        inst, _, _ = counterexample_instance()
        cert = counterexample_d3().certificate
        for x, h in zip(inst.x_support, cert.h):
            if x[0] + x[1] - x[2] - 1 > 1e-12:
                np.testing.assert_allclose(-h, [1, 1, -1])


class TestFiles:
    def test_round_trip(self, tmp_path, rng):
        inst = random_monotone_instance(rng)
        inst = inst.with_fixed(monotone_coupling(inst.mus))
        save_instance(inst, tmp_path / "inst")
        back = load_instance(tmp_path / "inst")
        np.testing.assert_array_equal(back.cost_matrix, inst.cost_matrix)
        assert solve(back).value == pytest.approx(solve(inst).value, abs=1e-12)
        sol = solve(back)
        save_solution(sol, tmp_path / "inst")
        text = (tmp_path / "inst" / "solution.csv").read_text().splitlines()
        assert text[1].startswith("optimal,")
        plan = np.loadtxt(tmp_path / "inst" / "plan.csv", delimiter=",", skiprows=1, ndmin=2)
        assert plan[:, -1].sum() == pytest.approx(1.0)
