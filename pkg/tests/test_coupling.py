import itertools

import numpy as np
import pytest

from vmot.coupling import (
    BasketCall,
    BasketPut,
    CallOnMin,
    Covariance,
    Custom,
    DiscreteMeasure,
    PortfolioVariance,
    PutOnMax,
    anti_monotone_coupling,
    eval_cost,
    expectation,
    independent_coupling,
    monotone_coupling,
    ot_bounds,
)
from vmot.distributions import Discrete, DomainError, Normal, Tabulated

COIN = Discrete([0.0, 1.0], [0.5, 0.5])


def x1x2(x, y):
    return x[..., 0] * x[..., 1]


def _as_set(m: DiscreteMeasure):
    return {tuple(np.round(p, 12)): round(float(w), 12) for p, w in zip(m.points, m.weights)}


class TestMonotone:
    def test_uniform_pair_on_diagonal(self):
        m = monotone_coupling([Tabulated.uniform(-1, 1)] * 2, 500)
        np.testing.assert_allclose(m.points[:, 0], m.points[:, 1], atol=1e-12)

    def test_scaled_uniforms_on_line(self):
        m = monotone_coupling([Tabulated.uniform(-3, 3), Tabulated.uniform(-2, 2)], 500)
        np.testing.assert_allclose(m.points[:, 1], 2 / 3 * m.points[:, 0], atol=1e-12)

    def test_two_point_chain(self):
        assert _as_set(monotone_coupling([COIN, COIN], 2)) == {(0.0, 0.0): 0.5, (1.0, 1.0): 0.5}
        assert _as_set(monotone_coupling([COIN, COIN])) == {(0.0, 0.0): 0.5, (1.0, 1.0): 0.5}

    def test_continuous_needs_atoms(self):
        with pytest.raises(DomainError):
            monotone_coupling([Normal(0, 1)] * 2)

    def test_support_is_chain(self, rng):
        laws = [Discrete.from_samples(rng.normal(size=k)) for k in (3, 5, 4)]
        m = monotone_coupling(laws)
        assert m.is_monotone()
        pts = m.points
        for a, b in itertools.combinations(pts, 2):
            assert {tuple(np.maximum(a, b)), tuple(np.minimum(a, b))} == {tuple(a), tuple(b)}

    def test_exact_marginals(self, rng):
        laws = [Discrete.from_samples(rng.normal(size=k), rng.uniform(0.1, 1, size=k)) for k in (3, 6)]
        m = monotone_coupling(laws)
        for i, law in enumerate(laws):
            got = m.marginal(i)
            np.testing.assert_allclose(got.atoms, law.atoms)
            np.testing.assert_allclose(got.weights, law.weights, atol=1e-12)

    def test_wasserstein_consistency(self):
        law = Tabulated.uniform(0, 2)
        for n in (10, 100, 1000):
            m = monotone_coupling([law, Tabulated.uniform(-1, 1)], n)
            xs = np.sort(m.points[:, 0])
            # W1 to the uniform law on [0,2] via the quantile representation
            u = np.linspace(0, 1, 100_001)
            w1 = np.trapezoid(np.abs(xs[np.minimum((u * n).astype(int), n - 1)] - 2 * u), u)
            assert w1 <= 2 * 2.0 / n

    def test_rearrangement_inequality(self, rng):
        a = Discrete.from_samples(rng.normal(size=6))
        b = Discrete.from_samples(rng.normal(size=6))
        best, _ = expectation(monotone_coupling([a, b]), Custom(x1x2, True))
        for _ in range(100):
            perm = rng.permutation(6)
            other = DiscreteMeasure(np.column_stack([a.atoms, b.atoms[perm]]), np.full(6, 1 / 6))
            val, _ = expectation(other, Custom(x1x2, True))
            assert best >= val - 1e-12


class TestAntiMonotone:
    def test_two_point(self):
        m = anti_monotone_coupling(COIN, COIN)
        assert _as_set(m) == {(0.0, 1.0): 0.5, (1.0, 0.0): 0.5}
        assert expectation(m, Custom(x1x2))[0] == 0.0

    def test_unequal_weights(self):
        a = Discrete([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
        b = Discrete([-1.0, 4.0], [0.6, 0.4])
        m = anti_monotone_coupling(a, b)
        # pair the lowest of a with the highest of b, filling mass greedily
        assert _as_set(m) == {(0.0, 4.0): 0.2, (1.0, 4.0): 0.2, (1.0, -1.0): 0.1, (2.0, -1.0): 0.5}

    def test_uniform_reflection(self):
        m = anti_monotone_coupling(Tabulated.uniform(0, 1), Tabulated.uniform(0, 1), 400)
        np.testing.assert_allclose(m.points[:, 1], 1 - m.points[:, 0], atol=1e-12)


class TestCosts:
    def test_covariance(self):
        c = Covariance([[0, 1], [0, 0]], [[0, 1], [0, 0]])
        assert eval_cost(c, [1, 2], [3, 4]) == 14.0

    def test_covariance_symmetric_input_uses_upper_triangle(self):
        c = Covariance([[0, 1], [1, 0]], [[0, 1], [1, 0]])
        assert eval_cost(c, [1, 2], [3, 4]) == 14.0

    def test_portfolio_variance(self):
        assert eval_cost(PortfolioVariance([0.5, 0.5]), [0, 0], [2, 2]) == 4.0

    def test_call_on_min(self):
        assert eval_cost(CallOnMin(1.0), [0, 0, 0], [3, 2, 5]) == 1.0

    def test_put_on_max(self):
        assert eval_cost(PutOnMax(5.0), [0, 0], [1, 3]) == 2.0

    def test_period_selector(self):
        c = BasketCall(np.array([1.0, 1.0]), 1.0, period="both")
        assert eval_cost(c, [1, 1], [2, 2]) == 1.0 + 3.0
        assert eval_cost(BasketPut(np.array([1.0, 1.0]), 3.0, period="x"), [1, 1], [5, 5]) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            eval_cost(PortfolioVariance([1, 1]), [1, 2], [1, 2, 3])

    def test_negative_coefficients_rejected(self):
        with pytest.raises(DomainError):
            Covariance([[0, -1], [0, 0]], np.zeros((2, 2)))

    def test_portfolio_variance_cross_terms(self, rng):
        w = rng.uniform(0.1, 1, 3)
        y = rng.normal(size=(20, 3))
        cross = Covariance.from_weights(w)(np.zeros_like(y), y)
        full = PortfolioVariance(w)(None, y)
        np.testing.assert_allclose(full - (y**2) @ (w**2), 2 * cross)


class TestExpectation:
    def test_exact_sum(self):
        m = DiscreteMeasure([[0, 0], [1, 1]], [0.5, 0.5])
        assert expectation(m, Custom(x1x2)) == (0.5, 0.0)

    def test_independent(self):
        assert expectation(independent_coupling([COIN, COIN]), Custom(x1x2))[0] == 0.25

    def test_ordering(self):
        c = Custom(x1x2)
        mono = expectation(monotone_coupling([COIN, COIN]), c)[0]
        ind = expectation(independent_coupling([COIN, COIN]), c)[0]
        anti = expectation(anti_monotone_coupling(COIN, COIN), c)[0]
        assert mono >= ind >= anti
        assert (mono, ind, anti) == (0.5, 0.25, 0.0)

    def test_sampler(self, rng):
        mean, se = expectation([Normal(1, 1), Normal(2, 1)], Custom(x1x2), n_samples=40_000, rng=rng)
        assert abs(mean - 2.0) < 4 * se

    def test_two_period_split(self):
        m = DiscreteMeasure([[1, 2, 3, 4]], [1.0])
        c = Covariance([[0, 1], [0, 0]], [[0, 1], [0, 0]])
        assert expectation(m, c, d=2)[0] == 14.0

    def test_csv_round_trip(self, tmp_path, rng):
        m = DiscreteMeasure(rng.normal(size=(5, 3)), np.full(5, 0.2))
        m.to_csv(tmp_path / "m.csv")
        back = DiscreteMeasure.from_csv(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.points, m.points)
        np.testing.assert_allclose(back.weights, m.weights)


def y1y2(x, y):
    return y[..., 0] * y[..., 1]


class TestOtBounds:
    def test_coins(self):
        assert ot_bounds([COIN, COIN], Custom(y1y2, True)) == (0.5, 0.0)

    def test_standard_normals(self):
        # Riemann sum of Phi^{-1}(u)^2 on a fine midpoint grid is the oracle
        upper, lower = ot_bounds([Normal(0, 1)] * 2, Custom(y1y2, True), n_atoms=100_000)
        assert upper == pytest.approx(1.0, abs=2e-2)
        assert lower == pytest.approx(-1.0, abs=2e-2)
        assert upper >= lower

    def test_degenerate(self):
        u, l = ot_bounds([Normal(0, 1), Discrete([2.0], [1.0])], Custom(y1y2, True), n_atoms=1000)
        assert u == pytest.approx(l, abs=1e-12)

    def test_three_assets_unsupported(self):
        with pytest.raises(DomainError):
            ot_bounds([COIN] * 3, Custom(y1y2))
