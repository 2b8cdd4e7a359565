import itertools

import numpy as np
import pytest

from vmot.distributions import DomainError
from vmot.modularity import (
    CUBE_PIECES,
    CUBE_U,
    CUBE_U2,
    GridFn,
    Modularity,
    check_modularity,
    conjugate_modularity_suite,
    convex_envelope,
    cube_fixture,
    legendre,
    legendre_at,
    mixed_differences,
    random_submodular,
    random_supermodular,
    slope_axes,
    verify_cube_counterexample,
)


def tabulate(fn, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return GridFn(axes, fn(*mesh))


def quadratic(A, axes):
    A = np.asarray(A, float)

    def fn(*xs):
        X = np.stack(xs, axis=-1)
        return 0.5 * np.einsum("...i,ij,...j->...", X, A, X)

    return tabulate(fn, axes)


AX5 = [np.linspace(-1, 1, 5)] * 3


class TestCheckModularity:
    def test_pairwise_products_strictly_super(self):
        f = tabulate(lambda a, b, c: a * b + b * c + a * c, AX5)
        m = check_modularity(f)
        assert Modularity.STRICT_SUPER in m and m.supermodular and not m.submodular

    def test_negative_product_strictly_sub(self):
        m = check_modularity(tabulate(lambda a, b: -a * b, AX5[:2]))
        assert Modularity.STRICT_SUB in m and not m.supermodular

    def test_separable_is_both(self):
        m = check_modularity(tabulate(lambda a, b: a + b, AX5[:2]))
        assert m.submodular and m.supermodular
        assert Modularity.STRICT_SUB not in m and Modularity.STRICT_SUPER not in m

    def test_neither(self):
        m = check_modularity(tabulate(lambda a, b: np.sin(3 * a * b), [np.linspace(-2, 2, 9)] * 2))
        assert m == Modularity.NEITHER

    def test_one_dimension_rejected(self):
        with pytest.raises(DomainError):
            check_modularity(GridFn([np.arange(3.0)], np.zeros(3)))

    def test_infinite_corner(self):
        # +inf at the top corner only: f(a v b) = inf beats any finite f(a) + f(b)
        vals = np.zeros((2, 2))
        vals[1, 1] = np.inf
        m = check_modularity(GridFn([[0, 1], [0, 1]], vals))
        assert m.supermodular and not m.submodular
        vals = np.zeros((2, 2))
        vals[1, 0] = np.inf
        m = check_modularity(GridFn([[0, 1], [0, 1]], vals))
        assert m.submodular and not m.supermodular

    def test_negation_swaps_classes(self, rng):
        for _ in range(20):
            f = random_submodular(int(rng.integers(2, 4)), rng, strict=bool(rng.integers(2)))
            a, b = check_modularity(f), check_modularity(-f)
            assert a.submodular == b.supermodular and a.supermodular == b.submodular

    def test_agrees_with_mixed_partials(self, rng):
        # c * x * y + smooth separable part: mixed partial has the sign of c
        for _ in range(20):
            c = rng.choice([-1, 1]) * rng.uniform(0.1, 2)
            p, q = rng.normal(size=2)
            axes = [np.sort(rng.uniform(-2, 2, 6)), np.sort(rng.uniform(-2, 2, 7))]
            f = tabulate(lambda a, b: c * a * b + np.cos(p * a) + np.sin(q * b), axes)
            off, diag = mixed_differences(f, 0, 1)
            m = check_modularity(f)
            assert m.supermodular == bool(np.all(diag >= off)) == (c > 0)

    def test_csv_round_trip(self, tmp_path):
        f = cube_fixture()
        vals = f.values.copy()
        vals[0, 0, 0] = np.inf
        g = GridFn(f.axes, vals)
        g.to_csv(tmp_path / "g.csv")
        assert "+inf" in (tmp_path / "g.csv").read_text()
        back = GridFn.from_csv(tmp_path / "g.csv")
        np.testing.assert_array_equal(back.values, g.values)

    def test_invalid_values(self):
        with pytest.raises(DomainError):
            GridFn([[0, 1]], [np.inf, np.inf])
        with pytest.raises(DomainError):
            GridFn([[0, 1]], [0.0, -np.inf])
        with pytest.raises(DomainError):
            GridFn([[1, 0]], [0.0, 0.0])


class TestLegendre:
    def test_half_square(self):
        f = tabulate(lambda x: 0.5 * x**2, [np.linspace(-5, 5, 10_001)])
        assert legendre_at(f, [[1.0]])[0] == pytest.approx(0.5, abs=1e-6)

    def test_cubic_power(self):
        # conjugate of |x|^3 / 3 is 2/3 |y|^{3/2}
        f = tabulate(lambda x: np.abs(x) ** 3 / 3, [np.arange(-3, 3 + 1e-9, 1e-3)])
        y = np.linspace(-2, 2, 81)
        g = legendre(f, [y])
        np.testing.assert_allclose(g.values, 2 / 3 * np.abs(y) ** 1.5, atol=1e-3)

    def test_spd_quadratic(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        f = quadratic(A, [np.linspace(-4, 4, 161)] * 2)
        z = np.array([[0.3, -0.4], [1.0, 0.5], [-0.7, 0.2]])
        want = 0.5 * np.einsum("ni,ij,nj->n", z, np.linalg.inv(A), z)
        np.testing.assert_allclose(legendre_at(f, z), want, atol=5e-3)

    def test_order_reversing(self, rng):
        for _ in range(10):
            f = random_submodular(2, rng)
            g = GridFn(f.axes, f.values + rng.uniform(0, 1, f.values.shape))
            axes = [np.linspace(-3, 3, 7)] * 2
            assert np.all(legendre(f, axes).values >= legendre(g, axes).values)

    def test_conjugate_convex_along_axes(self, rng):
        f = random_submodular(2, rng)
        g = legendre(f, [np.linspace(-3, 3, 13)] * 2)
        assert np.all(np.diff(g.values, 2, axis=0) >= -1e-12)
        assert np.all(np.diff(g.values, 2, axis=1) >= -1e-12)

    def test_all_infinite_rejected(self):
        # the constructor already refuses; the conjugate guards its own input too
        f = GridFn([[0.0, 1.0]], [0.0, 1.0])
        f.values[:] = np.inf
        with pytest.raises(DomainError):
            legendre(f)


class TestEnvelope:
    def test_convex_is_fixed(self):
        f = tabulate(lambda a, b: a**2 + a * b + b**2, [np.linspace(-2, 2, 9)] * 2)
        np.testing.assert_allclose(convex_envelope(f).values, f.values, atol=1e-9)

    def test_chord(self):
        f = GridFn([[0.0, 0.5, 1.0]], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(convex_envelope(f).values, [0.0, 0.0, 0.0], atol=1e-12)

    def test_minorant_and_idempotent(self, rng):
        for _ in range(10):
            f = random_supermodular(2, rng)
            g = convex_envelope(f)
            assert np.all(g.values <= f.values + 1e-9)
            np.testing.assert_allclose(convex_envelope(g).values, g.values, atol=1e-9)

    def test_cube_vertices(self):
        beta0 = cube_fixture()
        env = convex_envelope(beta0, [np.arange(-3.0, 4.0)] * 3)
        assert beta0.at((1, 0, -1)) == 2 and beta0.at((0, 1, -1)) == 1
        assert env.at((1, 0, -1)) == pytest.approx(2.0)
        assert env.at((0, 0, 0)) == pytest.approx(0.0)
        pieces = [max(float(L(p)) for L in CUBE_PIECES) for p in beta0.points()]
        np.testing.assert_allclose(env.values.ravel(), pieces, atol=1e-12)


class TestConjugacy:
    def test_supermodular_quadratic_gives_submodular(self):
        A = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert np.linalg.inv(A)[0, 1] == pytest.approx(-1 / 3)
        f = quadratic(A, [np.linspace(-3, 3, 31)] * 2)
        assert check_modularity(f).supermodular
        assert check_modularity(legendre(f, [np.linspace(-2, 2, 9)] * 2)).submodular

    def test_separable(self):
        f = tabulate(lambda a, b: a**2 + np.abs(b), [np.linspace(-2, 2, 9)] * 2)
        g = legendre(f, [np.linspace(-1, 1, 5)] * 2)
        m = check_modularity(g)
        assert m.submodular and m.supermodular

    def test_three_dimensional_failure(self):
        A = np.array([[4.0, 3.0, 1.0], [3.0, 4.0, 3.0], [1.0, 3.0, 4.0]])
        inv = np.linalg.inv(A)
        assert inv[0, 1] > 0 or inv[0, 2] > 0 or inv[1, 2] > 0
        f = quadratic(A, [np.linspace(-3, 3, 25)] * 3)
        assert check_modularity(f).supermodular
        g = legendre(f, [np.linspace(-1.5, 1.5, 7)] * 3)
        assert not check_modularity(g).submodular

    def test_suite_small(self):
        rep = conjugate_modularity_suite(seed=4, trials=20)
        assert rep.passed, rep.counterexamples[:1]

    def test_suite_rejects_zero_trials(self):
        with pytest.raises(DomainError):
            conjugate_modularity_suite(trials=0)


class TestCube:
    def test_report(self):
        rep = verify_cube_counterexample()
        assert rep.submodular and rep.envelope_matches_pieces and rep.envelope_matches_values
        assert rep.lhs == pytest.approx(0.0, abs=1e-12)
        assert rep.lhs < rep.rhs
        assert rep.passed

    def test_u_on_first_ridge(self):
        L1, L2, _ = CUBE_PIECES
        assert L1(CUBE_U) == 0.0 and L2(CUBE_U) == pytest.approx(0.0, abs=1e-15)

    def test_gap_by_hand(self):
        # evaluate max(L1, L2, L3) at the four points directly
        def env(p):
            x1, x2, x3 = p
            return max(0.0, x1 + x2 - x3 - 1, 2 * x1 - x3 - 1)

        lo, hi = np.minimum(CUBE_U, CUBE_U2), np.maximum(CUBE_U, CUBE_U2)
        assert env(CUBE_U) + env(CUBE_U2) == pytest.approx(0.0)
        assert env(lo) + env(hi) == pytest.approx(verify_cube_counterexample().rhs)
        assert env(lo) + env(hi) > 0


class TestEnvelopeMethods:
    def test_hull_matches_double_conjugate(self, rng):
        for _ in range(10):
            f = random_submodular(2, rng)
            hull = convex_envelope(f)
            fine = convex_envelope(f, [np.linspace(-40, 40, 801)] * 2)
            assert np.all(fine.values <= hull.values + 1e-9)
            np.testing.assert_allclose(fine.values, hull.values, atol=0.2)

    def test_slope_grid_exact_for_separable_convex(self):
        f = tabulate(lambda a, b: a**2 + np.abs(b - 0.3), [np.linspace(-1, 1, 7), np.linspace(-1, 1, 6)])
        np.testing.assert_allclose(convex_envelope(f, slope_axes(f)).values, f.values, atol=1e-12)

    def test_affine(self):
        f = tabulate(lambda a, b: 2 * a - b + 1, [np.linspace(0, 1, 3)] * 2)
        np.testing.assert_allclose(convex_envelope(f).values, f.values, atol=1e-12)

    def test_infinite_outside_hull(self):
        vals = np.array([0.0, 1.0, np.inf])
        env = convex_envelope(GridFn([[0.0, 1.0, 2.0]], vals))
        assert env.values[2] == np.inf
        vals = np.array([0.0, np.inf, 0.0])
        env = convex_envelope(GridFn([[0.0, 1.0, 2.0]], vals))
        np.testing.assert_allclose(env.values, 0.0)
