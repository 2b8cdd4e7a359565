"""One-dimensional marginal laws.

Three concrete laws are supported: :class:`Normal`, :class:`Discrete` and
:class:`Tabulated` (a piecewise-linear CDF on a grid, i.e. a mixture of
uniforms).  Every law exposes ``cdf``, ``quantile``, ``sample``, moments and
an exact potential function ``u(x) = E|x - X|``, which is what the convex
order and irreducibility tests are built on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

__all__ = [
    "DomainError",
    "Marginal1D",
    "Normal",
    "Discrete",
    "Tabulated",
    "PotentialFn",
    "quantile",
    "potential",
    "default_grid",
    "convex_order",
    "irreducible",
    "call_prices",
    "open_uniforms",
    "load_tabulated_csv",
    "save_tabulated_csv",
]

MEAN_TOL = 1e-9
POTENTIAL_TOL = 1e-9


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def open_uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1), never hitting either end."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / 2.0**53


def _check_u(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise DomainError("quantile level must lie in the open interval (0, 1)")
    return u


class Marginal1D:
    """Base class for one-dimensional laws with a finite first moment."""

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        """Left limit ``P(X < x)``; equals :meth:`cdf` for continuous laws."""
        return self.cdf(x)

    def quantile(self, u):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def second_moment(self) -> float:
        raise NotImplementedError

    def std(self) -> float:
        return float(np.sqrt(max(self.second_moment() - self.mean() ** 2, 0.0)))

    def potential_values(self, x) -> np.ndarray:
        raise NotImplementedError

    def support_bounds(self) -> tuple[float, float]:
        """Interval carrying (numerically) all of the mass."""
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.quantile(open_uniforms(rng, n))

    def mass_between(self, a: float, b: float) -> float:
        """Mass of the closed interval ``[a, b]``."""
        return float(self.cdf(b) - self.cdf_left(a))


@dataclass(frozen=True)
class Normal(Marginal1D):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("Normal scale must be positive")

    def cdf(self, x):
        return stats.norm.cdf(x, self.loc, self.scale)

    def quantile(self, u):
        return self.loc + self.scale * special.ndtri(_check_u(u))

    def mean(self) -> float:
        return float(self.loc)

    def second_moment(self) -> float:
        return float(self.loc**2 + self.scale**2)

    def std(self) -> float:
        return float(self.scale)

    def potential_values(self, x) -> np.ndarray:
        # E|x - X| = s * (2 pdf(z) + z (2 cdf(z) - 1))
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return self.scale * (2.0 * stats.norm.pdf(z) + z * (2.0 * stats.norm.cdf(z) - 1.0))

    def support_bounds(self) -> tuple[float, float]:
        return self.loc - 9.0 * self.scale, self.loc + 9.0 * self.scale

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.loc + self.scale * rng.standard_normal(n)


@dataclass(frozen=True, eq=False)
class Discrete(Marginal1D):
    atoms: np.ndarray
    weights: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.size == 0 or atoms.shape != weights.shape:
            raise DomainError("atoms and weights must be non-empty and of equal length")
        if np.any(np.diff(atoms) <= 0):
            raise DomainError("atoms must be strictly increasing")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_cum", np.cumsum(weights))

    @classmethod
    def from_samples(cls, values, weights=None) -> "Discrete":
        """Aggregate (possibly repeated) values into a law; zero weights dropped."""
        values = np.asarray(values, dtype=float).ravel()
        w = np.full(values.size, 1.0 / values.size) if weights is None else np.asarray(weights, float).ravel()
        atoms, inv = np.unique(values, return_inverse=True)
        agg = np.bincount(inv.ravel(), weights=w, minlength=atoms.size)
        keep = agg > 0
        agg = agg[keep] / agg[keep].sum()
        return cls(atoms[keep], agg)

    def cdf(self, x):
        idx = np.searchsorted(self.atoms, x, side="right")
        cum = np.concatenate([[0.0], self._cum])
        return np.minimum(cum[idx], 1.0)

    def cdf_left(self, x):
        idx = np.searchsorted(self.atoms, x, side="left")
        cum = np.concatenate([[0.0], self._cum])
        return np.minimum(cum[idx], 1.0)

    def quantile(self, u):
        u = _check_u(u)
        # Slack guards against cumsum rounding placing u just above a step.
        idx = np.searchsorted(self._cum, u - 1e-15, side="left")
        return self.atoms[np.minimum(idx, self.atoms.size - 1)]

    def mean(self) -> float:
        return float(self.weights @ self.atoms)

    def second_moment(self) -> float:
        return float(self.weights @ self.atoms**2)

    def potential_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.abs(x[..., None] - self.atoms) @ self.weights

    def support_bounds(self) -> tuple[float, float]:
        return float(self.atoms[0]), float(self.atoms[-1])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.atoms, size=n, p=self.weights)


@dataclass(frozen=True, eq=False)
class Tabulated(Marginal1D):
    """Law with a piecewise-linear CDF through ``(grid[k], cdf_values[k])``.

    Between consecutive grid points the mass is spread uniformly, so the
    law is a finite mixture of uniforms and all moments and potentials are
    available in closed form.
    """

    grid: np.ndarray
    cdf_values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        cdf = np.asarray(self.cdf_values, dtype=float).ravel()
        if grid.size < 2 or grid.shape != cdf.shape:
            raise DomainError("need at least two grid points with matching CDF values")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("grid must be strictly increasing")
        if np.any(np.diff(cdf) < 0):
            raise DomainError("CDF values must be nondecreasing")
        if cdf[0] > 1e-12 or cdf[-1] < 1 - 1e-12:
            raise DomainError("CDF must start at 0 and end at 1")
        cdf = np.clip(cdf, 0.0, 1.0)
        cdf[0], cdf[-1] = 0.0, 1.0
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "cdf_values", cdf)

    @classmethod
    def uniform(cls, a: float, b: float) -> "Tabulated":
        return cls([a, b], [0.0, 1.0])

    @classmethod
    def from_density(cls, grid, density) -> "Tabulated":
        """Tabulate a density known on a grid (cumulative trapezoid, renormalized)."""
        grid = np.asarray(grid, dtype=float)
        density = np.clip(np.asarray(density, dtype=float), 0.0, None)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
        if cum[-1] <= 0:
            raise DomainError("density has no mass")
        return cls(grid, cum / cum[-1])

    @property
    def _pieces(self):
        a, b = self.grid[:-1], self.grid[1:]
        p = np.diff(self.cdf_values)
        return a, b, p

    def cdf(self, x):
        return np.interp(x, self.grid, self.cdf_values, left=0.0, right=1.0)

    def quantile(self, u):
        u = _check_u(u)
        k = np.searchsorted(self.cdf_values, u, side="left")
        k = np.clip(k, 1, self.grid.size - 1)
        c0, c1 = self.cdf_values[k - 1], self.cdf_values[k]
        x0, x1 = self.grid[k - 1], self.grid[k]
        return x0 + (u - c0) / (c1 - c0) * (x1 - x0)

    def density(self, x):
        """Piecewise-constant density of the law."""
        a, b, p = self._pieces
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.grid, x, side="right") - 1
        inside = (k >= 0) & (k < a.size)
        out = np.zeros_like(x)
        kk = np.clip(k, 0, a.size - 1)
        out[inside] = (p / (b - a))[kk[inside]]
        return out

    def mean(self) -> float:
        a, b, p = self._pieces
        return float(p @ (0.5 * (a + b)))

    def second_moment(self) -> float:
        a, b, p = self._pieces
        return float(p @ ((a * a + a * b + b * b) / 3.0))

    def potential_values(self, x) -> np.ndarray:
        a, b, p = self._pieces
        x = np.asarray(x, dtype=float)[..., None]
        mid = 0.5 * (a + b)
        inside = ((x - a) ** 2 + (b - x) ** 2) / (2.0 * (b - a))
        val = np.where(x <= a, mid - x, np.where(x >= b, x - mid, inside))
        return val @ p

    def support_bounds(self) -> tuple[float, float]:
        nz = np.nonzero(np.diff(self.cdf_values) > 0)[0]
        return float(self.grid[nz[0]]), float(self.grid[nz[-1] + 1])


def quantile(m: Marginal1D, u):
    """Generalized inverse ``inf{x : F(x) >= u}`` for ``u`` in (0, 1)."""
    return m.quantile(u)


@dataclass(frozen=True, eq=False)
class PotentialFn:
    source: Marginal1D
    grid: np.ndarray
    values: np.ndarray


def potential(m: Marginal1D, grid) -> PotentialFn:
    """Potential ``u(x) = E|x - X|`` evaluated on ``grid`` (exact for all laws)."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise DomainError("empty grid")
    if np.any(np.diff(grid) < 0):
        raise DomainError("grid must be sorted")
    return PotentialFn(m, grid, np.asarray(m.potential_values(grid), dtype=float))


def default_grid(*laws: Marginal1D, n: int = 2001, pad: float = 0.1) -> np.ndarray:
    """Grid spanning the union of the supports, widened by ``pad`` of its length."""
    lo = min(m.support_bounds()[0] for m in laws)
    hi = max(m.support_bounds()[1] for m in laws)
    width = max(hi - lo, 1e-12)
    return np.linspace(lo - pad * width, hi + pad * width, n)


def convex_order(mu: Marginal1D, nu: Marginal1D, grid=None) -> bool:
    """Numerical test of ``mu <=_c nu`` via equal means and ordered potentials."""
    if grid is None:
        grid = default_grid(mu, nu)
    if abs(mu.mean() - nu.mean()) > MEAN_TOL:
        return False
    um = potential(mu, grid).values
    un = potential(nu, grid).values
    return bool(np.all(um <= un + POTENTIAL_TOL))


def irreducible(mu: Marginal1D, nu: Marginal1D, grid=None) -> bool:
    """Whether ``{u_mu < u_nu}`` is one interval holding all of ``mu``'s mass.

    The equal-marginals case (empty set) reports ``False``.
    """
    if grid is None:
        grid = default_grid(mu, nu)
    grid = np.asarray(grid, dtype=float)
    if not convex_order(mu, nu, grid):
        raise DomainError("irreducibility requires the pair to be in convex order")
    gap = potential(nu, grid).values - potential(mu, grid).values
    inside = gap > POTENTIAL_TOL
    if not inside.any():
        return False
    idx = np.nonzero(inside)[0]
    if np.any(np.diff(idx) > 1):
        return False
    return mu.mass_between(grid[idx[0]], grid[idx[-1]]) >= 1.0 - 1e-9


def call_prices(m: Marginal1D, strikes) -> np.ndarray:
    """``E[(X - k)^+]`` from the potential: ``(u(k) + mean - k) / 2``."""
    k = np.asarray(strikes, dtype=float)
    return 0.5 * (m.potential_values(k) + m.mean() - k)


def load_tabulated_csv(path) -> Tabulated:
    """Read a two-column ``x,cdf`` CSV with a one-line header."""
    rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return Tabulated(rows[:, 0], rows[:, 1])


def save_tabulated_csv(m: Tabulated, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "cdf"])
        for x, c in zip(m.grid, m.cdf_values):
            w.writerow([repr(float(x)), repr(float(c))])
