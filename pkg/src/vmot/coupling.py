"""Couplings of one-dimensional laws and the payoff catalogue.

Costs are vectorized callables ``c(x, y)`` taking arrays of shape ``(..., d)``
for the first- and second-period prices and returning shape ``(...)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import Discrete, DomainError, Marginal1D

__all__ = [
    "DiscreteMeasure",
    "CostSpec",
    "Covariance",
    "PortfolioVariance",
    "BasketCall",
    "BasketPut",
    "PutOnMax",
    "CallOnMin",
    "Custom",
    "monotone_coupling",
    "anti_monotone_coupling",
    "independent_coupling",
    "eval_cost",
    "expectation",
    "ot_bounds",
]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure on ``R^dim``."""

    points: np.ndarray
    weights: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size:
            raise DomainError("one weight per point required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1])

    def __len__(self) -> int:
        return self.weights.size

    def compress(self, decimals: int = 12) -> "DiscreteMeasure":
        """Merge duplicate atoms and drop zero weights."""
        key = np.round(self.points, decimals)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.weights, minlength=len(uniq))
        keep = w > 0
        return DiscreteMeasure(uniq[keep], w[keep] / w[keep].sum())

    def marginal(self, i: int) -> Discrete:
        return Discrete.from_samples(self.points[:, i], self.weights)

    def is_monotone(self, tol: float = 0.0) -> bool:
        """Whether the support is a chain for the componentwise order."""
        p = self.points[self.weights > 0]
        diff = p[:, None, :] - p[None, :, :]
        le = np.all(diff <= tol, axis=2)
        ge = np.all(diff >= -tol, axis=2)
        return bool(np.all(le | ge))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["weight"])
            for p, q in zip(self.points, self.weights):
                w.writerow([repr(float(v)) for v in p] + [repr(float(q))])

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, :-1], rows[:, -1] / rows[:, -1].sum())


# --------------------------------------------------------------------------
# payoff catalogue


def _select(x, y, period: str):
    if period == "x":
        return x
    if period == "y":
        return y
    if period == "both":
        return None
    raise DomainError(f"unknown period selector {period!r}")


class CostSpec:
    """A payoff ``c(x, y)`` on ``R^{2d}``."""

    def __call__(self, x, y) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Covariance(CostSpec):
    """``sum_{i<j} a_ij x_i x_j + b_ij y_i y_j`` with nonnegative coefficients."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.triu(np.asarray(self.a, dtype=float), 1)
        b = np.triu(np.asarray(self.b, dtype=float), 1)
        if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError("a and b must be square matrices of equal size")
        if np.any(a < 0) or np.any(b < 0):
            raise DomainError("covariance coefficients must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_weights(cls, w) -> "Covariance":
        """Cross terms of the portfolio variance: ``a = 0``, ``b_ij = w_i w_j``."""
        w = np.asarray(w, dtype=float)
        return cls(np.zeros((w.size, w.size)), np.outer(w, w))

    @property
    def d(self) -> int:
        return self.a.shape[0]

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.a, x) + np.einsum("...i,ij,...j->...", y, self.b, y)


@dataclass(frozen=True, eq=False)
class PortfolioVariance(CostSpec):
    """``(sum_i w_i y_i)^2``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w <= 0):
            raise DomainError("portfolio weights must be positive")
        object.__setattr__(self, "w", w)

    def __call__(self, x, y):
        return (np.asarray(y, dtype=float) @ self.w) ** 2


def _basket(x, y, weights, period):
    sel = _select(x, y, period)
    if sel is None:
        return np.asarray(x, float) @ weights, np.asarray(y, float) @ weights
    return (np.asarray(sel, float) @ weights,)


@dataclass(frozen=True, eq=False)
class BasketCall(CostSpec):
    """``(sum_i a_i S_i - K)^+`` on the chosen period; ``'both'`` sums the two legs."""

    a: np.ndarray
    K: float
    period: str = "y"

    def __call__(self, x, y):
        return sum(np.maximum(s - self.K, 0.0) for s in _basket(x, y, np.asarray(self.a, float), self.period))


@dataclass(frozen=True, eq=False)
class BasketPut(CostSpec):
    a: np.ndarray
    K: float
    period: str = "y"

    def __call__(self, x, y):
        return sum(np.maximum(self.K - s, 0.0) for s in _basket(x, y, np.asarray(self.a, float), self.period))


def _legs(x, y, period):
    sel = _select(x, y, period)
    return (np.asarray(x, float), np.asarray(y, float)) if sel is None else (np.asarray(sel, float),)


@dataclass(frozen=True, eq=False)
class PutOnMax(CostSpec):
    K: float
    period: str = "y"

    def __call__(self, x, y):
        return sum(np.maximum(self.K - s.max(axis=-1), 0.0) for s in _legs(x, y, self.period))


@dataclass(frozen=True, eq=False)
class CallOnMin(CostSpec):
    K: float
    period: str = "y"

    def __call__(self, x, y):
        return sum(np.maximum(s.min(axis=-1) - self.K, 0.0) for s in _legs(x, y, self.period))


@dataclass(frozen=True, eq=False)
class Custom(CostSpec):
    """User payoff.  ``supermodular`` is a claim, verified by :mod:`vmot.modularity`."""

    evaluator: Callable
    supermodular: bool | None = None

    def __call__(self, x, y):
        return np.asarray(self.evaluator(np.asarray(x, float), np.asarray(y, float)), dtype=float)


def eval_cost(c: CostSpec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise DomainError("x and y must have the same dimension")
    out = c(x, y)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# couplings


def _all_discrete(marginals) -> bool:
    return all(isinstance(m, Discrete) for m in marginals)


def _exact_comonotone(marginals: Sequence[Discrete], flips: Sequence[bool]) -> DiscreteMeasure:
    # Exact quantile coupling: merge the CDF breakpoints of every marginal.
    cuts = [np.cumsum(m.weights)[:-1] for m in marginals]
    levels = np.unique(np.concatenate([[0.0, 1.0]] + [1.0 - c if f else c for c, f in zip(cuts, flips)]))
    levels = levels[(levels >= 0) & (levels <= 1)]
    widths = np.diff(levels)
    mids = 0.5 * (levels[1:] + levels[:-1])
    keep = widths > 1e-15
    cols = []
    for m, flip in zip(marginals, flips):
        cols.append(m.quantile(1.0 - mids[keep] if flip else mids[keep]))
    w = widths[keep]
    return DiscreteMeasure(np.column_stack(cols), w / w.sum()).compress()


def monotone_coupling(marginals: Sequence[Marginal1D], n_atoms: int | None = None) -> DiscreteMeasure:
    """Comonotone coupling ``(F_1^{-1}, ..., F_d^{-1})`` pushed from uniform mass.

    With ``n_atoms`` the uniform law is discretized on the midpoints
    ``(k - 1/2) / n``.  Without it, every marginal must be :class:`Discrete`
    and the coupling is computed exactly.
    """
    if len(marginals) < 1:
        raise DomainError("need at least one marginal")
    if n_atoms is None:
        if not _all_discrete(marginals):
            raise DomainError("n_atoms is required for non-discrete marginals")
        return _exact_comonotone(marginals, [False] * len(marginals))
    if n_atoms < 1:
        raise DomainError("n_atoms must be positive")
    u = (np.arange(n_atoms) + 0.5) / n_atoms
    pts = np.column_stack([m.quantile(u) for m in marginals])
    return DiscreteMeasure(pts, np.full(n_atoms, 1.0 / n_atoms))


def anti_monotone_coupling(m1: Marginal1D, m2: Marginal1D, n_atoms: int | None = None) -> DiscreteMeasure:
    """Counter-monotone coupling ``u -> (F_1^{-1}(u), F_2^{-1}(1 - u))`` in two dimensions."""
    if not (isinstance(m1, Marginal1D) and isinstance(m2, Marginal1D)):
        raise DomainError("anti-monotone coupling is defined for exactly two marginals")
    if n_atoms is None:
        if not _all_discrete([m1, m2]):
            raise DomainError("n_atoms is required for non-discrete marginals")
        return _exact_comonotone([m1, m2], [False, True])
    u = (np.arange(n_atoms) + 0.5) / n_atoms
    pts = np.column_stack([m1.quantile(u), m2.quantile(1.0 - u)])
    return DiscreteMeasure(pts, np.full(n_atoms, 1.0 / n_atoms))


def independent_coupling(marginals: Sequence[Discrete]) -> DiscreteMeasure:
    """Product measure of discrete marginals."""
    if not _all_discrete(marginals):
        raise DomainError("exact independent coupling needs discrete marginals")
    grids = np.meshgrid(*[m.atoms for m in marginals], indexing="ij")
    wts = np.meshgrid(*[m.weights for m in marginals], indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    w = np.prod(np.stack([q.ravel() for q in wts]), axis=0)
    return DiscreteMeasure(pts, w / w.sum())


def expectation(mu, c: CostSpec, n_samples: int = 100_000, d: int | None = None,
                rng: np.random.Generator | None = None) -> tuple[float, float]:
    """``E[c]`` under a measure, returned as ``(mean, std_err)``.

    ``mu`` may be a :class:`DiscreteMeasure` (exact weighted sum, zero
    error) or a sequence of marginals, sampled independently.  A measure of
    dimension ``2d`` is split into ``(x, y)``; a measure of dimension ``d``
    (pass ``d=None``) is read as a single-period law with ``y = x``.  A
    sequence of ``2d`` marginals is read the same way as a ``2d`` measure.
    """
    if isinstance(mu, DiscreteMeasure):
        x, y = _split(mu.points, mu.dim, d)
        return float(mu.weights @ np.asarray(c(x, y), dtype=float)), 0.0
    if n_samples < 1:
        raise DomainError("n_samples must be positive")
    rng = np.random.default_rng() if rng is None else rng
    cols = np.column_stack([m.sample(n_samples, rng) for m in mu])
    x, y = _split(cols, cols.shape[1], d)
    vals = np.asarray(c(x, y), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0


def _split(points, dim, d):
    if d is None or d == dim:
        return points, points
    if dim != 2 * d:
        raise DomainError(f"cannot read a {dim}-dimensional measure as a {d}-asset two-period law")
    return points[:, :d], points[:, d:]


def ot_bounds(nus: Sequence[Marginal1D], c: CostSpec, n_atoms: int | None = None) -> tuple[float, float]:
    """Classical transport bounds from the monotone and anti-monotone couplings of ``nus``.

    Exact (optimal) when ``c`` is supermodular in the second-period prices.
    """
    if len(nus) != 2:
        raise DomainError("the anti-monotone lower bound is only available for two assets")
    upper, _ = expectation(monotone_coupling(nus, n_atoms), c)
    lower, _ = expectation(anti_monotone_coupling(nus[0], nus[1], n_atoms), c)
    return upper, lower

