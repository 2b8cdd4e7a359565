"""Sub/supermodularity on grids, discrete convex conjugates and envelopes.

Everything here works on :class:`GridFn`, an extended-real function
tabulated on a product grid.  Modularity is certified on elementary
rectangles of the grid lattice, which is equivalent to the pairwise
definition on a product of chains; results therefore hold "on the grid".
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import spatial

from .distributions import DomainError

__all__ = [
    "GridFn",
    "AffinePiece",
    "Modularity",
    "check_modularity",
    "mixed_differences",
    "legendre",
    "legendre_at",
    "convex_envelope",
    "slope_axes",
    "random_submodular",
    "random_supermodular",
    "conjugate_modularity_suite",
    "SuiteReport",
    "cube_fixture",
    "verify_cube_counterexample",
    "CubeReport",
]

STRICT_TOL = 1e-12
WEAK_TOL = 1e-9


@dataclass(eq=False)
class GridFn:
    """Values on the product grid ``axes[0] x ... x axes[d-1]``; entries may be ``+inf``."""

    axes: list[np.ndarray]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float).ravel() for a in self.axes]
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(a.size for a in self.axes):
            raise DomainError("values shape does not match the axes")
        if any(np.any(np.diff(a) <= 0) for a in self.axes):
            raise DomainError("axes must be strictly increasing")
        if np.any(np.isnan(self.values)) or np.any(self.values == -np.inf):
            raise DomainError("values must be finite or +inf")
        if not np.isfinite(self.values).any():
            raise DomainError("function is identically +inf (not proper)")

    @property
    def d(self) -> int:
        return len(self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def finite(self) -> tuple[np.ndarray, np.ndarray]:
        """Grid points with finite values and those values."""
        pts = self.points()
        vals = self.values.ravel()
        keep = np.isfinite(vals)
        return pts[keep], vals[keep]

    def __neg__(self) -> "GridFn":
        if np.isinf(self.values).any():
            raise DomainError("cannot negate a function taking +inf")
        return GridFn(self.axes, -self.values)

    def at(self, point) -> float:
        """Value at a grid point (exact coordinate match required)."""
        idx = []
        for a, p in zip(self.axes, point):
            k = np.flatnonzero(np.isclose(a, p, rtol=0, atol=1e-12))
            if k.size == 0:
                raise DomainError(f"{point} is not a grid point")
            idx.append(int(k[0]))
        return float(self.values[tuple(idx)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.d)] + ["value"])
            for p, v in zip(self.points(), self.values.ravel()):
                w.writerow([repr(float(c)) for c in p] + ["+inf" if v == np.inf else repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "GridFn":
        with open(path) as fh:
            rows = list(csv.reader(fh))[1:]
        pts = np.array([[float(c) for c in r[:-1]] for r in rows])
        vals = np.array([np.inf if r[-1].strip() in ("+inf", "inf") else float(r[-1]) for r in rows])
        axes = [np.unique(pts[:, i]) for i in range(pts.shape[1])]
        out = np.full(tuple(a.size for a in axes), np.inf)
        idx = tuple(np.searchsorted(a, pts[:, i]) for i, a in enumerate(axes))
        out[idx] = vals
        return cls(axes, out)


@dataclass(frozen=True)
class AffinePiece:
    slope: np.ndarray
    intercept: float

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.slope, dtype=float) + self.intercept


class Modularity(enum.Flag):
    """Classification flags.  A modular function carries both SUB and SUPER."""

    NEITHER = 0
    SUB = enum.auto()
    SUPER = enum.auto()
    STRICT_SUB = enum.auto()
    STRICT_SUPER = enum.auto()

    @property
    def submodular(self) -> bool:
        return bool(self & Modularity.SUB)

    @property
    def supermodular(self) -> bool:
        return bool(self & Modularity.SUPER)


def mixed_differences(f: GridFn, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Corner sums over every elementary rectangle in coordinates ``(i, j)``.

    Returns ``(off, diag)`` with ``off = f(a) + f(b)`` for the two
    incomparable corners and ``diag = f(a v b) + f(a ^ b)``.
    """
    v = np.moveaxis(f.values, (i, j), (0, 1))
    lo_lo, hi_hi = v[:-1, :-1], v[1:, 1:]
    hi_lo, lo_hi = v[1:, :-1], v[:-1, 1:]
    with np.errstate(invalid="ignore"):
        return hi_lo + lo_hi, hi_hi + lo_lo


def _scale(f: GridFn) -> float:
    fin = f.values[np.isfinite(f.values)]
    return max(1.0, float(np.abs(fin).max()) if fin.size else 1.0)


def check_modularity(f: GridFn, strict_tol: float = STRICT_TOL, weak_tol: float | None = None) -> Modularity:
    """Classify ``f`` on its grid lattice.

    Sub-/supermodularity tolerate violations up to ``weak_tol`` (default
    ``1e-9`` times the magnitude of ``f``); the strict flags require every
    rectangle to satisfy its inequality with margin ``> strict_tol``.
    ``+inf`` corners follow extended-real arithmetic.
    """
    if f.d < 2:
        raise DomainError("modularity needs at least two coordinates")
    tol = WEAK_TOL * _scale(f) if weak_tol is None else weak_tol
    sub = sup = ssub = ssup = True
    for i, j in itertools.combinations(range(f.d), 2):
        off, diag = mixed_differences(f, i, j)
        off_inf, diag_inf = np.isinf(off), np.isinf(diag)
        fin = ~(off_inf | diag_inf)
        gap = np.where(fin, off - diag, 0.0)  # > 0 favours submodularity
        sub &= bool(np.all(~diag_inf | off_inf)) and bool(np.all(gap[fin] >= -tol))
        sup &= bool(np.all(~off_inf | diag_inf)) and bool(np.all(gap[fin] <= tol))
        # inf vs finite is strict in the right direction; inf vs inf never is
        ssub &= not diag_inf.any() and bool(np.all(gap[fin] > strict_tol))
        ssup &= not off_inf.any() and bool(np.all(gap[fin] < -strict_tol))
    out = Modularity.NEITHER
    if sub:
        out |= Modularity.SUB
    if sup:
        out |= Modularity.SUPER
    if sub and ssub:
        out |= Modularity.STRICT_SUB
    if sup and ssup:
        out |= Modularity.STRICT_SUPER
    return out


def legendre_at(f: GridFn, points, chunk: int = 2048) -> np.ndarray:
    """``sup_x x.y - f(x)`` over the finite grid points of ``f``, at each row of ``points``."""
    X, fx = f.finite()
    Y = np.atleast_2d(np.asarray(points, dtype=float))
    if Y.shape[1] != f.d:
        raise DomainError("points have the wrong dimension")
    out = np.empty(Y.shape[0])
    for s in range(0, Y.shape[0], chunk):
        out[s:s + chunk] = (Y[s:s + chunk] @ X.T - fx).max(axis=1)
    return out


def _bbox_axes(f: GridFn) -> list[np.ndarray]:
    return [np.linspace(a[0], a[-1], a.size) for a in f.axes]


def legendre(f: GridFn, dual_axes=None) -> GridFn:
    """Discrete convex conjugate of ``f`` tabulated on ``dual_axes``.

    The supremum runs over the finite grid points of ``f`` only, so the
    result is the exact conjugate of ``f`` extended by ``+inf`` off the grid.
    ``dual_axes`` defaults to the primal bounding box at the primal resolution.
    """
    X, _ = f.finite()
    if X.size == 0:
        raise DomainError("function is identically +inf")
    axes = _bbox_axes(f) if dual_axes is None else [np.asarray(a, float) for a in dual_axes]
    if len(axes) != f.d:
        raise DomainError("dual axes have the wrong dimension")
    probe = GridFn(axes, np.zeros(tuple(a.size for a in axes)))
    vals = legendre_at(f, probe.points())
    return GridFn(axes, vals.reshape(probe.values.shape))


def slope_axes(f: GridFn, max_points: int = 129) -> list[np.ndarray]:
    """Per-axis grids of candidate supporting slopes of ``f``.

    Each axis holds the distinct forward difference quotients of ``f``
    along it together with the midpoints of adjacent ones (central
    quotients).  When there are more than ``max_points`` candidates the
    axis is replaced by ``max_points`` evenly spaced values over the same range.
    """
    axes = []
    for i, a in enumerate(f.axes):
        v = np.moveaxis(f.values, i, 0)
        h = np.diff(a).reshape((-1,) + (1,) * (f.d - 1))
        with np.errstate(invalid="ignore"):
            q = np.diff(v, axis=0) / h
            mid = 0.5 * (q[1:] + q[:-1])
        cand = np.concatenate([q[np.isfinite(q)], mid[np.isfinite(mid)]])
        if cand.size == 0:
            axes.append(np.array([-1.0, 0.0, 1.0]))
            continue
        cand = np.unique(np.round(cand, 12))
        if cand.size == 1:
            cand = cand[0] + np.array([-1.0, 0.0, 1.0])
        elif cand.size > max_points:
            cand = np.linspace(cand[0], cand[-1], max_points)
        axes.append(cand)
    return axes


def _lower_hull(f: GridFn) -> np.ndarray:
    """Exact envelope at every grid point from the lower convex hull of the graph."""
    X, fx = f.finite()
    P = f.points()
    out = np.full(P.shape[0], np.inf)
    centre = X.mean(axis=0)
    _, sv, Vt = np.linalg.svd(X - centre, full_matrices=False)
    r = int(np.sum(sv > 1e-10 * max(1.0, sv.max(initial=0.0))))
    if r == 0:
        out[np.all(np.isclose(P, X[0]), axis=1)] = fx.min()
        return out.reshape(f.values.shape)
    V = Vt[:r].T
    Z, ZP = (X - centre) @ V, (P - centre) @ V
    on_plane = np.linalg.norm((P - centre) - ZP @ V.T, axis=1) <= 1e-9 * max(1.0, np.abs(P).max())
    if r == 1:
        inside = on_plane & (ZP[:, 0] >= Z.min() - 1e-9) & (ZP[:, 0] <= Z.max() + 1e-9)
    else:
        eq = spatial.ConvexHull(Z).equations
        inside = on_plane & np.all(ZP @ eq[:, :-1].T + eq[:, -1] <= 1e-9, axis=1)
    A = np.column_stack([Z, np.ones(len(Z))])
    coef, *_ = np.linalg.lstsq(A, fx, rcond=None)
    if np.abs(A @ coef - fx).max() <= 1e-12 * max(1.0, np.abs(fx).max()):
        out[inside] = ZP[inside] @ coef[:-1] + coef[-1]  # affine on the grid
        return out.reshape(f.values.shape)
    eq = spatial.ConvexHull(np.column_stack([Z, fx])).equations
    low = eq[eq[:, r] < -1e-10]
    planes = -(ZP[inside] @ low[:, :r].T + low[:, -1]) / low[:, r]
    out[inside] = planes.max(axis=1)
    return out.reshape(f.values.shape)


def convex_envelope(f: GridFn, dual_axes=None) -> GridFn:
    """``f**`` on the primal grid.

    By default the envelope is computed exactly from the lower convex hull
    of the graph of ``f``.  With ``dual_axes`` it is the double discrete
    conjugate through that dual grid; this agrees with the hull wherever
    the dual grid contains a supporting slope, and is a minorant of ``f``
    everywhere.  Grid points outside the hull of the finite points stay
    ``+inf``.
    """
    fin = f.values[np.isfinite(f.values)]
    if fin.size == 0:
        raise DomainError("function is identically +inf")
    if dual_axes is None:
        return GridFn(f.axes, _lower_hull(f))
    return legendre(legendre(f, dual_axes), f.axes)


# --------------------------------------------------------------------------
# random lattice functions and the conjugacy suite


def _random_axes(d, rng, n_range=(3, 6)):
    return [np.sort(rng.choice(np.arange(-12, 13), size=rng.integers(*n_range, endpoint=True), replace=False)) / 4.0
            for _ in range(d)]


def random_submodular(d: int, rng: np.random.Generator, strict: bool = True) -> GridFn:
    """Separable part plus pairwise terms with nonpositive mixed differences."""
    axes = _random_axes(d, rng)
    shape = tuple(a.size for a in axes)
    vals = np.zeros(shape)
    for i, a in enumerate(axes):
        g = rng.normal(size=a.size) + rng.uniform(0, 2) * a**2
        vals += g.reshape([-1 if k == i else 1 for k in range(d)])
    for i, j in itertools.combinations(range(d), 2):
        M = rng.uniform(0.05 if strict else 0.0, 1.0, size=(shape[i], shape[j]))
        if not strict:
            M *= rng.random(M.shape) < 0.5
        S = -np.cumsum(np.cumsum(M, axis=0), axis=1)
        shp = [1] * d
        shp[i], shp[j] = shape[i], shape[j]
        vals += S.reshape(shp)
    return GridFn(axes, vals)


def random_supermodular(d: int, rng: np.random.Generator, strict: bool = True) -> GridFn:
    f = random_submodular(d, rng, strict)
    return GridFn(f.axes, -f.values)


@dataclass
class SuiteReport:
    trials: int
    sub_to_super: int = 0
    super_to_sub_d2: int = 0
    envelope_preserved_d2: int = 0
    counterexamples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.counterexamples and self.sub_to_super == self.super_to_sub_d2 == self.envelope_preserved_d2 == self.trials


def _dual_axes_for(f: GridFn, rng) -> list[np.ndarray]:
    return [np.sort(rng.uniform(-4, 4, size=rng.integers(4, 8))) for _ in range(f.d)]


def conjugate_modularity_suite(seed: int = 0, trials: int = 100) -> SuiteReport:
    """Random checks: sub -> conjugate super (d = 2, 3); super -> conjugate sub and
    envelopes keep their class (d = 2)."""
    if trials < 1:
        raise DomainError("trials must be positive")
    rng = np.random.default_rng(seed)
    rep = SuiteReport(trials)
    for t in range(trials):
        d = 2 + (t % 2)
        f = random_submodular(d, rng)
        g = legendre(f, _dual_axes_for(f, rng))
        if check_modularity(g).supermodular:
            rep.sub_to_super += 1
        else:
            rep.counterexamples.append(("sub->super", d, f))
    for _ in range(trials):
        f = random_supermodular(2, rng)
        g = legendre(f, _dual_axes_for(f, rng))
        if check_modularity(g).submodular:
            rep.super_to_sub_d2 += 1
        else:
            rep.counterexamples.append(("super->sub", 2, f))
    for t in range(trials):
        f = random_submodular(2, rng) if t % 2 == 0 else random_supermodular(2, rng)
        want = Modularity.SUB if t % 2 == 0 else Modularity.SUPER
        env = convex_envelope(f)
        if check_modularity(env) & want:
            rep.envelope_preserved_d2 += 1
        else:
            rep.counterexamples.append(("envelope", 2, f))
    return rep


# --------------------------------------------------------------------------
# the stacked-cube function on twelve vertices

CUBE_VALUES = {
    (0, 0, 1): 0, (1, 0, 1): 0, (0, 1, 1): 0, (1, 1, 1): 0,
    (0, 0, 0): 0, (1, 0, 0): 1, (0, 1, 0): 0, (1, 1, 0): 1,
    (0, 0, -1): 0, (1, 0, -1): 2, (0, 1, -1): 1, (1, 1, -1): 2,
}
CUBE_PIECES = (
    AffinePiece(np.array([0.0, 0.0, 0.0]), 0.0),
    AffinePiece(np.array([1.0, 1.0, -1.0]), -1.0),
    AffinePiece(np.array([2.0, 0.0, -1.0]), -1.0),
)
CUBE_U = np.array([0.5, 0.75, 0.25])
CUBE_U2 = np.array([0.4, 0.8, 0.2])


def cube_fixture() -> GridFn:
    axes = [np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0, 1.0])]
    vals = np.empty((2, 2, 3))
    for (a, b, c), v in CUBE_VALUES.items():
        vals[a, b, c + 1] = v
    return GridFn(axes, vals)


def monotone_rearrangement(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.minimum(a, b), np.maximum(a, b)


@dataclass
class CubeReport:
    submodular: bool
    envelope_matches_pieces: bool
    envelope_matches_values: bool
    lhs: float
    rhs: float
    envelope_at: dict

    @property
    def passed(self) -> bool:
        return self.submodular and self.envelope_matches_pieces and self.envelope_matches_values and self.lhs < self.rhs


def verify_cube_counterexample() -> CubeReport:
    """Submodular on the 2x2x3 lattice, yet its convex envelope is not.

    The envelope is evaluated off the grid through the discrete conjugate on
    an integer slope grid, independently of the three affine pieces it is
    compared against.
    """
    beta0 = cube_fixture()
    sub = check_modularity(beta0).submodular
    slopes = [np.arange(-3.0, 4.0)] * 3
    conj = legendre(beta0, slopes)

    def env(p):
        return float(legendre_at(conj, np.atleast_2d(p))[0])

    def pieces(p):
        return max(float(L(p)) for L in CUBE_PIECES)

    verts = beta0.points()
    env_v = np.array([env(p) for p in verts])
    match_pieces = bool(np.allclose(env_v, [pieces(p) for p in verts], atol=1e-12))
    match_vals = bool(np.allclose(env_v, beta0.values.ravel(), atol=1e-12))
    u, u2 = CUBE_U, CUBE_U2
    ub, ub2 = monotone_rearrangement(u, u2)
    at = {"u": env(u), "u'": env(u2), "u_bar": env(ub), "u_bar'": env(ub2)}
    for key, p in zip(at, (u, u2, ub, ub2)):
        if abs(at[key] - pieces(p)) > 1e-12:
            match_pieces = False
    return CubeReport(sub, match_pieces, match_vals, at["u"] + at["u'"], at["u_bar"] + at["u_bar'"], at)
