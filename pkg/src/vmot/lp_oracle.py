"""Exact discrete vectorial martingale transport by linear programming.

Variables are the masses ``pi(x_k, y_l)`` of a plan on a finite product of
first- and second-period supports.  Constraints fix the 1-d marginals of
both periods (aggregated per coordinate value), impose ``E[Y | X = x_k] = x_k``
coordinate-wise, and optionally pin the first-period joint law.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .coupling import CostSpec, Covariance, DiscreteMeasure, anti_monotone_coupling, monotone_coupling
from .distributions import Discrete, DomainError, irreducible

__all__ = [
    "DiscreteVmot",
    "LpProblem",
    "LpSolution",
    "Status",
    "assemble",
    "solve",
    "DualCertificate",
    "MonotoneReport",
    "verify_monotone_d2",
    "random_monotone_instance",
    "CounterexampleReport",
    "counterexample_d3",
    "counterexample_instance",
    "counterexample_certificate",
    "total_variation",
    "save_instance",
    "load_instance",
    "save_solution",
]


def _product(axes: Sequence[np.ndarray]) -> np.ndarray:
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))


@dataclass(eq=False)
class DiscreteVmot:
    x_support: np.ndarray  # (m, d)
    y_support: np.ndarray  # (n, d)
    mus: list[Discrete]
    nus: list[Discrete]
    cost_matrix: np.ndarray  # (m, n)
    fixed_pix: DiscreteMeasure | None = None

    def __post_init__(self):
        self.x_support = np.atleast_2d(np.asarray(self.x_support, dtype=float))
        self.y_support = np.atleast_2d(np.asarray(self.y_support, dtype=float))
        self.cost_matrix = np.asarray(self.cost_matrix, dtype=float)
        d = self.x_support.shape[1]
        if self.y_support.shape[1] != d or len(self.mus) != d or len(self.nus) != d:
            raise DomainError("supports and marginals disagree on the dimension")
        if self.cost_matrix.shape != (len(self.x_support), len(self.y_support)):
            raise DomainError("cost matrix must be m x n")
        for supp, margs in ((self.x_support, self.mus), (self.y_support, self.nus)):
            for i, m in enumerate(margs):
                if not np.array_equal(np.unique(supp[:, i]), np.sort(m.atoms)):
                    raise DomainError(f"atoms of marginal {i} differ from the support's coordinate values")
        if self.fixed_pix is not None and self.fixed_pix.dim != d:
            raise DomainError("fixed first-period law has the wrong dimension")

    @property
    def d(self) -> int:
        return self.x_support.shape[1]

    @classmethod
    def from_marginals(cls, mus: Sequence[Discrete], nus: Sequence[Discrete], cost: CostSpec,
                       x_support=None, y_support=None, fixed_pix: DiscreteMeasure | None = None) -> "DiscreteVmot":
        """Supports default to the products of the marginals' atom sets."""
        X = _product([m.atoms for m in mus]) if x_support is None else np.asarray(x_support, float)
        Y = _product([m.atoms for m in nus]) if y_support is None else np.asarray(y_support, float)
        m, n = len(X), len(Y)
        C = np.asarray(cost(np.repeat(X, n, axis=0), np.tile(Y, (m, 1))), dtype=float).reshape(m, n)
        return cls(X, Y, list(mus), list(nus), C, fixed_pix)

    def with_fixed(self, pix: DiscreteMeasure | None) -> "DiscreteVmot":
        return DiscreteVmot(self.x_support, self.y_support, self.mus, self.nus, self.cost_matrix, pix)

    def scaled(self, lam: float) -> "DiscreteVmot":
        return DiscreteVmot(self.x_support, self.y_support, self.mus, self.nus, lam * self.cost_matrix, self.fixed_pix)


@dataclass
class LpProblem:
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    objective: np.ndarray
    shape: tuple[int, int]
    row_kind: list[str]


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LpSolution:
    plan: np.ndarray | None
    value: float
    status: Status
    x_support: np.ndarray
    y_support: np.ndarray
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def x_marginal(self, tol: float = 1e-12) -> DiscreteMeasure:
        w = np.clip(self.plan.sum(axis=1), 0.0, None)
        keep = w > tol
        return DiscreteMeasure(self.x_support[keep], w[keep] / w[keep].sum())

    def as_measure(self, tol: float = 1e-12) -> DiscreteMeasure:
        """The plan as a measure on ``R^{2d}`` with points ``(x, y)``."""
        k, l = np.nonzero(self.plan > tol)
        pts = np.hstack([self.x_support[k], self.y_support[l]])
        w = self.plan[k, l]
        return DiscreteMeasure(pts, w / w.sum())


def _match(values: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(atoms), values)


def assemble(inst: DiscreteVmot) -> LpProblem:
    X, Y = inst.x_support, inst.y_support
    m, n, d = len(X), len(Y), inst.d
    rows, cols, vals, rhs, kind = [], [], [], [], []
    r = 0
    var = np.arange(m * n).reshape(m, n)
    # first-period marginals, aggregated per coordinate value
    for i, mu in enumerate(inst.mus):
        order = np.argsort(mu.atoms)
        idx = _match(X[:, i], mu.atoms)
        for a in range(mu.atoms.size):
            ks = np.flatnonzero(idx == a)
            v = var[ks].ravel()
            rows.append(np.full(v.size, r)); cols.append(v); vals.append(np.ones(v.size))
            rhs.append(mu.weights[order][a]); kind.append(f"mu{i + 1}"); r += 1
    for i, nu in enumerate(inst.nus):
        order = np.argsort(nu.atoms)
        idx = _match(Y[:, i], nu.atoms)
        for a in range(nu.atoms.size):
            ls = np.flatnonzero(idx == a)
            v = var[:, ls].ravel()
            rows.append(np.full(v.size, r)); cols.append(v); vals.append(np.ones(v.size))
            rhs.append(nu.weights[order][a]); kind.append(f"nu{i + 1}"); r += 1
    # martingale: sum_l pi(k, l) (y_l - x_k) = 0 for each k, i
    for k in range(m):
        for i in range(d):
            inc = Y[:, i] - X[k, i]
            nz = np.flatnonzero(inc != 0)
            rows.append(np.full(nz.size, r)); cols.append(var[k, nz]); vals.append(inc[nz])
            rhs.append(0.0); kind.append("martingale"); r += 1
    if inst.fixed_pix is not None:
        target = np.zeros(m)
        for p, w in zip(inst.fixed_pix.points, inst.fixed_pix.weights):
            hit = np.flatnonzero(np.all(np.abs(X - p) <= 1e-12, axis=1))
            if hit.size == 0:
                raise DomainError(f"fixed first-period atom {p} is not in the support")
            target[hit[0]] += w
        for k in range(m):
            rows.append(np.full(n, r)); cols.append(var[k]); vals.append(np.ones(n))
            rhs.append(target[k]); kind.append("fixed"); r += 1
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, m * n))
    return LpProblem(A, np.array(rhs), inst.cost_matrix.ravel().copy(), (m, n), kind)


def solve(inst: DiscreteVmot, direction: str = "max") -> LpSolution:
    """Solve with HiGHS.  Infeasibility is reported through ``status``."""
    if direction not in ("max", "min"):
        raise DomainError("direction must be 'max' or 'min'")
    lp = assemble(inst)
    sign = -1.0 if direction == "max" else 1.0
    res = linprog(sign * lp.objective, A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        return LpSolution(None, float("nan"), Status.INFEASIBLE, inst.x_support, inst.y_support)
    if res.status == 3:
        return LpSolution(None, float("nan"), Status.UNBOUNDED, inst.x_support, inst.y_support)
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    plan = res.x.reshape(lp.shape)
    resid = lp.A_eq @ res.x - lp.b_eq
    kinds = np.array(lp.row_kind)
    residuals = {
        "marginal": float(np.abs(resid[np.char.startswith(kinds, "mu") | np.char.startswith(kinds, "nu")]).max(initial=0.0)),
        "martingale": float(np.abs(resid[kinds == "martingale"]).max(initial=0.0)),
        "fixed": float(np.abs(resid[kinds == "fixed"]).max(initial=0.0)),
        "negativity": float(max(0.0, -plan.min())),
    }
    return LpSolution(plan, float(lp.objective @ res.x), Status.OPTIMAL, inst.x_support, inst.y_support, residuals)


@dataclass
class DualCertificate:
    """Tabulated semi-static hedge on a discrete instance.

    ``phi[i]`` and ``psi[i]`` are values on the sorted atoms of ``mu_i`` and
    ``nu_i``; ``h`` has one row per first-period support point.
    """

    phi: list[np.ndarray]
    psi: list[np.ndarray]
    h: np.ndarray

    def value(self, inst: DiscreteVmot) -> float:
        tot = 0.0
        for f, m in zip(self.phi, inst.mus):
            tot += float(np.dot(f, m.weights[np.argsort(m.atoms)]))
        for g, m in zip(self.psi, inst.nus):
            tot += float(np.dot(g, m.weights[np.argsort(m.atoms)]))
        return tot

    def hedge(self, inst: DiscreteVmot) -> np.ndarray:
        X, Y = inst.x_support, inst.y_support
        H = np.zeros((len(X), len(Y)))
        for i in range(inst.d):
            H += np.asarray(self.phi[i])[_match(X[:, i], inst.mus[i].atoms)][:, None]
            H += np.asarray(self.psi[i])[_match(Y[:, i], inst.nus[i].atoms)][None, :]
            H += self.h[:, i][:, None] * (Y[:, i][None, :] - X[:, i][:, None])
        return H

    def slack(self, inst: DiscreteVmot) -> np.ndarray:
        """``hedge - cost`` on the support grid; feasible iff everywhere ``>= 0``."""
        return self.hedge(inst) - inst.cost_matrix


def total_variation(p: DiscreteMeasure, q: DiscreteMeasure, decimals: int = 12) -> float:
    def table(mu):
        out = {}
        for pt, w in zip(np.round(mu.points, decimals), mu.weights):
            key = tuple(pt + 0.0)
            out[key] = out.get(key, 0.0) + w
        return out

    a, b = table(p), table(q)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


@dataclass
class MonotoneReport:
    tv: float
    passed: bool
    irreducible: list[bool]
    value: float
    value_fixed: float
    reference: DiscreteMeasure
    lp_marginal: DiscreteMeasure


def verify_monotone_d2(inst: DiscreteVmot, anti: bool = False, tol: float = 1e-7) -> MonotoneReport:
    """Compare the LP-optimal first-period law with the (anti-)monotone coupling.

    Irreducibility of each marginal pair is reported; ``passed`` is only
    meaningful for irreducible pairs.  ``value_fixed`` is the optimum with
    the first-period law pinned to the reference coupling.
    """
    if inst.d != 2:
        raise DomainError("this check is for two assets")
    sol = solve(inst, "max")
    if not sol.optimal:
        raise DomainError(f"instance is {sol.status.value}")
    ref = anti_monotone_coupling(*inst.mus) if anti else monotone_coupling(inst.mus)
    fixed = solve(inst.with_fixed(ref), "max")
    lp_x = sol.x_marginal()
    tv = total_variation(lp_x, ref)
    irr = [irreducible(m, n) for m, n in zip(inst.mus, inst.nus)]
    return MonotoneReport(tv, tv <= tol, irr, sol.value, fixed.value if fixed.optimal else float("nan"), ref, lp_x)


def _spread_pair(rng: np.random.Generator, k: int) -> tuple[Discrete, Discrete]:
    # k first-period atoms, each split into two overlapping mean-preserving spreads
    x = np.sort(rng.choice(np.arange(0, 4 * k), size=k, replace=False)).astype(float)
    w = rng.dirichlet(np.ones(k))
    gaps = np.diff(x)
    left, right = np.empty(k), np.empty(k)
    for j in range(k):
        need_r = gaps[j] / 2 + 0.5 if j < k - 1 else 1.0
        need_l = gaps[j - 1] / 2 + 0.5 if j > 0 else 1.0
        right[j] = need_r + rng.integers(0, 2) * 0.5
        left[j] = need_l + rng.integers(0, 2) * 0.5
    ya, yb = x - left, x + right
    pa, pb = w * right / (left + right), w * left / (left + right)
    nu = Discrete.from_samples(np.concatenate([ya, yb]), np.concatenate([pa, pb]))
    return Discrete(x, w), nu


def random_monotone_instance(rng: np.random.Generator, eps: float = 0.1, max_atoms: int = 8,
                             anti: bool = False) -> DiscreteVmot:
    """Irreducible two-asset instance with cost ``eps x1 x2 + y1 y2`` (negated if ``anti``)."""
    k_max = max(1, max_atoms // 2)
    while True:
        pairs = [_spread_pair(rng, int(rng.integers(2, k_max + 1))) for _ in range(2)]
        if all(p[1].atoms.size <= max_atoms for p in pairs) and all(irreducible(*p) for p in pairs):
            break
    cost = Covariance(np.array([[0.0, eps], [0.0, 0.0]]), np.array([[0.0, 1.0], [0.0, 0.0]]))
    inst = DiscreteVmot.from_marginals([p[0] for p in pairs], [p[1] for p in pairs], cost)
    return inst.scaled(-1.0) if anti else inst


# --------------------------------------------------------------------------
# three-asset counterexample

CE_Z = np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
CE_U = np.array([0.5, 0.75, 0.25])
CE_U2 = np.array([0.4, 0.8, 0.2])
CE_KERNELS = (np.array([0.25, 0.25, 0.5]), np.array([0.2, 0.4, 0.4]))


def _pairwise_products(x, y):
    return y[:, 0] * y[:, 1] + y[:, 1] * y[:, 2] + y[:, 2] * y[:, 0]


@dataclass
class CounterexampleReport:
    free_value: float
    fixed_value: float
    constructed_value: float
    dual_value: float
    min_slack: float
    max_support_slack: float
    instance: DiscreteVmot
    certificate: DualCertificate

    @property
    def passed(self) -> bool:
        return (abs(self.free_value - 27 / 20) <= 1e-8 and self.free_value - self.fixed_value > 1e-6
                and self.min_slack >= -1e-12 and self.max_support_slack <= 1e-12
                and abs(self.dual_value - 27 / 20) <= 1e-12)


def counterexample_instance() -> tuple[DiscreteVmot, DiscreteMeasure, DiscreteMeasure]:
    """The instance, its constructed optimal plan on ``R^6`` and the monotone first-period law."""
    pts, w = [], []
    for u, k in zip((CE_U, CE_U2), CE_KERNELS):
        if not np.allclose(k @ CE_Z, u):
            raise AssertionError("kernel barycentre mismatch")
        for z, p in zip(CE_Z, k):
            pts.append(np.concatenate([u, z]))
            w.append(0.5 * p)
    plan = DiscreteMeasure(np.array(pts), np.array(w))
    mus = [plan.marginal(i) for i in range(3)]
    nus = [plan.marginal(3 + i) for i in range(3)]
    y_axes = [np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0, 1.0])]
    from .coupling import Custom
    inst = DiscreteVmot.from_marginals(mus, nus, Custom(_pairwise_products, supermodular=True),
                                       y_support=_product(y_axes))
    lo, hi = np.minimum(CE_U, CE_U2), np.maximum(CE_U, CE_U2)
    chi = DiscreteMeasure(np.vstack([lo, hi]), np.array([0.5, 0.5]))
    return inst, plan, chi


def counterexample_certificate(inst: DiscreteVmot) -> DualCertificate:
    """Super-hedge built from the two affine pieces ``L1 = 0`` and ``L2``.

    The first-period part is ``-(L1 + L2)/2`` and the delta is minus the
    gradient of the active piece, so that ``hedge - c >= beta - max(L1, L2) >= 0``
    on the whole grid, with equality on the constructed plan.
    """
    a = [np.sort(m.atoms) for m in inst.mus]
    phi = [-0.5 * a[0], -0.5 * a[1], 0.5 * a[2] + 0.5]
    psi = [np.array([0.0, 2.0]), np.array([0.0, 0.0]), np.array([0.0, 0.0, 1.0])]
    X = inst.x_support
    l1 = np.zeros(len(X))
    l2 = X[:, 0] + X[:, 1] - X[:, 2] - 1.0
    h = np.where((l1 > l2 + 1e-14)[:, None], 0.0, np.where((l1 < l2 - 1e-14)[:, None], 1.0, 0.5)) \
        * np.array([-1.0, -1.0, 1.0])
    return DualCertificate(phi, psi, h)


def counterexample_d3() -> CounterexampleReport:
    inst, plan, chi = counterexample_instance()
    free = solve(inst, "max")
    fixed = solve(inst.with_fixed(chi), "max")
    constructed = float(np.dot(plan.weights, _pairwise_products(None, plan.points[:, 3:])))
    cert = counterexample_certificate(inst)
    slack = cert.slack(inst)
    on_support = []
    for pt in plan.points:
        k = np.flatnonzero(np.all(np.abs(inst.x_support - pt[:3]) <= 1e-12, axis=1))[0]
        l = np.flatnonzero(np.all(np.abs(inst.y_support - pt[3:]) <= 1e-12, axis=1))[0]
        on_support.append(abs(slack[k, l]))
    return CounterexampleReport(free.value, fixed.value if fixed.optimal else -np.inf, constructed,
                                cert.value(inst), float(slack.min()), float(max(on_support)), inst, cert)


# --------------------------------------------------------------------------
# CSV bundles


def _write_matrix(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in np.atleast_1d(r)) + "\n")


def _read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def save_instance(inst: DiscreteVmot, directory) -> Path:
    """Files: ``x_support.csv``, ``y_support.csv``, ``cost.csv``, ``mu_<i>.csv``,
    ``nu_<i>.csv`` (atom, weight) and optionally ``fixed_pix.csv``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    d = inst.d
    _write_matrix(out / "x_support.csv", [f"x_{i + 1}" for i in range(d)], inst.x_support)
    _write_matrix(out / "y_support.csv", [f"y_{i + 1}" for i in range(d)], inst.y_support)
    _write_matrix(out / "cost.csv", [f"y{l}" for l in range(len(inst.y_support))], inst.cost_matrix)
    for tag, margs in (("mu", inst.mus), ("nu", inst.nus)):
        for i, m in enumerate(margs):
            _write_matrix(out / f"{tag}_{i + 1}.csv", ["atom", "weight"], np.column_stack([m.atoms, m.weights]))
    if inst.fixed_pix is not None:
        inst.fixed_pix.to_csv(out / "fixed_pix.csv")
    return out


def load_instance(directory) -> DiscreteVmot:
    src = Path(directory)
    X = _read_matrix(src / "x_support.csv")
    Y = _read_matrix(src / "y_support.csv")
    C = _read_matrix(src / "cost.csv")
    d = X.shape[1]
    mus, nus = [], []
    for tag, margs in (("mu", mus), ("nu", nus)):
        for i in range(d):
            t = _read_matrix(src / f"{tag}_{i + 1}.csv")
            margs.append(Discrete(t[:, 0], t[:, 1]))
    fixed = DiscreteMeasure.from_csv(src / "fixed_pix.csv") if (src / "fixed_pix.csv").exists() else None
    return DiscreteVmot(X, Y, mus, nus, C.reshape(len(X), len(Y)), fixed)


def save_solution(sol: LpSolution, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "solution.csv", "w") as fh:
        fh.write("status,value\n")
        fh.write(f"{sol.status.value},{float(sol.value)!r}\n")
    if sol.plan is not None:
        d = sol.x_support.shape[1]
        m = sol.as_measure(tol=0.0) if sol.plan.min() >= 0 else sol.as_measure()
        header = [f"x_{i + 1}" for i in range(d)] + [f"y_{i + 1}" for i in range(d)] + ["weight"]
        _write_matrix(out / "plan.csv", header, np.column_stack([m.points, m.weights]))
    return out
