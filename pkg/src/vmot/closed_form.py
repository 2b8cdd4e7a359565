"""Exact maximal value for centred Gaussian marginals and a sampler of the optimizer.

For ``X_i ~ N(0, sigma_i^2)``, ``Y_i ~ N(0, rho_i^2)`` with ``sigma_i < rho_i``
and the covariance payoff ``sum_{i<j} a_ij x_i x_j + b_ij y_i y_j``, the
maximum over vectorial martingale transports is::

    sum_{i<j} (a_ij + b_ij) sigma_i sigma_j + b_ij lambda_i lambda_j,

with ``lambda_i = sqrt(rho_i^2 - sigma_i^2)``.  It is attained by a two-factor
martingale: ``X = sigma U`` and ``Y = X + lambda Z`` with independent standard
normals ``U`` and ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import Covariance
from .distributions import DomainError, Normal

__all__ = ["GaussianInstance", "exact_value", "sample_optimal_martingale", "random_instance"]


@dataclass(frozen=True, eq=False)
class GaussianInstance:
    sigmas: np.ndarray
    rhos: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float).ravel()
        r = np.asarray(self.rhos, dtype=float).ravel()
        if s.shape != r.shape:
            raise DomainError("sigmas and rhos must have equal length")
        if np.any(s <= 0) or np.any(r <= s):
            raise DomainError("need 0 < sigma_i < rho_i for every asset")
        cost = Covariance(self.a, self.b)  # validates shape and signs
        if cost.d != s.size:
            raise DomainError("coefficient matrices do not match the number of assets")
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "rhos", r)
        object.__setattr__(self, "a", cost.a)
        object.__setattr__(self, "b", cost.b)

    @property
    def d(self) -> int:
        return self.sigmas.size

    @property
    def lambdas(self) -> np.ndarray:
        return np.sqrt(self.rhos**2 - self.sigmas**2)

    @property
    def cost(self) -> Covariance:
        return Covariance(self.a, self.b)

    def marginals(self) -> tuple[list[Normal], list[Normal]]:
        return [Normal(0.0, s) for s in self.sigmas], [Normal(0.0, r) for r in self.rhos]


def exact_value(g: GaussianInstance) -> float:
    s, lam = g.sigmas, g.lambdas
    return float(np.sum((g.a + g.b) * np.outer(s, s) + g.b * np.outer(lam, lam)))


def sample_optimal_martingale(g: GaussianInstance, n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` paths ``(X, Y)``, each of shape ``(n, d)``."""
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    z = rng.standard_normal(n)
    x = u[:, None] * g.sigmas
    y = x + z[:, None] * g.lambdas
    return x, y


def random_instance(d: int, rng: np.random.Generator, sigma_range=(1.0, 2.0), rho_range=(2.0, 3.0)) -> tuple[GaussianInstance, np.ndarray]:
    """Portfolio benchmark: random vols and weights, cost ``b_ij = w_i w_j``.

    Weights are drawn uniformly on ``[0, 1]``.  Returns the instance and ``w``.
    """
    sigmas = rng.uniform(*sigma_range, size=d)
    rhos = rng.uniform(*rho_range, size=d)
    w = rng.uniform(0.0, 1.0, size=d)
    return GaussianInstance(sigmas, rhos, np.zeros((d, d)), np.outer(w, w)), w
