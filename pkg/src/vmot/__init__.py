"""Model-free bounds for multi-asset payoffs under martingale transport constraints."""

from .distributions import DomainError, Discrete, Normal, Tabulated, convex_order, irreducible
from .coupling import DiscreteMeasure, expectation, monotone_coupling, ot_bounds
from .closed_form import GaussianInstance, exact_value

__version__ = "0.1.0"
