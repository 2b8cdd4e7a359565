"""
From option chains to price bounds
==================================

Densities are extracted from synthetic Black-Scholes chains, turned into
return marginals and fed to the transport bounds for a portfolio
variance.  The martingale bounds sit inside the plain transport bounds.
"""

# %%
import numpy as np

from vmot.coupling import PortfolioVariance, ot_bounds
from vmot.distributions import convex_order
from vmot.market_data import implied_density, lognormal_pdf, synthetic_chain, to_return_marginal
from vmot.neural_dual import TrainConfig, VmotInstance, train

spot, t1, t2 = 100.0, 35 / 365, 63 / 365
vols = [(0.15, 0.45), (0.45, 0.15)]

# %%
mus, nus = [], []
for v1, v2 in vols:
    iv2 = np.sqrt((v1 ** 2 * t1 + v2 ** 2 * (t2 - t1)) / t2)
    pair = []
    for T, vol in ((t1, v1), (t2, iv2)):
        dens = implied_density(synthetic_chain(spot, T, vol))
        err = np.max(np.abs(dens.density - lognormal_pdf(spot, dens.strikes, T, vol)))
        print(f"T={T:.3f} vol={vol:.3f}: {dens.strikes.size} strikes, max density error {err:.2e}")
        pair.append(to_return_marginal(dens, spot))
    print("convex order:", convex_order(*pair))
    mus.append(pair[0])
    nus.append(pair[1])

# %%
cost = PortfolioVariance(np.array([0.5, 0.5]))
ot_hi, ot_lo = ot_bounds(nus, cost, 50_000)
print(f"transport bounds [{ot_lo:.5f}, {ot_hi:.5f}]")

cfg = TrainConfig(gamma=1000.0, n_batches=2, points_per_batch=30_000, epochs_per_batch=5,
                  output_scale="auto", seed=0)
for direction in ("min", "max"):
    _, rep = train(VmotInstance(mus, nus, cost, direction, "reduced"), cfg)
    print(f"martingale {direction}: {rep.final_mean:.5f} +- {rep.final_std:.5f}")
