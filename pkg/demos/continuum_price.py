"""Continuum market price driven by a noisy sinusoidal supply.

Integrates the 15 value-function coefficients backwards, checks them
against the explicit Riccati solutions where those exist, simulates price
scenarios forward, and compares the supply-price covariance with Monte
Carlo.

    python demos/continuum_price.py
"""

import math

import numpy as np

from mfgprice import MarketParams
from mfgprice.continuum import (
    closed_form_a2,
    covariance_closed_form,
    hjb_residual,
    initial_price,
    integrate_coefficients,
    monte_carlo_covariance,
    simulate_price,
)
from mfgprice.supply import FourierSeries, mean_reverting

params = MarketParams(T=1.0, eta=1.0, c=1.0, gamma=math.e**2, kappa=0.25, zeta=0.25)
supply = mean_reverting(FourierSeries(0.0, ((1, 1.0, 0.0),)), sigma_s=0.05)
table = integrate_coefficients(params, supply, steps=1000)

print("coefficients at t=0")
for name, value in zip(("a2_1", "a2_2", "a2_3", "a2_4"), table.a2[:4, 0]):
    print(f"  {name:5s} {value: .6f}")
rng = np.random.default_rng(0)
x, xbar, q, w = rng.uniform(-1, 1, size=(4, 100))
res = hjb_residual(params, table, supply, x, xbar, q, w, rng.integers(2, 998, 100))
print(f"max HJB residual at 100 random points: {np.max(np.abs(res)):.1e}")

# with eta = 0 the quadratic block has explicit solutions
flat = MarketParams(T=1.0, eta=0.0, c=1.0, gamma=1.0)
flat_table = integrate_coefficients(flat, mean_reverting(0.0, 0.05))
err = np.max(np.abs(np.array(closed_form_a2(flat, flat_table.t)) - flat_table.a2[:4]))
print(f"eta=0: RK4 vs explicit solution, max error {err:.1e}")

w0 = initial_price(params, table, mu0=0.0, q0=0.1)
scen = simulate_price(params, table, supply, mu0=0.0, q0=0.1, M=100, seed=1, n_paths=500)
print(f"\ninitial price {w0:.4f}; price at t=0.5 over 500 scenarios: "
      f"mean {scen.price[:, 50].mean():.4f}, sd {scen.price[:, 50].std():.4f}")
print(f"corr(Q, price) at t=0.5: {np.corrcoef(scen.q[:, 50], scen.price[:, 50])[0, 1]:.3f}")

cov_supply = mean_reverting(0.0, 0.05)
times = [0.25, 0.5, 0.75, 1.0]
mc, se = monte_carlo_covariance(flat, flat_table, cov_supply, 0.0, 0.0, times, n_paths=20_000, seed=2)
closed = covariance_closed_form(flat, 0.05, times)
print("\n  t     closed form    Monte Carlo (+- se)")
for t, a, b, s in zip(times, closed, mc, se):
    print(f"  {t:.2f}  {a: .5e}  {b: .5e} ({s:.1e})")
