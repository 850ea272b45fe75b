"""Calibrate supply and cost parameters to hourly demand and price data.

Uses the synthetic fixture in ``data/``; any ``date,hour,demand,price``
file works (see ``scripts/prepare_market_csv.py``).

    python demos/calibration.py [market.csv]
"""

import sys
from pathlib import Path

import numpy as np

from mfgprice import MarketParams
from mfgprice.calibrate import MarketDataset, calibrate
from mfgprice.continuum import integrate_coefficients, simulate_price

path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "synthetic_market.csv"
dataset = MarketDataset.from_csv(path)
print(f"{dataset.n_days} days x {dataset.n_hours} hours from {path.name}")

report = calibrate(dataset, n_harmonics=4)
print(f"\nmean supply: constant {report.q_osc.constant:+.4f}")
for k, s, c in report.q_osc.terms:
    print(f"  k={k}: sin {s:+.4f}  cos {c:+.4f}")
ou = report.ou
print(f"mean reversion: theta {ou.theta:.2f}, q_bar {ou.q_bar:+.4f}, sigma {ou.sigma_s:.4f}")
fit = report.cost
print("price regression:", ", ".join(f"{k} {v:+.4f}" for k, v in fit.coeffs.items()))
print(f"  gamma identified: {fit.gamma_identified}; residual rms {fit.residual_rms:.3f}")
for note in fit.warnings:
    print(f"  note: {note}")

# simulate the calibrated market, using the fitted eta and c with a small terminal weight
eta, c = max(fit.coeffs["theta3"], 0.0), fit.coeffs["theta5"]
params = MarketParams(T=1.0, eta=eta, c=c, gamma=0.1)
model = report.supply_model()
table = integrate_coefficients(params, model)
scen = simulate_price(params, table, model, 0.0, report.q0, 23, seed=0, n_paths=200)
band = np.percentile(scen.price, [10, 50, 90], axis=0)
print("\nsimulated normalised price (10/50/90 percentiles) at hours 0, 6, 12, 18, 23:")
for hour in (0, 6, 12, 18, 23):
    print(f"  {hour:2d}h  {band[0, hour]:+.3f}  {band[1, hour]:+.3f}  {band[2, hour]:+.3f}")
