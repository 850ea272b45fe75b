"""Market-clearing prices for a commodity with stochastic supply.

Two views of the same market are provided:

* a finite population of ``N`` agents on a binomial noise lattice, where the
  price is the Lagrange multiplier of the per-node balance constraint
  (:mod:`mfgprice.tree`);
* the continuum linear-quadratic limit, where the price solves an SDE whose
  coefficients come from a backward ODE system (:mod:`mfgprice.continuum`).

:mod:`mfgprice.calibrate` fits supply and cost parameters to hourly market
data and :mod:`mfgprice.cli` wires everything into reproducible runs.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BlowUpError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    DomainError,
    EstimationError,
    PriceModelError,
    RankDeficiencyError,
    SingularityError,
)
from .market import CostModel, MarketParams, convexity_probe, lq_cost, lq_hamiltonian, lq_optimal_velocity  # noqa: F401
from .supply import (  # noqa: F401
    FourierSeries,
    LinearSupplyModel,
    NoiseLattice,
    OscillatoryOUModel,
    SupplyPath,
    build_lattice,
    euler_simulate,
    mean_reverting,
    recover_noise,
)
