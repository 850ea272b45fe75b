"""Experiments combining the lattice game and the continuum limit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .continuum import (
    CoefficientTable,
    covariance_closed_form,
    integrate_coefficients,
    monte_carlo_covariance,
    simulate_price,
)
from .market import MarketParams
from .supply import NoiseLattice, build_lattice
from .tree import TreeProblem, mean_l2_distance, solve_lq, tree_price_paths, variable_count

__all__ = [
    "ConvergenceRow",
    "continuum_lattice_ensemble",
    "draw_initial_positions",
    "convergence_table",
    "covariance_table",
]


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    xbar0_gap: float
    mean_l2: float
    variables: int

    def as_tuple(self):
        return (self.N, self.xbar0_gap, self.mean_l2, self.variables)


def continuum_lattice_ensemble(params: MarketParams, table: CoefficientTable, supply, lattice: NoiseLattice, mu0: float):
    """Continuum scenarios driven by every lattice path.

    Returns the :class:`PriceScenario` over all ``2^M`` leaf paths. Paths
    that differ only in the last increment agree up to step ``M - 1``, so
    ``scenario.price[0::2, :M]`` enumerates the ``2^(M-1)`` distinct price
    trajectories in the same order as :func:`tree_price_paths`.
    """
    inc = lattice.path_increments(lattice.M)
    return simulate_price(params, table, supply, mu0, lattice.q0, lattice.M, increments=inc)


def draw_initial_positions(seed: int, n: int, sd: float = 0.1, mean: float = 0.0) -> np.ndarray:
    """``n`` normal draws; smaller populations use a prefix of the same draws."""
    return np.random.default_rng(seed).normal(mean, sd, n)


def convergence_table(
    params: MarketParams,
    supply,
    q0: float,
    M: int,
    N_list=(10, 30, 50),
    seed: int = 0,
    mu0: float = 0.0,
    x0_sd: float = 0.1,
    steps: int | None = None,
    method: str = "auto",
    table: CoefficientTable | None = None,
) -> list[ConvergenceRow]:
    """Distance between the ``N``-player and continuum prices on shared noise.

    For each ``N`` the initial positions are the first ``N`` of
    ``max(N_list)`` draws from ``Normal(mu0, x0_sd)``; the lattice game is
    solved exactly and compared with the continuum price simulated on the
    same ``+-sqrt(h)`` increments, up to step ``M - 1``.
    """
    N_list = [int(n) for n in N_list]
    if not N_list or min(N_list) < 1:
        raise ValueError("N_list must contain positive integers")
    lattice = build_lattice(supply, q0, M, params.T)
    if table is None:
        table = integrate_coefficients(params, supply, steps)
    ens = continuum_lattice_ensemble(params, table, supply, lattice, mu0)
    cont = ens.price[0::2, :M]
    draws = draw_initial_positions(seed, max(N_list), x0_sd, mu0)
    rows = []
    for N in N_list:
        x0 = draws[:N]
        sol = solve_lq(TreeProblem(lattice, x0, params), method=method)
        dist = mean_l2_distance(tree_price_paths(sol), cont, lattice.h)
        rows.append(ConvergenceRow(N, abs(float(np.mean(x0)) - mu0), dist, variable_count(N, M)))
    return rows


def covariance_table(
    params: MarketParams,
    supply,
    sigma_s: float,
    mu0: float,
    q0: float,
    times,
    n_paths: int = 100_000,
    steps: int | None = None,
    seed: int = 0,
    table: CoefficientTable | None = None,
):
    """Closed-form and Monte Carlo ``Cov(Q_t, price_t)`` side by side.

    Returns a dict of arrays ``t, closed_form, monte_carlo, stderr``. The
    closed form is ``nan`` where its branch condition fails.
    """
    times = np.asarray(times, dtype=float)
    if table is None:
        table = integrate_coefficients(params, supply, steps)
    try:
        closed = covariance_closed_form(params, sigma_s, times)
    except ValueError:
        closed = np.full(times.shape, np.nan)
    mc, se = monte_carlo_covariance(params, table, supply, mu0, q0, times, n_paths, steps, seed)
    return {"t": times, "closed_form": closed, "monte_carlo": mc, "stderr": se}
