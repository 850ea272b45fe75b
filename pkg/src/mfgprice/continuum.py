"""Continuum (mean-field) linear-quadratic price.

The value function of a representative agent is the quadratic polynomial

    u = a0 + a1_1 x + a1_2 xbar + a1_3 q + a1_4 w
          + a2_1 x^2 + a2_2 x xbar + a2_3 x q + a2_4 x w + a2_5 xbar^2
          + a2_6 xbar q + a2_7 xbar w + a2_8 q^2 + a2_9 q w + a2_10 w^2

whose fifteen time-dependent coefficients solve a backward ODE system. The
price then follows an SDE whose drift is ``eta (xbar - kappa) - c b_S`` and
whose volatility is ``-(a2_3 + c) / (a2_4 + 1) * s_S``.

The system is implemented for any supply with affine coefficients
``b_S = b1(t) q + b0(t)``, ``s_S = s1(t) q + s0(t)``; the unit-speed
mean-reverting supply ``dQ = (Qbar(t) - Q) dt + sigma dW`` is the case
``b1 = -1, b0 = Qbar, s1 = 0, s0 = sigma``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConfigError, DomainError, SingularityError
from .market import MarketParams, lq_hamiltonian
from .supply import LinearSupplyModel, draw_increments, euler_paths, mean_reverting

__all__ = [
    "COEFFICIENT_NAMES",
    "CoefficientTable",
    "PriceScenario",
    "AdjointCheck",
    "coefficient_rhs",
    "integrate_coefficients",
    "integrate_a2_subsystem",
    "closed_form_a2",
    "price_coefficients",
    "balance_price",
    "initial_price",
    "simulate_price",
    "covariance_closed_form",
    "monte_carlo_covariance",
    "verify_price_adjoint",
    "value_function",
    "hjb_residual",
]

COEFFICIENT_NAMES = (
    "a0",
    "a1_1", "a1_2", "a1_3", "a1_4",
    "a2_1", "a2_2", "a2_3", "a2_4", "a2_5", "a2_6", "a2_7", "a2_8", "a2_9", "a2_10",
)  # fmt: skip

# positions in the 15-vector
A0 = 0
A11, A12, A13, A14 = 1, 2, 3, 4
A21, A22, A23, A24, A25, A26, A27, A28, A29, A210 = range(5, 15)

SINGULAR_TOL = 1e-10
DEFAULT_RELATIVE_STEP = 1e-3


def _supply_model(supply, sigma_s) -> LinearSupplyModel:
    if hasattr(supply, "to_linear"):
        return supply.to_linear()
    if callable(supply):
        if sigma_s is None:
            raise ConfigError("sigma_s is required when the supply is given as a mean-reversion target")
        return mean_reverting(supply, sigma_s)
    raise ConfigError(f"unsupported supply specification {supply!r}")


def _coeffs_at(model: LinearSupplyModel, t: float):
    return float(model.b1(t)), float(model.b0(t)), float(model.s1(t)), float(model.s0(t))


def coefficient_rhs(params: MarketParams, b1, b0, s1, s0, a: np.ndarray) -> np.ndarray:
    """Time derivative of the fifteen coefficients.

    ``b1, b0, s1, s0`` are the supply coefficients at the current time.
    ``a`` may carry extra trailing dimensions.
    """
    eta, c, kap = params.eta, params.c, params.kappa
    (a0, a11, a12, a13, a14, a21, a22, a23, a24, a25, a26, a27, a28, a29, a210) = a
    B = a24 + 1.0
    R = (a23 + c) / B
    d = np.empty_like(a)
    d[A0] = (
        -(R**2) * a210 * s0**2 + R * a29 * s0**2 + a11**2 / (2 * c) - a13 * b0 + a14 * b0 * c
        - a28 * s0**2 + eta * (a14 * kap - kap**2 / 2)
    )  # fmt: skip
    d[A11] = 2 * a11 * a21 / c - a23 * b0 + a24 * b0 * c + eta * kap * B
    d[A12] = a11 * a22 / c - a26 * b0 + a27 * b0 * c + eta * (a27 * kap - a14)
    d[A13] = (
        -2 * R**2 * a210 * s0 * s1 + 2 * R * a29 * s0 * s1 + a11 * a23 / c - a12 - a13 * b1
        - 2 * a28 * b0 - 2 * a28 * s0 * s1 + a29 * eta * kap + c * (a14 * b1 + a29 * b0)
    )  # fmt: skip
    d[A14] = 2 * a210 * b0 * c + 2 * a210 * eta * kap - a29 * b0 + a11 * B / c
    d[A21], d[A22], d[A23], d[A24] = _a2_rhs(params, b1, a21, a22, a23, a24)
    d[A25] = a22**2 / (2 * c) - eta * a27
    d[A26] = a22 * a23 / c - 2 * a25 - a26 * b1 + a27 * b1 * c - eta * a29
    d[A27] = a22 * B / c - 2 * eta * a210
    d[A28] = -(R**2) * a210 * s1**2 + R * a29 * s1**2 + a23**2 / (2 * c) - a26 - 2 * a28 * b1 - a28 * s1**2 + a29 * b1 * c
    d[A29] = 2 * a210 * b1 * c - a27 - a29 * b1 + a23 * B / c
    d[A210] = B**2 / (2 * c)
    return d


def _a2_rhs(params, b1, a21, a22, a23, a24):
    eta, c = params.eta, params.c
    return (
        2 * a21**2 / c - eta / 2,
        2 * a21 * a22 / c - eta * a24,
        2 * a21 * a23 / c - a22 - a23 * b1 + a24 * b1 * c,
        2 * a21 * (a24 + 1) / c,
    )


def terminal_values(params: MarketParams) -> np.ndarray:
    a = np.zeros(15)
    a[A0] = params.gamma * params.zeta**2 / 2
    a[A11] = -params.gamma * params.zeta
    a[A21] = params.gamma / 2
    return a


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients on an ascending uniform grid over ``[0, T]``.

    ``values`` has shape ``(15, n + 1)`` in the order of ``COEFFICIENT_NAMES``.
    """

    t: np.ndarray
    values: np.ndarray = field(repr=False)
    params: MarketParams | None = None

    @property
    def a0(self) -> np.ndarray:
        return self.values[A0]

    @property
    def a1(self) -> np.ndarray:
        return self.values[A11 : A14 + 1]

    @property
    def a2(self) -> np.ndarray:
        return self.values[A21 : A210 + 1]

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[COEFFICIENT_NAMES.index(name)]

    def at(self, t):
        """Linearly interpolated coefficients at time(s) ``t``, shape ``(15,) + shape(t)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] + 1e-12):
            raise DomainError(f"time outside the table range [{self.t[0]}, {self.t[-1]}]")
        pos = np.clip((t - self.t[0]) / self.step, 0.0, len(self.t) - 1)
        i = np.minimum(np.floor(pos).astype(int), len(self.t) - 2)
        frac = pos - i
        return self.values[:, i] * (1.0 - frac) + self.values[:, i + 1] * frac

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("t",) + COEFFICIENT_NAMES)
        for k in range(len(self.t)):
            writer.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.values[:, k]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, params: MarketParams | None = None) -> "CoefficientTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if tuple(rows[0]) != ("t",) + COEFFICIENT_NAMES:
            raise ConfigError("unexpected coefficient table header")
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        return cls(data[:, 0].copy(), data[:, 1:].T.copy(), params)


def integrate_coefficients(
    params: MarketParams,
    supply,
    steps: int | None = None,
    *,
    sigma_s: float | None = None,
) -> CoefficientTable:
    """Backward fixed-step RK4 for the fifteen coefficient functions.

    Parameters
    ----------
    params : MarketParams
    supply : LinearSupplyModel, OscillatoryOUModel or callable
        Supply dynamics. A bare callable is read as the target ``Qbar(t)`` of
        the unit-speed mean-reverting supply, and then ``sigma_s`` is required.
    steps : int, optional
        Number of RK4 steps on ``[0, T]``; defaults to 1000 (step ``1e-3 T``).

    Raises
    ------
    SingularityError
        If ``a2_4 + 1`` drops below ``1e-10`` at some node.
    BlowUpError
        If the state becomes non-finite.
    """
    model = _supply_model(supply, sigma_s)
    steps = int(round(1.0 / DEFAULT_RELATIVE_STEP)) if steps is None else int(steps)
    if steps < 100:
        raise ConfigError("at least 100 integration steps are required", field="steps")
    T = params.T
    dt = T / steps
    out = np.empty((15, steps + 1))
    a = terminal_values(params)
    out[:, steps] = a
    for n in range(steps, 0, -1):
        t = n * dt
        th = t - 0.5 * dt
        t1 = (n - 1) * dt
        k1 = coefficient_rhs(params, *_coeffs_at(model, t), a)
        k2 = coefficient_rhs(params, *_coeffs_at(model, th), a - 0.5 * dt * k1)
        k3 = coefficient_rhs(params, *_coeffs_at(model, th), a - 0.5 * dt * k2)
        k4 = coefficient_rhs(params, *_coeffs_at(model, t1), a - dt * k3)
        a = a - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(a)):
            raise BlowUpError(f"coefficients became non-finite at t={t1!r}", time=t1)
        if a[A24] + 1.0 <= SINGULAR_TOL:
            raise SingularityError(f"a2_4 + 1 = {a[A24] + 1.0!r} at t={t1!r}", time=t1)
        out[:, n - 1] = a
    grid = dt * np.arange(steps + 1)
    grid[-1] = T
    return CoefficientTable(grid, out, params)


def integrate_a2_subsystem(params: MarketParams, supply, steps: int | None = None, *, sigma_s=None) -> np.ndarray:
    """RK4 on the closed four-equation system for ``a2_1 .. a2_4`` alone.

    Returns an array of shape ``(4, steps + 1)`` on the ascending grid.
    """
    model = _supply_model(supply, sigma_s)
    steps = int(round(1.0 / DEFAULT_RELATIVE_STEP)) if steps is None else int(steps)
    dt = params.T / steps
    out = np.empty((4, steps + 1))
    a = np.array([params.gamma / 2, 0.0, 0.0, 0.0])
    out[:, steps] = a

    def f(t, y):
        return np.array(_a2_rhs(params, float(model.b1(t)), *y))

    for n in range(steps, 0, -1):
        t = n * dt
        k1 = f(t, a)
        k2 = f(t - 0.5 * dt, a - 0.5 * dt * k1)
        k3 = f(t - 0.5 * dt, a - 0.5 * dt * k2)
        k4 = f((n - 1) * dt, a - dt * k3)
        a = a - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, n - 1] = a
    return out


def closed_form_a2(params: MarketParams, t):
    """Analytic ``(a2_1, a2_2, a2_3, a2_4)`` for the unit-speed mean-reverting supply.

    Two branches exist: ``eta = 0``, and ``eta > 0`` with ``c eta - gamma**2 > 0``.
    Outside them use :func:`integrate_coefficients`.
    """
    eta, c, g, T = params.eta, params.c, params.gamma, params.T
    t = np.asarray(t, dtype=float)
    tau = T - t
    e = np.exp(-tau)
    if eta == 0.0:
        den = c + g * tau
        a21 = c * g / (2 * den)
        a24 = -g * tau / den
        a22 = np.zeros_like(t)
        a23 = -c * g * (tau - 1 + e) / den
        return a21, a22, a23, a24
    disc = c * eta - g * g
    if disc <= 0.0:
        raise DomainError(
            f"no closed form for eta>0 with c*eta - gamma**2 = {disc!r} <= 0; use integrate_coefficients"
        )
    r = math.sqrt(eta / c)
    root = math.sqrt(c * eta)
    phase = math.atanh(g / root)
    a21 = root / 2 * np.tanh(phase + r * tau)
    B = math.sqrt(c * eta / disc) / np.cosh(phase + r * tau)
    a24 = B - 1
    a22 = (-root * np.sinh(r * tau) + eta * tau + g - g * np.cosh(r * tau)) * B
    a23 = (g * (1 - e) + c + eta * (tau - 1 + e) - math.sqrt(c / eta) * g * np.sinh(r * tau) - c * np.cosh(r * tau)) * B
    return a21, a22, a23, a24


def _denominator(a24, t):
    den = np.asarray(a24 + 1.0)
    if np.any(den <= SINGULAR_TOL):
        raise SingularityError(f"a2_4 + 1 below {SINGULAR_TOL} at t={t!r}", time=t)
    return den


def price_coefficients(params: MarketParams, table: CoefficientTable, supply, t, xbar, q, *, sigma_s=None):
    """Drift and volatility of the continuum price at ``(t, xbar, q)``."""
    model = _supply_model(supply, sigma_s)
    a = table.at(t)
    den = _denominator(a[A24], t)
    drift = params.eta * (np.asarray(xbar) - params.kappa) - params.c * model.drift(q, t)
    vol = -(a[A23] + params.c) / den * model.vol(q, t)
    return drift, vol


def balance_price(params: MarketParams, table: CoefficientTable, t, xbar, q):
    """Price at which the mean optimal trading rate equals the supply ``q``.

    This is the market-clearing relation solved for the price; at ``t = 0``
    with ``xbar = mu0`` it is the initial price.
    """
    a = table.at(t)
    den = _denominator(a[A24], t)
    return -(np.asarray(xbar) * (2 * a[A21] + a[A22]) + np.asarray(q) * (a[A23] + params.c) + a[A11]) / den


def initial_price(params: MarketParams, table: CoefficientTable, mu0: float, q0: float) -> float:
    return float(balance_price(params, table, 0.0, mu0, q0))


@dataclass(frozen=True)
class PriceScenario:
    """Joint Euler path of mean position, supply and price.

    Arrays have shape ``(M + 1,)`` for one scenario or ``(n, M + 1)`` for an
    ensemble; ``increments`` has one column fewer.
    """

    t: np.ndarray
    xbar: np.ndarray
    q: np.ndarray
    price: np.ndarray
    w0: float
    increments: np.ndarray
    seed: int | None = None

    @property
    def n_paths(self) -> int:
        return 1 if self.price.ndim == 1 else self.price.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if self.price.ndim == 1:
            writer.writerow(["t", "Xbar", "Q", "price"])
            for k in range(len(self.t)):
                writer.writerow([repr(float(v)) for v in (self.t[k], self.xbar[k], self.q[k], self.price[k])])
        else:
            writer.writerow(["scenario", "t", "Xbar", "Q", "price"])
            for k in range(len(self.t)):
                for s in range(self.n_paths):
                    row = (self.t[k], self.xbar[s, k], self.q[s, k], self.price[s, k])
                    writer.writerow([s] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PriceScenario":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows[0] != ["t", "Xbar", "Q", "price"]:
            raise ConfigError("expected a single-scenario CSV with columns t,Xbar,Q,price")
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], float(data[0, 3]), np.empty(0))


def simulate_price(
    params: MarketParams,
    table: CoefficientTable,
    supply,
    mu0: float,
    q0: float,
    M: int,
    seed: int | None = 0,
    increments=None,
    noise_kind: str = "gaussian",
    n_paths: int = 1,
    *,
    sigma_s=None,
) -> PriceScenario:
    """Euler scheme for ``(Xbar, Q, price)`` on ``t_k = k T / M``.

    Increments come from ``increments`` (shape ``(M,)`` or ``(n, M)``) when
    given, e.g. to share noise with a lattice or with data; otherwise scenario
    ``i`` uses the stream keyed by ``(seed, i)``.
    """
    model = _supply_model(supply, sigma_s)
    T = params.T
    h = T / M
    if increments is None:
        inc = draw_increments(M, h, seed, n_paths, noise_kind)
        single = n_paths == 1
    else:
        inc = np.asarray(increments, dtype=float)
        single = inc.ndim == 1
        seed = None
    inc = np.atleast_2d(inc)
    if inc.shape[1] != M:
        raise ConfigError(f"expected {M} increments per path, got {inc.shape[1]}")
    t = h * np.arange(M + 1)
    q = euler_paths(model, q0, T, inc)
    q = np.atleast_2d(q)
    n = inc.shape[0]
    xbar = np.empty((n, M + 1))
    price = np.empty((n, M + 1))
    xbar[:, 0] = mu0
    w0 = initial_price(params, table, mu0, q0)
    price[:, 0] = w0
    coeffs = table.at(t)
    den = _denominator(coeffs[A24], t)
    ratio = (coeffs[A23] + params.c) / den
    for k in range(M):
        xbar[:, k + 1] = xbar[:, k] + h * q[:, k]
        drift = params.eta * (xbar[:, k] - params.kappa) - params.c * model.drift(q[:, k], t[k])
        vol = -ratio[k] * model.vol(q[:, k], t[k])
        price[:, k + 1] = price[:, k] + drift * h + vol * inc[:, k]
    if single:
        return PriceScenario(t, xbar[0], q[0], price[0], w0, inc[0], seed)
    return PriceScenario(t, xbar, q, price, w0, inc, seed)


def covariance_closed_form(params: MarketParams, sigma_s: float, t):
    """``Cov(Q_t, price_t)`` for the unit-speed mean-reverting supply.

    Same branch conditions as :func:`closed_form_a2`. Independent of the
    target ``Qbar`` because the price responds linearly to the supply.
    """
    eta, c, g, T = params.eta, params.c, params.gamma, params.T
    if eta > 0.0 and c * eta - g * g <= 0.0:
        raise DomainError("covariance closed form requires eta = 0 or c*eta - gamma**2 > 0")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T + 1e-12):
        raise DomainError("t must lie in [0, T]")
    et, eT = np.exp(t), np.exp(T)
    bracket = c * (et + 1) * eT - g * et * (et - 2 * eT + 1)
    bracket = bracket + eta * (np.exp(t + T) * (2 * (T - t) - 1) + et + np.exp(2 * t) - eT)
    return -(sigma_s**2) / 2 * (et - 1) * np.exp(-2 * t - T) * bracket


def monte_carlo_covariance(
    params: MarketParams,
    table: CoefficientTable,
    supply,
    mu0: float,
    q0: float,
    times,
    n_paths: int = 100_000,
    steps: int | None = None,
    seed: int = 0,
    chunk: int = 10_000,
    *,
    sigma_s=None,
):
    """Monte Carlo estimate of ``Cov(Q_t, price_t)`` with Gaussian Euler paths.

    Returns ``(cov, stderr)`` at each requested time (times are snapped to
    the simulation grid). Paths are simulated in chunks; only the requested
    time slices are kept.
    """
    model = _supply_model(supply, sigma_s)
    T = params.T
    steps = int(round(1.0 / DEFAULT_RELATIVE_STEP)) if steps is None else int(steps)
    h = T / steps
    idx = np.rint(np.asarray(times, dtype=float) / h).astype(int)
    t = h * np.arange(steps + 1)
    coeffs = table.at(t)
    ratio = (coeffs[A23] + params.c) / _denominator(coeffs[A24], t)
    w0 = initial_price(params, table, mu0, q0)
    b1 = np.array([float(model.b1(s)) for s in t])
    b0 = np.array([float(model.b0(s)) for s in t])
    s1 = np.array([float(model.s1(s)) for s in t])
    s0 = np.array([float(model.s0(s)) for s in t])
    qs = np.empty((len(idx), n_paths))
    ps = np.empty((len(idx), n_paths))
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        inc = draw_increments(steps, h, seed, m, "gaussian", start=done)
        q = np.full(m, float(q0))
        xbar = np.full(m, float(mu0))
        p = np.full(m, w0)
        for k in range(steps + 1):
            hits = np.flatnonzero(idx == k)
            for r in hits:
                qs[r, done : done + m] = q
                ps[r, done : done + m] = p
            if k == steps:
                break
            bS = b1[k] * q + b0[k]
            sS = s1[k] * q + s0[k]
            dW = inc[:, k]
            p = p + (params.eta * (xbar - params.kappa) - params.c * bS) * h - ratio[k] * sS * dW
            xbar = xbar + h * q
            q = q + bS * h + sS * dW
        done += m
    dq = qs - qs.mean(axis=1, keepdims=True)
    dp = ps - ps.mean(axis=1, keepdims=True)
    prod = dq * dp
    cov = prod.sum(axis=1) / (n_paths - 1)
    stderr = prod.std(axis=1, ddof=1) / math.sqrt(n_paths)
    return cov, stderr


@dataclass(frozen=True)
class AdjointCheck:
    max_standardized_residual: float
    mean_residual: np.ndarray
    standard_error: np.ndarray
    n_paths: int


def verify_price_adjoint(params: MarketParams, scenario: PriceScenario) -> AdjointCheck:
    """Check that ``price + c Q`` drifts at rate ``eta (Xbar - kappa)``.

    Along the exact dynamics ``d(price + c Q) = eta (Xbar - kappa) dt`` plus a
    martingale increment, so the per-step residual
    ``Delta(price + c Q) - h eta (Xbar - kappa)`` has zero mean. The ensemble
    mean of the residual at each step is standardised by its Monte Carlo
    standard error; steps with zero spread count as 0 when the mean is 0 and
    infinity otherwise.
    """
    price = np.atleast_2d(scenario.price)
    q = np.atleast_2d(scenario.q)
    xbar = np.atleast_2d(scenario.xbar)
    h = float(scenario.t[1] - scenario.t[0])
    y = price + params.c * q
    resid = np.diff(y, axis=1) - h * params.eta * (xbar[:, :-1] - params.kappa)
    n = resid.shape[0]
    mean = resid.mean(axis=0)
    se = resid.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    scale = np.maximum(1.0, np.abs(y).max())
    exact_zero = np.abs(mean) <= 1e-13 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0), np.where(exact_zero, 0.0, np.inf))
    z = np.where(exact_zero & (se == 0), 0.0, z)
    return AdjointCheck(float(z.max()) if z.size else 0.0, mean, se, n)


def _derivatives(values, x, xbar, q, w):
    a = values
    u = (
        a[A0] + a[A11] * x + a[A12] * xbar + a[A13] * q + a[A14] * w
        + a[A21] * x * x + a[A22] * x * xbar + a[A23] * x * q + a[A24] * x * w + a[A25] * xbar * xbar
        + a[A26] * xbar * q + a[A27] * xbar * w + a[A28] * q * q + a[A29] * q * w + a[A210] * w * w
    )  # fmt: skip
    u_x = a[A11] + 2 * a[A21] * x + a[A22] * xbar + a[A23] * q + a[A24] * w
    u_xbar = a[A12] + a[A22] * x + 2 * a[A25] * xbar + a[A26] * q + a[A27] * w
    u_q = a[A13] + a[A23] * x + a[A26] * xbar + 2 * a[A28] * q + a[A29] * w
    u_w = a[A14] + a[A24] * x + a[A27] * xbar + a[A29] * q + 2 * a[A210] * w
    return u, u_x, u_xbar, u_q, u_w, 2 * a[A28], a[A29], 2 * a[A210]


def value_function(table: CoefficientTable, x, xbar, q, w, t):
    """Evaluate the quadratic value function at interpolated time ``t``."""
    return _derivatives(table.at(t), x, xbar, q, w)[0]


def hjb_residual(params: MarketParams, table: CoefficientTable, supply, x, xbar, q, w, node, *, sigma_s=None):
    """Residual of the Hamilton-Jacobi-Bellman equation at grid node(s) ``node``.

    The time derivative is a fourth-order central difference of the table
    (so ``node`` must be at least two nodes from either end); space
    derivatives are exact for the quadratic polynomial.
    """
    model = _supply_model(supply, sigma_s)
    node = np.asarray(node, dtype=int)
    if np.any(node < 2) or np.any(node > len(table.t) - 3):
        raise DomainError("hjb_residual needs two grid nodes on each side")
    V = table.values
    dt = table.step
    a_t = (-V[:, node + 2] + 8 * V[:, node + 1] - 8 * V[:, node - 1] + V[:, node - 2]) / (12 * dt)
    t = table.t[node]
    a = V[:, node]
    _, u_x, u_xbar, u_q, u_w, u_qq, u_qw, u_ww = _derivatives(a, x, xbar, q, w)
    u_t = _derivatives(a_t, x, xbar, q, w)[0]
    bS = model.drift(q, t)
    sS = model.vol(q, t)
    bP = params.eta * (xbar - params.kappa) - params.c * bS
    sP = -(a[A23] + params.c) / (a[A24] + 1) * sS
    lhs = -u_t + lq_hamiltonian(params, x, w + u_x)
    rhs = q * u_xbar + bS * u_q + bP * u_w + 0.5 * sS**2 * u_qq + sS * sP * u_qw + 0.5 * sP**2 * u_ww
    return lhs - rhs
