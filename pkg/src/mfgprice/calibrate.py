"""Calibration of supply and cost parameters from hourly market data.

Pipeline:

1. supply is minus the observed demand; supply and price are standardised
   (zero mean, unit variance) and the transformation is recorded;
2. a truncated Fourier series ``Q_osc`` is fitted to the hour-of-day mean
   supply on ``t_k = k / (H - 1)``, ``k = 0 .. H - 1``;
3. the remainder ``Q - Q_osc`` is fitted by an Ornstein-Uhlenbeck model
   through the exact AR(1) transition, pooled over days;
4. the mean price curve is fitted to the deterministic LQ price with
   ``Q = Q_osc`` by linear least squares.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigError, EstimationError, RankDeficiencyError
from .market import MarketParams
from .supply import FourierSeries, OscillatoryOUModel, SupplyPath, recover_noise

__all__ = [
    "MarketDataset",
    "OUFit",
    "PriceFit",
    "CalibrationReport",
    "fit_fourier",
    "fit_fourier_mean",
    "fit_ou_mle",
    "deterministic_price",
    "fit_price_params",
    "calibrate",
    "synthetic_dataset",
]

INTEGRATION_STEP = 1e-3


@dataclass(frozen=True)
class MarketDataset:
    """Hourly demand and price, arranged as ``(days, hours)`` matrices.

    ``supply`` is minus the demand. ``normalization`` is empty for raw data
    and holds ``{"supply": {"offset", "scale"}, "price": {...}}`` after
    :meth:`normalized`; raw values are ``offset + scale * normalised``.
    """

    dates: tuple
    hours: np.ndarray
    supply: np.ndarray = field(repr=False)
    price: np.ndarray = field(repr=False)
    normalization: dict = field(default_factory=dict)

    @property
    def n_days(self) -> int:
        return self.supply.shape[0]

    @property
    def n_hours(self) -> int:
        return self.supply.shape[1]

    @property
    def times(self) -> np.ndarray:
        """Hours mapped onto ``[0, 1]``."""
        return np.arange(self.n_hours) / (self.n_hours - 1)

    @property
    def h(self) -> float:
        return 1.0 / (self.n_hours - 1)

    @classmethod
    def from_records(cls, records) -> "MarketDataset":
        """Build from ``(date, hour, demand, price)`` tuples; validates the grid."""
        by_date: dict = {}
        for date, hour, demand, price in records:
            by_date.setdefault(str(date), {})
            day = by_date[str(date)]
            hour = int(hour)
            if hour in day:
                raise ConfigError(f"duplicate hour {hour} on {date}", field="hour")
            day[hour] = (float(demand), float(price))
        if not by_date:
            raise ConfigError("no records", field="data")
        dates = tuple(sorted(by_date))
        hours = sorted(by_date[dates[0]])
        if len(hours) < 3:
            raise ConfigError("need at least three hours per day", field="hour")
        if hours != list(range(hours[0], hours[0] + len(hours))):
            raise ConfigError(f"hours of {dates[0]} are not a uniform hourly grid", field="hour")
        for d in dates:
            if sorted(by_date[d]) != hours:
                raise ConfigError(f"day {d} does not have the hourly grid {hours[0]}..{hours[-1]}", field="hour")
        demand = np.array([[by_date[d][hr][0] for hr in hours] for d in dates])
        price = np.array([[by_date[d][hr][1] for hr in hours] for d in dates])
        if not (np.all(np.isfinite(demand)) and np.all(np.isfinite(price))):
            raise ConfigError("non-finite demand or price", field="data")
        return cls(dates, np.array(hours), -demand, price)

    @classmethod
    def from_csv(cls, source) -> "MarketDataset":
        """Read ``date,hour,demand,price`` from a path or CSV text."""
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text()
        else:
            text = source
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["date", "hour", "demand", "price"]:
            raise ConfigError("expected the header date,hour,demand,price", field="csv")
        try:
            records = [(r["date"], r["hour"], r["demand"], r["price"]) for r in reader]
            return cls.from_records(records)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed row ({exc})", field="csv") from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["date", "hour", "demand", "price"])
        for i, d in enumerate(self.dates):
            for j, hr in enumerate(self.hours):
                writer.writerow([d, int(hr), repr(float(-self.supply[i, j])), repr(float(self.price[i, j]))])
        return buf.getvalue()

    def normalized(self) -> "MarketDataset":
        """Standardise supply and price over the whole sample."""
        if self.normalization:
            return self
        meta = {}
        out = {}
        for name in ("supply", "price"):
            x = getattr(self, name)
            offset, scale = float(x.mean()), float(x.std())
            if scale == 0.0:
                raise EstimationError(f"{name} has zero variance; cannot normalise")
            meta[name] = {"offset": offset, "scale": scale}
            out[name] = (x - offset) / scale
        return MarketDataset(self.dates, self.hours, out["supply"], out["price"], meta)


def fit_fourier(t, values, n_harmonics: int, period: float = 1.0) -> FourierSeries:
    """Least-squares fit of ``const + sum_k sin_k sin(2 pi k t) + cos_k cos(2 pi k t)``.

    Raises
    ------
    RankDeficiencyError
        If the design matrix does not have full column rank (for instance
        fewer than ``2 n_harmonics + 1`` distinct sample times).
    """
    if n_harmonics < 1:
        raise ConfigError("need at least one harmonic", field="n_harmonics")
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ConfigError("times and values must be 1-D arrays of equal length")
    cols = [np.ones_like(t)]
    for k in range(1, n_harmonics + 1):
        cols += [np.sin(2 * np.pi * k * t / period), np.cos(2 * np.pi * k * t / period)]
    A = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        raise RankDeficiencyError(f"Fourier design has rank {rank} < {A.shape[1]}")
    terms = tuple((k, float(coef[2 * k - 1]), float(coef[2 * k])) for k in range(1, n_harmonics + 1))
    return FourierSeries(float(coef[0]), terms, period)


def fit_fourier_mean(dataset: MarketDataset, n_harmonics: int = 4) -> FourierSeries:
    """Fourier fit of the hour-of-day mean supply."""
    return fit_fourier(dataset.times, dataset.supply.mean(axis=0), n_harmonics)


@dataclass(frozen=True)
class OUFit:
    theta: float
    q_bar: float
    sigma_s: float
    rho: float
    n_transitions: int

    def to_dict(self) -> dict:
        return {"theta": self.theta, "q_bar": self.q_bar, "sigma_s": self.sigma_s}


def fit_ou_mle(paths, h: float) -> OUFit:
    """Exact-transition maximum likelihood for ``dY = theta (q_bar - Y) dt + sigma dW``.

    The transition over a step ``h`` is the AR(1) recursion
    ``Y_{k+1} = q_bar + rho (Y_k - q_bar) + eps`` with ``rho = exp(-theta h)``
    and ``Var(eps) = sigma^2 (1 - rho^2) / (2 theta)``. Conditional on the
    first value of each path, the likelihood is maximised by least squares
    of ``Y_{k+1}`` on ``(1, Y_k)``; transitions from several paths (days)
    are pooled, none crossing a path boundary.

    Parameters
    ----------
    paths : array_like
        One path, or a 2-D array with one path per row.
    h : float
        Sampling step.
    """
    Y = np.atleast_2d(np.asarray(paths, dtype=float))
    if Y.shape[1] < 3:
        raise EstimationError("need at least three observations per path")
    if h <= 0:
        raise ConfigError("step must be positive", field="h")
    x = Y[:, :-1].ravel()
    y = Y[:, 1:].ravel()
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 1e-300 * max(1.0, n):
        raise EstimationError("sample has zero variance; mean reversion is not identifiable")
    rho = float(np.sum((x - xm) * (y - ym)) / sxx)
    if not 0.0 < rho < 1.0:
        raise EstimationError(f"autoregression coefficient {rho!r} outside (0, 1): no mean reversion")
    alpha = ym - rho * xm
    resid = y - alpha - rho * x
    var = float(np.mean(resid**2))
    theta = -math.log(rho) / h
    sigma = math.sqrt(var * 2.0 * theta / (1.0 - rho**2))
    return OUFit(theta, alpha / (1.0 - rho), sigma, rho, n)


def _integrals(Q, T: float, t, step: float = INTEGRATION_STEP):
    """``I(T) = int_0^T Q`` and ``J(t) = int_t^T int_0^s Q dr ds``.

    ``J(t) = (T - t) int_0^t Q + int_t^T (T - r) Q(r) dr``; each integral is a
    composite Simpson rule with an even number of panels of width at most
    ``step``.
    """

    def simpson_on(a, b, f):
        if b <= a:
            return 0.0
        n = max(2, int(math.ceil((b - a) / step)))
        n += n % 2
        r = np.linspace(a, b, n + 1)
        return float(simpson(f(r), x=r))

    Qv = lambda r: np.asarray(Q(r), dtype=float) * np.ones_like(r)  # noqa: E731
    total = simpson_on(0.0, T, Qv)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    J = np.array([(T - s) * simpson_on(0.0, s, Qv) + simpson_on(s, T, lambda r: (T - r) * Qv(r)) for s in t])
    return total, J


def deterministic_price(params: MarketParams, mu0: float, Q, t):
    """Price of the LQ market when the supply follows the deterministic curve ``Q``.

    ``price(t) = eta (kappa - mu0)(T - t) + gamma (zeta - mu0)
    - eta int_t^T int_0^s Q dr ds - gamma int_0^T Q - c Q(t)``.
    """
    t_arr = np.asarray(t, dtype=float)
    if callable(Q):
        Qf = Q
    else:
        q = float(Q)
        Qf = lambda r: q + 0.0 * np.asarray(r)  # noqa: E731
    T = params.T
    total, J = _integrals(Qf, T, t_arr.ravel())
    tt = t_arr.ravel()
    out = (
        params.eta * (params.kappa - mu0) * (T - tt)
        + params.gamma * (params.zeta - mu0)
        - params.eta * J
        - params.gamma * total
        - params.c * np.asarray(Qf(tt), dtype=float)
    )
    return out.reshape(t_arr.shape) if t_arr.ndim else float(out[0])


@dataclass(frozen=True)
class PriceFit:
    """Least-squares fit of the deterministic price.

    ``coeffs`` has keys ``theta1 .. theta5`` for ``eta (kappa - mu0)``,
    ``gamma (zeta - mu0)``, ``eta``, ``gamma`` and ``c``. The regressors of
    ``theta2`` and ``theta4`` are both constant in time, so the curve only
    determines ``constant = theta2 - gamma int_0^T Q``; unless ``gamma`` is
    supplied, the split is the minimum-norm one and ``gamma_identified`` is
    ``False``.
    """

    coeffs: dict
    constant: float
    gamma_identified: bool
    residual_rms: float
    params: MarketParams | None = None
    warnings: tuple = ()

    def to_dict(self) -> dict:
        out = {
            "coeffs": dict(self.coeffs),
            "constant": self.constant,
            "gamma_identified": self.gamma_identified,
            "residual_rms": self.residual_rms,
            "warnings": list(self.warnings),
        }
        if self.params is not None:
            out["params"] = self.params.to_dict()
        return out


def fit_price_params(t, price, Q, T: float = 1.0, mu0: float | None = None, gamma: float | None = None, tol: float = 1e-12) -> PriceFit:
    """Fit ``eta, c`` and the level terms of the deterministic price to samples.

    Parameters
    ----------
    t, price : array_like
        Sample times in ``[0, T]`` and mean prices (at least five).
    Q : callable
        Deterministic supply curve, typically the fitted ``Q_osc``.
    mu0 : float, optional
        Initial mean position; when given, ``kappa`` and ``zeta`` are
        back-solved and ``params`` is filled in where possible.
    gamma : float, optional
        Known terminal weight; it separates ``theta2`` from ``theta4``.

    Raises
    ------
    RankDeficiencyError
        If the identifiable regressors ``(T - t), 1, -J(t), -Q(t)`` are
        linearly dependent on the sample.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(price, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ConfigError("times and prices must be 1-D arrays of equal length")
    if t.size < 5:
        raise EstimationError("need at least five price samples")
    total, J = _integrals(Q, T, t)
    A = np.column_stack([T - t, np.ones_like(t), -J, -np.asarray(Q(t), dtype=float) * np.ones_like(t)])
    col_scale = np.maximum(np.abs(A).max(axis=0), 1e-300)
    coef, _, rank, sv = np.linalg.lstsq(A / col_scale, y, rcond=None)
    if rank < A.shape[1] or sv[-1] <= tol * sv[0]:
        raise RankDeficiencyError(f"price design has numerical rank {rank} < {A.shape[1]}")
    coef = coef / col_scale
    theta1, constant, eta, c = (float(v) for v in coef)
    if gamma is None:
        # minimum-norm split of constant = theta2 - theta4 * total
        theta2 = constant / (1.0 + total**2)
        theta4 = -constant * total / (1.0 + total**2)
        identified = False
    else:
        theta4 = float(gamma)
        theta2 = constant + theta4 * total
        identified = True
    resid = y - A @ coef
    coeffs = {"theta1": theta1, "theta2": theta2, "theta3": eta, "theta4": theta4, "theta5": c}
    warnings = []
    params = None
    if mu0 is not None:
        kappa = zeta = None
        if abs(eta) > 1e-10:
            kappa = theta1 / eta + mu0
        else:
            warnings.append("eta is numerically zero: kappa cannot be back-solved")
        if not identified:
            warnings.append("gamma is not identifiable from the mean price alone: zeta not back-solved")
        elif abs(theta4) > 1e-10:
            zeta = theta2 / theta4 + mu0
        else:
            warnings.append("gamma is numerically zero: zeta cannot be back-solved")
        if c <= 0 or eta < 0 or theta4 < 0:
            warnings.append("fitted weights violate c > 0, eta >= 0, gamma >= 0")
        elif kappa is not None and zeta is not None:
            params = MarketParams(T=T, eta=eta, c=c, gamma=theta4, kappa=kappa, zeta=zeta)
    return PriceFit(coeffs, constant, identified, float(np.sqrt(np.mean(resid**2))), params, tuple(warnings))


@dataclass(frozen=True)
class CalibrationReport:
    q_osc: FourierSeries
    ou: OUFit
    cost: PriceFit
    normalization: dict
    q0: float
    h: float
    dataset: MarketDataset = field(repr=False, default=None)

    def supply_model(self) -> OscillatoryOUModel:
        return OscillatoryOUModel(self.q_osc, self.ou.theta, self.ou.q_bar, self.ou.sigma_s)

    def recovered_noise(self) -> np.ndarray:
        """Brownian increments implied by each day's supply, shape ``(days, hours - 1)``."""
        model = self.supply_model()
        ds = self.dataset
        return np.array([recover_noise(model, SupplyPath(ds.times, ds.supply[i])) for i in range(ds.n_days)])

    def to_dict(self) -> dict:
        return {
            "q_osc": {
                "constant": self.q_osc.constant,
                "period": self.q_osc.period,
                "terms": [{"k": k, "sin": s, "cos": c} for k, s, c in self.q_osc.terms],
            },
            "ou": self.ou.to_dict(),
            "cost": self.cost.to_dict(),
            "normalization": self.normalization,
            "q0": self.q0,
            "h": self.h,
        }


def calibrate(dataset: MarketDataset, n_harmonics: int = 4, mu0: float | None = None, gamma: float | None = None) -> CalibrationReport:
    """Run the full calibration on standardised data."""
    ds = dataset.normalized()
    t = ds.times
    q_osc = fit_fourier_mean(ds, n_harmonics)
    remainder = ds.supply - q_osc(t)[None, :]
    ou = fit_ou_mle(remainder, ds.h)
    cost = fit_price_params(t, ds.price.mean(axis=0), q_osc, 1.0, mu0=mu0, gamma=gamma)
    q0 = float(q_osc(0.0) + remainder[:, 0].mean())
    return CalibrationReport(q_osc, ou, cost, ds.normalization, q0, ds.h, ds)


def synthetic_dataset(
    n_days: int = 22,
    n_hours: int = 24,
    seed: int = 0,
    q_osc: FourierSeries | None = None,
    theta: float = 30.0,
    q_bar: float = 0.0,
    sigma_s: float = 0.8,
    params: MarketParams | None = None,
    mu0: float = 0.0,
    price_noise: float = 0.05,
    demand_scale: float = 5000.0,
    demand_offset: float = 30000.0,
) -> MarketDataset:
    """Market data with known structure, for tests and demos.

    Supply is ``q_osc`` plus an exactly sampled OU process; price is the
    deterministic LQ price of ``q_osc`` plus Gaussian noise. Values are then
    mapped to demand in physical-looking units.
    """
    rng = np.random.default_rng(seed)
    if q_osc is None:
        q_osc = FourierSeries(0.0, ((1, 0.9, -0.6), (2, 0.3, 0.2), (3, -0.1, 0.05), (4, 0.04, -0.02)))
    if params is None:
        params = MarketParams(T=1.0, eta=0.5, c=0.5, gamma=0.2, kappa=1.0, zeta=-1.0)
    t = np.arange(n_hours) / (n_hours - 1)
    h = t[1]
    rho = math.exp(-theta * h)
    sd = sigma_s * math.sqrt((1 - rho**2) / (2 * theta))
    Y = np.empty((n_days, n_hours))
    Y[:, 0] = q_bar + sigma_s / math.sqrt(2 * theta) * rng.standard_normal(n_days)
    for k in range(n_hours - 1):
        Y[:, k + 1] = q_bar + rho * (Y[:, k] - q_bar) + sd * rng.standard_normal(n_days)
    supply = q_osc(t)[None, :] + Y
    base = deterministic_price(params, mu0, q_osc, t)
    price = base[None, :] + price_noise * rng.standard_normal((n_days, n_hours))
    dates = tuple(f"2022-03-{d + 1:02d}" for d in range(n_days))
    records = [
        (dates[i], k, demand_offset - demand_scale * supply[i, k], 100.0 + 20.0 * price[i, k])
        for i in range(n_days)
        for k in range(n_hours)
    ]
    return MarketDataset.from_records(records)
