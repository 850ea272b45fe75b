"""Supply processes: coefficient functions, Euler simulation, binomial lattice.

The supply follows a scalar SDE with coefficients that are affine in the
supply level,

    dQ = (b1(t) Q + b0(t)) dt + (s1(t) Q + s0(t)) dW,

discretised by forward Euler on the uniform grid ``t_k = k h``, ``h = T / M``.
Lattice nodes are stored flat in heap order: node ``(j, k)`` (1-based ``j``,
level ``k``) sits at index ``2**k - 1 + (j - 1)`` and its children are
``2n + 1`` (increment ``+sqrt(h)``) and ``2n + 2`` (increment ``-sqrt(h)``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CapacityError, ConfigError, DomainError

__all__ = [
    "Constant",
    "FourierSeries",
    "PiecewiseLinear",
    "function_to_json",
    "function_from_json",
    "LinearSupplyModel",
    "OscillatoryOUModel",
    "mean_reverting",
    "supply_from_json",
    "SupplyPath",
    "NoiseLattice",
    "MAX_LATTICE_STEPS",
    "scenario_rng",
    "draw_increments",
    "euler_simulate",
    "euler_paths",
    "build_lattice",
    "recover_noise",
]

MAX_LATTICE_STEPS = 22


# ---------------------------------------------------------------------------
# coefficient functions of time
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, float(self.value)) if t.ndim else float(self.value)

    def derivative(self) -> "Constant":
        return Constant(0.0)


@dataclass(frozen=True)
class FourierSeries:
    """``constant + sum_k sin_k sin(2 pi k t / period) + cos_k cos(2 pi k t / period)``.

    ``terms`` is a sequence of ``(k, sin_coeff, cos_coeff)`` triples.
    """

    constant: float = 0.0
    terms: tuple = ()
    period: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((int(k), float(s), float(c)) for k, s, c in self.terms))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.constant))
        for k, s, c in self.terms:
            arg = 2.0 * np.pi * k * t / self.period
            out = out + s * np.sin(arg) + c * np.cos(arg)
        return out if out.ndim else float(out)

    def derivative(self) -> "FourierSeries":
        terms = []
        for k, s, c in self.terms:
            omega = 2.0 * np.pi * k / self.period
            terms.append((k, -omega * c, omega * s))
        return FourierSeries(0.0, tuple(terms), self.period)

    def scaled(self, factor: float, shift: float = 0.0) -> "FourierSeries":
        """``factor * self + shift``."""
        terms = tuple((k, factor * s, factor * c) for k, s, c in self.terms)
        return FourierSeries(factor * self.constant + shift, terms, self.period)

    def __add__(self, other: "FourierSeries") -> "FourierSeries":
        if not isinstance(other, FourierSeries) or other.period != self.period:
            return NotImplemented
        coeffs: dict[int, list[float]] = {}
        for k, s, c in self.terms + other.terms:
            entry = coeffs.setdefault(k, [0.0, 0.0])
            entry[0] += s
            entry[1] += c
        terms = tuple((k, s, c) for k, (s, c) in sorted(coeffs.items()))
        return FourierSeries(self.constant + other.constant, terms, self.period)


@dataclass(frozen=True)
class PiecewiseLinear:
    """Linear interpolation of tabulated values, constant beyond the ends."""

    t: tuple
    values: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.t)
        v = tuple(float(x) for x in self.values)
        if len(t) != len(v) or len(t) == 0:
            raise ConfigError("t and values must be non-empty and of equal length")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError("t must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        out = np.interp(np.asarray(t, dtype=float), self.t, self.values)
        return out if np.ndim(out) else float(out)


def function_to_json(fn, grid=None):
    """Serialise a coefficient function.

    Known function types serialise exactly; any other callable is sampled on
    ``grid`` and stored as a piecewise-linear table.
    """
    if isinstance(fn, (int, float)):
        return float(fn)
    if isinstance(fn, Constant):
        return float(fn.value)
    if isinstance(fn, FourierSeries):
        return {
            "fourier": {
                "constant": fn.constant,
                "period": fn.period,
                "terms": [{"k": k, "sin": s, "cos": c} for k, s, c in fn.terms],
            }
        }
    if isinstance(fn, PiecewiseLinear):
        return {"table": {"t": list(fn.t), "values": list(fn.values)}}
    if grid is None:
        raise ConfigError(f"cannot serialise {fn!r} without a sampling grid")
    grid = np.asarray(grid, dtype=float)
    return {"table": {"t": grid.tolist(), "values": np.asarray(fn(grid), dtype=float).tolist()}}


def function_from_json(spec, field_name: str = "function"):
    if isinstance(spec, bool):
        raise ConfigError("expected a number or function object", field=field_name)
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("expected a number, {'fourier': ...} or {'table': ...}", field=field_name)
    kind, body = next(iter(spec.items()))
    if kind == "fourier":
        try:
            terms = tuple((r["k"], r.get("sin", 0.0), r.get("cos", 0.0)) for r in body.get("terms", []))
            return FourierSeries(float(body.get("constant", 0.0)), terms, float(body.get("period", 1.0)))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"malformed Fourier series ({exc})", field=f"{field_name}.fourier") from None
    if kind == "table":
        try:
            return PiecewiseLinear(tuple(body["t"]), tuple(body["values"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed table ({exc})", field=f"{field_name}.table") from None
    raise ConfigError(f"unknown function kind {kind!r}", field=field_name)


def _as_function(fn):
    if callable(fn):
        return fn
    return Constant(float(fn))


# ---------------------------------------------------------------------------
# supply models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSupplyModel:
    """Supply with drift ``b1(t) q + b0(t)`` and volatility ``s1(t) q + s0(t)``.

    Each coefficient may be given as a number or as a callable of time.
    """

    b1: Callable = 0.0
    b0: Callable = 0.0
    s1: Callable = 0.0
    s0: Callable = 0.0

    def __post_init__(self):
        for name in ("b1", "b0", "s1", "s0"):
            object.__setattr__(self, name, _as_function(getattr(self, name)))

    def drift(self, q, t):
        return self.b1(t) * q + self.b0(t)

    def vol(self, q, t):
        return self.s1(t) * q + self.s0(t)

    def to_linear(self) -> "LinearSupplyModel":
        return self

    def to_dict(self, grid=None) -> dict:
        return {
            "kind": "linear",
            **{name: function_to_json(getattr(self, name), grid) for name in ("b1", "b0", "s1", "s0")},
        }


def mean_reverting(target, sigma_s: float, speed: float = 1.0) -> LinearSupplyModel:
    """``dQ = speed (target(t) - Q) dt + sigma_s dW`` as a linear model."""
    target = _as_function(target)
    if isinstance(target, (Constant, FourierSeries)):
        b0 = target.scaled(speed) if isinstance(target, FourierSeries) else Constant(speed * target.value)
    else:
        b0 = lambda t: speed * target(t)  # noqa: E731
    return LinearSupplyModel(b1=-float(speed), b0=b0, s1=0.0, s0=float(sigma_s))


@dataclass(frozen=True)
class OscillatoryOUModel:
    """Deterministic oscillation plus a mean-reverting component.

    ``Q_t = Q_osc(t) + Q^W_t`` with ``dQ^W = theta (q_bar - Q^W) dt + sigma_s dW``.
    """

    fourier: FourierSeries
    theta: float
    q_bar: float
    sigma_s: float

    def __post_init__(self):
        if self.theta < 0:
            raise ConfigError("mean-reversion speed must be non-negative", field="theta")
        if self.sigma_s < 0:
            raise ConfigError("volatility must be non-negative", field="sigma_s")

    def oscillation(self, t):
        return self.fourier(t)

    def drift(self, q, t):
        # evaluated through the decomposition, not through b1/b0
        q_w = q - self.fourier(t)
        return self.fourier.derivative()(t) + self.theta * (self.q_bar - q_w)

    def vol(self, q, t):
        return 0.0 * q + self.sigma_s

    def to_linear(self) -> LinearSupplyModel:
        # d(Q_osc + Q^W) = Q_osc' dt + theta (q_bar - (Q - Q_osc)) dt + sigma dW
        b0 = self.fourier.derivative() + self.fourier.scaled(self.theta, self.theta * self.q_bar)
        return LinearSupplyModel(b1=-self.theta, b0=b0, s1=0.0, s0=self.sigma_s)

    def to_dict(self) -> dict:
        return {
            "kind": "oscillatory_ou",
            "fourier": function_to_json(self.fourier)["fourier"],
            "theta": self.theta,
            "q_bar": self.q_bar,
            "sigma_s": self.sigma_s,
        }


def supply_from_json(spec: dict, prefix: str = "supply"):
    """Build a supply model from its JSON description.

    Accepted kinds: ``linear`` (keys ``b1, b0, s1, s0``), ``mean_reverting``
    (``target``, ``sigma_s``, optional ``speed``) and ``oscillatory_ou``
    (``fourier``, ``theta``, ``q_bar``, ``sigma_s``).
    """
    if not isinstance(spec, dict):
        raise ConfigError("expected a JSON object", field=prefix)
    kind = spec.get("kind")

    def need(key):
        if key not in spec:
            raise ConfigError("missing required key", field=f"{prefix}.{key}")
        return spec[key]

    def number(key, default=None):
        value = spec.get(key, default) if default is not None else need(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", field=f"{prefix}.{key}")
        return float(value)

    if kind == "linear":
        return LinearSupplyModel(
            **{k: function_from_json(spec.get(k, 0.0), f"{prefix}.{k}") for k in ("b1", "b0", "s1", "s0")}
        )
    if kind == "mean_reverting":
        return mean_reverting(
            function_from_json(need("target"), f"{prefix}.target"),
            number("sigma_s"),
            number("speed", 1.0),
        )
    if kind == "oscillatory_ou":
        fourier = function_from_json({"fourier": need("fourier")}, f"{prefix}.fourier")
        return OscillatoryOUModel(fourier, number("theta"), number("q_bar"), number("sigma_s"))
    raise ConfigError(f"unknown supply kind {kind!r}", field=f"{prefix}.kind")


# ---------------------------------------------------------------------------
# paths and randomness
# ---------------------------------------------------------------------------


def scenario_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for scenario ``index`` of a run seeded with ``seed``.

    Streams depend only on ``(seed, index)``, so a scenario is reproducible
    whatever batch it is simulated in.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def draw_increments(M: int, h: float, seed: int, n_paths: int = 1, noise_kind: str = "gaussian", start: int = 0):
    """Brownian increments for scenarios ``start .. start + n_paths - 1``, shape ``(n_paths, M)``."""
    out = np.empty((n_paths, M))
    sqrt_h = math.sqrt(h)
    for row in range(n_paths):
        rng = scenario_rng(seed, start + row)
        if noise_kind == "gaussian":
            out[row] = sqrt_h * rng.standard_normal(M)
        elif noise_kind == "binomial":
            out[row] = sqrt_h * np.where(rng.random(M) < 0.5, 1.0, -1.0)
        else:
            raise ConfigError(f"unknown noise kind {noise_kind!r}", field="noise_kind")
    return out


@dataclass(frozen=True)
class SupplyPath:
    t: np.ndarray
    values: np.ndarray
    increments: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if t.shape != values.shape or t.ndim != 1:
            raise ConfigError("grid and values must be 1-D arrays of equal length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", values)
        if self.increments is not None:
            inc = np.asarray(self.increments, dtype=float)
            if inc.shape != (len(t) - 1,):
                raise ConfigError("increments must have one entry fewer than the grid")
            object.__setattr__(self, "increments", inc)

    @property
    def M(self) -> int:
        return len(self.t) - 1

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        with_dw = self.increments is not None
        writer.writerow(["t", "Q", "dW"] if with_dw else ["t", "Q"])
        for k, (t, q) in enumerate(zip(self.t, self.values)):
            row = [repr(float(t)), repr(float(q))]
            if with_dw:
                row.append(repr(float(self.increments[k])) if k < self.M else "")
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SupplyPath":
        rows = list(csv.reader(io.StringIO(text)))
        header = [h.strip() for h in rows[0]]
        if header[:2] != ["t", "Q"]:
            raise ConfigError("supply CSV must start with columns t,Q")
        body = [r for r in rows[1:] if r]
        t = [float(r[0]) for r in body]
        q = [float(r[1]) for r in body]
        inc = None
        if len(header) > 2 and header[2] == "dW":
            inc = [float(r[2]) for r in body[:-1]]
        return cls(np.array(t), np.array(q), None if inc is None else np.array(inc))


def _coefficients_on_grid(model, t):
    """Evaluate an affine model's coefficients, rejecting non-finite values."""
    # probing with q = 0 and q = 1 recovers intercept and slope for any
    # model exposing drift/vol, including the oscillatory parametrisation
    b0 = np.asarray(model.drift(np.zeros_like(t), t), dtype=float) * np.ones_like(t)
    b1 = np.asarray(model.drift(np.ones_like(t), t), dtype=float) - b0
    s0 = np.asarray(model.vol(np.zeros_like(t), t), dtype=float) * np.ones_like(t)
    s1 = np.asarray(model.vol(np.ones_like(t), t), dtype=float) - s0
    for name, arr in (("drift", b0 + b1), ("volatility", s0 + s1)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise DomainError(f"non-finite {name} coefficient at time index {int(bad[0])} (t={t[bad[0]]!r})")
    return b1, b0, s1, s0


def euler_paths(model, q0, T: float, increments) -> np.ndarray:
    """Forward-Euler supply paths driven by ``increments`` of shape ``(n, M)`` or ``(M,)``."""
    increments = np.asarray(increments, dtype=float)
    single = increments.ndim == 1
    inc = np.atleast_2d(increments)
    M = inc.shape[1]
    h = T / M
    t = h * np.arange(M + 1)
    _coefficients_on_grid(model, t[:-1])
    q = np.empty((inc.shape[0], M + 1))
    q[:, 0] = q0
    for k in range(M):
        qk = q[:, k]
        q[:, k + 1] = qk + model.drift(qk, t[k]) * h + model.vol(qk, t[k]) * inc[:, k]
    return q[0] if single else q


def euler_simulate(
    model,
    q0: float,
    M: int,
    T: float,
    rng_seed: int | None = 0,
    noise_kind: str = "gaussian",
    increments=None,
    scenario: int = 0,
) -> SupplyPath:
    """Simulate one supply path by forward Euler.

    Increments are ``N(0, h)`` (``noise_kind="gaussian"``) or ``+-sqrt(h)``
    with equal probability (``"binomial"``), drawn from the stream keyed by
    ``(rng_seed, scenario)``. Passing ``increments`` bypasses the generator.
    """
    if M < 1:
        raise ConfigError("need at least one step", field="M")
    if T <= 0:
        raise ConfigError("horizon must be positive", field="T")
    h = T / M
    if increments is None:
        increments = draw_increments(M, h, rng_seed, 1, noise_kind, start=scenario)[0]
        seed = rng_seed
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (M,):
            raise ConfigError(f"expected {M} increments, got shape {increments.shape}")
        seed = None
    values = euler_paths(model, q0, T, increments)
    return SupplyPath(h * np.arange(M + 1), values, increments, seed)


def recover_noise(model, path: SupplyPath) -> np.ndarray:
    """Invert the Euler recursion: ``dW_k = (Q_{k+1} - Q_k - h b(Q_k, t_k)) / s(Q_k, t_k)``."""
    q = path.values
    t = path.t[:-1]
    h = path.h
    drift = np.asarray(model.drift(q[:-1], t), dtype=float)
    vol = np.asarray(model.vol(q[:-1], t), dtype=float) * np.ones_like(t)
    zero = np.flatnonzero(vol == 0.0)
    if zero.size:
        raise DomainError(f"zero volatility at step {int(zero[0])}; noise cannot be recovered")
    return (q[1:] - q[:-1] - h * drift) / vol


# ---------------------------------------------------------------------------
# binomial lattice
# ---------------------------------------------------------------------------


def _level_slice(k: int) -> slice:
    return slice(2**k - 1, 2 ** (k + 1) - 1)


@dataclass(frozen=True)
class NoiseLattice:
    """Non-recombining binomial tree of supply values.

    ``q`` holds all ``2**(M+1) - 1`` node values in heap order.
    """

    M: int
    T: float
    q: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.T / self.M

    @property
    def q0(self) -> float:
        return float(self.q[0])

    @property
    def n_nodes(self) -> int:
        return 2 ** (self.M + 1) - 1

    @property
    def n_decision(self) -> int:
        """Nodes at levels ``0 .. M-1``, where controls and prices live."""
        return 2**self.M - 1

    def level(self, k: int) -> np.ndarray:
        return self.q[_level_slice(k)]

    @staticmethod
    def index(j: int, k: int) -> int:
        """Flat index of node ``(j, k)`` with 1-based ``j``."""
        if not 1 <= j <= 2**k:
            raise IndexError(f"node ({j}, {k}) does not exist")
        return 2**k - 1 + (j - 1)

    def node_levels(self) -> np.ndarray:
        return np.repeat(np.arange(self.M + 1), 2 ** np.arange(self.M + 1))

    def path_nodes(self, level: int | None = None) -> np.ndarray:
        """Flat indices of every root-to-level path, shape ``(2**level, level + 1)``."""
        level = self.M if level is None else level
        out = np.empty((2**level, level + 1), dtype=np.int64)
        out[:, level] = np.arange(2**level - 1, 2 ** (level + 1) - 1)
        for k in range(level - 1, -1, -1):
            out[:, k] = (out[:, k + 1] - 1) // 2
        return out

    def path_increments(self, level: int | None = None) -> np.ndarray:
        """Increments ``+-sqrt(h)`` along every root-to-level path, shape ``(2**level, level)``."""
        nodes = self.path_nodes(level)
        up = (nodes[:, 1:] % 2) == 1
        return np.where(up, 1.0, -1.0) * math.sqrt(self.h)


def build_lattice(model, q0: float, M: int, T: float) -> NoiseLattice:
    """Full binomial tree of the Euler recursion with increments ``+-sqrt(h)``.

    Branching starts at the first step, so level ``k`` holds ``2**k`` values.
    """
    if M < 1:
        raise ConfigError("need at least one step", field="M")
    if M > MAX_LATTICE_STEPS:
        raise CapacityError(f"M={M} exceeds the lattice bound {MAX_LATTICE_STEPS} ({2 ** (M + 1) - 1} nodes)")
    h = T / M
    t = h * np.arange(M + 1)
    _coefficients_on_grid(model, t[:-1])
    sqrt_h = math.sqrt(h)
    q = np.empty(2 ** (M + 1) - 1)
    q[0] = q0
    for k in range(M):
        parent = q[_level_slice(k)]
        base = parent + model.drift(parent, t[k]) * h
        vol = model.vol(parent, t[k])
        child = q[_level_slice(k + 1)]
        child[0::2] = base + vol * sqrt_h
        child[1::2] = base - vol * sqrt_h
    return NoiseLattice(M=M, T=float(T), q=q)


def lattice_to_json(lattice: NoiseLattice) -> dict:
    return {
        "M": lattice.M,
        "T": lattice.T,
        "levels": [lattice.level(k).tolist() for k in range(lattice.M + 1)],
    }


def supply_to_json(model) -> str:
    return json.dumps(model.to_dict())

