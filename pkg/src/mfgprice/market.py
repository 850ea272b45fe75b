"""Model parameters, the linear-quadratic cost and the generic cost interface."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "MarketParams",
    "CostModel",
    "ConvexityReport",
    "lq_cost",
    "lq_hamiltonian",
    "lq_optimal_velocity",
    "convexity_probe",
]


@dataclass(frozen=True)
class MarketParams:
    """Cost weights and horizon of the linear-quadratic market.

    Parameters
    ----------
    T : float
        Time horizon, strictly positive.
    eta : float
        Weight of the running storage deviation ``(x - kappa)**2``.
    c : float
        Weight of the squared trading rate, strictly positive.
    gamma : float
        Weight of the terminal storage deviation ``(x - zeta)**2``.
    kappa, zeta : float
        Preferred running and terminal storage levels.
    """

    T: float = 1.0
    eta: float = 0.0
    c: float = 1.0
    gamma: float = 0.0
    kappa: float = 0.0
    zeta: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"expected a number, got {value!r}", field=f.name) from None
            if not math.isfinite(value):
                raise ConfigError("must be finite", field=f.name)
            object.__setattr__(self, f.name, value)
        if self.T <= 0:
            raise ConfigError("horizon must be positive", field="T")
        if self.c <= 0:
            raise ConfigError("trading-rate weight must be positive", field="c")
        if self.eta < 0:
            raise ConfigError("must be non-negative", field="eta")
        if self.gamma < 0:
            raise ConfigError("must be non-negative", field="gamma")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "") -> "MarketParams":
        if not isinstance(data, dict):
            raise ConfigError("expected a JSON object", field=prefix.rstrip(".") or None)
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise ConfigError("missing required key", field=prefix + missing[0])
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError("unknown key", field=prefix + unknown[0])
        try:
            return cls(**{n: data[n] for n in names})
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], field=prefix + exc.field) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MarketParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CostModel:
    """Running cost ``L(x, v)`` and terminal cost ``Psi(x)`` with derivatives.

    All callables must accept numpy arrays and broadcast. Derivatives are
    supplied by the caller; nothing is differentiated automatically.
    """

    L: Callable
    L_x: Callable
    L_v: Callable
    Psi: Callable
    Psi_prime: Callable
    kind: str = "custom"


def lq_cost(params: MarketParams) -> CostModel:
    """Quadratic storage and trading costs.

    ``L(x, v) = eta/2 (x - kappa)**2 + c/2 v**2`` and
    ``Psi(x) = gamma/2 (x - zeta)**2``.
    """
    eta, c, gamma = params.eta, params.c, params.gamma
    kappa, zeta = params.kappa, params.zeta
    return CostModel(
        L=lambda x, v: 0.5 * eta * (x - kappa) ** 2 + 0.5 * c * v**2,
        L_x=lambda x, v: eta * (x - kappa) + 0.0 * v,
        L_v=lambda x, v: c * v + 0.0 * x,
        Psi=lambda x: 0.5 * gamma * (x - zeta) ** 2,
        Psi_prime=lambda x: gamma * (x - zeta),
        kind="LQ",
    )


def lq_hamiltonian(params: MarketParams, x, p):
    """Legendre transform ``sup_v {-p v - L(x, v)}`` of the quadratic cost."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return -0.5 * params.eta * (x - params.kappa) ** 2 + p**2 / (2.0 * params.c)


def lq_optimal_velocity(params: MarketParams, p):
    """Maximiser of ``-p v - L(x, v)``, namely ``-p / c``."""
    return -np.asarray(p, dtype=float) / params.c


@dataclass(frozen=True)
class ConvexityReport:
    ok: bool
    checked: int
    violations: int
    worst_gap: float
    worst_point: tuple | None
    negative_values: int


def convexity_probe(
    cost: CostModel,
    x_box: tuple[float, float],
    v_box: tuple[float, float],
    resolution: int = 33,
    tol: float = 1e-10,
    seed: int = 0,
) -> ConvexityReport:
    """Sample midpoint convexity of ``L`` and ``Psi`` over a box.

    ``resolution**3`` random pairs are drawn for ``L`` and ``resolution**2``
    for ``Psi``; a pair fails when the value at the midpoint exceeds the
    average of the endpoint values by more than ``tol`` (relative to the
    magnitude of the values). Non-negativity is checked on the same samples.
    Passing the probe is evidence, not proof.
    """
    rng = np.random.default_rng(seed)
    n = resolution**3
    lo = np.array([x_box[0], v_box[0]], dtype=float)
    hi = np.array([x_box[1], v_box[1]], dtype=float)
    a = lo + (hi - lo) * rng.random((n, 2))
    b = lo + (hi - lo) * rng.random((n, 2))
    m = 0.5 * (a + b)
    La = np.asarray(cost.L(a[:, 0], a[:, 1]), dtype=float)
    Lb = np.asarray(cost.L(b[:, 0], b[:, 1]), dtype=float)
    Lm = np.asarray(cost.L(m[:, 0], m[:, 1]), dtype=float)
    scale = 1.0 + np.abs(La) + np.abs(Lb)
    gap_L = (Lm - 0.5 * (La + Lb)) / scale

    nx = resolution**2
    xa = x_box[0] + (x_box[1] - x_box[0]) * rng.random(nx)
    xb = x_box[0] + (x_box[1] - x_box[0]) * rng.random(nx)
    Pa = np.asarray(cost.Psi(xa), dtype=float)
    Pb = np.asarray(cost.Psi(xb), dtype=float)
    Pm = np.asarray(cost.Psi(0.5 * (xa + xb)), dtype=float)
    gap_P = (Pm - 0.5 * (Pa + Pb)) / (1.0 + np.abs(Pa) + np.abs(Pb))

    violations = int(np.sum(gap_L > tol) + np.sum(gap_P > tol))
    negative = int(np.sum(np.concatenate([La, Lb, Lm]) < -tol) + np.sum(np.concatenate([Pa, Pb, Pm]) < -tol))
    worst_L = int(np.argmax(gap_L))
    worst_P = int(np.argmax(gap_P))
    if gap_L[worst_L] >= gap_P[worst_P]:
        worst_gap = float(gap_L[worst_L])
        worst_point = (tuple(a[worst_L]), tuple(b[worst_L]))
    else:
        worst_gap = float(gap_P[worst_P])
        worst_point = ((float(xa[worst_P]),), (float(xb[worst_P]),))
    return ConvexityReport(
        ok=violations == 0 and negative == 0,
        checked=n + nx,
        violations=violations,
        worst_gap=worst_gap,
        worst_point=worst_point if violations else None,
        negative_values=negative,
    )
