import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgprice import ConfigError, CostModel, MarketParams, convexity_probe, lq_cost, lq_hamiltonian, lq_optimal_velocity

REF = MarketParams(T=1.0, eta=1.0, c=1.0, gamma=math.e**2, kappa=0.25, zeta=0.25)


def test_cost_vanishes_at_preferred_state():
    assert lq_cost(REF).L(0.25, 0.0) == 0.0


def test_cost_direct_substitution():
    # 0.5 * (0 - 0.25)**2 + 0.5 * 1**2
    assert lq_cost(REF).L(0.0, 1.0) == pytest.approx(0.53125, abs=1e-15)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 7.0])
def test_terminal_cost_vanishes_at_zeta(gamma):
    p = MarketParams(gamma=gamma, zeta=-0.3)
    assert lq_cost(p).Psi(-0.3) == 0.0


def test_lq_derivatives_closed_forms():
    p = MarketParams(eta=0.7, c=1.3, gamma=2.1, kappa=0.4, zeta=-0.2)
    cost = lq_cost(p)
    x, v = 0.9, -0.35
    assert cost.L_x(x, v) == pytest.approx(0.7 * (0.9 - 0.4), abs=1e-15)
    assert cost.L_v(x, v) == pytest.approx(1.3 * -0.35, abs=1e-15)
    assert cost.Psi_prime(x) == pytest.approx(2.1 * (0.9 + 0.2), abs=1e-15)
    assert cost.kind == "LQ"


def test_hamiltonian_examples():
    assert lq_hamiltonian(REF, 0.25, 0.0) == 0.0
    p = MarketParams(eta=0.0, c=2.0)
    np.testing.assert_allclose(lq_hamiltonian(p, np.linspace(-3, 3, 7), 1.0), 0.25, atol=1e-15)


def test_legendre_identity_at_optimum():
    p = MarketParams(eta=0.8, c=1.7, kappa=0.1)
    cost = lq_cost(p)
    x, q = np.meshgrid(np.linspace(-5, 5, 11), np.linspace(-5, 5, 11))
    v = lq_optimal_velocity(p, q)
    np.testing.assert_allclose(lq_hamiltonian(p, x, q), -q * v - cost.L(x, v), atol=1e-12)


def test_legendre_duality_by_grid_search():
    p = MarketParams(eta=1.0, c=1.0, kappa=0.25)
    cost = lq_cost(p)
    vgrid = np.linspace(-12, 12, 240_001)
    for x in (-10.0, -1.0, 0.3, 10.0):
        for q in (-10.0, -2.5, 0.0, 4.0, 10.0):
            vals = -q * vgrid - cost.L(x, vgrid)
            i = int(np.argmax(vals))
            # refine the discrete maximum with a parabola through three points
            y0, y1, y2 = vals[i - 1 : i + 2]
            dv = vgrid[1] - vgrid[0]
            peak = y1 - (y0 - y2) ** 2 / (8 * (y0 - 2 * y1 + y2))
            assert abs(peak - lq_hamiltonian(p, x, q)) <= 1e-8
            assert abs(vgrid[i] - (-q)) <= dv


def test_finite_difference_derivatives():
    p = MarketParams(eta=0.6, c=2.0, gamma=1.5, kappa=-0.1, zeta=0.3)
    cost = lq_cost(p)
    eps = 1e-5
    rng = np.random.default_rng(4)
    for x, v in rng.uniform(-3, 3, size=(20, 2)):
        assert abs((cost.L(x, v + eps) - cost.L(x, v - eps)) / (2 * eps) - cost.L_v(x, v)) <= 1e-6
        assert abs((cost.L(x + eps, v) - cost.L(x - eps, v)) / (2 * eps) - cost.L_x(x, v)) <= 1e-6
        assert abs((cost.Psi(x + eps) - cost.Psi(x - eps)) / (2 * eps) - cost.Psi_prime(x)) <= 1e-6


def test_uniform_convexity_witness():
    p = MarketParams(eta=0.9, c=1.4, kappa=0.2)
    cost = lq_cost(p)
    for x in (-2.0, 0.0, 3.5):
        diffs = [cost.L(x, v) - 0.5 * p.c * v * v for v in (-1.0, 0.5, 4.0)]
        assert diffs[0] == pytest.approx(diffs[1], abs=1e-14)
        assert diffs[1] == pytest.approx(diffs[2], abs=1e-14)


@pytest.mark.parametrize(
    "kwargs, field",
    [({"T": 0.0}, "T"), ({"c": 0.0}, "c"), ({"eta": -1.0}, "eta"), ({"gamma": -0.1}, "gamma"), ({"kappa": float("nan")}, "kappa")],
)
def test_params_validation(kwargs, field):
    with pytest.raises(ConfigError) as info:
        MarketParams(**kwargs)
    assert info.value.field == field


def test_params_json_round_trip():
    text = REF.to_json()
    assert set(json.loads(text)) == {"T", "eta", "c", "gamma", "kappa", "zeta"}
    assert MarketParams.from_json(text) == REF


def test_from_dict_names_missing_field():
    data = REF.to_dict()
    del data["c"]
    with pytest.raises(ConfigError, match=r"params\.c"):
        MarketParams.from_dict(data, prefix="params.")


def test_from_dict_rejects_unknown_and_invalid():
    data = {**REF.to_dict(), "sigma": 1.0}
    with pytest.raises(ConfigError, match="sigma"):
        MarketParams.from_dict(data)
    with pytest.raises(ConfigError, match=r"params\.c"):
        MarketParams.from_dict({**REF.to_dict(), "c": -1.0}, prefix="params.")


def test_convexity_probe_accepts_lq():
    report = convexity_probe(lq_cost(REF), (-2, 2), (-2, 2), resolution=9)
    assert report.ok and report.violations == 0 and report.checked == 9**3 + 9**2


def test_convexity_probe_flags_concave_cost():
    bad = CostModel(
        L=lambda x, v: np.cos(3 * v) + 2 + 0 * x,
        L_x=lambda x, v: 0 * x,
        L_v=lambda x, v: -3 * np.sin(3 * v),
        Psi=lambda x: x**2,
        Psi_prime=lambda x: 2 * x,
    )
    report = convexity_probe(bad, (-1, 1), (-1, 1), resolution=9)
    assert not report.ok and report.violations > 0 and report.worst_gap > 0


def test_convexity_probe_flags_negative_values():
    neg = CostModel(
        L=lambda x, v: v**2 - 1,
        L_x=lambda x, v: 0 * x,
        L_v=lambda x, v: 2 * v,
        Psi=lambda x: 0 * x,
        Psi_prime=lambda x: 0 * x,
    )
    report = convexity_probe(neg, (-1, 1), (-1, 1), resolution=5)
    assert report.violations == 0 and report.negative_values > 0 and not report.ok


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0, 5), st.floats(0.1, 5), st.floats(-2, 2),
    st.floats(-10, 10), st.floats(-10, 10),
)  # fmt: skip
def test_hamiltonian_is_the_supremum(eta, c, kappa, x, q):
    p = MarketParams(eta=eta, c=c, kappa=kappa)
    cost = lq_cost(p)
    H = lq_hamiltonian(p, x, q)
    vstar = lq_optimal_velocity(p, q)
    assert H == pytest.approx(-q * vstar - cost.L(x, vstar), rel=1e-12, abs=1e-12)
    for dv in (-1.0, -0.01, 0.01, 1.0):
        assert -q * (vstar + dv) - cost.L(x, vstar + dv) <= H + 1e-12
