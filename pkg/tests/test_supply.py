import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgprice import CapacityError, ConfigError, DomainError
from mfgprice.supply import (
    FourierSeries,
    LinearSupplyModel,
    NoiseLattice,
    OscillatoryOUModel,
    PiecewiseLinear,
    SupplyPath,
    build_lattice,
    draw_increments,
    euler_paths,
    euler_simulate,
    function_from_json,
    function_to_json,
    mean_reverting,
    recover_noise,
    supply_from_json,
)

SINE = FourierSeries(0.0, ((1, 1.0, 0.0),))
REF_SUPPLY = mean_reverting(SINE, 0.05)


def test_zero_dynamics_give_constant_path():
    path = euler_simulate(LinearSupplyModel(), 0.1, 8, 1.0, rng_seed=3)
    np.testing.assert_array_equal(path.values, np.full(9, 0.1))


def test_constant_drift_is_exact():
    path = euler_simulate(LinearSupplyModel(b0=1.0), 0.0, 10, 1.0, rng_seed=0)
    assert path.values[-1] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_first_euler_step_of_reference_supply(sign):
    h = 1 / 11
    path = euler_simulate(REF_SUPPLY, 0.1, 11, 1.0, increments=np.full(11, sign * math.sqrt(h)))
    expected = 0.1 + h * (math.sin(0.0) - 0.1) + sign * 0.05 * math.sqrt(h)
    assert path.values[1] == pytest.approx(expected, abs=1e-15)


def test_simulation_is_deterministic_given_seed():
    a = euler_simulate(REF_SUPPLY, 0.1, 50, 1.0, rng_seed=7)
    b = euler_simulate(REF_SUPPLY, 0.1, 50, 1.0, rng_seed=7)
    c = euler_simulate(REF_SUPPLY, 0.1, 50, 1.0, rng_seed=8)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.seed == 7 and a.increments.shape == (50,)


def test_binomial_increments_take_two_values():
    path = euler_simulate(REF_SUPPLY, 0.1, 40, 2.0, rng_seed=1, noise_kind="binomial")
    np.testing.assert_allclose(np.abs(path.increments), math.sqrt(2.0 / 40), rtol=0, atol=0)


def test_gaussian_increment_variance():
    inc = draw_increments(4, 0.25, seed=5, n_paths=20000)
    assert abs(inc.mean()) < 4 * 0.5 / math.sqrt(80000)
    assert inc.var() == pytest.approx(0.25, rel=0.03)


def test_scenario_streams_do_not_depend_on_batch():
    whole = draw_increments(6, 0.1, seed=11, n_paths=5)
    tail = draw_increments(6, 0.1, seed=11, n_paths=2, start=3)
    np.testing.assert_array_equal(whole[3:], tail)


def test_unknown_noise_kind_rejected():
    with pytest.raises(ConfigError):
        euler_simulate(REF_SUPPLY, 0.1, 3, 1.0, noise_kind="levy")


def test_non_finite_coefficient_names_index():
    model = LinearSupplyModel(b0=lambda t: np.where(np.asarray(t) > 0.45, np.nan, 0.0))
    with pytest.raises(DomainError, match="time index 5"):
        euler_simulate(model, 0.0, 10, 1.0)


def test_noise_round_trip():
    path = euler_simulate(REF_SUPPLY, 0.1, 200, 1.0, rng_seed=2)
    rec = recover_noise(REF_SUPPLY, path)
    np.testing.assert_allclose(rec, path.increments, rtol=0, atol=1e-12)
    again = euler_simulate(REF_SUPPLY, 0.1, 200, 1.0, increments=rec)
    np.testing.assert_allclose(again.values, path.values, rtol=1e-12, atol=1e-15)


def test_pure_drift_path_has_zero_noise():
    model = mean_reverting(SINE, 0.3)
    path = euler_simulate(model, 0.4, 30, 1.0, increments=np.zeros(30))
    np.testing.assert_allclose(recover_noise(model, path), 0.0, atol=1e-14)


def test_constant_path_has_zero_noise():
    model = LinearSupplyModel(s0=1.0)
    path = SupplyPath(np.linspace(0, 1, 6), np.full(6, 2.0))
    np.testing.assert_array_equal(recover_noise(model, path), np.zeros(5))


def test_zero_volatility_names_step():
    model = LinearSupplyModel(s0=lambda t: np.where(np.asarray(t) < 0.3, 1.0, 0.0))
    path = SupplyPath(np.linspace(0, 1, 11), np.arange(11.0))
    with pytest.raises(DomainError, match="step 3"):
        recover_noise(model, path)


def test_oscillatory_reduction_identity():
    f = FourierSeries(0.2, ((1, 0.8, -0.3), (3, 0.1, 0.05)))
    osc = OscillatoryOUModel(f, theta=2.5, q_bar=-0.4, sigma_s=0.7)
    lin = osc.to_linear()
    t = np.linspace(0, 1, 37)
    np.testing.assert_allclose(lin.b1(t), -2.5)
    # Q = Q_osc + Q^W with Q^W mean-reverting: the intercept absorbs +theta * Q_osc
    expected_b0 = f.derivative()(t) + 2.5 * (-0.4 + f(t))
    np.testing.assert_allclose(lin.b0(t), expected_b0, atol=1e-12)
    np.testing.assert_allclose(lin.s1(t), 0.0)
    np.testing.assert_allclose(lin.s0(t), 0.7)


def test_oscillatory_and_linear_paths_agree():
    f = FourierSeries(-0.1, ((1, 0.9, 0.2), (2, -0.3, 0.4)))
    osc = OscillatoryOUModel(f, theta=3.0, q_bar=0.2, sigma_s=0.5)
    inc = draw_increments(100, 0.01, seed=4)[0]
    a = euler_simulate(osc, 0.3, 100, 1.0, increments=inc)
    b = euler_simulate(osc.to_linear(), 0.3, 100, 1.0, increments=inc)
    np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-12)


def test_oscillatory_rejects_negative_parameters():
    with pytest.raises(ConfigError):
        OscillatoryOUModel(SINE, theta=-1.0, q_bar=0.0, sigma_s=0.1)
    with pytest.raises(ConfigError):
        OscillatoryOUModel(SINE, theta=1.0, q_bar=0.0, sigma_s=-0.1)


def test_fourier_derivative_by_finite_difference():
    f = FourierSeries(0.5, ((1, 0.3, -0.2), (4, 0.05, 0.1)), period=1.0)
    t = np.linspace(0.05, 0.95, 11)
    eps = 1e-6
    np.testing.assert_allclose(f.derivative()(t), (f(t + eps) - f(t - eps)) / (2 * eps), atol=1e-7)


def test_lattice_level_sizes_and_indexing():
    lat = build_lattice(REF_SUPPLY, 0.1, 2, 1.0)
    assert [lat.level(k).size for k in range(3)] == [1, 2, 4]
    assert lat.index(1, 1) == 1 and lat.index(2, 1) == 2 and lat.index(4, 2) == 6
    with pytest.raises(IndexError):
        lat.index(3, 1)


def test_lattice_level_one_values():
    h = 1 / 11
    lat = build_lattice(REF_SUPPLY, 0.1, 11, 1.0)
    base = 0.1 + h * (0 - 0.1)
    np.testing.assert_allclose(lat.level(1), [base + 0.05 * math.sqrt(h), base - 0.05 * math.sqrt(h)], atol=1e-15)


def test_degenerate_lattice():
    lat = build_lattice(mean_reverting(SINE, 0.0), 0.1, 6, 1.0)
    for k in range(7):
        assert np.ptp(lat.level(k)) == 0.0


def test_lattice_children_follow_euler():
    lat = build_lattice(REF_SUPPLY, 0.1, 5, 1.0)
    h, s = lat.h, math.sqrt(lat.h)
    for k in range(5):
        t = k * h
        for j in range(1, 2**k + 1):
            n = lat.index(j, k)
            q = lat.q[n]
            base = q + h * (math.sin(2 * math.pi * t) - q)
            assert lat.q[lat.index(2 * j - 1, k + 1)] == pytest.approx(base + 0.05 * s, abs=1e-15)
            assert lat.q[lat.index(2 * j, k + 1)] == pytest.approx(base - 0.05 * s, abs=1e-15)


def test_lattice_paths_match_simulation():
    lat = build_lattice(REF_SUPPLY, 0.1, 6, 1.0)
    nodes = lat.path_nodes()
    inc = lat.path_increments()
    for p in range(0, 64, 7):
        path = euler_simulate(REF_SUPPLY, 0.1, 6, 1.0, increments=inc[p])
        np.testing.assert_allclose(lat.q[nodes[p]], path.values, rtol=0, atol=1e-15)


def test_binomial_moments_exact():
    lat = build_lattice(REF_SUPPLY, 0.1, 8, 1.0)
    inc = lat.path_increments()
    assert inc.shape == (256, 8)
    np.testing.assert_allclose(inc.mean(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose((inc**2).mean(axis=0), lat.h, rtol=1e-14)


def test_lattice_capacity():
    with pytest.raises(CapacityError):
        build_lattice(REF_SUPPLY, 0.1, 23, 1.0)
    with pytest.raises(ConfigError):
        build_lattice(REF_SUPPLY, 0.1, 0, 1.0)


def test_supply_path_csv_round_trip():
    path = euler_simulate(REF_SUPPLY, 0.1, 13, 1.0, rng_seed=9)
    text = path.to_csv()
    assert text.splitlines()[0] == "t,Q,dW"
    back = SupplyPath.from_csv(text)
    np.testing.assert_array_equal(back.values, path.values)
    np.testing.assert_array_equal(back.increments, path.increments)
    bare = SupplyPath(path.t, path.values)
    assert bare.to_csv().splitlines()[0] == "t,Q"


@pytest.mark.parametrize(
    "model",
    [
        REF_SUPPLY,
        LinearSupplyModel(b1=-2.0, b0=0.3, s1=0.1, s0=0.2),
        OscillatoryOUModel(FourierSeries(0.1, ((1, 0.5, 0.2),)), 4.0, -0.1, 0.3),
        LinearSupplyModel(b0=PiecewiseLinear((0.0, 0.5, 1.0), (0.0, 1.0, 0.5)), s0=0.1),
    ],
)
def test_model_json_round_trip(model):
    spec = json.loads(json.dumps(model.to_dict()))
    back = supply_from_json(spec)
    t = np.linspace(0, 1, 9)
    q = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(back.drift(q, t), model.drift(q, t), atol=1e-14)
    np.testing.assert_allclose(back.vol(q, t), model.vol(q, t), atol=1e-14)


def test_fourier_terms_serialise_as_records():
    spec = function_to_json(FourierSeries(1.0, ((2, 0.5, -0.5),)))
    assert spec["fourier"]["terms"] == [{"k": 2, "sin": 0.5, "cos": -0.5}]
    assert function_from_json(spec)(0.125) == pytest.approx(1.0 + 0.5 - 0.0, abs=1e-15)


def test_supply_json_errors_name_fields():
    with pytest.raises(ConfigError, match=r"supply\.sigma_s"):
        supply_from_json({"kind": "mean_reverting", "target": 0.0})
    with pytest.raises(ConfigError, match=r"supply\.kind"):
        supply_from_json({"kind": "jump"})


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 40),
    st.floats(0.1, 3.0),
    st.floats(-2, 2),
    st.floats(0.05, 2.0),
    st.integers(0, 2**31),
)
def test_round_trip_property(M, T, q0, sigma, seed):
    model = LinearSupplyModel(b1=-1.5, b0=lambda t: np.cos(3 * t), s1=0.0, s0=sigma)
    path = euler_simulate(model, q0, M, T, rng_seed=seed)
    rec = recover_noise(model, path)
    np.testing.assert_allclose(rec, path.increments, atol=1e-12 * max(1.0, 1 / sigma))


def test_euler_paths_batch_matches_single():
    inc = draw_increments(12, 1 / 12, seed=0, n_paths=4)
    batch = euler_paths(REF_SUPPLY, 0.1, 1.0, inc)
    for i in range(4):
        np.testing.assert_array_equal(batch[i], euler_paths(REF_SUPPLY, 0.1, 1.0, inc[i]))


def test_noise_lattice_static_properties():
    lat = NoiseLattice(M=3, T=1.0, q=np.arange(15.0))
    assert lat.n_nodes == 15 and lat.n_decision == 7 and lat.q0 == 0.0
    np.testing.assert_array_equal(lat.node_levels(), [0, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3])
