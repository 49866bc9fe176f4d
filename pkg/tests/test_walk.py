import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwlab.substitution import CoinAngles, sequence_window
from qwlab.walk import (
    CoinBank,
    ProbabilityProfile,
    TimeAveragedProfile,
    WalkState,
    apply_walk,
    build_coins,
    constant_rotation_bank,
    evolve,
    fit_loglog_slope,
    identity_profiles,
    iterate_states,
    moment,
    moment_series,
    required_l_max,
    rotation_coin,
    time_averaged_profile,
    transport_exponent_estimate,
)

from oracles import dense_delta_plus, dense_walk_unitary, rotation, tm_string_popcount

RT2 = math.sqrt(2.0)
ANGLES = CoinAngles(math.pi / 3, math.pi / 5)


def tm_bank(radius, angles=ANGLES):
    return build_coins(sequence_window(radius, -radius, radius), angles)


def test_rotation_coin_is_orthogonal():
    for gamma in (0.0, 0.3, math.pi / 4, 1.5):
        R = rotation_coin(gamma)
        assert np.abs(R.conj().T @ R - np.eye(2)).max() < 1e-15
        assert abs(np.linalg.det(R) - 1.0) < 1e-15


def test_build_coins_maps_symbols_to_angles():
    win = sequence_window(0, 0, 3)  # "0110"
    bank = build_coins(win, ANGLES)
    assert np.allclose(bank.coin_at(0), rotation(math.pi / 5), atol=1e-15)
    assert np.allclose(bank.coin_at(1), rotation(math.pi / 3), atol=1e-15)


def test_coin_bank_validation():
    bad = np.stack([rotation(0.3), 1.01 * rotation(0.3)])
    with pytest.raises(ValueError):
        CoinBank.from_matrices(0, bad)
    bank = CoinBank.from_matrices(0, bad, validate=False)
    assert bank.max_unitarity_defect() > 1e-3


def test_identity_coin_gives_pure_shift():
    bank = constant_rotation_bank(-6, 6, 0.0)
    profiles = evolve(WalkState.delta_plus(), bank, 4)
    for ell, prof in enumerate(profiles):
        assert prof.a_at(ell) == pytest.approx(1.0, abs=1e-15)
        assert prof.total() == pytest.approx(1.0, abs=1e-15)


def test_single_step_hadamard_like_coin():
    bank = constant_rotation_bank(-2, 2, math.pi / 4)
    out = apply_walk(WalkState.delta_plus(), bank)
    plus1, _ = out.amplitudes_at(1)
    _, minus_m1 = out.amplitudes_at(-1)
    assert plus1 == pytest.approx(RT2 / 2, abs=1e-15)
    assert minus_m1 == pytest.approx(RT2 / 2, abs=1e-15)
    assert out.norm() == pytest.approx(1.0, abs=1e-15)


def test_two_steps_quarter_rotation_distribution():
    bank = constant_rotation_bank(-4, 4, math.pi / 4)
    prof = evolve(WalkState.delta_plus(), bank, 2)[2]
    assert prof.a_at(2) == pytest.approx(0.25, abs=1e-14)
    assert prof.a_at(0) == pytest.approx(0.50, abs=1e-14)
    assert prof.a_at(-2) == pytest.approx(0.25, abs=1e-14)


def test_two_steps_match_dense_oracle_on_wide_window():
    lo, hi = -4, 4
    U = dense_walk_unitary(lambda n: rotation(math.pi / 4), lo, hi)
    vec = np.linalg.matrix_power(U, 2) @ dense_delta_plus(lo, hi)
    a0 = abs(vec[2 * (0 - lo)]) ** 2 + abs(vec[2 * (0 - lo) + 1]) ** 2
    assert a0 == pytest.approx(0.5, abs=1e-14)


def test_sparse_evolution_equals_dense_matrix_oracle():
    radius, l_max = 14, 12
    win = sequence_window(radius, -radius, radius)
    bank = build_coins(win, ANGLES)
    coin_of_site = {n: bank.coin_at(n) for n in range(-radius, radius + 1)}
    U = dense_walk_unitary(lambda n: coin_of_site[n], -radius, radius)
    vec = dense_delta_plus(-radius, radius)
    for ell, state in enumerate(iterate_states(WalkState.delta_plus(), bank, l_max)):
        if ell:
            vec = U @ vec
        for n in range(-ell, ell + 1):
            p, m = state.amplitudes_at(n)
            assert abs(p - vec[2 * (n + radius)]) < 1e-12
            assert abs(m - vec[2 * (n + radius) + 1]) < 1e-12


def test_apply_walk_requires_coverage():
    bank = constant_rotation_bank(-2, 2, 0.4)
    state = WalkState(n_min=-3, plus=np.zeros(7, complex), minus=np.zeros(7, complex))
    with pytest.raises(ValueError):
        apply_walk(state, bank)


def test_evolve_requires_spec_radius():
    bank = constant_rotation_bank(-5, 5, 0.4)
    with pytest.raises(ValueError, match=r"\[-6, 6\]"):
        evolve(WalkState.delta_plus(), bank, 5)
    evolve(WalkState.delta_plus(), bank, 4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10 ** 6))
def test_unitarity_on_random_states(seed):
    rng = np.random.default_rng(seed)
    width = 9
    plus = rng.normal(size=width) + 1j * rng.normal(size=width)
    minus = rng.normal(size=width) + 1j * rng.normal(size=width)
    nrm = math.sqrt(float(np.sum(np.abs(plus) ** 2 + np.abs(minus) ** 2)))
    state = WalkState(n_min=-4, plus=plus / nrm, minus=minus / nrm)
    bank = tm_bank(8, CoinAngles(rng.uniform(0.05, 1.5), rng.uniform(0.05, 1.5)))
    assert apply_walk(state, bank).norm() == pytest.approx(1.0, abs=1e-12)


def test_light_cone_and_normalization():
    bank = tm_bank(14)
    for ell, prof in enumerate(evolve(WalkState.delta_plus(), bank, 12)):
        assert prof.n_min == -ell and prof.n_max == ell
        assert prof.a_at(ell + 1) == 0.0 and prof.a_at(-ell - 1) == 0.0
        assert prof.total() == pytest.approx(1.0, abs=1e-12)


def test_time_average_identity_operator():
    profiles = identity_profiles(200)
    for L in (1.0, 5.0, 8.0):
        tap = time_averaged_profile(profiles, L, tail_tol=1e-8)
        assert tap.a_at(0) == pytest.approx(1.0, abs=1e-12)
        assert moment(tap, 2.0) == pytest.approx(1.0, abs=1e-12)


def test_time_average_shift_geometric_series():
    L = 7.0
    l_max = required_l_max(L, 1e-12)
    bank = constant_rotation_bank(-(l_max + 1), l_max + 1, 0.0)
    profiles = evolve(WalkState.delta_plus(), bank, l_max)
    tap = time_averaged_profile(profiles, L, tail_tol=1e-12)
    q = math.exp(-2.0 / L)
    for n in (0, 1, 3, 10):
        assert tap.a_at(n) == pytest.approx((1 - q) * q ** n, abs=1e-12)
    assert tap.a_at(-1) == 0.0
    assert tap.total() == pytest.approx(1.0, abs=tap.tail_bound + 1e-10)


def test_time_average_requires_enough_steps():
    profiles = identity_profiles(10)
    with pytest.raises(ValueError, match="l_max >= "):
        time_averaged_profile(profiles, 20.0, tail_tol=1e-8)


def test_moment_single_site():
    tap = TimeAveragedProfile(L=5.0, n_min=3, a=np.array([1.0]), l_max=10, tail_bound=0.0)
    assert moment(tap, 2.0) == pytest.approx(16.0, abs=1e-15)


def test_shift_moment_closed_form():
    # oracle: sum_n (n+1)^2 (1-q) q^n = (1+q)/(1-q)^2
    L = 12.0
    mom = moment_series(constant_rotation_bank(-200, 200, 0.0), [2.0], [L],
                        tail_tol=1e-13)[0, 0]
    q = math.exp(-2.0 / L)
    assert mom == pytest.approx((1 + q) / (1 - q) ** 2, rel=1e-10)


def test_moment_series_matches_profile_route():
    L_values = [3.0, 6.0]
    tail = 1e-10
    l_max = max(required_l_max(L, tail) for L in L_values)
    bank = tm_bank(l_max + 1)
    series = moment_series(bank, [1.0, 2.0], L_values, tail_tol=tail)
    profiles = evolve(WalkState.delta_plus(), bank, l_max)
    for j, L in enumerate(L_values):
        tap = time_averaged_profile(profiles, L, tail_tol=tail)
        for i, p in enumerate((1.0, 2.0)):
            assert series[i, j] == pytest.approx(moment(tap, p), rel=1e-12)


def test_log_moment_over_p_nondecreasing():
    L = 9.0
    bank = tm_bank(required_l_max(L, 1e-12) + 1)
    p_values = [1.0, 2.0, 4.0, 8.0]
    mom = moment_series(bank, p_values, [L], tail_tol=1e-12)[:, 0]
    vals = [math.log(m) / p for p, m in zip(p_values, mom)]
    for a, b in zip(vals, vals[1:]):
        assert b >= a - 1e-10


def test_transport_estimate_validation():
    bank = constant_rotation_bank(-40, 40, 0.0)
    with pytest.raises(ValueError):
        transport_exponent_estimate(2.0, [1.0, 2.0, 4.0, 8.0], bank)
    with pytest.raises(ValueError):
        transport_exponent_estimate(2.0, [1.0, 2.0, 2.0, 4.0, 8.0], bank)


def test_transport_estimate_shift_small_grid():
    grid = [6.0, 12.0, 24.0, 48.0, 96.0]
    bank = constant_rotation_bank(-(required_l_max(96.0, 1e-12) + 1),
                                  required_l_max(96.0, 1e-12) + 1, 0.0)
    est = transport_exponent_estimate(2.0, grid, bank)
    assert est.slope == pytest.approx(1.0, abs=0.05)
    assert est.slope_local_min <= est.slope <= est.slope_local_max


def test_fit_loglog_slope_identity_walk():
    slope, lo, hi = fit_loglog_slope([10.0, 20.0, 40.0], [1.0, 1.0, 1.0], 2.0)
    assert slope == pytest.approx(0.0, abs=1e-14)
    assert lo == pytest.approx(0.0, abs=1e-14) and hi == pytest.approx(0.0, abs=1e-14)
