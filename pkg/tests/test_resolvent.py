import cmath
import math

import numpy as np
import pytest

from qwlab.resolvent import (
    NeumannResult,
    TruncatedResolventProblem,
    annulus_samples,
    moment_certificate,
    neumann_oracle,
    parseval_check,
    resolvent_vector,
    resolvent_window_scan,
    solve_resolvent,
    squared_element,
    truncation_radius,
    certificate_radius,
)
from qwlab.substitution import CoinAngles, sequence_window
from qwlab.transfer import verify_eigenrecursion
from qwlab.walk import build_coins, constant_rotation_bank, required_l_max

ANGLES = CoinAngles(math.pi / 3, math.pi / 5)


def tm_bank(radius, angles=ANGLES, offset=0):
    return build_coins(sequence_window(offset + radius, -radius, radius), angles)


def shift_bank(radius):
    return constant_rotation_bank(-radius, radius, 0.0)


def test_problem_validation():
    bank = shift_bank(50)
    with pytest.raises(ValueError):
        TruncatedResolventProblem(coins=bank, z=0.9j, targets=(0,))
    with pytest.raises(ValueError):
        # |z| = e^{1/20}: radius 50 is far below the truncation rule
        TruncatedResolventProblem(coins=bank, z=cmath.exp(1 / 20) * 1j, targets=(3,))
    z = 2.0 * 1j
    prob = TruncatedResolventProblem(coins=shift_bank(truncation_radius(z, 3)), z=z,
                                     targets=(3,))
    state = solve_resolvent(prob)
    assert state.norm() <= 1.0 / (abs(z) - 1.0) + 1e-12


def test_shift_resolvent_closed_form():
    z = cmath.exp(complex(0.1, 0.7))
    bank = shift_bank(truncation_radius(z, 12))
    state = resolvent_vector(bank, z)
    for n in range(0, 13):
        plus, minus = state.amplitudes_at(n)
        assert abs(plus - (-z ** (-n - 1))) < 1e-12
        assert abs(minus) < 1e-12
    for n in range(-12, 0):
        plus, minus = state.amplitudes_at(n)
        assert abs(plus) < 1e-12 and abs(minus) < 1e-12


def test_neumann_oracle_trivial_and_shift():
    z = 1.4 + 0.2j
    bank = shift_bank(8)
    res = neumann_oracle(bank, z, 0)
    plus, minus = res.state.amplitudes_at(0)
    assert abs(plus - (-1.0 / z)) < 1e-15 and minus == 0.0
    res = neumann_oracle(bank, z, 6)
    for n in range(0, 7):
        plus, _ = res.state.amplitudes_at(n)
        assert abs(plus - (-z ** (-n - 1))) < 1e-14
    expected_tail = abs(z) ** (-8) / (1 - 1 / abs(z))
    assert res.tail_bound == pytest.approx(expected_tail, rel=1e-12)


def test_banded_solve_agrees_with_neumann_series():
    rng = np.random.default_rng(42)
    for _ in range(5):
        theta = rng.uniform(0.15, 1.4)
        phi = rng.uniform(0.15, 1.4)
        offset = int(rng.integers(0, 64))
        eta = rng.uniform(1 / 20, math.log(2.0))
        z = cmath.exp(complex(eta, rng.uniform(0, 2 * math.pi)))
        l_max = math.ceil((math.log(1e10) + math.log(1 / (1 - math.exp(-eta)))) / eta) + 2
        radius = max(l_max + 1, truncation_radius(z, 12))
        bank = tm_bank(radius, CoinAngles(theta, phi), offset)
        direct = resolvent_vector(bank, z)
        series = neumann_oracle(bank, z, l_max)
        for n in range(-12, 13):
            dp, dm = direct.amplitudes_at(n)
            sp, sm = series.state.amplitudes_at(n)
            assert abs(dp - sp) + abs(dm - sm) < 1e-8


def test_resolvent_norm_bound():
    rng = np.random.default_rng(1)
    for _ in range(5):
        z = cmath.exp(complex(rng.uniform(0.05, 0.7), rng.uniform(0, 2 * math.pi)))
        bank = tm_bank(truncation_radius(z, 0))
        state = resolvent_vector(bank, z)
        assert state.norm() <= 1.0 / (abs(z) - 1.0) + 1e-10


def test_resolvent_vector_passes_recursion_except_origin_source():
    z = cmath.exp(complex(0.1, 1.9))
    radius = truncation_radius(z, 0)
    window = sequence_window(radius, -radius, radius)
    bank = build_coins(window, ANGLES)
    state = resolvent_vector(bank, z)
    resid = verify_eigenrecursion(state, window, ANGLES, z, excluded={-1})
    assert resid <= 1e-8
    # without the exclusion the source term shows up at n = -1
    assert verify_eigenrecursion(state, window, ANGLES, z) > 1e-3


def test_parseval_shift_closed_form():
    bank = shift_bank(600)
    for L in (5.0, 10.0):
        for n in (0, 3):
            rep = parseval_check(bank, n, L)
            expected = math.exp(-2.0 * n / L)
            assert rep.lhs == pytest.approx(expected, rel=1e-9)
            assert rep.rhs == pytest.approx(expected, rel=1e-9)
            assert rep.rel_diff <= 1e-6


def test_parseval_far_outside_light_cone():
    bank = tm_bank(300)
    rep = parseval_check(bank, 30, 3.0)
    assert rep.lhs <= 1e-8 and rep.rhs <= 1e-8


def test_parseval_tm_coins():
    bank = tm_bank(500)
    rep = parseval_check(bank, 2, 10.0)
    assert rep.rel_diff <= 1e-6
    data = rep.to_json()
    assert {"L", "target", "lhs", "rhs", "abs_diff", "rel_diff"} <= set(data)


def test_parseval_node_floor_and_coverage():
    bank = tm_bank(500)
    with pytest.raises(ValueError):
        parseval_check(bank, 2, 10.0, node_count=16)
    with pytest.raises(ValueError, match="must cover"):
        parseval_check(tm_bank(50), 2, 10.0)


def test_annulus_scan_shift_closed_form():
    # identity coins: |<delta_n^+, psi_z>|^2 = |z|^{-2n-2} = e^{-2(n+1)/L} for
    # n >= 0 (independent of tau) and exactly 0 for n < 0, since the shift
    # only moves mass to the right
    eps, L = 0.1, 40.0
    n_hi = math.ceil(1.0 / eps) - 1
    radius = n_hi + math.ceil(L * math.log(1e10)) + 8
    bank = shift_bank(radius)
    rows = annulus_samples(bank, eps, L)
    assert all(1 / (2 * eps) < abs(n) < 1 / eps for _, n, _ in rows)
    right_min = min(v for _, n, v in rows if n > 0)
    left_max = max(v for _, n, v in rows if n < 0)
    assert right_min == pytest.approx(math.exp(-2.0 * (n_hi + 1) / L), rel=1e-8)
    assert left_max <= 1e-18
    assert resolvent_window_scan(bank, eps, L) <= 1e-18


def test_annulus_scan_tm_positive():
    eps = 0.1
    L = 4.0 / eps
    n_hi = math.ceil(1.0 / eps) - 1
    radius = n_hi + math.ceil(L * math.log(1e10)) + 8
    bank = tm_bank(radius)
    floor_val = resolvent_window_scan(bank, eps, L)
    assert floor_val > 0.0


def test_annulus_scan_empty_window():
    bank = shift_bank(400)
    with pytest.raises(ValueError, match="empty spectral window"):
        resolvent_window_scan(bank, 0.1, 1.0)  # e^{1/L} - 1 = 1.72 >= eps


def test_certificate_shift_walk():
    L_values = [10.0, 20.0, 40.0]
    radius = certificate_radius(L_values)
    bank = shift_bank(radius)
    report = moment_certificate(bank, 2.0, L_values)
    assert report.all_ok
    for row in report.rows:
        assert row.positivity_ok and row.ordering_ok
        assert row.bound <= row.moment
        assert row.sum_left >= 0.0 and row.sum_right > 0.0
    # ballistic baseline: normalized slope close to 1
    assert report.slope_over_p == pytest.approx(1.0, abs=0.1)


def test_certificate_tm_small_grid():
    L_values = [10.0, 20.0]
    radius = certificate_radius(L_values)
    bank = tm_bank(radius)
    report = moment_certificate(bank, 2.0, L_values)
    assert report.all_ok
    assert report.C_fit > 0.0


def test_certificate_degenerate_p_one():
    L_values = [10.0, 20.0]
    bank = shift_bank(certificate_radius(L_values))
    report = moment_certificate(bank, 1.0, L_values)
    # weight (|n|+1)^1 >= 1 makes the moment >= 1, so the constant bound holds
    assert report.all_ok
    for row in report.rows:
        assert row.moment >= 1.0
        assert row.functional == pytest.approx(row.restricted_sum, rel=1e-12)


def test_certificate_validation():
    bank = shift_bank(800)
    with pytest.raises(ValueError):
        moment_certificate(bank, 2.0, [5.0, 10.0])
    with pytest.raises(ValueError, match="must cover"):
        moment_certificate(shift_bank(100), 2.0, [10.0, 20.0, 40.0])
