import math

import numpy as np
import pytest

from adapted_ot.model import ConfigError, TimeGrid
from adapted_ot.noise import (constant_rho, exit_probability_bounds,
                              fourth_moment_truncation_error, replicate_rng,
                              rho_table, sample_correlated_pair,
                              sample_truncated_increment, truncate_increments,
                              truncation_level)


def test_truncation_level_values():
    # direct evaluation of K * sqrt(-h log h)
    assert truncation_level(0.01, 4) == pytest.approx(0.8583864105157388, abs=1e-12)
    assert truncation_level(0.25, 4) == pytest.approx(2.3548200450309493, abs=1e-12)
    assert truncation_level(0.999999, 4) < 0.01


def test_truncation_level_domain():
    with pytest.raises(ConfigError):
        truncation_level(1.0, 4)
    with pytest.raises(ConfigError):
        truncation_level(0.1, 0)


def test_pair_determinism():
    grid = TimeGrid(8)
    a = sample_correlated_pair(grid, constant_rho(0.3), (123, 5), m_sub=4)
    b = sample_correlated_pair(grid, constant_rho(0.3), (123, 5), m_sub=4)
    assert np.array_equal(a.dW, b.dW)
    assert np.array_equal(a.dW_bar, b.dW_bar)
    c = sample_correlated_pair(grid, constant_rho(0.3), (123, 6), m_sub=4)
    assert not np.array_equal(a.dW, c.dW)


def test_perfect_correlations_are_exact():
    grid = TimeGrid(16)
    block = sample_correlated_pair(grid, constant_rho(1.0), 0)
    assert np.array_equal(block.dW_bar, block.dW)
    block = sample_correlated_pair(grid, constant_rho(-1.0), 0)
    assert np.array_equal(block.dW_bar, -block.dW)


def test_zero_correlation_statistics():
    grid = TimeGrid(1)
    n = 20000
    w = np.empty(n)
    w_bar = np.empty(n)
    for i in range(n):
        block = sample_correlated_pair(grid, constant_rho(0.0), (99, i), m_sub=1)
        w[i] = block.step_sums()[0]
        w_bar[i] = block.step_sums_bar()[0]
    corr = np.corrcoef(w, w_bar)[0, 1]
    assert abs(corr) < 3.0 / math.sqrt(n) * 1.5


def test_correlation_law():
    grid = TimeGrid(4)
    rho = 0.6
    n = 20000
    w = np.empty(n)
    w_bar = np.empty(n)
    for i in range(n):
        block = sample_correlated_pair(grid, constant_rho(rho), (5, i), m_sub=2)
        w[i] = block.step_sums().sum()
        w_bar[i] = block.step_sums_bar().sum()
    se = 1.0 / math.sqrt(n)
    assert abs(np.var(w_bar) - 1.0) < 4 * math.sqrt(2) * se
    assert abs(np.mean(w * w_bar) - rho) < 4 * 1.5 * se


def test_rho_table_control():
    control = rho_table([0.0, 0.5], [1.0, -1.0])
    grid = TimeGrid(4)
    block = sample_correlated_pair(grid, control, 11, m_sub=1)
    assert np.array_equal(block.dW_bar[:2], block.dW[:2])
    assert np.array_equal(block.dW_bar[2:], -block.dW[2:])


def test_truncated_clamp_invariant():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = float(rng.uniform(0.01, 0.5))
        barrier = float(rng.uniform(0.05, 2.0))
        m_sub = int(rng.integers(1, 12))
        value, exited = sample_truncated_increment(h, barrier, m_sub,
                                                   (int(rng.integers(1 << 30)),))
        assert abs(value) <= barrier + 1e-15
        if exited:
            assert abs(value) == pytest.approx(barrier)


def test_huge_barrier_is_plain_gaussian():
    value, exited = sample_truncated_increment(0.25, 1e9, 8, (3, 1))
    assert not exited
    rng = replicate_rng((3, 1))
    sub = rng.standard_normal(8) * math.sqrt(0.25 / 8)
    assert value == pytest.approx(np.cumsum(sub)[-1], abs=0.0)


def test_tiny_barrier_exits_immediately():
    n_exit = 0
    for i in range(200):
        value, exited = sample_truncated_increment(0.25, 1e-4, 16, (4, i))
        n_exit += exited
        assert abs(value) <= 1e-4 + 1e-18
    assert n_exit == 200


def test_exit_probability_bounds_values():
    lower, upper = exit_probability_bounds(0.1, truncation_level(0.1, 1))
    # 2 Phibar(1.5174271), 4 Phibar(1.5174271) via erfc
    assert lower == pytest.approx(0.12915887869840684, abs=1e-12)
    assert upper == pytest.approx(0.2583177573968137, abs=1e-12)
    lower, upper = exit_probability_bounds(0.25, 1e-12)
    assert lower == pytest.approx(1.0)
    assert upper == 1.0  # clamped
    _, tail = exit_probability_bounds(0.01, truncation_level(0.01, 4))
    assert tail < 1e-16  # ~1.8e-17: the h^10-scale certificate


def test_exit_frequency_sandwich():
    h = 0.1
    barrier = truncation_level(h, 1)
    lower, upper = exit_probability_bounds(h, barrier)
    rng = replicate_rng(77)
    n = 100000
    sub = rng.standard_normal((n, 16)) * math.sqrt(h / 16)
    _, exited = truncate_increments(sub, barrier)
    freq = exited.mean()
    margin = 4 * math.sqrt(freq * (1 - freq) / n)
    assert lower - margin <= freq <= upper + margin


def test_fourth_moment_no_truncation_is_exact_zero():
    res = fourth_moment_truncation_error(0.1, 4, 20000, seed=1)
    assert res.estimate == 0.0
    assert res.n_exits == 0
    assert res.no_exit
    assert res.within_bound


def test_fourth_moment_k1_bound():
    res = fourth_moment_truncation_error(0.1, 1, 100000, seed=2)
    assert res.n_exits > 0
    assert res.analytic_bound == pytest.approx(6 * 0.01 * math.sqrt(0.1), rel=1e-12)
    assert res.within_bound
