import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdepca.errors import DivergedError, ShapeError
from sdepca.integrators import (EM_SDE, EXACT_GBM, TRAJECTORY_COLUMNS,
                                em_sde_path, em_sdepca_path, gbm_exact_path, strong_error_study)
from sdepca.model import GridSpec, make_linear_system, make_scalar_linear, make_scalar_system
from sdepca.paths import IncrementPlan, generate_increments


def _dw(grid, m_bm=1, seed=0):
    return generate_increments(IncrementPlan(seed, 0, grid.n_steps, grid.h, m_bm))


def test_one_step_hand_value():
    spec = make_scalar_linear(-1.0, 0.5)
    grid = GridSpec(0.1, 1, 0.1)
    tr = em_sde_path(spec, [1.0], grid, [0.2])
    assert tr.states[1, 0] == pytest.approx(1.0, abs=1e-15)
    assert tr.scheme == EM_SDE


def test_deterministic_euler():
    spec = make_scalar_linear(-0.6, 0.0, -0.4, 0.0)
    grid = GridSpec(1.0, 20, 3.0)
    tr = em_sde_path(spec, [1.0], grid, np.zeros(grid.n_steps))
    n = np.arange(grid.n_steps + 1)
    np.testing.assert_allclose(tr.states[:, 0], (1 - grid.h) ** n, rtol=0, atol=1e-12)


def test_block_recursion_hand_value():
    spec = make_scalar_linear(0.0, 0.0, -1.0, 0.0)
    grid = GridSpec(1.0, 2, 1.0)
    tr = em_sdepca_path(spec, [1.0], grid, np.zeros(2))
    np.testing.assert_allclose(tr.states[:, 0], [1.0, 0.5, 0.0], atol=1e-15)
    # the SDE scheme uses the moving state instead: 1, 0.5, 0.25
    np.testing.assert_allclose(em_sde_path(spec, [1.0], grid, np.zeros(2)).states[:, 0],
                               [1.0, 0.5, 0.25], atol=1e-15)


@pytest.mark.parametrize("scheme", [em_sde_path, em_sdepca_path])
def test_origin_is_equilibrium(scheme, testbed_spec):
    grid = GridSpec(0.5, 5, 2.0)
    tr = scheme(testbed_spec, [0.0], grid, _dw(grid))
    assert np.all(tr.states == 0.0)
    nl = make_scalar_system(("sin", -1.0), ("tanh", 0.5), ("tanh", 0.3), ("sin", 0.2))
    assert np.all(scheme(nl, [0.0], grid, _dw(grid)).states == 0.0)


def test_trajectory_shape_and_start(testbed_spec):
    grid = GridSpec(0.5, 4, 2.0)
    tr = em_sdepca_path(testbed_spec, [1.5], grid, _dw(grid))
    assert tr.states.shape == (grid.n_steps + 1, 1)
    assert len(tr.times) == grid.n_steps + 1
    assert tr.states[0, 0] == 1.5
    np.testing.assert_allclose(tr.times, np.arange(grid.n_steps + 1) * grid.h)


def test_delayed_argument_is_block_start(testbed_spec):
    # replay the scheme by hand with the stored delayed states
    grid = GridSpec(0.3, 3, 1.2)
    dw = _dw(grid, seed=3)[:, 0]
    tr = em_sdepca_path(testbed_spec, [1.0], grid, dw)
    a, b, c, d = testbed_spec.scalar_coefficients()
    for n in range(grid.n_steps):
        x = tr.states[n, 0]
        v = tr.delayed_state(n)[0]
        assert v == tr.states[(n // 3) * 3, 0]
        nxt = x + (a * x + c * v) * grid.h + (b * x + d * v) * dw[n]
        assert tr.states[n + 1, 0] == pytest.approx(nxt, rel=1e-14, abs=1e-300)


def _random_linear(rng, d, m_bm):
    return make_linear_system(rng.normal(0, 0.7, (d, d)), rng.normal(0, 0.4, (m_bm, d, d)),
                              rng.normal(0, 0.5, (d, d)), rng.normal(0, 0.3, (m_bm, d, d)))


@pytest.mark.parametrize("d,m_bm", [(1, 1), (2, 1), (2, 2), (3, 2)])
def test_coincidence_without_delay(d, m_bm, rng):
    for _ in range(10):
        full = _random_linear(rng, d, m_bm)
        spec = make_linear_system(full.A, full.Bs, np.zeros((d, d)), np.zeros((m_bm, d, d)))
        grid = GridSpec(0.25, int(rng.integers(1, 6)), 1.0)
        x0 = rng.normal(size=d)
        dw = _dw(grid, m_bm, int(rng.integers(2**32)))
        assert np.array_equal(em_sdepca_path(spec, x0, grid, dw).states,
                              em_sde_path(spec, x0, grid, dw).states)


@pytest.mark.parametrize("d,m_bm", [(1, 1), (2, 2)])
def test_coincidence_single_substep(d, m_bm, rng):
    for _ in range(10):
        spec = _random_linear(rng, d, m_bm)
        grid = GridSpec(0.05, 1, 1.0)
        x0 = rng.normal(size=d)
        dw = _dw(grid, m_bm, int(rng.integers(2**32)))
        assert np.array_equal(em_sdepca_path(spec, x0, grid, dw).states,
                              em_sde_path(spec, x0, grid, dw).states)


def test_coincidence_nonlinear():
    spec = make_scalar_system(("sin", -1.0), ("tanh", 0.5), ("tanh", 0.3), ("sin", 0.2))
    grid = GridSpec(0.1, 1, 2.0)
    dw = _dw(grid)
    assert np.array_equal(em_sdepca_path(spec, [0.7], grid, dw).states,
                          em_sde_path(spec, [0.7], grid, dw).states)


def test_nonlinear_step_by_hand():
    spec = make_scalar_system(("sin", -1.0), ("tanh", 0.5), ("tanh", 0.3), ("sin", 0.2))
    grid = GridSpec(0.2, 2, 0.4)
    dw = _dw(grid, seed=8)[:, 0]
    tr = em_sdepca_path(spec, [0.7], grid, dw)
    x = 0.7
    v = x
    for n in range(grid.n_steps):
        if n % 2 == 0:
            v = x
        x = x + (-math.sin(x) + 0.3 * math.tanh(v)) * grid.h \
            + (0.5 * math.tanh(x) + 0.2 * math.sin(v)) * dw[n]
        assert tr.states[n + 1, 0] == pytest.approx(x, rel=1e-13)


@given(st.floats(-4, 4).filter(lambda s: abs(s) > 1e-3), st.integers(0, 2**31),
       st.sampled_from([1, 2, 5]))
def test_linearity(s, seed, m_sub):
    rng = np.random.default_rng(seed)
    spec = _random_linear(rng, 2, 2)
    grid = GridSpec(0.2, m_sub, 1.0)
    x0 = rng.normal(size=2)
    dw = _dw(grid, 2, seed)
    for path in (em_sde_path, em_sdepca_path):
        base = path(spec, x0, grid, dw).states
        scaled = path(spec, s * x0, grid, dw).states
        np.testing.assert_allclose(scaled, s * base, rtol=1e-10, atol=1e-12)


def test_divergence_reports_first_step():
    spec = make_scalar_linear(30.0, 0.0)
    grid = GridSpec(1.0, 1, 20.0)
    with pytest.raises(DivergedError) as exc:
        em_sde_path(spec, [1.0], grid, np.zeros(grid.n_steps))
    # 31^n passes 1e12 first at n = 9
    assert exc.value.step == 9
    assert exc.value.exit_code == 3
    nl = make_scalar_system(("linear", 30.0), ("linear", 0.0))
    with pytest.raises(DivergedError) as exc:
        em_sdepca_path(nl, [1.0], grid, np.zeros(grid.n_steps))
    assert exc.value.step == 9


def test_increment_shape_checked(testbed_spec):
    grid = GridSpec(0.5, 2, 1.0)
    with pytest.raises(ShapeError):
        em_sde_path(testbed_spec, [1.0], grid, np.zeros(3))
    with pytest.raises(ShapeError):
        em_sde_path(testbed_spec, [1.0, 2.0], grid, np.zeros(4))


def test_gbm_trivial_cases():
    grid = GridSpec(0.25, 4, 2.0)
    dw = _dw(grid)
    tr = gbm_exact_path(-0.7, 0.0, 2.0, grid, dw)
    np.testing.assert_allclose(tr.states[:, 0], 2.0 * np.exp(-0.7 * tr.times), rtol=1e-14)
    assert np.all(gbm_exact_path(0.0, 0.0, 3.0, grid, dw).states == 3.0)
    assert tr.scheme == EXACT_GBM


def test_gbm_uses_running_sum():
    grid = GridSpec(1.0, 1, 3.0)
    tr = gbm_exact_path(0.1, 0.4, 1.0, grid, [0.3, -0.5, 0.1])
    w = np.array([0.0, 0.3, -0.2, -0.1])
    t = np.arange(4.0)
    np.testing.assert_allclose(tr.states[:, 0], np.exp((0.1 - 0.08) * t + 0.4 * w), rtol=1e-14)


def test_trajectory_rows():
    spec = make_linear_system(-np.eye(2), np.zeros((1, 2, 2)), np.zeros((2, 2)),
                              np.zeros((1, 2, 2)))
    grid = GridSpec(0.5, 1, 1.0)
    rows = em_sde_path(spec, [1.0, 2.0], grid, np.zeros(2)).rows()
    assert len(rows[0]) == len(TRAJECTORY_COLUMNS)
    assert rows[:3] == [(0, 0, 0.0, 0, 1.0), (0, 0, 0.0, 1, 2.0), (0, 1, 0.5, 0, 0.5)]


def test_strong_error_half_order():
    table = strong_error_study(-0.5, 0.5, levels=range(4, 8), p=2, n_paths=4000, seed=1)
    assert abs(table.slope - 1.0) < 0.2
    # mean-square error halves when h halves; the RMS error shrinks by about sqrt(2)
    ratios = table.rms_error[:-1] / table.rms_error[1:]
    assert np.all((ratios > 1.2) & (ratios < 1.7))
    assert np.all(np.diff(table.h) < 0)
