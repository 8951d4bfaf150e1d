import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ttm.schedule import (
    NoiseSchedule,
    ddim_step,
    eps_from_v,
    make_cosine_schedule,
    q_sample,
    timestep_subsequence,
    v_target,
    z0_from_v,
)

# scratch transcription of cos((t/T + s)/(1 + s) * pi/2) / cos(s/(1 + s) * pi/2), s = 0.008
ALPHA_500_OF_1000 = 0.7027400589411691


def two_point_schedule(alpha: float) -> NoiseSchedule:
    """T=1 schedule whose t=1 entry has the requested alpha."""
    a = np.array([1.0, alpha])
    return NoiseSchedule(1, a, np.sqrt(1 - a**2))


@pytest.mark.parametrize("T", [1, 2, 10, 100, 1000])
def test_cosine_invariants(T):
    s = make_cosine_schedule(T)
    assert s.alpha.shape == (T + 1,)
    np.testing.assert_allclose(s.alpha**2 + s.sigma**2, 1.0, atol=1e-9)
    assert np.all(np.diff(s.alpha) <= 0)
    assert np.all(np.diff(s.sigma) >= 0)
    assert s.alpha[0] >= 0.999
    assert s.alpha[T] <= 0.02


def test_clean_endpoint_exact():
    s = make_cosine_schedule(1000)
    assert s.alpha[0] ** 2 + s.sigma[0] ** 2 == 1.0


def test_cosine_matches_scratch_formula():
    assert make_cosine_schedule(1000).alpha[500] == pytest.approx(ALPHA_500_OF_1000, abs=1e-12)


def test_t10_noise_end():
    assert make_cosine_schedule(10).alpha[10] <= 0.02


@pytest.mark.parametrize("T", [0, -3])
def test_rejects_empty_schedule(T):
    with pytest.raises(ValueError):
        make_cosine_schedule(T)


def test_schedule_is_immutable():
    s = make_cosine_schedule(10)
    with pytest.raises(ValueError):
        s.alpha[3] = 0.5


def test_q_sample_endpoints():
    s = make_cosine_schedule(50)
    z0 = torch.randn(3, 4, 4, dtype=torch.float64)
    eps = torch.randn(3, 4, 4, dtype=torch.float64)
    assert torch.equal(q_sample(z0, eps, 0, s), z0)
    assert torch.equal(q_sample(z0, eps, 50, s), eps)


def test_q_sample_hand_arithmetic():
    s = two_point_schedule(math.sqrt(2) / 2)
    out = q_sample(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 1, s)
    np.testing.assert_allclose(out, [math.sqrt(2), math.sqrt(2)], atol=1e-12)


def test_q_sample_errors():
    s = make_cosine_schedule(10)
    with pytest.raises(ValueError):
        q_sample(torch.zeros(2), torch.zeros(3), 1, s)
    with pytest.raises(ValueError):
        q_sample(torch.zeros(2), torch.zeros(2), 11, s)
    with pytest.raises(ValueError):
        q_sample(torch.zeros(2), torch.zeros(2), -1, s)


def test_v_target_endpoints_and_value():
    z0, eps = np.array([1.5, -2.0]), np.array([0.25, 3.0])
    np.testing.assert_array_equal(v_target(z0, eps, 0, two_point_schedule(0.0)), eps)  # alpha=1 at t=0
    np.testing.assert_array_equal(v_target(z0, eps, 1, two_point_schedule(0.0)), -z0)
    out = v_target(np.array([1.0]), np.array([0.0]), 1, two_point_schedule(math.sqrt(2) / 2))
    np.testing.assert_allclose(out, [-math.sqrt(2) / 2], atol=1e-12)
    with pytest.raises(ValueError):
        v_target(np.zeros(2), np.zeros(1), 0, two_point_schedule(0.5))


def test_clean_case_inversion_is_identity():
    s = make_cosine_schedule(10)
    z_t, v = torch.randn(5, dtype=torch.float64), torch.randn(5, dtype=torch.float64)
    assert torch.equal(z0_from_v(z_t, v, 0, s), z_t)


def test_round_trip_1000_random_triples():
    rng = np.random.default_rng(1)
    s = make_cosine_schedule(1000)
    z0 = rng.standard_normal((1000, 8))
    eps = rng.standard_normal((1000, 8))
    t = rng.integers(0, 1001, size=1000)
    z_t = q_sample(z0, eps, t, s)
    v = v_target(z0, eps, t, s)
    np.testing.assert_allclose(z0_from_v(z_t, v, t, s), z0, atol=1e-9)
    np.testing.assert_allclose(eps_from_v(z_t, v, t, s), eps, atol=1e-9)


def test_batched_timesteps_broadcast_like_scalar():
    s = make_cosine_schedule(100)
    z0 = torch.randn(4, 2, 3, 3, dtype=torch.float64)
    eps = torch.randn_like(z0)
    t = torch.tensor([0, 10, 50, 100])
    batched = q_sample(z0, eps, t, s)
    for i in range(4):
        assert torch.equal(batched[i], q_sample(z0[i], eps[i], int(t[i]), s))


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-10, 10), t=st.integers(0, 100))
def test_q_sample_is_linear(a, t):
    s = make_cosine_schedule(100)
    rng = np.random.default_rng(0)
    z0, eps = rng.standard_normal(6), rng.standard_normal(6)
    # one rounding per product, so compare at machine precision
    np.testing.assert_allclose(q_sample(a * z0, a * eps, t, s), a * q_sample(z0, eps, t, s),
                               rtol=1e-15, atol=1e-14)


def test_q_sample_linear_exact_for_powers_of_two():
    s = make_cosine_schedule(100)
    z0, eps = np.random.default_rng(3).standard_normal((2, 10))
    for a in (0.5, 2.0, -4.0):
        np.testing.assert_array_equal(q_sample(a * z0, a * eps, 37, s), a * q_sample(z0, eps, 37, s))


def _oracle_v(z0, s):
    def v_of(z_t, t):
        a, sg = s.alpha[t], s.sigma[t]
        eps = (z_t - a * z0) / sg
        return a * eps - sg * z0
    return v_of


def test_ddim_single_jump_recovers_z0():
    s = make_cosine_schedule(1000)
    rng = np.random.default_rng(2)
    z0, eps = rng.standard_normal(16), rng.standard_normal(16)
    z_T = q_sample(z0, eps, 1000, s)
    out = ddim_step(z_T, v_target(z0, eps, 1000, s), 1000, 0, s)
    np.testing.assert_allclose(out, z0, atol=1e-12)


def test_ddim_rejects_non_decreasing():
    s = make_cosine_schedule(10)
    with pytest.raises(ValueError):
        ddim_step(np.zeros(2), np.zeros(2), 5, 5, s)
    with pytest.raises(ValueError):
        ddim_step(np.zeros(2), np.zeros(2), 4, 5, s)


@pytest.mark.parametrize("n", [1, 7, 50, 200])
def test_ddim_oracle_trajectory(n):
    s = make_cosine_schedule(1000)
    rng = np.random.default_rng(n)
    z0 = rng.standard_normal(32)
    v_of = _oracle_v(z0, s)
    z = rng.standard_normal(32)
    ts = timestep_subsequence(1000, n)
    for t, tp in zip(ts[:-1], ts[1:]):
        z = ddim_step(z, v_of(z, t), t, tp, s)
    np.testing.assert_allclose(z, z0, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 999), min_size=0, max_size=12, unique=True))
def test_ddim_any_monotone_subsequence(mid):
    s = make_cosine_schedule(1000)
    z0 = np.linspace(-2, 2, 8)
    v_of = _oracle_v(z0, s)
    ts = [1000] + sorted(mid, reverse=True) + [0]
    z = np.cos(np.arange(8.0))
    for t, tp in zip(ts[:-1], ts[1:]):
        z = ddim_step(z, v_of(z, t), t, tp, s)
    np.testing.assert_allclose(z, z0, atol=1e-5)


def test_timestep_subsequence():
    assert timestep_subsequence(1000, 1) == [1000, 0]
    ts = timestep_subsequence(1000, 200)
    assert len(ts) == 201 and ts[0] == 1000 and ts[-1] == 0
    assert all(a > b for a, b in zip(ts, ts[1:]))
    with pytest.raises(ValueError):
        timestep_subsequence(10, 11)
