import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from beambai.environment import (CaseStudyChannel, EnvironmentSpec, SlotLaw, StationaryGainPair,
                                 channel_to_means, derive_rng, directivity_gain, group_mean_var,
                                 make_changing, make_stationary, sample_beam, sample_block)
from oracles import free_space_snr_db


def test_derive_rng_is_positional():
    a = derive_rng(4, 1, 2, 0).standard_normal(3)
    b = derive_rng(4, 1, 2, 0).standard_normal(3)
    c = derive_rng(4, 1, 3, 0).standard_normal(3)
    assert_allclose(a, b)
    assert not np.allclose(a, c)


def test_sampler_mean_law_of_large_numbers():
    env = EnvironmentSpec(2, (1.0, 0.5), 0.5)
    x = sample_block(env, np.zeros(1, dtype=int)[None, :], np.arange(1, 10**6 + 1)[:, None], derive_rng(0, 0))
    assert abs(x.mean() - 1.0) <= 4 * math.sqrt(2 * 0.5 / 1e6)
    assert_allclose(x.var(), 2 * 0.5 * 1.0, rtol=0.01)


def test_zero_noise_is_deterministic():
    env = EnvironmentSpec(4, (0.3, 0.9, 0.1, 0.0), 0.0)
    x = sample_block(env, np.arange(4)[None, :], np.arange(1, 6)[:, None], derive_rng(0, 0))
    assert_allclose(x, np.tile([0.3, 0.9, 0.1, 0.0], (5, 1)))
    assert sample_beam(env, 3, 1, derive_rng(0, 1)) == 0.0


def test_rejects_ties_and_bad_sizes():
    with pytest.raises(ValueError):
        EnvironmentSpec(4, (1.0, 1.0, 0.0, 0.0), 0.1)
    EnvironmentSpec(4, (1.0, 1.0, 0.0, 0.0), 0.1, degenerate=True)
    with pytest.raises(ValueError):
        EnvironmentSpec(6, (1.0,) * 6, 0.1)
    with pytest.raises(ValueError):
        EnvironmentSpec(4, (1.0, -1.0, 0.0, 0.0), 0.1)
    with pytest.raises(ValueError):
        EnvironmentSpec(4, (1.0, 0.5, 0.0, 0.0), -0.1)


def test_change_is_applied_after_its_slot():
    env = make_changing([1.0, 0.8, 0.5, 0.2], 0.1, 1.5, SlotLaw.fixed(10), changed_rank=3)
    assert env.change.changed_beam == 2
    assert env.mean_at(2, 10) == 0.5 and env.mean_at(2, 11) == 1.5
    assert env.best_beam(10) == 0 and env.best_beam(11) == 2
    assert env.mu_max == 1.5
    assert env.change.delta_c == pytest.approx(1.0)
    blk = env.mean_block(np.array([[0, 2]]), np.array([[9], [10], [11]]))
    assert_allclose(blk, [[1.0, 0.5], [1.0, 0.5], [1.0, 1.5]])


def test_change_validation():
    with pytest.raises(ValueError):
        make_changing([1.0, 0.5], 0.1, 0.9, SlotLaw.fixed(3), changed_beam=1)
    with pytest.raises(ValueError):
        make_changing([1.0, 0.5], 0.1, 2.0, SlotLaw.fixed(3), changed_beam=1, changed_rank=2)
    env = make_changing([1.0, 0.5], 0.1, 2.0, SlotLaw.uniform(), changed_beam=1)
    with pytest.raises(ValueError):
        env.mean_at(1, 3)
    assert env.realize(100, derive_rng(0, 0)).change.realized


def test_uniform_slot_law_cdf():
    law = SlotLaw.uniform(0, 1024, relative=False)
    draws = np.array([law.sample(1024, derive_rng(0, i)) for i in range(20000)])
    assert abs((draws <= 512).mean() - 0.5) < 0.01
    assert abs(law.cdf(512, 1024) - 0.5) < 0.01


def test_left_skewed_beta_law_mean():
    law = SlotLaw.beta_law(2, 8)
    T = 1000
    rng = derive_rng(1, 0)
    draws = np.array([law.sample(T, rng) for _ in range(100_000)])
    assert abs(draws.mean() - 0.2 * T) < 0.01 * T
    assert law.mean(T) == pytest.approx(0.2 * T)


def test_fixed_law_clamps_to_horizon():
    assert SlotLaw.fixed(5000).window(100) == (100, 100)
    with pytest.raises(ValueError):
        SlotLaw(kind="poisson")
    with pytest.raises(ValueError):
        SlotLaw.uniform(0.8, 0.2)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(10, 5000))
def test_slot_law_samples_stay_in_window(u, v, T):
    lo, hi = sorted((u, v))
    law = SlotLaw.uniform(lo, hi)
    a, b = law.window(T)
    t = law.sample(T, derive_rng(0, T))
    assert a <= t <= b
    assert law.cdf(b, T) == 1.0


def test_group_mean_var_single_user():
    env = make_stationary(16, StationaryGainPair(1.0, 0.0, 3), 0.25)
    mu, var = group_mean_var(env, [1, 3, 5, 7, 9, 11, 13, 15], 1)
    assert_allclose(mu, 2.0 / 16)
    assert_allclose(var, 2 * 0.25 * 2.0 / 16)


def test_misaligned_beams_have_zero_gain():
    env = channel_to_means(CaseStudyChannel(), 64, best_index=5)
    assert sum(m > 0 for m in env.means) == 1
    assert env.best_beam() == 5


def test_reference_snr_free_space():
    ch = CaseStudyChannel(distance_m=100.0)
    expect = free_space_snr_db(100.0, 28e9, 40.0, 1e9, 0.0)
    assert_allclose(10 * math.log10(ch.ref_snr), expect, atol=1e-9)
    assert_allclose(channel_to_means(ch, 16).means[0], ch.ref_snr * 2 * math.pi / 16)
    assert directivity_gain(64) == pytest.approx(2 * math.pi / 64)


def test_log_distance_matches_free_space_at_exponent_two():
    a = CaseStudyChannel(distance_m=250.0)
    b = CaseStudyChannel(distance_m=250.0, pathloss_model="log_distance", pathloss_exponent=2.0)
    assert_allclose(a.ref_snr, b.ref_snr, rtol=1e-12)
    with pytest.raises(ValueError):
        CaseStudyChannel(pathloss_model="ray_tracing")
