import numpy as np
import pytest
from hypothesis import given, strategies as st

from nftlab import diffusion as dif


def test_single_step_zero_beta():
    s = dif.make_schedule(1, 0.0, 0.0)
    np.testing.assert_array_equal(s.alpha_bar, [1.0])


def test_two_step_product_by_hand():
    s = dif.make_schedule(2, 0.5, 0.5)
    np.testing.assert_allclose(s.alpha_bar, [0.5, 0.25])


@given(T=st.integers(1, 200), lo=st.floats(0, 0.5), width=st.floats(0, 0.49))
def test_alpha_bar_monotone_and_positive(T, lo, width):
    s = dif.make_schedule(T, lo, lo + width)
    assert np.all(np.diff(s.alpha_bar) <= 0)
    assert s.alpha_bar[0] <= 1 and s.alpha_bar[-1] > 0


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.3, 0.1), (10, 0.1, 1.0), (10, -0.1, 0.2)])
def test_schedule_rejects_bad_ranges(args):
    with pytest.raises(ValueError):
        dif.make_schedule(*args)


def test_noise_identity_and_limits(rng):
    x0 = rng.uniform(size=(3, 4))
    clean = dif.make_schedule(1, 0.0, 0.0)
    s = dif.forward_noise(clean, x0, 1, rng)
    np.testing.assert_array_equal(s.x_t, x0)
    loud = dif.make_schedule(400, 0.2, 0.2)
    s = dif.forward_noise(loud, x0, 400, rng)
    np.testing.assert_allclose(s.x_t, s.eps, atol=1e-15)


def test_sample_satisfies_construction_identity(rng):
    sched = dif.make_schedule()
    x0 = rng.uniform(size=(5, 6))
    t = rng.integers(1, sched.T + 1, size=5)
    s = dif.forward_noise(sched, x0, t, rng)
    ab = sched.alpha_bar[t - 1][:, None]
    np.testing.assert_allclose(s.x_t, np.sqrt(ab) * x0 + np.sqrt(1 - ab) * s.eps, atol=1e-6)


def test_t_out_of_range():
    sched = dif.make_schedule(10)
    for t in (0, 11):
        with pytest.raises(ValueError):
            dif.forward_noise(sched, np.zeros((1, 2)), t, np.random.default_rng(0))


@given(seed=st.integers(0, 2**32 - 1))
def test_recover_x0(seed):
    rng = np.random.default_rng(seed)
    sched = dif.make_schedule()
    x0 = rng.uniform(size=(4, 8))
    t = rng.integers(1, sched.T + 1, size=4)
    s = dif.forward_noise(sched, x0, t, rng)
    np.testing.assert_allclose(dif.recover_x0(sched, s.x_t, t, s.eps), x0, atol=1e-5)


def test_denoise_batch_single_clean_step():
    sched = dif.make_schedule(1, 0.0, 0.0)
    x0 = np.array([[0.25, 0.5]])
    rng = np.random.default_rng(3)
    inputs, eps = dif.build_denoise_batch(sched, x0, rng)
    ref = np.random.default_rng(3)
    ref.integers(1, 2, size=1)
    np.testing.assert_array_equal(inputs, np.array([[0.25, 0.5, 1.0]], np.float32))
    np.testing.assert_array_equal(eps, ref.standard_normal((1, 2)).astype(np.float32))


def test_denoise_batch_deterministic():
    sched = dif.make_schedule()
    x0 = np.random.default_rng(0).uniform(size=(8, 4))
    a = dif.build_denoise_batch(sched, x0, np.random.default_rng(9))
    b = dif.build_denoise_batch(sched, x0, np.random.default_rng(9))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_denoise_targets_standard_normal():
    sched = dif.make_schedule()
    _, eps = dif.build_denoise_batch(sched, np.zeros((20000, 4)), np.random.default_rng(1))
    assert abs(eps.mean()) < 4 / np.sqrt(eps.size)
    assert abs(eps.var() - 1) < 0.03


def test_denoise_times_cover_range():
    sched = dif.make_schedule(5)
    inputs, _ = dif.build_denoise_batch(sched, np.zeros((5000, 2)), np.random.default_rng(2))
    assert set(np.round(inputs[:, -1] * 5).astype(int)) == {1, 2, 3, 4, 5}


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        dif.build_denoise_batch(dif.make_schedule(), np.zeros((0, 3)), np.random.default_rng(0))
