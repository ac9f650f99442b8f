"""Diffusion schedule and forward/reverse algebra against straight-line oracles."""

import numpy as np
import pytest
import torch

from motionfill.diffusion import (
    DiffusionSchedule,
    Normalizer,
    cosine_schedule,
    ddpm_step,
    fit_normalizer,
    impute_keyframes,
    mask_local_features,
    q_sample,
)


@pytest.fixture(scope="module")
def schedule():
    return cosine_schedule()


def test_schedule_invariants(schedule):
    ab = schedule.alpha_bar
    assert schedule.T == 1000
    assert ab.shape == (1000,)
    assert np.all(np.diff(ab) < 0)
    assert 0.99 < ab[0] < 1.0
    assert ab[-1] < 1e-3
    assert np.all(schedule.beta > 0) and np.all(schedule.beta <= 0.999)


def test_schedule_midpoint_closed_form(schedule):
    # beta clipping only bites near t=T, so the cumprod up to T/2 must
    # still equal the direct squared-cosine ratio.
    s = 0.008
    t, T = 500, 1000

    def f(u):
        return np.cos(((u / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2

    assert abs(schedule.alpha_bar[t - 1] - f(t) / f(0)) < 1e-9


def test_schedule_posterior_variance(schedule):
    assert schedule.posterior_var[0] == 0.0
    rng = np.random.default_rng(0)
    for t in rng.integers(2, 1001, size=20):
        ab_prev = schedule.alpha_bar[t - 2]
        ab = schedule.alpha_bar[t - 1]
        oracle = (1.0 - ab_prev) / (1.0 - ab) * schedule.beta[t - 1]
        assert abs(schedule.posterior_var[t - 1] - oracle) < 1e-15


def test_schedule_alpha_bar_prev(schedule):
    prev = schedule.alpha_bar_prev
    assert prev[0] == 1.0
    assert np.array_equal(prev[1:], schedule.alpha_bar[:-1])


def test_schedule_rejects_tiny_t():
    with pytest.raises(ValueError):
        cosine_schedule(T=1)


def test_q_sample_zero_noise(schedule):
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((5, 7))
    for t in (1, 250, 1000):
        out = q_sample(x0, t, np.zeros_like(x0), schedule)
        assert np.allclose(out, np.sqrt(schedule.alpha_bar[t - 1]) * x0, atol=1e-15)


def test_q_sample_terminal_is_noise(schedule):
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((40, 11))
    eps = rng.standard_normal((40, 11))
    out = q_sample(x0, schedule.T, eps, schedule)
    assert np.linalg.norm(out - eps) < 0.05 * np.linalg.norm(eps)


def test_q_sample_variance(schedule):
    rng = np.random.default_rng(3)
    t = 300
    eps = rng.standard_normal((10_000, 8))
    out = q_sample(np.zeros((10_000, 8)), t, eps, schedule)
    target = 1.0 - schedule.alpha_bar[t - 1]
    assert abs(out.var() - target) < 0.03 * target


def test_q_sample_rejects_bad_t(schedule):
    x = np.zeros((2, 3))
    for t in (0, 1001, -5):
        with pytest.raises(ValueError):
            q_sample(x, t, x, schedule)


def test_q_sample_array_t_matches_scalar(schedule):
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((3, 6, 5))
    eps = rng.standard_normal((3, 6, 5))
    ts = np.array([1, 500, 1000])
    out = q_sample(x0, ts, eps, schedule)
    for i, t in enumerate(ts):
        assert np.allclose(out[i], q_sample(x0[i], int(t), eps[i], schedule), atol=1e-15)


def test_q_sample_torch_matches_numpy(schedule):
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((2, 4, 3))
    eps = rng.standard_normal((2, 4, 3))
    a = q_sample(x0, 123, eps, schedule)
    b = q_sample(torch.as_tensor(x0), 123, torch.as_tensor(eps), schedule)
    assert np.allclose(a, b.numpy(), atol=1e-12)


def test_impute_all_or_nothing():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((11, 4))
    ref = rng.standard_normal((11, 4))
    assert np.array_equal(impute_keyframes(x, ref, np.ones(11)), ref)
    assert np.array_equal(impute_keyframes(x, ref, np.zeros(11)), x)


def test_impute_rows_elementwise():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((121, 201))
    ref = rng.standard_normal((121, 201))
    m = np.zeros(121)
    m[[0, 60, 120]] = 1.0
    out = impute_keyframes(x, ref, m)
    for i in range(121):
        src = ref if i in (0, 60, 120) else x
        assert np.array_equal(out[i], src[i])


def test_impute_torch_path():
    rng = np.random.default_rng(8)
    x = torch.as_tensor(rng.standard_normal((2, 9, 4)))
    ref = torch.as_tensor(rng.standard_normal((2, 9, 4)))
    m = torch.zeros(2, 9)
    m[:, 3] = 1.0
    out = impute_keyframes(x, ref, m)
    assert torch.equal(out[:, 3], ref[:, 3])
    keep = [i for i in range(9) if i != 3]
    assert torch.equal(out[:, keep], x[:, keep])


def test_mask_local_features_rows():
    rng = np.random.default_rng(9)
    c = rng.standard_normal((10, 192))
    m = np.zeros(10)
    m[[2, 5]] = 1.0
    out = mask_local_features(c, m)
    assert np.array_equal(out[[2, 5]], c[[2, 5]])
    assert np.all(out[[0, 1, 3, 4, 6, 7, 8, 9]] == 0.0)
    assert np.array_equal(mask_local_features(c, np.ones(10)), c)
    assert np.all(mask_local_features(c, np.zeros(10)) == 0.0)


def _reference_ddpm_step(x_t, x0_hat, t, schedule, noise):
    ab = schedule.alpha_bar[t - 1]
    ab_prev = 1.0 if t == 1 else schedule.alpha_bar[t - 2]
    beta = schedule.beta[t - 1]
    mu = (
        np.sqrt(ab_prev) * beta / (1.0 - ab) * x0_hat
        + np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab) * x_t
    )
    if t == 1 or noise is None:
        return mu
    var = (1.0 - ab_prev) / (1.0 - ab) * beta
    return mu + np.sqrt(var) * noise


def test_ddpm_step_matches_reference(schedule):
    rng = np.random.default_rng(10)
    x_t = rng.standard_normal((6, 13))
    x0_hat = rng.standard_normal((6, 13))
    noise = rng.standard_normal((6, 13))
    for t in (1, 2, 20, 500, 1000):
        got = ddpm_step(x_t, x0_hat, t, schedule, noise)
        want = _reference_ddpm_step(x_t, x0_hat, t, schedule, noise)
        assert np.max(np.abs(got - want)) < 1e-12


def test_ddpm_step_final_is_noiseless(schedule):
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 5))
    x0 = rng.standard_normal((4, 5))
    noise = rng.standard_normal((4, 5))
    assert np.array_equal(
        ddpm_step(x, x0, 1, schedule, noise), ddpm_step(x, x0, 1, schedule, None)
    )


def test_ddpm_step_fixed_point_when_alpha_bar_constant():
    # With alpha_bar_{t-1} = alpha_bar_t the consistent beta is 0 and the
    # posterior mean must return x_t unchanged when x0_hat = x_t.
    sched = DiffusionSchedule(
        T=2,
        beta=np.array([0.5, 0.0]),
        alpha_bar=np.array([0.5, 0.5]),
        posterior_var=np.array([0.0, 0.0]),
    )
    x = np.random.default_rng(12).standard_normal((3, 4))
    assert np.allclose(ddpm_step(x, x, 2, sched, None), x, atol=1e-15)


def test_ddpm_step_rejects_bad_t(schedule):
    x = np.zeros((2, 2))
    for t in (0, 1001):
        with pytest.raises(ValueError):
            ddpm_step(x, x, t, schedule)


def test_ddpm_step_array_t_matches_scalar(schedule):
    rng = np.random.default_rng(13)
    x_t = rng.standard_normal((3, 8, 4))
    x0 = rng.standard_normal((3, 8, 4))
    noise = rng.standard_normal((3, 8, 4))
    ts = np.array([1, 2, 700])
    out = ddpm_step(x_t, x0, ts, schedule, noise)
    for i, t in enumerate(ts):
        want = ddpm_step(x_t[i], x0[i], int(t), schedule, noise[i])
        assert np.allclose(out[i], want, atol=1e-12)


def test_ddpm_step_torch_matches_numpy(schedule):
    rng = np.random.default_rng(14)
    x_t = rng.standard_normal((2, 5, 3))
    x0 = rng.standard_normal((2, 5, 3))
    noise = rng.standard_normal((2, 5, 3))
    a = ddpm_step(x_t, x0, 77, schedule, noise)
    b = ddpm_step(
        torch.as_tensor(x_t), torch.as_tensor(x0), 77, schedule, torch.as_tensor(noise)
    )
    assert np.allclose(a, b.numpy(), atol=1e-12)


def test_normalizer_round_trip():
    rng = np.random.default_rng(15)
    frames = rng.standard_normal((500, 9)) * rng.uniform(0.1, 5.0, size=9) + rng.uniform(
        -2.0, 2.0, size=9
    )
    norm = fit_normalizer(frames)
    z = norm.apply(frames)
    assert np.max(np.abs(z.mean(axis=0))) < 1e-12
    assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-12
    assert np.max(np.abs(norm.invert(z) - frames)) < 1e-12


def test_normalizer_constant_channel_floor():
    frames = np.ones((50, 3))
    frames[:, 1] = 7.0
    norm = fit_normalizer(frames)
    assert np.all(norm.std >= 1e-4)
    assert np.all(np.isfinite(norm.apply(frames)))


def test_normalizer_torch_matches_numpy():
    rng = np.random.default_rng(16)
    frames = rng.standard_normal((100, 6))
    norm = fit_normalizer(frames)
    x = rng.standard_normal((4, 6))
    assert np.allclose(norm.apply(x), norm.apply(torch.as_tensor(x)).numpy(), atol=1e-12)
    assert np.allclose(norm.invert(x), norm.invert(torch.as_tensor(x)).numpy(), atol=1e-12)
