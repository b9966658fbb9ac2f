import numpy as np
import pytest

from dsp.diffusion import (
    denoise_loss,
    denoise_loss_batch,
    draw_sample,
    forward_noise,
    make_vp_schedule,
    reverse_step,
    sample_action,
    sample_actions,
)
from dsp.errors import ConfigurationError, IndexOutOfRange, NumericError


class ScaledDenoiser:
    """Predicts ``scale * a_t``; enough structure to exercise the sampler."""

    def __init__(self, act_dim=2, scale=0.0):
        self.act_dim = act_dim
        self.scale = scale

    def forward(self, a_t, t, obs):
        return self.scale * np.asarray(a_t, dtype=np.float64), None

    def backward(self, cache, upstream):
        return upstream


class NoDrawRng:
    def standard_normal(self, *args, **kwargs):
        raise AssertionError("no noise should be drawn at the last step")


def test_default_schedule_values(schedule):
    np.testing.assert_allclose(schedule.beta, [0.1, 0.3, 0.5, 0.7, 0.9])
    np.testing.assert_allclose(schedule.alpha_bar[-1], 0.9 * 0.7 * 0.5 * 0.3 * 0.1)
    assert np.all(np.diff(schedule.alpha_bar) < 0)
    assert schedule.alpha_bar[-1] < 0.01


def test_random_valid_schedules_are_monotone():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 100:
        T = int(rng.integers(3, 40))
        start = float(rng.uniform(0.05, 0.5))
        end = float(rng.uniform(start, 0.99))
        try:
            schedule = make_vp_schedule(T, start, end)
        except ConfigurationError:
            continue
        assert np.all(np.diff(schedule.alpha_bar) < 0)
        assert np.all((schedule.alpha_bar > 0) & (schedule.alpha_bar < 1))
        assert schedule.alpha_bar[-1] < 0.01
        checked += 1


@pytest.mark.parametrize(
    "T,start,end",
    [(0, 0.1, 0.9), (5, 0.0, 0.9), (5, 0.5, 0.4), (5, 0.1, 1.0), (2, 0.1, 0.2)],
)
def test_invalid_schedules_rejected(T, start, end):
    with pytest.raises(ConfigurationError):
        make_vp_schedule(T, start, end)


def test_forward_noise_identity_cases(schedule):
    a0 = np.array([0.3, -0.2])
    np.testing.assert_allclose(forward_noise(a0, 3, np.zeros(2), schedule), np.sqrt(schedule.alpha_bar[2]) * a0)
    assert np.allclose(forward_noise(np.zeros(2), 5, np.ones(2), schedule), np.sqrt(1 - schedule.alpha_bar[4]))


def test_forward_noise_marginal_variance(schedule):
    rng = np.random.default_rng(1)
    eps = rng.standard_normal((100000, 1))
    for t in range(1, schedule.T + 1):
        noised = forward_noise(np.zeros((100000, 1)), t, eps, schedule)
        assert abs(noised.var() / (1 - schedule.alpha_bar[t - 1]) - 1) < 0.02


def test_forward_noise_step_bounds(schedule):
    with pytest.raises(IndexOutOfRange):
        forward_noise(np.zeros(2), 0, np.zeros(2), schedule)
    with pytest.raises(IndexOutOfRange):
        forward_noise(np.zeros(2), 6, np.zeros(2), schedule)


def test_draw_sample_is_seeded(schedule):
    first = draw_sample(np.array([0.1, 0.2]), schedule, np.random.default_rng(5))
    second = draw_sample(np.array([0.1, 0.2]), schedule, np.random.default_rng(5))
    assert first.t == second.t and 1 <= first.t <= 5
    assert np.array_equal(first.a_t, second.a_t)


def test_zero_denoiser_loss_equals_noise_power(schedule):
    rng = np.random.default_rng(2)
    loss, upstream = denoise_loss(ScaledDenoiser(), np.zeros(3), np.array([0.2, -0.1]), rng, schedule)
    replay = np.random.default_rng(2)
    replay.integers(1, 6, size=1)
    eps = replay.standard_normal((1, 2))
    assert loss == pytest.approx(float(np.mean(eps**2)))
    np.testing.assert_allclose(upstream, -2 * eps / 2)


def test_loss_reports_non_finite_index(schedule):
    obs = np.zeros((3, 1))
    actions = np.array([[0.0, 0.0], [np.nan, 0.0], [0.0, 0.0]])
    with pytest.raises(NumericError) as info:
        denoise_loss_batch(ScaledDenoiser(scale=1.0), obs, actions, schedule, np.random.default_rng(0))
    assert info.value.index == 1


def test_last_reverse_step_is_deterministic(schedule):
    a_t = np.array([0.4, -0.4])
    out = reverse_step(ScaledDenoiser(), a_t, 1, np.zeros(3), schedule, NoDrawRng())
    np.testing.assert_allclose(out, a_t / np.sqrt(schedule.alpha[0]))


def test_sample_action_is_clamped(schedule):
    action = sample_action(ScaledDenoiser(scale=-50.0), np.zeros(3), schedule, np.random.default_rng(0))
    assert action.shape == (2,)
    assert np.all(np.abs(action) <= 1.0)


def test_batched_sampler_matches_single_streams(schedule):
    model = ScaledDenoiser(scale=0.3)
    obs = np.zeros((4, 3))
    batched = sample_actions(model, obs, schedule, [np.random.default_rng([9, i]) for i in range(4)])
    for i in range(4):
        single = sample_action(model, obs[i], schedule, np.random.default_rng([9, i]))
        np.testing.assert_allclose(batched[i], single, rtol=1e-12, atol=1e-12)


class OnesRng:
    def standard_normal(self, shape):
        return np.ones(shape)


def test_default_alpha_bar_worked_example(schedule):
    np.testing.assert_allclose(schedule.alpha_bar, [0.9, 0.63, 0.315, 0.0945, 0.00945])


def test_single_step_schedule():
    schedule = make_vp_schedule(1, 0.999, 0.999)
    assert schedule.T == 1
    np.testing.assert_allclose(schedule.alpha_bar, [0.001])


def test_first_reverse_step_variance(schedule):
    variance = schedule.coefficients(5)[2]
    assert variance == pytest.approx(0.9 * (1 - 0.0945) / (1 - 0.00945))
    assert variance == pytest.approx(0.8227, abs=1e-4)
    a_t = np.array([0.5, -0.5])
    out = reverse_step(ScaledDenoiser(), a_t, 5, np.zeros(3), schedule, OnesRng())
    np.testing.assert_allclose(out, a_t / np.sqrt(0.1) + np.sqrt(variance))
