import numpy as np

from tiltlab.autodiff import param_distance
from tiltlab.diffusion import sample_trajectory
from tiltlab.finetune import FineTuneConfig, ppo_signals, ppo_surrogate_value, run_finetune
from tiltlab.rewards import BlackBoxReward, LinearReward
from tiltlab.streams import make_rng


def test_surrogate_equals_unclipped_at_snapshot(residual16, analytic16):
    # At theta = theta_old every ratio is exactly one, inside the band.
    traj = sample_trajectory(residual16, make_rng(1), n=32)
    signals = ppo_signals(residual16, analytic16, traj, LinearReward([1.0]), alpha=0.5)
    clipped = ppo_surrogate_value(residual16, traj, signals, clip=0.2, clipped=True)
    plain = ppo_surrogate_value(residual16, traj, signals, clip=0.2, clipped=False)
    assert clipped == plain


def test_surrogate_equals_unclipped_inside_band(residual16, analytic16):
    # Perturb the parameters a little: ratios move but stay inside the
    # band, and the two surrogates remain bitwise equal.
    rng = make_rng(2)
    perturbed = residual16.with_params(
        {k: v + 1e-4 * rng.standard_normal(v.shape) for k, v in residual16.params.items()}
    )
    traj = sample_trajectory(residual16, make_rng(3), n=32)
    signals = ppo_signals(residual16, analytic16, traj, LinearReward([1.0]), alpha=0.5)

    from tiltlab.diffusion import log_probs_under

    ratios = np.exp(log_probs_under(perturbed, traj) - traj.log_probs)
    assert ratios.min() > 0.8 and ratios.max() < 1.2
    clipped = ppo_surrogate_value(perturbed, traj, signals, clip=0.2, clipped=True)
    plain = ppo_surrogate_value(perturbed, traj, signals, clip=0.2, clipped=False)
    assert clipped == plain


def test_clip_engages_outside_band(residual16, analytic16):
    rng = make_rng(4)
    perturbed = residual16.with_params(
        {k: v + 0.5 * rng.standard_normal(v.shape) for k, v in residual16.params.items()}
    )
    traj = sample_trajectory(residual16, make_rng(5), n=32)
    signals = ppo_signals(residual16, analytic16, traj, LinearReward([1.0]), alpha=0.5)
    clipped = ppo_surrogate_value(perturbed, traj, signals, clip=0.2, clipped=True)
    plain = ppo_surrogate_value(perturbed, traj, signals, clip=0.2, clipped=False)
    assert clipped != plain


def test_reward_ascent_without_regularization(analytic16, residual16):
    cfg = FineTuneConfig("ppo", alpha=0.0, batch=256, iterations=200, lr=1e-2, seed=3)
    reward = LinearReward([1.0])
    result = run_finetune(residual16, reward, cfg)
    pre_mean = sample_trajectory(residual16, make_rng(6), 4000).terminal.mean()
    tuned_mean = sample_trajectory(result.policy, make_rng(6), 4000).terminal.mean()
    assert tuned_mean - pre_mean >= 0.5


def test_black_box_reward_is_accepted(residual16):
    spec = BlackBoxReward(lambda x: np.tanh(x[:, 0]), differentiable=False)
    cfg = FineTuneConfig("ppo", alpha=0.5, batch=16, iterations=3, lr=1e-3, seed=4)
    result = run_finetune(residual16, spec, cfg)
    assert len(result.records) == 3


def test_zero_reward_keeps_parameters_exactly(residual16):
    # r = 0 and theta = theta_pre: every signal vanishes, so the gradients
    # are identically zero and the parameters never move.
    cfg = FineTuneConfig("ppo", alpha=1.0, batch=32, iterations=50, lr=1e-2, seed=5)
    result = run_finetune(residual16, LinearReward([0.0]), cfg)
    assert param_distance(result.policy.params, residual16.params) == 0.0


def test_records_are_deterministic(residual16):
    cfg = FineTuneConfig("ppo", alpha=0.5, batch=16, iterations=4, lr=1e-3, seed=6)
    a = run_finetune(residual16, LinearReward([1.0]), cfg)
    b = run_finetune(residual16, LinearReward([1.0]), cfg)
    for ra, rb in zip(a.records, b.records):
        assert ra.mean_reward == rb.mean_reward
        assert ra.loss == rb.loss
        assert ra.grad_norm == rb.grad_norm
