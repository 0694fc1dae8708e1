"""Exponentially reward-weighted regression onto pre-trained transitions.

For each level t the roll-in runs the current policy down to x_t and the
pre-trained policy the rest of the way; the (x_t, x_{t-1}, x_0) tuple is
weighted by exp((r(x_0) - max r) / alpha) and the policy mean regresses
onto x_{t-1} under squared error scaled by the reverse-step variance.
The max shift rescales the loss by a positive constant, leaving the
minimizer untouched while keeping the weights in (0, 1].
"""

from __future__ import annotations

import time

import numpy as np

from ..autodiff import AdamState, Tape, adam_step, gradient
from ..diffusion.policy import PolicyNet, reverse_mean, reverse_mean_on_tape
from ..errors import ContractError
from ..rewards import RewardSpec, eval_reward
from .common import bind_policy, stabilized_weights
from .config import FineTuneConfig, TrainLogRecord


def collect_mle_tuples(
    policy: PolicyNet,
    pre_policy: PolicyNet,
    m: int,
    rng: np.random.Generator,
    final_step_noise: bool = True,
):
    """Per level t: x_t from the current-policy prefix, x_{t-1} and x_0 from
    the pre-trained suffix. Returns (x_t, x_prev, x0) arrays of shape (T, m, d)."""
    s = policy.schedule
    T, d = s.n_steps, policy.dim
    x_t = np.empty((T, m, d))
    x_prev = np.empty((T, m, d))
    x0 = np.empty((T, m, d))
    for t in range(T, 0, -1):
        x = rng.standard_normal((m, d))
        for k in range(T, t, -1):  # current-policy prefix down to x_t
            x = reverse_mean(policy, x, k) + s.rev_std * rng.standard_normal((m, d))
        x_t[t - 1] = x
        for k in range(t, 0, -1):  # pre-trained suffix
            mu = reverse_mean(pre_policy, x, k)
            if k == 1 and not final_step_noise:
                x = mu
            else:
                x = mu + s.rev_std * rng.standard_normal((m, d))
            if k == t:
                x_prev[t - 1] = x
        x0[t - 1] = x
    return x_t, x_prev, x0


def reward_weighted_mle_iteration(
    policy: PolicyNet,
    pre_policy: PolicyNet,
    reward_spec: RewardSpec,
    cfg: FineTuneConfig,
    rng: np.random.Generator,
    opt: AdamState,
    iteration: int = 0,
) -> tuple[PolicyNet, AdamState, TrainLogRecord]:
    if cfg.alpha <= 0.0:
        raise ContractError("weighted MLE requires alpha > 0")
    t0 = time.perf_counter()
    s = policy.schedule
    x_t, x_prev, x0 = collect_mle_tuples(policy, pre_policy, cfg.batch, rng, cfg.final_step_noise)
    rewards = eval_reward(reward_spec, x0.reshape(-1, policy.dim)).reshape(s.n_steps, cfg.batch)
    weights = stabilized_weights(rewards, cfg.alpha)

    params = policy.params
    tape = Tape()
    nodes = bind_policy(tape, policy, trainable=True)
    total = None
    kl_est = 0.0
    for t in range(1, s.n_steps + 1):
        rho = reverse_mean_on_tape(tape, policy, nodes, tape.constant(x_t[t - 1]), t)
        sq = tape.sum_cols(tape.square(tape.sub(tape.constant(x_prev[t - 1]), rho)))
        term = tape.sumall(tape.mul(tape.constant(weights[t - 1]), sq))
        total = term if total is None else tape.add(total, term)
        diff = rho.value - reverse_mean(pre_policy, x_t[t - 1], t)
        kl_est += float((diff * diff).sum(axis=1).mean() / (2.0 * s.rev_var))
    loss = tape.scale(total, 1.0 / (cfg.batch * s.rev_var))
    names = sorted(params)
    grads = dict(zip(names, gradient(loss, [nodes[k] for k in names])))
    params, opt = adam_step(params, grads, opt, cfg.lr)

    record = TrainLogRecord(
        iteration=iteration,
        mean_reward=float(rewards.mean()),
        kl_estimate=kl_est,
        loss=float(loss.value),
        grad_norm=float(np.sqrt(sum((g * g).sum() for g in grads.values()))),
        wall_time=time.perf_counter() - t0,
    )
    return policy.with_params(params), opt, record
