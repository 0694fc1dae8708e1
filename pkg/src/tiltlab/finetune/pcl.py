"""Path consistency learning on the one-step balance identity.

At the optimum, for every transition,

    v_t(x_t)/alpha + log p_theta(x_{t-1}|x_t)
        = v_{t-1}(x_{t-1})/alpha + log p_pre(x_{t-1}|x_t),

with v_0 pinned to the reward. Each iteration samples a batch from the
current policy, then takes one squared-residual gradient step for the
value parameters (policy log densities frozen) and one for the policy
parameters (values frozen), both against the iteration-start snapshots.

The same identity telescopes to k-step and whole-trajectory residuals,
exposed below; at k = T with a learnable log-normalizer slot this is the
trajectory-balance form.
"""

from __future__ import annotations

import time

import numpy as np

from ..autodiff import AdamState, MlpModel, Tape, adam_step, bind_params, evaluate, forward_on_tape, gradient
from ..diffusion.policy import PolicyNet, Trajectory, log_probs_under, reverse_mean_on_tape
from ..errors import ContractError, NumericError
from ..rewards import RewardSpec, eval_reward
from .common import bind_policy, rollin_trajectory, step_kl_terms
from .config import FineTuneConfig, TrainLogRecord

LOGP_GUARD = -1e8


def value_input(schedule, x: np.ndarray, t: int) -> np.ndarray:
    feats = np.broadcast_to(schedule.time_features(t), (x.shape[0], 2))
    return np.hstack([x, feats])


def eval_value(model: MlpModel, schedule, x: np.ndarray, t: int) -> np.ndarray:
    return evaluate(model, value_input(schedule, x, t))[:, 0]


def consistency_residuals(v_top, lp_cur, v_bottom, lp_pre, alpha: float) -> np.ndarray:
    """v_t/alpha + log p_theta - v_{t-1}/alpha - log p_pre, elementwise."""
    return np.asarray(v_top) / alpha + np.asarray(lp_cur) - np.asarray(v_bottom) / alpha - np.asarray(lp_pre)


def k_step_residuals(values: np.ndarray, lp_cur: np.ndarray, lp_pre: np.ndarray,
                     alpha: float, k: int) -> np.ndarray:
    """Residuals of the k-step consistency identity.

    ``values`` is (T+1, m) with values[0] already equal to the reward;
    lp_cur/lp_pre are (T, m). Row j of the output is the residual for the
    sub-trajectory from x_{j+k} down to x_j; k = 1 gives per-step
    residuals, k = T the whole-trajectory one.
    """
    T = lp_cur.shape[0]
    if not 1 <= k <= T:
        raise ContractError(f"sub-trajectory length {k} outside [1, {T}]")
    out = []
    for top in range(k, T + 1):
        span = slice(top - k, top)
        out.append(values[top] / alpha + lp_cur[span].sum(axis=0)
                   - values[top - k] / alpha - lp_pre[span].sum(axis=0))
    return np.stack(out, axis=0)


def trajectory_balance_residual(lp_cur: np.ndarray, lp_pre: np.ndarray, reward: np.ndarray,
                                alpha: float, log_z: float,
                                initial_log_ratio: np.ndarray | float = 0.0) -> np.ndarray:
    """Whole-trajectory residual with a learnable log-normalizer slot.

    log_z + [initial log ratio] + sum_t (log p_theta - log p_pre) - r(x_0)/alpha;
    at the soft optimum this vanishes when log_z equals log of the
    Theorem-2 constant and the initial-distribution log ratio is included.
    """
    if alpha <= 0.0:
        raise ContractError("alpha must be positive")
    return (log_z + np.asarray(initial_log_ratio)
            + (np.asarray(lp_cur) - np.asarray(lp_pre)).sum(axis=0)
            - np.asarray(reward) / alpha)


def pcl_residual_arrays(policy, pre_policy, value: MlpModel, traj: Trajectory,
                        reward_spec: RewardSpec, alpha: float):
    """(values (T+1, m) with v_0 = r, lp_cur, lp_pre) for a sampled batch."""
    s = policy.schedule
    r = eval_reward(reward_spec, traj.terminal)
    values = np.empty((traj.n_steps + 1, traj.batch))
    values[0] = r
    for t in range(1, traj.n_steps + 1):
        values[t] = eval_value(value, s, traj.states[t], t)
    lp_cur = log_probs_under(policy, traj)
    lp_pre = log_probs_under(pre_policy, traj)
    return values, lp_cur, lp_pre


def pcl_iteration(
    policy: PolicyNet,
    pre_policy: PolicyNet,
    value: MlpModel,
    reward_spec: RewardSpec,
    cfg: FineTuneConfig,
    rng: np.random.Generator,
    opt_policy: AdamState,
    opt_value: AdamState,
    iteration: int = 0,
) -> tuple[PolicyNet, MlpModel, AdamState, AdamState, TrainLogRecord]:
    if cfg.alpha <= 0.0:
        raise ContractError("path consistency learning requires alpha > 0")
    t0 = time.perf_counter()
    s = policy.schedule
    alpha = cfg.alpha
    traj = rollin_trajectory(policy, pre_policy, cfg.rollin, cfg.batch, rng, cfg.final_step_noise)
    values, lp_cur, lp_pre = pcl_residual_arrays(policy, pre_policy, value, traj, reward_spec, alpha)
    if lp_cur.min() < LOGP_GUARD or lp_pre.min() < LOGP_GUARD:
        raise NumericError("transition log density below the -1e8 guard")
    msr = float((k_step_residuals(values, lp_cur, lp_pre, alpha, 1) ** 2).mean())

    # Value step: v_t live, everything else at the iteration-start snapshot.
    tape = Tape()
    vnodes = bind_params(tape, value.params)
    total = None
    for t in range(1, traj.n_steps + 1):
        v_t = tape.sum_cols(forward_on_tape(tape, value, vnodes,
                                            tape.constant(value_input(s, traj.states[t], t))))
        rest = lp_cur[t - 1] - values[t - 1] / alpha - lp_pre[t - 1]
        res = tape.add(tape.scale(v_t, 1.0 / alpha), tape.constant(rest))
        term = tape.sumall(tape.square(res))
        total = term if total is None else tape.add(total, term)
    loss_v = tape.scale(total, 1.0 / cfg.batch)
    names_v = sorted(value.params)
    grads_v = dict(zip(names_v, gradient(loss_v, [vnodes[k] for k in names_v])))
    new_value_params, opt_value = adam_step(value.params, grads_v, opt_value, cfg.value_lr or cfg.lr)

    # Policy step: log p_theta live, values at the snapshot on both ends.
    tape = Tape()
    pnodes = bind_policy(tape, policy, trainable=True)
    total = None
    for t in range(1, traj.n_steps + 1):
        rho = reverse_mean_on_tape(tape, policy, pnodes, tape.constant(traj.states[t]), t)
        lp = tape.gaussian_logpdf(tape.constant(traj.states[t - 1]), rho, s.rev_var)
        rest = values[t] / alpha - values[t - 1] / alpha - lp_pre[t - 1]
        res = tape.add(lp, tape.constant(rest))
        term = tape.sumall(tape.square(res))
        total = term if total is None else tape.add(total, term)
    loss_p = tape.scale(total, 1.0 / cfg.batch)
    names_p = sorted(policy.params)
    grads_p = dict(zip(names_p, gradient(loss_p, [pnodes[k] for k in names_p])))
    new_policy_params, opt_policy = adam_step(policy.params, grads_p, opt_policy, cfg.lr)

    record = TrainLogRecord(
        iteration=iteration,
        mean_reward=float(eval_reward(reward_spec, traj.terminal).mean()),
        kl_estimate=float(step_kl_terms(policy, pre_policy, traj).sum(axis=0).mean()),
        loss=msr,
        grad_norm=float(np.sqrt(sum((g * g).sum() for g in grads_p.values())
                                + sum((g * g).sum() for g in grads_v.values()))),
        wall_time=time.perf_counter() - t0,
    )
    new_value = MlpModel(value.widths, value.activation, new_value_params)
    return policy.with_params(new_policy_params), new_value, opt_policy, opt_value, record
