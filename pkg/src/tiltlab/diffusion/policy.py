"""Gaussian reverse policies and trajectory sampling.

A policy's reverse mean at state x_t (step t = T..1) is

    rho(x, t) = x + [0.5 x - eps(x, t) / sigma_pert[t]] * dt

with eps(x, t) the predicted injected noise. ``eps`` can come from the
closed-form mixture formula (the exact pre-trained policy), from a
trained network, or from their sum (a residual policy whose parameters
start at exactly zero, i.e. exactly at the pre-trained model).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import gaussmix
from ..autodiff import MlpModel, Node, Tape, copy_params, evaluate, forward_on_tape
from ..errors import ConfigError, ContractError, NumericError
from .base import GaussianMixture
from .schedule import DiffusionSchedule

LOG_2PI = gaussmix.LOG_2PI


def gaussian_log_density(x, mean, var: float):
    """Isotropic Gaussian log density; row-wise for (m, d) inputs."""
    if var <= 0.0:
        raise ContractError(f"variance must be positive, got {var}")
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    diff = np.atleast_2d(x - mean)
    d = diff.shape[1]
    vals = -0.5 * d * (LOG_2PI + np.log(var)) - 0.5 * (diff * diff).sum(axis=1) / var
    return float(vals[0]) if (x.ndim <= 1 and mean.ndim <= 1) else vals


def analytic_eps(base: GaussianMixture, schedule: DiffusionSchedule, x, t: int) -> np.ndarray:
    """Exact conditional expected noise -sigma_pert[t] * score_t(x).

    ``score_t`` is the score of the closed-form mixture marginal at step t;
    at t = 0 there is no injected noise and the result is zero.
    """
    if not 0 <= t <= schedule.n_steps:
        raise IndexError(f"step {t} outside [0, {schedule.n_steps}]")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if t == 0:
        return np.zeros_like(x)
    marg = base.marginal_at(schedule, t)
    return -schedule.sigma_pert[t] * marg.score(x)


@dataclass(frozen=True)
class PolicyNet:
    """Reverse policy: closed-form base part and/or a trainable network.

    The network input is (x, t/T, sigma_pert[t]); its output is added to
    the analytic noise prediction when both parts are present.
    """

    schedule: DiffusionSchedule
    base: GaussianMixture | None = None
    net: MlpModel | None = None

    def __post_init__(self):
        if self.base is None and self.net is None:
            raise ConfigError("policy needs an analytic base, a network, or both")
        if self.base is not None and self.net is not None:
            if self.net.in_width != self.base.dim + 2 or self.net.out_width != self.base.dim:
                raise ConfigError("residual net widths do not match the base dimension")

    @property
    def dim(self) -> int:
        return self.base.dim if self.base is not None else self.net.out_width

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params if self.net is not None else {}

    def with_params(self, params: dict[str, np.ndarray]) -> "PolicyNet":
        if self.net is None:
            raise ContractError("policy has no trainable network")
        return replace(self, net=replace(self.net, params=params))

    def snapshot(self) -> "PolicyNet":
        return self.with_params(copy_params(self.params)) if self.net is not None else self

    def eps(self, x, t: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros_like(x)
        if self.base is not None:
            out = out + analytic_eps(self.base, self.schedule, x, t)
        if self.net is not None:
            feats = np.broadcast_to(self.schedule.time_features(t), (x.shape[0], 2))
            out = out + evaluate(self.net, np.hstack([x, feats]))
        return out


def add_residual_net(policy: PolicyNet, rng: np.random.Generator | None = None,
                     hidden=(32, 32), activation: str = "tanh") -> PolicyNet:
    """Attach a zero-output residual network to an analytic policy.

    The returned policy evaluates identically to the input (the final
    layer starts at zero), so its parameters are exactly the pre-trained
    point that fine-tuning starts from.
    """
    from ..autodiff import residual_mlp

    if policy.net is not None:
        raise ContractError("policy already has a network component")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(0))
    d = policy.dim
    return replace(policy, net=residual_mlp([d + 2, *hidden, d], rng, activation))


def reverse_mean(policy: PolicyNet, x, t: int) -> np.ndarray:
    """Mean of the reverse Gaussian step from x_t to x_{t-1}."""
    s = policy.schedule
    if not 1 <= t <= s.n_steps:
        raise IndexError(f"reverse step {t} outside [1, {s.n_steps}]")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = policy.eps(x, t)
    return x * (1.0 + 0.5 * s.dt) - (s.dt / s.sigma_eff(t)) * eps


@dataclass
class Trajectory:
    """A batch of realized reverse chains with full bookkeeping.

    states[t] is x_t for t = 0..T; noises[t-1] and log_probs[t-1] belong
    to the transition x_t -> x_{t-1}, so states[t-1] equals
    reverse_mean(x_t, t) + rev_std * noises[t-1] exactly.
    """

    states: np.ndarray     # (T+1, m, d)
    noises: np.ndarray     # (T, m, d)
    log_probs: np.ndarray  # (T, m)
    reward: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def batch(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[0]


def sample_trajectory(
    policy: PolicyNet,
    rng: np.random.Generator,
    n: int = 1,
    shift_source=None,
    final_step_noise: bool = True,
) -> Trajectory:
    """Run the reverse chain from x_T ~ N(0, I) with log-density bookkeeping.

    ``shift_source`` (optional) adds a mean shift at every step without
    touching the policy; it must expose ``shift(x, t) -> (n, d)``.
    Setting ``final_step_noise=False`` emits the mean at the last step,
    the alternative convention kept for ablations.
    """
    s = policy.schedule
    T, d = s.n_steps, policy.dim
    states = np.empty((T + 1, n, d))
    noises = np.zeros((T, n, d))
    log_probs = np.empty((T, n))
    x = rng.standard_normal((n, d))
    states[T] = x
    for t in range(T, 0, -1):
        mu = reverse_mean(policy, x, t)
        if shift_source is not None:
            mu = mu + shift_source.shift(x, t)
        if t == 1 and not final_step_noise:
            x = mu.copy()
        else:
            z = rng.standard_normal((n, d))
            noises[t - 1] = z
            x = mu + s.rev_std * z
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at reverse step {t}")
        log_probs[t - 1] = gaussian_log_density(x, mu, s.rev_var)
        states[t - 1] = x
    return Trajectory(states, noises, log_probs)


def log_probs_under(policy: PolicyNet, traj: Trajectory, shift_source=None) -> np.ndarray:
    """Log densities of the stored transitions under another policy, (T, m)."""
    s = policy.schedule
    out = np.empty_like(traj.log_probs)
    for t in range(traj.n_steps, 0, -1):
        mu = reverse_mean(policy, traj.states[t], t)
        if shift_source is not None:
            mu = mu + shift_source.shift(traj.states[t], t)
        out[t - 1] = gaussian_log_density(traj.states[t - 1], mu, s.rev_var)
    return out


# -- tape builders --------------------------------------------------------


def eps_on_tape(tape: Tape, policy: PolicyNet, param_nodes: dict[str, Node],
                x: Node, t: int) -> Node:
    """Record policy.eps(x, t) with x live on the tape."""
    s = policy.schedule
    parts = []
    if policy.base is not None:
        marg = policy.base.marginal_at(s, t)
        parts.append(tape.mixture_eps(x, marg.log_weights, marg.means,
                                      marg.variances, float(s.sigma_pert[t])))
    if policy.net is not None:
        m = x.value.shape[0]
        feats = tape.constant(np.broadcast_to(s.time_features(t), (m, 2)))
        parts.append(forward_on_tape(tape, policy.net, param_nodes, tape.concat_cols(x, feats)))
    out = parts[0]
    for p in parts[1:]:
        out = tape.add(out, p)
    return out


def reverse_mean_on_tape(tape: Tape, policy: PolicyNet, param_nodes: dict[str, Node],
                         x: Node, t: int) -> Node:
    s = policy.schedule
    eps = eps_on_tape(tape, policy, param_nodes, x, t)
    return tape.add(tape.scale(x, 1.0 + 0.5 * s.dt), tape.scale(eps, -s.dt / s.sigma_eff(t)))
