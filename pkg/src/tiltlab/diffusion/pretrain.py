"""Denoising-score-matching pretraining of an eps-prediction network."""

from __future__ import annotations

import numpy as np

from ..autodiff import MlpModel, Tape, adam_init, adam_step, bind_params, evaluate, forward_on_tape, gradient, init_mlp
from ..errors import ContractError
from .base import GaussianMixture
from .schedule import DiffusionSchedule, forward_perturb


def _net_input(schedule: DiffusionSchedule, x_t: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.hstack([x_t, schedule.time_features(t)])


def denoising_loss(model, schedule: DiffusionSchedule, x0, t, noise) -> float:
    """Mean squared noise-prediction error over a batch of (x0, t, noise).

    ``model`` is an MlpModel or any callable (x_t, t) -> prediction, so
    oracle predictors can be scored directly.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    t = np.asarray(t, dtype=np.int64).ravel()
    if x0.shape[0] == 0:
        raise ContractError("denoising loss needs a nonempty batch")
    if np.any(t < 0) or np.any(t > schedule.n_steps):
        raise IndexError("step index outside schedule")
    x_t = schedule.mu_pert[t, None] * x0 + schedule.sigma_pert[t, None] * noise
    if isinstance(model, MlpModel):
        pred = evaluate(model, _net_input(schedule, x_t, t))
    else:
        pred = np.asarray(model(x_t, t), dtype=np.float64)
    return float(((noise - pred) ** 2).sum(axis=1).mean())


def train_denoiser(
    base: GaussianMixture,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    hidden=(32, 32),
    steps: int = 2000,
    batch: int = 128,
    lr: float = 1e-2,
    activation: str = "tanh",
) -> tuple[MlpModel, list[float]]:
    """Fit eps(x_t, t) by stochastic regression on fresh perturbation draws."""
    d = base.dim
    model = init_mlp([d + 2, *hidden, d], rng, activation)
    params = model.params
    state = adam_init(params)
    losses = []
    for _ in range(steps):
        x0 = base.sample(rng, batch)
        t = rng.integers(1, schedule.n_steps + 1, size=batch)
        noise = rng.standard_normal((batch, d))
        x_t = forward_perturb_batch(schedule, x0, t, noise)

        tape = Tape()
        nodes = bind_params(tape, params)
        inp = tape.constant(_net_input(schedule, x_t, t))
        pred = forward_on_tape(tape, model, nodes, inp)
        resid = tape.sub(tape.constant(noise), pred)
        loss = tape.scale(tape.sumall(tape.square(resid)), 1.0 / batch)
        names = sorted(params)
        grads = dict(zip(names, gradient(loss, [nodes[k] for k in names])))
        params, state = adam_step(params, grads, state, lr)
        model = MlpModel(model.widths, model.activation, params)
        losses.append(float(loss.value))
    return model, losses


def forward_perturb_batch(schedule: DiffusionSchedule, x0, t, noise) -> np.ndarray:
    """Vectorized forward_perturb with one step index per row."""
    t = np.asarray(t, dtype=np.int64).ravel()
    if np.any(t < 0) or np.any(t > schedule.n_steps):
        raise IndexError("step index outside schedule")
    return schedule.mu_pert[t, None] * np.atleast_2d(x0) + schedule.sigma_pert[t, None] * np.atleast_2d(noise)


__all__ = ["denoising_loss", "train_denoiser", "forward_perturb_batch", "forward_perturb"]
